"""Small dense networks with hand-written reverse-mode gradients.

All parameters of a model live in one flat vector; layers hold
views into it. That keeps the optimizer, gradient clipping and
finite-difference checks trivial: they all act on a single array.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)
CHECKPOINT_FORMAT = "colored-ppo-checkpoint"
CHECKPOINT_VERSION = 1


def orthogonal(shape, gain: float, rng: np.random.Generator) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


class Mlp:
    """Fully connected network, tanh hidden activations, linear output.

    Weights are stored input-major (``W[i]`` has shape ``(n_in, n_out)``) so a
    batch ``x`` of shape ``(B, n_in)`` maps through ``x @ W + b``.
    """

    def __init__(self, layer_sizes, params: np.ndarray | None = None,
                 rng: np.random.Generator | None = None, output_gain: float = 1.0,
                 hidden_gain: float = math.sqrt(2.0), dtype=np.float64):
        self.layer_sizes = tuple(int(s) for s in layer_sizes)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError(f"invalid layer sizes {layer_sizes}")
        n = self.param_count(self.layer_sizes)
        if params is None:
            params = np.zeros(n, dtype=dtype)
        if params.shape != (n,):
            raise ValueError(f"parameter buffer has shape {params.shape}, expected ({n},)")
        self.params = params
        self.weights, self.biases = self._views(params)
        if rng is not None:
            last = len(self.weights) - 1
            for i, w in enumerate(self.weights):
                w[...] = orthogonal(w.shape, output_gain if i == last else hidden_gain, rng)
                self.biases[i][...] = 0.0

    @staticmethod
    def param_count(layer_sizes) -> int:
        return sum(a * b + b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))

    def _views(self, buf):
        weights, biases, k = [], [], 0
        for a, b in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            weights.append(buf[k:k + a * b].reshape(a, b))
            k += a * b
            biases.append(buf[k:k + b])
            k += b
        return weights, biases

    def forward(self, x: np.ndarray):
        """Return the output and the activation cache needed by :meth:`backward`."""
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i != last:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, acts, grad_out: np.ndarray, grad: np.ndarray | None = None) -> np.ndarray:
        """Accumulate d(loss)/d(params) into ``grad`` given d(loss)/d(output)."""
        if grad is None:
            grad = np.zeros_like(self.params)
        gw, gb = self._views(grad)
        g = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            gw[i] += acts[i].T @ g
            gb[i] += np.add.reduce(g, axis=0)
            if i > 0:
                g = (g @ self.weights[i].T) * (1.0 - acts[i] ** 2)
        return grad


class GaussianPolicy:
    """Actor-critic pair: an MLP for the action mean, a free log-std vector,
    and a separate MLP value function.

    Parameter layout in the flat vector: mean net, then log_std, then value net.
    """

    def __init__(self, obs_dim: int, action_dim: int, hidden=(64, 64),
                 rng: np.random.Generator | None = None, params: np.ndarray | None = None,
                 log_std_init: float = 0.0, dtype=np.float64):
        self.obs_dim = int(obs_dim)
        self.action_dim = int(action_dim)
        self.hidden = tuple(int(h) for h in hidden)
        pi_sizes = (self.obs_dim, *self.hidden, self.action_dim)
        vf_sizes = (self.obs_dim, *self.hidden, 1)
        n_pi = Mlp.param_count(pi_sizes)
        n_vf = Mlp.param_count(vf_sizes)
        self._slices = {
            "mean": slice(0, n_pi),
            "log_std": slice(n_pi, n_pi + self.action_dim),
            "value": slice(n_pi + self.action_dim, n_pi + self.action_dim + n_vf),
        }
        total = n_pi + self.action_dim + n_vf
        init = params is None
        if init:
            self.params = np.zeros(total, dtype=dtype)
        else:
            self.params = np.array(params, dtype=np.asarray(params).dtype if dtype is None else dtype)
        if self.params.shape != (total,):
            raise ValueError(f"expected {total} parameters, got {self.params.shape}")
        self.mean_net = Mlp(pi_sizes, self.params[self._slices["mean"]])
        self.log_std = self.params[self._slices["log_std"]]
        self.value_net = Mlp(vf_sizes, self.params[self._slices["value"]])
        if init:
            rng = rng if rng is not None else np.random.default_rng()
            Mlp(pi_sizes, self.mean_net.params, rng=rng, output_gain=0.01)
            Mlp(vf_sizes, self.value_net.params, rng=rng, output_gain=1.0)
            self.log_std[...] = log_std_init

    @property
    def n_params(self) -> int:
        return self.params.size

    @property
    def dtype(self):
        return self.params.dtype

    def grad_parts(self, grad: np.ndarray):
        return (grad[self._slices["mean"]], grad[self._slices["log_std"]],
                grad[self._slices["value"]])

    def copy(self) -> "GaussianPolicy":
        return GaussianPolicy(self.obs_dim, self.action_dim, self.hidden, params=self.params.copy(),
                              dtype=self.dtype)

    def snapshot(self) -> "GaussianPolicy":
        """Read-only copy, safe to share with evaluation code."""
        snap = self.copy()
        snap.params.flags.writeable = False
        return snap

    def set_params(self, params) -> None:
        self.params[...] = params


def policy_forward(policy: GaussianPolicy, obs):
    """Mean, standard deviation and value for one observation or a batch."""
    obs = np.asarray(obs, dtype=float)
    if obs.shape[-1] != policy.obs_dim:
        raise ValueError(f"observation has dimension {obs.shape[-1]}, expected {policy.obs_dim}")
    if not np.all(np.isfinite(obs)):
        raise ValueError("observation contains non-finite values")
    single = obs.ndim == 1
    x = (obs[None] if single else obs).astype(policy.dtype, copy=False)
    mu = policy.mean_net(x)
    value = policy.value_net(x)[:, 0]
    sigma = np.exp(policy.log_std)
    if single:
        return mu[0], sigma.copy(), float(value[0])
    return mu, np.broadcast_to(sigma, mu.shape).copy(), value


def gaussian_log_prob(actions, mu, log_std) -> np.ndarray:
    """Per-step diagonal Gaussian log density, summed over the last axis."""
    z = (actions - mu) * np.exp(-log_std)
    return np.sum(-0.5 * z**2 - log_std - 0.5 * LOG_2PI, axis=-1)


def sample_action(mu, sigma, epsilon):
    """Reparameterized action ``mu + epsilon * sigma`` and its log density.

    The density is the per-step one; temporal correlation of ``epsilon`` is
    deliberately not part of the likelihood.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be strictly positive")
    action = mu + np.asarray(epsilon, dtype=float) * sigma
    log_prob = gaussian_log_prob(action, mu, np.log(sigma))
    return action, (float(log_prob) if np.ndim(log_prob) == 0 else log_prob)


def gaussian_entropy(sigma) -> float:
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be strictly positive")
    return float(np.sum(0.5 + 0.5 * LOG_2PI + np.log(sigma)))


@dataclass
class Adam:
    """Adaptive-moment optimizer over a flat parameter vector."""

    n_params: int
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-5
    step_count: int = 0
    dtype: type = np.float64
    first_moment: np.ndarray = field(default=None, repr=False)
    second_moment: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.first_moment is None:
            self.first_moment = np.zeros(self.n_params, dtype=self.dtype)
        if self.second_moment is None:
            self.second_moment = np.zeros(self.n_params, dtype=self.dtype)
        self._buf = np.empty_like(self.first_moment)

    def step(self, params: np.ndarray, grads: np.ndarray, max_grad_norm: float | None = None) -> float:
        """Update ``params`` in place; returns the gradient norm before clipping.

        With clipping, gradients are rescaled by ``max_grad_norm / norm`` when
        their global norm exceeds ``max_grad_norm``. The update is
        ``lr * m_hat / (sqrt(v_hat) + epsilon)`` with bias-corrected moments.
        """
        if params.shape != grads.shape or params.shape != self.first_moment.shape:
            raise ValueError(f"shape mismatch: params {params.shape}, grads {grads.shape}, "
                             f"state {self.first_moment.shape}")
        norm = math.sqrt(float(np.dot(grads, grads)))
        if max_grad_norm is not None and norm > max_grad_norm:
            grads = grads * (max_grad_norm / (norm + 1e-6))
        self.step_count += 1
        m, v, buf = self.first_moment, self.second_moment, self._buf
        m *= self.beta1
        np.multiply(grads, 1.0 - self.beta1, out=buf)
        m += buf
        v *= self.beta2
        np.multiply(grads, grads, out=buf)
        buf *= 1.0 - self.beta2
        v += buf
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        np.sqrt(v, out=buf)
        buf /= math.sqrt(bc2)
        buf += self.epsilon
        np.divide(m, buf, out=buf)
        buf *= self.learning_rate / bc1
        params -= buf
        return norm


def save_checkpoint(policy: GaussianPolicy, path, metadata: dict | None = None) -> None:
    """Write parameters as JSON: header, layer shapes, row-major values.

    Layout::

        {"format": "colored-ppo-checkpoint", "version": 1,
         "obs_dim": ..., "action_dim": ..., "hidden": [...], "metadata": {...},
         "tensors": [{"name": "mean.W0", "shape": [3, 64], "values": [...]}, ...]}

    Tensors appear in flat-vector order, so concatenating their values
    reproduces the policy's parameter vector exactly.
    """
    tensors = []
    for prefix, net in (("mean", policy.mean_net), ("value", policy.value_net)):
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            tensors.append((f"{prefix}.W{i}", w))
            tensors.append((f"{prefix}.b{i}", b))
        if prefix == "mean":
            tensors.append(("log_std", policy.log_std))
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "obs_dim": policy.obs_dim,
        "action_dim": policy.action_dim,
        "hidden": list(policy.hidden),
        "metadata": metadata or {},
        "tensors": [{"name": n, "shape": list(t.shape), "values": t.ravel().tolist()}
                    for n, t in tensors],
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[GaussianPolicy, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a colored-ppo checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    flat = np.concatenate([np.asarray(t["values"], dtype=float).reshape(t["shape"]).ravel()
                           for t in doc["tensors"]])
    policy = GaussianPolicy(doc["obs_dim"], doc["action_dim"], doc["hidden"], params=flat)
    return policy, doc.get("metadata", {})
