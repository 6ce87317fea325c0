"""PPO with a colored-noise Gaussian policy.

Actions are ``mu + eps * sigma`` where ``eps`` is consumed from per-(env,
dimension) colored-noise streams; log-probabilities are the ordinary
per-step diagonal Gaussian ones.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .envs import VecEnv
from .evalstats import EvalCurve, evaluate_policy
from .neuralnet import Adam, GaussianPolicy, gaussian_log_prob
from .noise import ColoredNoiseBank, NoiseColor, WhiteNoiseSource


class TrainingAborted(RuntimeError):
    pass


@dataclass
class PpoConfig:
    n_envs: int = 4
    n_steps: int = 2048
    n_epochs: int = 10
    minibatch_size: int = 64
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_range: float = 0.2
    clip_range_vf: float | None = None
    ent_coef: float = 0.0
    vf_coef: float = 0.5
    max_grad_norm: float = 0.5
    learning_rate: float = 3e-4
    total_timesteps: int = 204_800
    noise_beta: float = 0.0
    seed: int = 0
    iid_noise: bool = False
    noise_chunk_length: int = 1000
    reset_noise_on_episode: bool = False
    hidden_sizes: tuple = (64, 64)
    dtype: str = "float32"
    eval_interval: int = 5120
    n_eval_episodes: int = 20
    eval_mode: str = "deterministic_mean"
    normalize_advantage: bool = True
    normalize_observations: bool = False
    normalize_rewards: bool = False

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        self.validate()

    def validate(self) -> None:
        positive_ints = ("n_envs", "n_steps", "n_epochs", "minibatch_size", "total_timesteps",
                         "noise_chunk_length", "eval_interval", "n_eval_episodes")
        for name in positive_ints:
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if not 0 < self.gamma <= 1:
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError(f"gae_lambda must be in [0, 1], got {self.gae_lambda}")
        for name in ("clip_range", "max_grad_norm", "learning_rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("ent_coef", "vf_coef"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.clip_range_vf is not None and not self.clip_range_vf > 0:
            raise ValueError(f"clip_range_vf must be > 0, got {self.clip_range_vf}")
        if not (np.isfinite(self.noise_beta) and self.noise_beta >= 0):
            raise ValueError(f"noise_beta must be >= 0, got {self.noise_beta}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.eval_mode not in ("deterministic_mean", "stochastic"):
            raise ValueError(f"eval_mode must be deterministic_mean or stochastic, got {self.eval_mode!r}")

    @property
    def update_size(self) -> int:
        return self.n_envs * self.n_steps

    @property
    def n_updates(self) -> int:
        return math.ceil(self.total_timesteps / self.update_size)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class RolloutBatch:
    """On-policy data, time-major with shape ``(n_steps, n_envs, ...)``.

    ``rewards`` already include the discounted value of the true final
    observation at truncated (time-limit) episode ends, so GAE treats every
    episode boundary as terminal.
    """

    observations: np.ndarray
    actions: np.ndarray
    epsilons: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    episode_starts: np.ndarray
    last_values: np.ndarray
    last_episode_starts: np.ndarray
    raw_rewards: np.ndarray
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None
    completed_returns: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.rewards.size

    def flat(self) -> "Minibatch":
        n = self.size
        dt = self.observations.dtype
        return Minibatch(
            observations=self.observations.reshape(n, -1),
            actions=self.actions.reshape(n, -1),
            old_log_probs=self.log_probs.reshape(n),
            advantages=self.advantages.reshape(n).astype(dt),
            returns=self.returns.reshape(n).astype(dt),
            old_values=self.values.reshape(n).astype(dt),
        )


@dataclass
class Minibatch:
    observations: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    old_values: np.ndarray | None = None

    def __len__(self):
        return len(self.old_log_probs)

    def take(self, idx) -> "Minibatch":
        return Minibatch(self.observations[idx], self.actions[idx], self.old_log_probs[idx],
                         self.advantages[idx], self.returns[idx],
                         None if self.old_values is None else self.old_values[idx])


class RunningMeanStd:
    def __init__(self, shape=(), epsilon: float = 1e-4):
        self.mean = np.zeros(shape)
        self.var = np.ones(shape)
        self.count = epsilon

    def update(self, x) -> None:
        x = np.asarray(x, dtype=float)
        b_mean, b_var, b_count = x.mean(axis=0), x.var(axis=0), x.shape[0]
        delta = b_mean - self.mean
        total = self.count + b_count
        self.mean = self.mean + delta * b_count / total
        m2 = self.var * self.count + b_var * b_count + delta**2 * self.count * b_count / total
        self.var = m2 / total
        self.count = total


class ObservationNormalizer:
    def __init__(self, obs_dim: int, clip: float = 10.0):
        self.stats = RunningMeanStd((obs_dim,))
        self.clip = clip
        self.frozen = False

    def __call__(self, obs):
        z = (obs - self.stats.mean) / np.sqrt(self.stats.var + 1e-8)
        return np.clip(z, -self.clip, self.clip)

    def observe(self, obs):
        if not self.frozen:
            self.stats.update(np.atleast_2d(obs))
        return self(obs)

    def state_dict(self) -> dict:
        return {"mean": self.stats.mean.tolist(), "var": self.stats.var.tolist(), "clip": self.clip}

    @classmethod
    def from_state(cls, state: dict) -> "ObservationNormalizer":
        norm = cls(len(state["mean"]), state["clip"])
        norm.stats.mean = np.asarray(state["mean"])
        norm.stats.var = np.asarray(state["var"])
        norm.frozen = True
        return norm


class RewardScaler:
    """Divide rewards by the running std of the discounted return."""

    def __init__(self, n_envs: int, gamma: float, clip: float = 10.0):
        self.stats = RunningMeanStd(())
        self.ret = np.zeros(n_envs)
        self.gamma = gamma
        self.clip = clip

    def __call__(self, rewards, ended):
        self.ret = self.ret * self.gamma + rewards
        self.stats.update(self.ret)
        self.ret[ended] = 0.0
        return np.clip(rewards / np.sqrt(self.stats.var + 1e-8), -self.clip, self.clip)


def make_noise_source(config: PpoConfig, action_dim: int, seed):
    if config.iid_noise:
        return WhiteNoiseSource(config.n_envs, action_dim, seed)
    return ColoredNoiseBank(config.n_envs, action_dim, NoiseColor(config.noise_beta), seed,
                            chunk_length=config.noise_chunk_length)


def collect_rollout(policy: GaussianPolicy, vec: VecEnv, bank, n_steps: int, gamma: float = 0.99,
                    obs_transform=None, reward_transform=None,
                    reset_noise_on_episode: bool = False) -> RolloutBatch:
    """Run the current policy for ``n_steps`` in every sub-environment."""
    if bank.shape != (vec.n_envs, vec.spec.action_dim):
        raise ValueError(f"noise source shape {bank.shape} does not match "
                         f"({vec.n_envs}, {vec.spec.action_dim})")
    n, a_dim = vec.n_envs, vec.spec.action_dim
    dt = policy.dtype
    if obs_transform is None:
        def tf(o):
            return o.astype(dt)
    else:
        def tf(o):
            return obs_transform(o).astype(dt)
    obs_buf = np.zeros((n_steps, n, policy.obs_dim), dtype=dt)
    act_buf = np.zeros((n_steps, n, a_dim), dtype=dt)
    eps_buf = np.zeros((n_steps, n, a_dim))
    logp_buf = np.zeros((n_steps, n), dtype=dt)
    rew_buf = np.zeros((n_steps, n))
    raw_buf = np.zeros((n_steps, n))
    val_buf = np.zeros((n_steps, n))
    start_buf = np.zeros((n_steps, n), dtype=bool)
    log_std = policy.log_std.copy()
    sigma = np.exp(log_std)
    completed = []
    if not hasattr(vec, "running_returns"):
        vec.running_returns = np.zeros(n)

    obs = tf(vec.observations())
    for t in range(n_steps):
        start_buf[t] = vec.episode_step_counts == 0
        mu = policy.mean_net(obs)
        values = policy.value_net(obs)[:, 0]
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(values))):
            raise TrainingAborted(f"non-finite policy output at rollout step {t}: "
                                  f"mu={mu.tolist()}, values={values.tolist()}")
        eps = bank.draw()
        actions = (mu + eps * sigma).astype(dt)
        res = vec.step_all(actions)
        ended = res.terminated | res.truncated
        rewards = res.rewards.copy()
        vec.running_returns += res.rewards
        for i in np.nonzero(ended)[0]:
            completed.append(float(vec.running_returns[i]))
            vec.running_returns[i] = 0.0
            if reset_noise_on_episode:
                bank.reset_streams(i)
        if reward_transform is not None:
            rewards = reward_transform(rewards, ended)
        if res.truncated.any():
            final = tf(res.final_observations[res.truncated])
            rewards[res.truncated] += gamma * policy.value_net(final)[:, 0]

        obs_buf[t] = obs
        act_buf[t] = actions
        eps_buf[t] = eps
        logp_buf[t] = gaussian_log_prob(actions, mu, log_std)
        rew_buf[t] = rewards
        raw_buf[t] = res.rewards
        val_buf[t] = values
        obs = tf(res.observations)

    last_values = policy.value_net(obs)[:, 0]
    return RolloutBatch(obs_buf, act_buf, eps_buf, logp_buf, rew_buf, val_buf, start_buf,
                        last_values, vec.episode_step_counts == 0, raw_buf,
                        completed_returns=completed)


def compute_gae(rewards, values, episode_starts, last_values, last_episode_starts,
                gamma: float, gae_lambda: float):
    """Generalized advantage estimates and returns for time-major arrays.

    ``episode_starts[t]`` marks observation ``t`` as the first of an episode,
    so step ``t`` ended an episode iff ``episode_starts[t + 1]`` (or
    ``last_episode_starts`` for the final step). Ended episodes bootstrap
    with 0; the rollout cut-off bootstraps with ``last_values``.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    starts = np.asarray(episode_starts, dtype=float)
    last_values = np.asarray(last_values, dtype=float)
    last_starts = np.asarray(last_episode_starts, dtype=float)
    if rewards.shape != values.shape or rewards.shape != starts.shape:
        raise ValueError(f"shape mismatch: rewards {rewards.shape}, values {values.shape}, "
                         f"episode_starts {starts.shape}")
    if last_values.shape != rewards.shape[1:] or last_starts.shape != rewards.shape[1:]:
        raise ValueError("last_values / last_episode_starts must match one time slice")
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    gae = np.zeros(rewards.shape[1:])
    for t in range(T - 1, -1, -1):
        if t == T - 1:
            nonterminal = 1.0 - last_starts
            next_values = last_values
        else:
            nonterminal = 1.0 - starts[t + 1]
            next_values = values[t + 1]
        delta = rewards[t] + gamma * next_values * nonterminal - values[t]
        gae = delta + gamma * gae_lambda * nonterminal * gae
        adv[t] = gae
    return adv, adv + values


@dataclass
class LossOutput:
    loss: float
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    approx_kl: float
    grad: np.ndarray | None = None


def ppo_loss(policy: GaussianPolicy, batch: Minibatch, clip_range: float, ent_coef: float,
             vf_coef: float, clip_range_vf: float | None = None,
             normalize_advantage: bool = True, compute_grad: bool = True) -> LossOutput:
    """Clipped-surrogate PPO loss and its exact gradient w.r.t. the policy parameters.

    loss = -mean(min(r A, clip(r, 1 - c, 1 + c) A)) + vf_coef * mean((V - R)^2)
           - ent_coef * entropy,  with r = exp(logp_new - logp_old).
    """
    B = len(batch)
    adv = np.asarray(batch.advantages, dtype=float)
    if normalize_advantage and B > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    mu, pi_cache = policy.mean_net.forward(batch.observations)
    v_out, vf_cache = policy.value_net.forward(batch.observations)
    v = v_out[:, 0]
    log_std = policy.log_std
    inv_var = np.exp(-2.0 * log_std)
    diff = batch.actions - mu
    logp = gaussian_log_prob(batch.actions, mu, log_std)
    log_ratio = logp - batch.old_log_probs
    ratio = np.exp(log_ratio)
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - clip_range, 1.0 + clip_range) * adv
    policy_loss = -float(np.minimum(surr1, surr2).mean())

    if clip_range_vf is None:
        v_pred = v
        v_active = 1.0
    else:
        dv = v - batch.old_values
        v_pred = batch.old_values + np.clip(dv, -clip_range_vf, clip_range_vf)
        v_active = (np.abs(dv) < clip_range_vf).astype(float)
    v_err = v_pred - batch.returns
    value_loss = float((v_err * v_err).mean())
    entropy = float(np.sum(0.5 + 0.5 * math.log(2 * math.pi) + log_std))
    loss = policy_loss + vf_coef * value_loss - ent_coef * entropy
    if not np.isfinite(loss):
        raise TrainingAborted(f"non-finite PPO loss: policy={policy_loss}, value={value_loss}, "
                              f"entropy={entropy}, max |log_ratio|={np.max(np.abs(log_ratio))}")

    clip_fraction = float((np.abs(ratio - 1.0) > clip_range).mean())
    approx_kl = float(((ratio - 1.0) - log_ratio).mean())
    out = LossOutput(loss, policy_loss, value_loss, entropy, clip_fraction, approx_kl)
    if not compute_grad:
        return out

    grad = np.zeros(policy.n_params)
    g_mean, g_log_std, g_value = policy.grad_parts(grad)
    # min() picks the unclipped branch -> gradient flows through the ratio
    d_logp = np.where(surr1 <= surr2, -adv / B, 0.0) * ratio
    policy.mean_net.backward(pi_cache, d_logp[:, None] * diff * inv_var, g_mean)
    g_log_std += (d_logp[:, None] * (diff**2 * inv_var - 1.0)).sum(axis=0) - ent_coef
    d_v = (2.0 * vf_coef / B) * v_err * v_active
    policy.value_net.backward(vf_cache, d_v[:, None], g_value)
    out.grad = grad
    return out


@dataclass
class TrainResult:
    policy: GaussianPolicy
    eval_curve: EvalCurve
    log: list
    obs_normalizer: ObservationNormalizer | None = None


def _seed_streams(seed):
    ss = np.random.SeedSequence(seed)
    init, env, noise, shuffle, evaluation = ss.spawn(5)
    return init, env, noise, shuffle, evaluation


def train(config: PpoConfig, env_name: str, callbacks=(), log_path=None) -> TrainResult:
    """Run PPO for ``config.n_updates`` updates and evaluate along the way.

    Evaluation happens every ``config.eval_interval`` environment steps: each
    threshold crossed while collecting a rollout evaluates the policy that
    collected it. Every callback receives ``(record, policy)`` after each
    update. With ``log_path`` the JSONL log is written and flushed per update.
    """
    config.validate()
    init_ss, env_ss, noise_ss, shuffle_ss, eval_ss = _seed_streams(config.seed)
    vec = VecEnv(env_name, config.n_envs, seed=env_ss)
    spec = vec.spec
    policy = GaussianPolicy(spec.obs_dim, spec.action_dim, config.hidden_sizes,
                            rng=np.random.default_rng(init_ss), dtype=np.dtype(config.dtype))
    bank = make_noise_source(config, spec.action_dim, noise_ss)
    optimizer = Adam(policy.n_params, learning_rate=config.learning_rate, dtype=policy.dtype)
    shuffle_rng = np.random.default_rng(shuffle_ss)
    obs_norm = ObservationNormalizer(spec.obs_dim) if config.normalize_observations else None
    rew_scaler = RewardScaler(config.n_envs, config.gamma) if config.normalize_rewards else None

    curve = EvalCurve()
    log = []
    log_fh = open(log_path, "w") if log_path is not None else None
    global_step = 0
    eval_index = 0
    try:
        for update in range(config.n_updates):
            next_step = global_step + config.update_size
            while (eval_index + 1) * config.eval_interval <= next_step:
                eval_index += 1
                ev_seed = np.random.SeedSequence([int(config.seed), 7919, eval_index])
                returns = evaluate_policy(policy.snapshot(), env_name, config.n_eval_episodes,
                                          mode=config.eval_mode, seed=ev_seed,
                                          obs_transform=obs_norm)
                curve.add(eval_index * config.eval_interval, returns)

            batch = collect_rollout(policy, vec, bank, config.n_steps, config.gamma,
                                    obs_transform=obs_norm.observe if obs_norm else None,
                                    reward_transform=rew_scaler,
                                    reset_noise_on_episode=config.reset_noise_on_episode)
            batch.advantages, batch.returns = compute_gae(
                batch.rewards, batch.values, batch.episode_starts, batch.last_values,
                batch.last_episode_starts, config.gamma, config.gae_lambda)
            data = batch.flat()
            stats = {"policy_loss": [], "value_loss": [], "entropy": [], "clip_fraction": [],
                     "approx_kl": [], "loss": []}
            for _ in range(config.n_epochs):
                perm = shuffle_rng.permutation(len(data))
                for start in range(0, len(data), config.minibatch_size):
                    mb = data.take(perm[start:start + config.minibatch_size])
                    out = ppo_loss(policy, mb, config.clip_range, config.ent_coef, config.vf_coef,
                                   config.clip_range_vf, config.normalize_advantage)
                    optimizer.step(policy.params, out.grad, config.max_grad_norm)
                    for k in stats:
                        stats[k].append(getattr(out, k))
            global_step = next_step
            post = ppo_loss(policy, data, config.clip_range, config.ent_coef, config.vf_coef,
                            config.clip_range_vf, config.normalize_advantage, compute_grad=False)
            record = {
                "update_index": update,
                "global_step": global_step,
                "mean_episode_return": (float(np.mean(batch.completed_returns))
                                        if batch.completed_returns else None),
                "n_episodes": len(batch.completed_returns),
                **{k: float(np.mean(v)) for k, v in stats.items()},
                "update_approx_kl": post.approx_kl,
                "std": float(np.mean(np.exp(policy.log_std))),
            }
            log.append(record)
            if log_fh is not None:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            for cb in callbacks:
                cb(record, policy)
    finally:
        if log_fh is not None:
            log_fh.close()
    return TrainResult(policy, curve, log, obs_norm)


def save_config(config: PpoConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
