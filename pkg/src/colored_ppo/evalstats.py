"""Evaluation protocol and statistics for noise-color sweeps.

Performance of a run is the mean over evaluation points of the mean
evaluation return (an area under the learning curve). Performances are
z-scored per environment before anything is averaged across environments.
"""

from __future__ import annotations

import dataclasses
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import special, stats


class MissingDataError(ValueError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"missing or insufficient cells: {self.missing}")


class DegenerateGroupError(ValueError):
    pass


class DegenerateVarianceError(ValueError):
    pass


@dataclass
class EvalCurve:
    steps: list = field(default_factory=list)
    returns: list = field(default_factory=list)

    def add(self, global_step: int, episode_returns) -> None:
        episode_returns = np.asarray(episode_returns, dtype=float)
        if self.steps and global_step <= self.steps[-1]:
            raise ValueError(f"evaluation steps must increase: {global_step} after {self.steps[-1]}")
        if self.returns and len(episode_returns) != len(self.returns[0]):
            raise ValueError("every evaluation point needs the same number of episodes")
        self.steps.append(int(global_step))
        self.returns.append(episode_returns)

    def __len__(self):
        return len(self.steps)

    @property
    def mean_returns(self) -> np.ndarray:
        return np.array([r.mean() for r in self.returns])

    def rows(self):
        """``(global_step, episode_index, return)`` rows for CSV output."""
        for step, rets in zip(self.steps, self.returns):
            for i, r in enumerate(rets):
                yield step, i, float(r)


def performance(curve: EvalCurve) -> float:
    if len(curve) == 0:
        raise ValueError("cannot compute performance of an empty evaluation curve")
    return float(np.mean(curve.mean_returns))


@dataclass(frozen=True)
class PerformanceRecord:
    env: str
    beta: float
    n_envs: int
    seed: int
    performance: float
    final_return: float = float("nan")
    n_steps: int = 2048
    variant: str = "colored"


@dataclass
class SweepResult:
    records: list
    raw: list
    standardized: dict

    def performances(self, **match) -> np.ndarray:
        return np.array([r.performance for r in self.records
                         if all(getattr(r, k) == v for k, v in match.items())])


def standardize(records: Sequence[PerformanceRecord], group_key: str = "env") -> SweepResult:
    """Z-score performances within each group (population std)."""
    groups = defaultdict(list)
    for r in records:
        groups[getattr(r, group_key)].append(r.performance)
    params = {}
    for key, vals in groups.items():
        if len(vals) < 2:
            raise DegenerateGroupError(f"group {key!r} has {len(vals)} record(s), need >= 2")
        mean, std = float(np.mean(vals)), float(np.std(vals))
        if std == 0 or not np.isfinite(std):
            raise DegenerateGroupError(f"group {key!r} has zero performance spread")
        params[key] = (mean, std)
    out = []
    for r in records:
        mean, std = params[getattr(r, group_key)]
        out.append(dataclasses.replace(r, performance=(r.performance - mean) / std))
    return SweepResult(out, list(records), params)


def _jackknife(stat, samples):
    """Leave-one-out statistic values, one array per sample."""
    out = []
    for j, x in enumerate(samples):
        vals = np.empty(len(x))
        for i in range(len(x)):
            rest = list(samples)
            rest[j] = np.delete(x, i)
            vals[i] = stat(*rest)
        out.append(vals)
    return out


def bootstrap_ci_bca(samples, statistic: Callable = np.mean, n_resamples: int = 10_000,
                     confidence: float = 0.95, rng: np.random.Generator | None = None):
    """Bias-corrected and accelerated bootstrap confidence interval.

    ``samples`` is one 1-D array, or a tuple of arrays when ``statistic`` takes
    several independent samples (each is resampled separately), e.g.
    ``statistic=lambda a, b: a.mean() - b.mean()``.
    """
    multi = isinstance(samples, tuple)
    data = [np.asarray(s, dtype=float) for s in (samples if multi else (samples,))]
    if any(len(x) < 10 for x in data):
        raise ValueError("BCa bootstrap needs at least 10 samples per group")
    rng = rng if rng is not None else np.random.default_rng()
    theta_hat = float(statistic(*data))
    if all(np.all(x == x[0]) for x in data):
        return theta_hat, theta_hat

    boot = np.empty(n_resamples)
    idx = [rng.integers(0, len(x), size=(n_resamples, len(x))) for x in data]
    if statistic is np.mean and not multi:
        boot[:] = data[0][idx[0]].mean(axis=1)
    else:
        for b in range(n_resamples):
            boot[b] = statistic(*[x[i[b]] for x, i in zip(data, idx)])
    if np.all(boot == boot[0]):
        return float(boot[0]), float(boot[0])

    frac = np.mean(boot < theta_hat)
    frac = np.clip(frac, 0.5 / n_resamples, 1.0 - 0.5 / n_resamples)
    z0 = stats.norm.ppf(frac)

    jack = _jackknife(statistic, data)
    num = den = 0.0
    for vals, x in zip(jack, data):
        d = vals.mean() - vals
        num += np.sum(d**3) / len(x) ** 3
        den += np.sum(d**2) / len(x) ** 2
    accel = num / (6.0 * den**1.5) if den > 0 else 0.0

    alpha = (1.0 - confidence) / 2.0
    levels = []
    for z_a in stats.norm.ppf([alpha, 1.0 - alpha]):
        levels.append(stats.norm.cdf(z0 + (z0 + z_a) / (1.0 - accel * (z0 + z_a))))
    low, high = np.quantile(boot, levels)
    return float(low), float(high)


def bootstrap_ci_percentile(samples, statistic: Callable = np.mean, n_resamples: int = 10_000,
                            confidence: float = 0.95, rng: np.random.Generator | None = None):
    x = np.asarray(samples, dtype=float)
    rng = rng if rng is not None else np.random.default_rng()
    idx = rng.integers(0, len(x), size=(n_resamples, len(x)))
    boot = np.array([statistic(x[i]) for i in idx])
    alpha = (1.0 - confidence) / 2.0
    low, high = np.quantile(boot, [alpha, 1.0 - alpha])
    return float(low), float(high)


def student_t_sf_two_sided(t: float, df: float) -> float:
    """Two-sided tail probability P(|T| >= |t|) via the regularized incomplete beta."""
    return float(special.betainc(df / 2.0, 0.5, df / (df + t * t)))


def welch_t_test(a, b):
    """Welch's unequal-variance t-test; returns ``(t, df, p_two_sided)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each group needs at least 2 samples")
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    diff = a.mean() - b.mean()
    if va + vb == 0:
        if diff == 0:
            return 0.0, float("nan"), 1.0
        raise DegenerateVarianceError("both groups have zero variance but different means")
    t = diff / np.sqrt(va + vb)
    df = (va + vb) ** 2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))
    return float(t), float(df), student_t_sf_two_sided(t, df)


def _cells(records, key_fn):
    cells = defaultdict(list)
    for r in records:
        cells[key_fn(r)].append(r.performance)
    return {k: np.asarray(v) for k, v in cells.items()}


@dataclass
class BestBetaRow:
    env: str
    beta_star: float
    marks: dict
    p_values: dict
    means: dict

    def as_csv_row(self, fixed_betas) -> dict:
        row = {"env": self.env, "beta_star": _fmt(self.beta_star)}
        for b in fixed_betas:
            row[f"mark_{b:g}"] = self.marks[b]
        for b in fixed_betas:
            row[f"p_{b:g}"] = _fmt(self.p_values[b])
        return row


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return "nan"
    return repr(float(x))


def best_beta_table(sweep: SweepResult, fixed_betas=(0.5, 0.0, 1.0), alpha: float = 0.05,
                    min_seeds: int = 2) -> list:
    """Per environment: best color, and whether each fixed color is significantly worse.

    Marks are ``comparable``, ``outperformed``, ``insufficient`` (fewer than
    ``min_seeds`` samples in a cell) or ``missing`` (no samples). Ties for the
    best color go to the smallest beta.
    """
    rows = []
    cells = _cells(sweep.records, lambda r: (r.env, float(r.beta)))
    for env in sorted({r.env for r in sweep.records}):
        by_beta = {b: v for (e, b), v in cells.items() if e == env}
        eligible = {b: v for b, v in by_beta.items() if len(v) >= min_seeds}
        means = {b: float(v.mean()) for b, v in by_beta.items()}
        if not eligible:
            rows.append(BestBetaRow(env, float("nan"), {b: "insufficient" for b in fixed_betas},
                                    {b: float("nan") for b in fixed_betas}, means))
            continue
        best_mean = max(v.mean() for v in eligible.values())
        beta_star = min(b for b, v in eligible.items() if v.mean() == best_mean)
        marks, pvals = {}, {}
        for b in fixed_betas:
            b = float(b)
            if b not in by_beta:
                marks[b], pvals[b] = "missing", float("nan")
            elif b not in eligible:
                marks[b], pvals[b] = "insufficient", float("nan")
            else:
                try:
                    _, _, p = welch_t_test(eligible[beta_star], eligible[b])
                except DegenerateVarianceError:
                    p = 0.0
                pvals[b] = p
                marks[b] = "outperformed" if p < alpha else "comparable"
        rows.append(BestBetaRow(env, beta_star, marks, pvals, means))
    return rows


@dataclass
class RankTable:
    groups: list
    ranked_values: list
    means: dict
    ranks: dict

    def best(self, group) -> float:
        return next(v for v in self.ranked_values if self.ranks[(group, v)] == 1)


def _rank_desc(values: Mapping[float, float]) -> dict:
    """Rank 1 for the largest value; ties resolved toward the smaller key."""
    order = sorted(values, key=lambda k: (-values[k], k))
    return {k: i + 1 for i, k in enumerate(order)}


def rank_within_group(sweep: SweepResult, group: str = "n_envs", ranked: str = "beta") -> RankTable:
    """Rank ``ranked`` values by mean standardized performance within each ``group`` value."""
    cells = _cells(sweep.records, lambda r: (getattr(r, group), float(getattr(r, ranked))))
    groups = sorted({g for g, _ in cells})
    values = sorted({v for _, v in cells})
    missing = [(g, v) for g in groups for v in values if (g, v) not in cells]
    if missing:
        raise MissingDataError(missing)
    means = {k: float(v.mean()) for k, v in cells.items()}
    ranks = {}
    for g in groups:
        for v, rk in _rank_desc({v: means[(g, v)] for v in values}).items():
            ranks[(g, v)] = rk
    return RankTable(groups, values, means, ranks)


@dataclass
class PredictedRanking:
    betas: list
    n_envs: list
    sigma_star: float
    errors: np.ndarray  # shape (len(betas), len(n_envs))
    ranks: np.ndarray
    best_beta: list
    degenerate: list


def _bias_std_lookup(bias_std_fn):
    if callable(bias_std_fn):
        return bias_std_fn
    table = {float(k): float(v) for k, v in dict(bias_std_fn).items()}
    return lambda b: table[float(b)]


def estimate_sigma_star(bias_std_fn, best_cells: Mapping[int, float]) -> float:
    """Average projected bias std over the best (n_envs -> beta) cells."""
    if not best_cells:
        raise ValueError("need at least one best cell to estimate sigma_star")
    fn = _bias_std_lookup(bias_std_fn)
    return float(np.mean([fn(b) / np.sqrt(n) for n, b in best_cells.items()]))


def predicted_best_beta(bias_std_fn, n_envs_list, beta_list, sigma_star: float) -> PredictedRanking:
    """Project which color suits each number of environments from the bias spread.

    The bias std of data pooled from ``N`` environments is ``sigma(beta) /
    sqrt(N)``; each cell scores ``(sigma_star - sigma(beta) / sqrt(N))**2`` and
    betas are ranked by that score (rank 1 = closest) within each ``N``.
    """
    betas = [float(b) for b in beta_list]
    ns = [int(n) for n in n_envs_list]
    if not betas or not ns:
        raise ValueError("beta_list and n_envs_list must be non-empty")
    fn = _bias_std_lookup(bias_std_fn)
    sig = np.array([fn(b) for b in betas])
    projected = sig[:, None] / np.sqrt(np.array(ns, dtype=float))[None, :]
    errors = (sigma_star - projected) ** 2
    ranks = np.zeros_like(errors, dtype=int)
    best, degenerate = [], []
    for j in range(len(ns)):
        col = {b: -errors[i, j] for i, b in enumerate(betas)}
        rk = _rank_desc(col)
        for i, b in enumerate(betas):
            ranks[i, j] = rk[b]
        best.append(min(betas, key=lambda b: (errors[betas.index(b), j], b)))
        degenerate.append(bool(np.allclose(errors[:, j], errors[0, j], rtol=1e-12, atol=0)))
    return PredictedRanking(betas, ns, float(sigma_star), errors, ranks, best, degenerate)


def evaluate_policy(policy, env, n_episodes: int, mode: str = "deterministic_mean", seed=None,
                    obs_transform=None, trajectory: list | None = None) -> np.ndarray:
    """Run ``n_episodes`` full episodes in parallel and return their summed rewards.

    ``deterministic_mean`` acts with the mean action; ``stochastic`` samples
    i.i.d. Gaussian noise around it. If ``trajectory`` is a list, one
    ``(step, episode, obs, action, reward, done)`` tuple per step is appended.
    """
    from .envs import VecEnv

    if mode not in ("deterministic_mean", "stochastic"):
        raise ValueError(f"unknown evaluation mode {mode!r}")
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    env_ss, act_ss = ss.spawn(2)
    vec = VecEnv(env, n_episodes, seed=env_ss)
    act_rng = np.random.default_rng(act_ss)
    sigma = np.exp(policy.log_std)
    returns = np.zeros(n_episodes)
    active = np.ones(n_episodes, dtype=bool)
    obs = vec.observations()
    for t in range(vec.spec.max_episode_steps):
        x = obs_transform(obs) if obs_transform is not None else obs
        actions = policy.mean_net(x.astype(policy.dtype, copy=False)).astype(float)
        if mode == "stochastic":
            actions = actions + act_rng.standard_normal(actions.shape) * sigma
        res = vec.step_all(actions)
        returns += np.where(active, res.rewards, 0.0)
        ended = res.terminated | res.truncated
        if trajectory is not None:
            for i in np.nonzero(active)[0]:
                trajectory.append((t, i, obs[i].copy(), actions[i].copy(), res.rewards[i], ended[i]))
        active &= ~ended
        if not active.any():
            break
        obs = res.observations
    return returns


def random_policy_returns(env, n_episodes: int, seed=None) -> np.ndarray:
    """Episode returns of uniformly random actions within the action bounds."""
    from .envs import VecEnv

    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    env_ss, act_ss = ss.spawn(2)
    vec = VecEnv(env, n_episodes, seed=env_ss)
    rng = np.random.default_rng(act_ss)
    lo, hi = vec.spec.action_low, vec.spec.action_high
    returns = np.zeros(n_episodes)
    active = np.ones(n_episodes, dtype=bool)
    for _ in range(vec.spec.max_episode_steps):
        res = vec.step_all(rng.uniform(lo, hi, size=(n_episodes, vec.spec.action_dim)))
        returns += np.where(active, res.rewards, 0.0)
        active &= ~(res.terminated | res.truncated)
        if not active.any():
            break
    return returns
