"""Closed-form continuous-control environments, vectorized over instances.

Every environment is a small set of array functions (initial state,
observation, dynamics) so that ``N`` parallel instances advance with a
handful of numpy calls. Instances never share random state.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


@dataclass(frozen=True)
class EnvSpec:
    name: str
    obs_dim: int
    action_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    max_episode_steps: int
    reward_structure: str
    reward_range: tuple[float, float]

    def __post_init__(self):
        if not np.all(np.asarray(self.action_low) < np.asarray(self.action_high)):
            raise ValueError("action_low must be below action_high elementwise")
        if self.reward_structure not in ("dense", "sparse"):
            raise ValueError(f"unknown reward structure {self.reward_structure!r}")


class PendulumSwingup:
    """Torque-limited pendulum starting near the hanging position.

    State ``(theta, theta_dot)`` with ``theta = 0`` upright. The torque alone
    cannot hold the pendulum horizontal, so reaching the top needs swinging.
    Reward per step is the normalized height ``(1 + cos theta) / 2`` in [0, 1].
    Observation: ``(cos theta, sin theta, theta_dot / max_speed)``.
    """

    gravity = 10.0
    mass = 1.0
    length = 1.0
    dt = 0.05
    max_speed = 8.0
    max_torque = 2.0

    def __init__(self, reset_jitter: float = 0.1, max_episode_steps: int = 200):
        self.reset_jitter = reset_jitter
        self.spec = EnvSpec("pendulum-swingup", 3, 1, np.array([-self.max_torque]),
                            np.array([self.max_torque]), max_episode_steps, "dense", (0.0, 1.0))

    def initial_state(self, rng):
        theta = np.pi + rng.uniform(-self.reset_jitter, self.reset_jitter)
        return np.array([theta, 0.0])

    def observe(self, state):
        th, thdot = state[..., 0], state[..., 1]
        return np.stack([np.cos(th), np.sin(th), thdot / self.max_speed], axis=-1)

    def dynamics(self, state, action):
        th, thdot = state[:, 0], state[:, 1]
        u = action[:, 0]
        g, m, l, dt = self.gravity, self.mass, self.length, self.dt
        thdot = thdot + (3.0 * g / (2.0 * l) * np.sin(th) + 3.0 / (m * l**2) * u) * dt
        thdot = np.clip(thdot, -self.max_speed, self.max_speed)
        th = th + thdot * dt
        th = (th + np.pi) % (2.0 * np.pi) - np.pi
        reward = 0.5 * (1.0 + np.cos(th))
        return np.stack([th, thdot], axis=1), reward, np.zeros(len(th), dtype=bool)


class MountainCarContinuous:
    """Underpowered car in a valley; the hill can only be climbed by rocking.

    Reward is 100 on reaching the flag minus ``0.1 * a**2`` every step, so the
    per-step reward lies in [-0.1, 100]. Observation: ``(position, velocity /
    max_speed)``.
    """

    min_position = -1.2
    max_position = 0.6
    max_speed = 0.07
    goal_position = 0.45
    power = 0.0015

    def __init__(self, max_episode_steps: int = 999):
        self.spec = EnvSpec("continuous-mountain-car", 2, 1, np.array([-1.0]), np.array([1.0]),
                            max_episode_steps, "sparse", (-0.1, 100.0))

    def initial_state(self, rng):
        return np.array([rng.uniform(-0.6, -0.4), 0.0])

    def observe(self, state):
        return np.stack([state[..., 0], state[..., 1] / self.max_speed], axis=-1)

    def dynamics(self, state, action):
        pos, vel = state[:, 0], state[:, 1]
        force = action[:, 0]
        vel = vel + force * self.power - 0.0025 * np.cos(3.0 * pos)
        vel = np.clip(vel, -self.max_speed, self.max_speed)
        pos = np.clip(pos + vel, self.min_position, self.max_position)
        vel = np.where((pos <= self.min_position) & (vel < 0), 0.0, vel)
        done = (pos >= self.goal_position) & (vel >= 0)
        reward = -0.1 * force**2 + 100.0 * done
        return np.stack([pos, vel], axis=1), reward, done


class SparsePointMaze:
    """Velocity-controlled point in a U-shaped corridor with a goal-only reward.

    Layout (cells of unit size, ``#`` wall, ``S`` start, ``G`` goal)::

        #####
        #G..#
        ###.#
        #S..#
        #####

    The point moves by ``speed * action`` per step and slides along walls.
    Entering the goal disk gives reward 1 and ends the episode; every other
    step gives 0. Observation: position scaled to [-1, 1] per axis.
    """

    layout = ("#####",
              "#G..#",
              "###.#",
              "#S..#",
              "#####")

    def __init__(self, speed: float = 0.1, goal_radius: float = 0.35,
                 reset_jitter: float = 0.05, max_episode_steps: int = 400):
        self.speed = speed
        self.goal_radius = goal_radius
        self.reset_jitter = reset_jitter
        rows = self.layout[::-1]  # row 0 at y = 0
        self.free = np.array([[c != "#" for c in row] for row in rows]).T  # indexed [x, y]
        self.start = self._cell_center(rows, "S")
        self.goal = self._cell_center(rows, "G")
        self.extent = np.array(self.free.shape, dtype=float)
        self.spec = EnvSpec("sparse-point-maze", 2, 2, -np.ones(2), np.ones(2),
                            max_episode_steps, "sparse", (0.0, 1.0))

    @staticmethod
    def _cell_center(rows, char):
        for y, row in enumerate(rows):
            x = row.find(char)
            if x >= 0:
                return np.array([x + 0.5, y + 0.5])
        raise ValueError(f"layout lacks {char!r}")

    def is_free(self, pos):
        ix = np.floor(pos[:, 0]).astype(int)
        iy = np.floor(pos[:, 1]).astype(int)
        inside = (ix >= 0) & (iy >= 0) & (ix < self.free.shape[0]) & (iy < self.free.shape[1])
        out = np.zeros(len(pos), dtype=bool)
        out[inside] = self.free[ix[inside], iy[inside]]
        return out

    def initial_state(self, rng):
        return self.start + rng.uniform(-self.reset_jitter, self.reset_jitter, size=2)

    def observe(self, state):
        return (state - self.extent / 2.0) / (self.extent / 2.0)

    def dynamics(self, state, action):
        step = self.speed * action
        full = state + step
        ok = self.is_free(full)
        x_only = state + step * np.array([1.0, 0.0])
        ok_x = ~ok & self.is_free(x_only)
        y_only = state + step * np.array([0.0, 1.0])
        ok_y = ~ok & ~ok_x & self.is_free(y_only)
        new = np.where(ok[:, None], full, state)
        new = np.where(ok_x[:, None], x_only, new)
        new = np.where(ok_y[:, None], y_only, new)
        done = np.linalg.norm(new - self.goal, axis=1) < self.goal_radius
        return new, done.astype(float), done


ENVIRONMENTS = {
    "pendulum-swingup": PendulumSwingup,
    "continuous-mountain-car": MountainCarContinuous,
    "sparse-point-maze": SparsePointMaze,
}


def make_env(name: str, **kwargs):
    try:
        return ENVIRONMENTS[name](**kwargs)
    except KeyError:
        raise ValueError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None


class StepResult(NamedTuple):
    observations: np.ndarray
    rewards: np.ndarray
    terminated: np.ndarray
    truncated: np.ndarray
    final_observations: np.ndarray


class VecEnv:
    """``n_envs`` independent copies of one environment with auto-reset.

    After an episode ends (terminated or truncated) the returned observation
    for that slot already belongs to the next episode; the last observation
    of the finished episode is in ``StepResult.final_observations``.
    Actions are clipped to the action bounds before the dynamics.
    """

    def __init__(self, env, n_envs: int, seed=None):
        self.env = make_env(env) if isinstance(env, str) else env
        self.spec: EnvSpec = self.env.spec
        self.n_envs = int(n_envs)
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        self.rngs = [np.random.default_rng(c) for c in ss.spawn(self.n_envs)]
        self.states = np.stack([self.env.initial_state(r) for r in self.rngs])
        self.episode_step_counts = np.zeros(self.n_envs, dtype=np.int64)

    def reset(self, env_index: int) -> np.ndarray:
        self.states[env_index] = self.env.initial_state(self.rngs[env_index])
        self.episode_step_counts[env_index] = 0
        return self.env.observe(self.states[env_index])

    def reset_all(self) -> np.ndarray:
        for i in range(self.n_envs):
            self.reset(i)
        return self.observations()

    def observations(self) -> np.ndarray:
        return self.env.observe(self.states)

    def clip_actions(self, actions) -> np.ndarray:
        return np.clip(actions, self.spec.action_low, self.spec.action_high)

    def step_all(self, actions) -> StepResult:
        actions = np.asarray(actions, dtype=float).reshape(self.n_envs, self.spec.action_dim)
        if not np.all(np.isfinite(actions)):
            raise ValueError("non-finite action passed to step_all")
        states, rewards, terminated = self.env.dynamics(self.states, self.clip_actions(actions))
        self.states = states
        self.episode_step_counts += 1
        truncated = ~terminated & (self.episode_step_counts >= self.spec.max_episode_steps)
        obs = self.env.observe(states)
        final = obs.copy()
        for i in np.nonzero(terminated | truncated)[0]:
            obs[i] = self.reset(i)
        return StepResult(obs, rewards, terminated, truncated, final)


def dump_trajectory(path, rows) -> None:
    """Write ``(step, env_index, obs, action, reward, done)`` rows as CSV."""
    rows = list(rows)
    if not rows:
        raise ValueError("no trajectory rows to write")
    obs_dim = len(rows[0][2])
    act_dim = len(rows[0][3])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "env_index", *[f"obs{i}" for i in range(obs_dim)],
                    *[f"action{i}" for i in range(act_dim)], "reward", "done"])
        for step, env_index, obs, action, reward, done in rows:
            w.writerow([int(step), int(env_index), *map(repr, map(float, obs)),
                        *map(repr, map(float, action)), repr(float(reward)), int(bool(done))])
