"""Desk-scale continuous-control tasks and finite MDPs.

Continuous tasks
----------------
``point-mass``
    State ``(px, py, vx, vy)``. Action ``a`` in ``[-1, 1]^2``. One step::

        pos' = pos + 0.05 * vel
        vel' = vel + 0.05 * a

    followed by clipping ``pos'`` to ``[-2, 2]`` per axis (the velocity
    component along a clipped axis is zeroed) and ``vel'`` to ``[-2, 2]``.
    Reward ``-|pos'|_2 - 0.01 * |a|_2^2``. The episode terminates when
    ``|pos'|_2 < 0.05`` and is truncated after 200 steps. Reset draws
    ``pos ~ U[-1, 1]^2`` and sets ``vel = 0``.

``pendulum``
    Classic swing-up with ``theta = 0`` upright. Observation
    ``(cos theta, sin theta, theta_dot)``, torque in ``[-2, 2]``. One step
    with ``g = 10, m = l = 1, dt = 0.05``::

        reward     = -(wrap(theta)^2 + 0.1 * theta_dot^2 + 0.001 * torque^2)
        theta_dot' = clip(theta_dot + (3g/2l sin theta + 3/(m l^2) torque) dt, -8, 8)
        theta'     = theta + theta_dot' * dt

    Reward is computed on the pre-step state. Never terminates early;
    truncated after 200 steps. Reset draws ``theta ~ U[-pi, pi]`` and
    ``theta_dot ~ U[-1, 1]``.

Both tasks report ``terminated`` (a true terminal state, used for bootstrap
masking) separately from the ``done`` flag returned by :meth:`step`, which
also covers the time limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InvalidActionError, InvalidStateError, ShapeError


class ContinuousEnv:
    """Base class: subclasses set the class attributes and implement the hooks."""

    env_id: str = ""
    state_dim: int = 0
    action_dim: int = 0
    horizon: int = 200

    def __init__(self):
        self.action_low = np.full(self.action_dim, -1.0)
        self.action_high = np.full(self.action_dim, 1.0)
        self.steps = 0
        self.terminated = False
        self._state = np.zeros(self.state_dim)

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.steps = 0
        self.terminated = False
        self._reset(rng)
        return self.observe()

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        if action.shape != (self.action_dim,):
            raise ShapeError(f"expected action of size {self.action_dim}, got {action.shape}")
        if not np.isfinite(action).all():
            raise InvalidActionError(f"non-finite action {action}")
        action = np.clip(action, self.action_low, self.action_high)
        reward, terminated = self._step(action)
        self.steps += 1
        self.terminated = terminated
        done = terminated or self.steps >= self.horizon
        return self.observe(), float(reward), done

    def observe(self) -> np.ndarray:
        return self._state.copy()

    def _reset(self, rng):
        raise NotImplementedError

    def _step(self, action) -> tuple[float, bool]:
        raise NotImplementedError


class PointMass(ContinuousEnv):
    env_id = "point-mass"
    state_dim = 4
    action_dim = 2
    horizon = 200

    dt = 0.05
    pos_bound = 2.0
    vel_bound = 2.0
    goal_radius = 0.05
    action_cost = 0.01

    def _reset(self, rng):
        self._state = np.concatenate([rng.uniform(-1.0, 1.0, size=2), np.zeros(2)])

    def set_state(self, pos, vel):
        self._state = np.concatenate([np.asarray(pos, float), np.asarray(vel, float)])

    def _step(self, action):
        pos, vel = self._state[:2], self._state[2:]
        new_pos = pos + self.dt * vel
        new_vel = vel + self.dt * action
        hit = np.abs(new_pos) > self.pos_bound
        new_pos = np.clip(new_pos, -self.pos_bound, self.pos_bound)
        new_vel = np.where(hit, 0.0, np.clip(new_vel, -self.vel_bound, self.vel_bound))
        self._state = np.concatenate([new_pos, new_vel])
        dist = float(np.linalg.norm(new_pos))
        reward = -dist - self.action_cost * float(action @ action)
        return reward, dist < self.goal_radius


def wrap_angle(theta: float) -> float:
    """Map an angle into [-pi, pi)."""
    return ((theta + math.pi) % (2.0 * math.pi)) - math.pi


class Pendulum(ContinuousEnv):
    env_id = "pendulum"
    state_dim = 3
    action_dim = 1
    horizon = 200

    g = 10.0
    m = 1.0
    length = 1.0
    dt = 0.05
    max_speed = 8.0
    max_torque = 2.0

    def __init__(self):
        super().__init__()
        self.action_low = np.array([-self.max_torque])
        self.action_high = np.array([self.max_torque])
        self.theta = 0.0
        self.theta_dot = 0.0

    def _reset(self, rng):
        self.theta = float(rng.uniform(-math.pi, math.pi))
        self.theta_dot = float(rng.uniform(-1.0, 1.0))

    def set_state(self, theta, theta_dot):
        self.theta = float(theta)
        self.theta_dot = float(theta_dot)

    def observe(self):
        return np.array([math.cos(self.theta), math.sin(self.theta), self.theta_dot])

    def _step(self, action):
        torque = float(action[0])
        th, thdot = self.theta, self.theta_dot
        reward = -(wrap_angle(th) ** 2 + 0.1 * thdot**2 + 0.001 * torque**2)
        accel = 3.0 * self.g / (2.0 * self.length) * math.sin(th) + 3.0 / (
            self.m * self.length**2
        ) * torque
        thdot = min(max(thdot + accel * self.dt, -self.max_speed), self.max_speed)
        self.theta = th + thdot * self.dt
        self.theta_dot = thdot
        return reward, False


CONTINUOUS_ENVS = {PointMass.env_id: PointMass, Pendulum.env_id: Pendulum}


def make_env(env_id: str) -> ContinuousEnv:
    try:
        return CONTINUOUS_ENVS[env_id]()
    except KeyError:
        raise ConfigError(
            f"unknown env {env_id!r}; choose from {sorted(CONTINUOUS_ENVS)}"
        ) from None


def env_reset(env: ContinuousEnv, rng: np.random.Generator) -> np.ndarray:
    return env.reset(rng)


def env_step(env: ContinuousEnv, action) -> tuple[np.ndarray, float, bool]:
    return env.step(action)


# --------------------------------------------------------------------------
# finite MDPs


@dataclass
class TabularMDP:
    """Finite MDP with Gaussian rewards.

    ``transition[s, a, s']`` is P(s'|s,a). ``valid`` masks the actions
    available in each state (all True by default); maxima and minima over
    actions only range over valid ones. Terminal states have value 0.
    ``probe_action`` names the start-state action whose estimate bias
    experiments report; None means the optimal one.
    """

    transition: np.ndarray
    reward_mean: np.ndarray
    reward_std: np.ndarray
    gamma: float
    terminal: np.ndarray
    start_state: int = 0
    valid: np.ndarray | None = None
    probe_action: int | None = None
    name: str = field(default="mdp")

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=np.float64)
        n_s, n_a = self.transition.shape[:2]
        self.reward_mean = np.broadcast_to(
            np.asarray(self.reward_mean, dtype=np.float64), (n_s, n_a)
        ).copy()
        self.reward_std = np.broadcast_to(
            np.asarray(self.reward_std, dtype=np.float64), (n_s, n_a)
        ).copy()
        self.terminal = np.asarray(self.terminal, dtype=bool)
        self.valid = (
            np.ones((n_s, n_a), dtype=bool)
            if self.valid is None
            else np.asarray(self.valid, dtype=bool)
        )
        if self.transition.shape != (n_s, n_a, n_s) or self.terminal.shape != (n_s,):
            raise ShapeError("inconsistent MDP shapes")
        if self.valid.shape != (n_s, n_a) or not self.valid.any(axis=1).all():
            raise ShapeError("every state needs at least one valid action")
        if (self.transition < 0).any() or not np.allclose(
            self.transition.sum(axis=2), 1.0, rtol=0.0, atol=1e-12
        ):
            raise ConfigError("transition rows must be distributions")
        if (self.reward_std < 0).any():
            raise ConfigError("reward_std must be non-negative")
        # gamma = 1 is allowed for episodic MDPs whose paths all terminate
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def valid_actions(self, s: int) -> np.ndarray:
        return np.flatnonzero(self.valid[s])


def make_maximization_bias_mdp(
    n_arms: int = 8, mu: float = -0.1, sigma: float = 1.0, gamma: float = 1.0
) -> TabularMDP:
    """Two-decision MDP where greedy bootstrapping is fooled by noise.

    State A (0) offers ``go`` (action 0, to B, reward 0) and ``stop``
    (action 1, to the terminal state, reward 0). State B (1) offers
    ``n_arms`` actions, each ending the episode with reward
    ``Normal(mu, sigma)``. State 2 is terminal. Q*(A, go) = gamma * mu.
    """
    if n_arms < 2:
        raise ConfigError(f"n_arms must be >= 2, got {n_arms}")
    if sigma < 0:
        raise ConfigError(f"sigma must be >= 0, got {sigma}")
    n_a = max(2, n_arms)
    a_state, b_state, end = 0, 1, 2
    P = np.zeros((3, n_a, 3))
    P[:, :, end] = 1.0
    P[a_state, 0, :] = [0.0, 1.0, 0.0]
    mean = np.zeros((3, n_a))
    std = np.zeros((3, n_a))
    mean[b_state, :n_arms] = mu
    std[b_state, :n_arms] = sigma
    valid = np.zeros((3, n_a), dtype=bool)
    valid[a_state, :2] = True
    valid[b_state, :n_arms] = True
    valid[end, 0] = True
    return TabularMDP(
        P, mean, std, gamma, np.array([False, False, True]),
        start_state=a_state, valid=valid, probe_action=0, name="max-bias",
    )


def make_random_mdp(
    rng: np.random.Generator,
    n_states: int = 6,
    n_actions: int = 3,
    gamma: float = 0.9,
    reward_std: float = 0.0,
) -> TabularMDP:
    """Dense random MDP with Dirichlet transition rows and no terminal states."""
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    # renormalize so rows sum to 1 to machine precision
    P /= P.sum(axis=2, keepdims=True)
    mean = rng.normal(size=(n_states, n_actions))
    return TabularMDP(
        P, mean, reward_std, gamma, np.zeros(n_states, dtype=bool), name="random"
    )


def make_chain_mdp(length: int, reward: float = 1.0, gamma: float = 0.5) -> TabularMDP:
    """Deterministic chain 0 -> 1 -> ... -> length (terminal), one action."""
    n = length + 1
    P = np.zeros((n, 1, n))
    for s in range(length):
        P[s, 0, s + 1] = 1.0
    P[length, 0, length] = 1.0
    mean = np.full((n, 1), reward)
    mean[length] = 0.0
    terminal = np.zeros(n, dtype=bool)
    terminal[length] = True
    return TabularMDP(P, mean, 0.0, gamma, terminal, name="chain")


TABULAR_MDPS = {"max-bias": make_maximization_bias_mdp}


def mdp_sample_step(
    mdp: TabularMDP, s: int, a: int, rng: np.random.Generator
) -> tuple[int, float]:
    """Sample ``(s', r)`` from state ``s`` under action ``a``."""
    if not 0 <= s < mdp.n_states:
        raise IndexError(f"state {s} out of range")
    if mdp.terminal[s]:
        raise InvalidStateError(f"state {s} is terminal")
    if not 0 <= a < mdp.n_actions or not mdp.valid[s, a]:
        raise IndexError(f"action {a} is not valid in state {s}")
    row = mdp.transition[s, a]
    s_next = int(rng.choice(mdp.n_states, p=row))
    std = mdp.reward_std[s, a]
    r = float(mdp.reward_mean[s, a])
    if std > 0:
        r += float(std * rng.standard_normal())
    return s_next, r
