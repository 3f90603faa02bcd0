"""Ensemble actor-critic agents: DDPG, TD3 and the std-Q-target (SQT) variant.

All three share one implementation and differ only in configuration:

========  ==========  =====  ========  ================
variant   n_networks  alpha  operator  target smoothing
========  ==========  =====  ========  ================
ddpg      1           0      mean      off
td3       2           0      min       on
sqt       N (4)       >= 0   any       on
========  ==========  =====  ========  ================

The critic regression target for a batch is::

    y = r + gamma * (1 - done) * Op_i[Q'_i(s', a')] - alpha * penalty

where ``a' = mu'(s')`` (plus clipped smoothing noise), ``Op`` reduces
across the ensemble and ``penalty`` is the batch mean of the population
standard deviation of the target critics at ``(s', a')``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    EmptyBatchError,
    PoisonedTargetError,
    PoisonedUpdateError,
    ShapeError,
)
from .numerics import (
    AdamState,
    MlpParams,
    adam_step,
    make_rng,
    mlp_backward,
    mlp_init,
    mlp_trace,
)
from .replay import Batch, ReplayBuffer, Transition

VARIANTS = ("ddpg", "td3", "sqt")
Q_OPERATORS = ("min", "mean", "weighted_minmax")
_OPERATOR_ALIASES = {"wminmax": "weighted_minmax"}


def canonical_operator(name: str) -> str:
    name = _OPERATOR_ALIASES.get(name, name)
    if name not in Q_OPERATORS:
        raise ConfigError(f"unknown q operator {name!r}; choose from {Q_OPERATORS}")
    return name


@dataclass
class TrainingConfig:
    """Hyperparameters for one agent.

    Network widths, learning rates, noise scales, warmup and the target
    interval are engineering defaults, not values fixed by the method.
    ``mask_penalty`` moves the penalty inside the discount and termination
    mask; ``per_element_penalty`` uses each sample's own ensemble std
    instead of the batch mean. Both default off.
    """

    gamma: float = 0.99
    alpha: float = 0.1
    n_networks: int = 4
    q_operator: str = "min"
    weighted_lambda: float = 0.75
    noise_std: float = 0.1
    target_smoothing: bool = True
    smoothing_std: float = 0.2
    smoothing_clip: float = 0.5
    target_interval: int = 250
    batch_size: int = 256
    updates_per_step: int = 1
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    warmup_steps: int = 1000
    total_steps: int = 100_000
    hidden_sizes: tuple[int, ...] = (256, 256)
    buffer_capacity: int = 1_000_000
    mask_penalty: bool = False
    per_element_penalty: bool = False

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        self.q_operator = canonical_operator(self.q_operator)
        self.validate()

    def validate(self) -> None:
        checks = [
            (0.0 <= self.gamma < 1.0, "gamma must lie in [0, 1)"),
            (self.alpha >= 0.0, "alpha must be >= 0"),
            (self.n_networks >= 1, "n_networks must be >= 1"),
            (0.0 <= self.weighted_lambda <= 1.0, "weighted_lambda must lie in [0, 1]"),
            (self.noise_std >= 0.0, "noise_std must be >= 0"),
            (self.smoothing_std >= 0.0 and self.smoothing_clip >= 0.0, "smoothing must be >= 0"),
            (self.target_interval >= 1, "target_interval must be positive"),
            (self.batch_size >= 1, "batch_size must be positive"),
            (self.updates_per_step >= 1, "updates_per_step must be positive"),
            (self.actor_lr > 0 and self.critic_lr > 0, "learning rates must be positive"),
            (self.warmup_steps >= 0 and self.total_steps >= 0, "step counts must be >= 0"),
            (self.buffer_capacity >= 1, "buffer_capacity must be positive"),
            (all(h >= 1 for h in self.hidden_sizes), "hidden sizes must be positive"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    def replace(self, **changes) -> TrainingConfig:
        return dataclasses.replace(self, **changes)


def variant_config(variant: str, config: TrainingConfig | None = None, **overrides) -> TrainingConfig:
    """Config for ``variant``: DDPG and TD3 pin their ensemble settings."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    base = config if config is not None else TrainingConfig()
    if variant == "ddpg":
        overrides.update(n_networks=1, alpha=0.0, q_operator="mean", target_smoothing=False)
    elif variant == "td3":
        overrides.update(n_networks=2, alpha=0.0, q_operator="min", target_smoothing=True)
    return base.replace(**overrides)


def _check_variant(variant: str, config: TrainingConfig) -> None:
    if variant == "ddpg" and (config.n_networks, config.alpha, config.q_operator) != (1, 0.0, "mean"):
        raise ConfigError("ddpg requires n_networks=1, alpha=0, q_operator=mean")
    if variant == "td3" and (config.n_networks, config.alpha, config.q_operator) != (2, 0.0, "min"):
        raise ConfigError("td3 requires n_networks=2, alpha=0, q_operator=min")


# --------------------------------------------------------------------------
# ensemble reductions


def ensemble_std(values: np.ndarray) -> np.ndarray:
    """Population std across axis 0.

    Two-pass on values shifted by the first member, so bit-identical members
    give exactly 0.
    """
    values = np.asarray(values, dtype=np.float64)
    d = values - values[0]
    m = d.mean(axis=0)
    return np.sqrt(np.mean((d - m) ** 2, axis=0))


def q_operator_apply(values, mode: str, lam: float = 0.75) -> np.ndarray:
    """Reduce an ``(N, batch)`` matrix of ensemble values to ``(batch,)``."""
    values = np.asarray(values, dtype=np.float64)
    mode = canonical_operator(mode)
    if values.ndim != 2 or values.shape[0] < 1:
        raise ShapeError(f"expected (N, batch) values, got shape {values.shape}")
    lo = values.min(axis=0)
    if mode == "min":
        return lo
    hi = values.max(axis=0)
    if mode == "mean":
        # rounding can push the mean a hair outside [min, max]
        return np.minimum(np.maximum(values.mean(axis=0), lo), hi)
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must lie in [0, 1], got {lam}")
    # lam*lo + (1-lam)*hi, written so lam=1 and lo == hi are exact
    return lo + (1.0 - lam) * (hi - lo)


# --------------------------------------------------------------------------
# networks


class EnsembleCritic:
    """N critics ``concat(s, a) -> Q`` stored as one stacked parameter set."""

    def __init__(self, rng, state_dim: int, action_dim: int, hidden_sizes, n_networks: int):
        sizes = [state_dim + action_dim, *hidden_sizes, 1]
        self.params = mlp_init(rng, sizes, "relu", "linear", n_members=n_networks)
        self.target = self.params.copy()
        self.opt = AdamState.zeros_like(self.params)

    @property
    def n_networks(self) -> int:
        return self.params.n_members

    def values(self, states, actions, target: bool = False) -> np.ndarray:
        """Q values of shape ``(N, batch)``."""
        x = np.concatenate([np.atleast_2d(states), np.atleast_2d(actions)], axis=1)
        out, _ = mlp_trace(self.target if target else self.params, x)
        return out[..., 0]

    def sync_target(self) -> None:
        self.target = self.params.copy()


class ActorPolicy:
    """Deterministic policy with a tanh head rescaled to the action box."""

    def __init__(self, rng, state_dim: int, action_low, action_high, hidden_sizes):
        self.action_low = np.asarray(action_low, dtype=np.float64)
        self.action_high = np.asarray(action_high, dtype=np.float64)
        self.center = (self.action_high + self.action_low) / 2.0
        self.scale = (self.action_high - self.action_low) / 2.0
        sizes = [state_dim, *hidden_sizes, len(self.action_low)]
        self.params = mlp_init(rng, sizes, "relu", "tanh")
        self.target = self.params.copy()
        self.opt = AdamState.zeros_like(self.params)

    def act(self, states, target: bool = False) -> np.ndarray:
        out, _ = mlp_trace(self.target if target else self.params, states)
        return self.clip(self.center + self.scale * out)

    def clip(self, actions) -> np.ndarray:
        return np.clip(actions, self.action_low, self.action_high)

    def sync_target(self) -> None:
        self.target = self.params.copy()


@dataclass
class EpisodeRecord:
    episode: int
    end_step: int
    length: int
    episode_return: float
    mean_penalty: float
    mean_critic_loss: float


@dataclass
class TargetParts:
    """Pieces of a target computation, kept for diagnostics."""

    bootstrap: np.ndarray  # r + gamma * (1 - done) * q
    q: np.ndarray
    penalty: np.ndarray  # scalar array, or per-sample with per_element_penalty
    y: np.ndarray


class Agent:
    def __init__(
        self,
        variant: str,
        state_dim: int,
        action_dim: int,
        action_low,
        action_high,
        config: TrainingConfig | None = None,
        seed: int = 0,
    ):
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}; choose from {VARIANTS}")
        config = config if config is not None else variant_config(variant)
        config.validate()
        _check_variant(variant, config)
        self.variant = variant
        self.config = config
        self.seed = int(seed)
        self.state_dim = int(state_dim)
        self.action_dim = int(action_dim)
        init_rng = make_rng(seed, 0)
        self.critic = EnsembleCritic(
            init_rng, state_dim, action_dim, config.hidden_sizes, config.n_networks
        )
        self.actor = ActorPolicy(init_rng, state_dim, action_low, action_high, config.hidden_sizes)
        if self.actor.action_low.shape != (action_dim,):
            raise ShapeError("action bounds do not match action_dim")
        self.buffer = ReplayBuffer(config.buffer_capacity, state_dim, action_dim)
        self.rng = make_rng(seed, 1)
        self.env_steps = 0
        self.update_count = 0

    @classmethod
    def for_env(cls, variant, env, config=None, seed=0) -> Agent:
        return cls(variant, env.state_dim, env.action_dim, env.action_low, env.action_high, config, seed)

    def update(self, batch: Batch | None = None) -> dict:
        """One gradient iteration: target, critics, actor, interval target copy."""
        if batch is None:
            batch = self.buffer.sample(self.rng, self.config.batch_size)
        parts = target_parts(self, batch)
        loss = critic_update(self, batch, parts.y)
        actor_update(self, batch)
        self.update_count += 1
        target_update(self)
        return {"batch": batch, "parts": parts, "loss": loss, "penalty": float(np.mean(parts.penalty))}


def sqt_penalty(critic: EnsembleCritic, states, actions, per_element: bool = False):
    """Batch mean of the target ensemble's population std at ``(states, actions)``."""
    states = np.atleast_2d(states)
    if states.shape[0] == 0:
        raise EmptyBatchError("penalty of an empty batch")
    std = ensemble_std(critic.values(states, actions, target=True))
    return std if per_element else float(std.mean())


def _next_actions(agent: Agent, s_next: np.ndarray, noise=None) -> np.ndarray:
    a_next = agent.actor.act(s_next, target=True)
    cfg = agent.config
    if cfg.target_smoothing:
        if noise is None:
            noise = agent.rng.normal(0.0, cfg.smoothing_std, size=a_next.shape)
        noise = np.clip(noise, -cfg.smoothing_clip, cfg.smoothing_clip)
        a_next = agent.actor.clip(a_next + agent.actor.scale * noise)
    return a_next


def target_parts(agent: Agent, batch: Batch, noise=None, alpha: float | None = None) -> TargetParts:
    """Compute the critic target with its components.

    ``noise`` (unit-scale, per action dim) overrides the drawn smoothing
    noise; ``alpha`` overrides the configured penalty weight.
    """
    if len(batch) == 0:
        raise EmptyBatchError("target of an empty batch")
    cfg = agent.config
    alpha = cfg.alpha if alpha is None else alpha
    a_next = _next_actions(agent, batch.s_next, noise)
    values = agent.critic.values(batch.s_next, a_next, target=True)
    q = q_operator_apply(values, cfg.q_operator, cfg.weighted_lambda)
    std = ensemble_std(values)
    penalty = std if cfg.per_element_penalty else np.array(std.mean())
    not_done = 1.0 - batch.done
    bootstrap = batch.r + cfg.gamma * not_done * q
    if cfg.mask_penalty:
        y = batch.r + cfg.gamma * not_done * (q - alpha * penalty)
    else:
        y = bootstrap - alpha * penalty
    if not np.isfinite(y).all():
        raise PoisonedTargetError("non-finite critic target")
    return TargetParts(bootstrap, q, penalty, y)


def compute_target(agent: Agent, batch: Batch, noise=None) -> np.ndarray:
    return target_parts(agent, batch, noise).y


def critic_update(agent: Agent, batch: Batch, y) -> float:
    """One Adam step per critic on its own mean squared TD error.

    Returns the loss averaged over critics, measured before the step.
    """
    y = np.asarray(y, dtype=np.float64)
    if not np.isfinite(y).all():
        raise PoisonedTargetError("non-finite critic target")
    critic = agent.critic
    x = np.concatenate([batch.s, batch.a], axis=1)
    q, trace = mlp_trace(critic.params, x)
    diff = q[..., 0] - y
    loss = float(np.mean(diff * diff))
    if not np.isfinite(loss):
        raise PoisonedUpdateError("non-finite critic loss")
    upstream = (2.0 / len(y)) * diff[..., None]
    grads, _ = mlp_backward(critic.params, trace, upstream)
    critic.params, critic.opt = adam_step(critic.params, grads, critic.opt, agent.config.critic_lr)
    return loss


def actor_update(agent: Agent, batch: Batch) -> None:
    """One Adam ascent step on the batch mean of the ensemble-mean Q(s, mu(s))."""
    actor, critic = agent.actor, agent.critic
    states = batch.s
    n, b = critic.n_networks, len(states)
    raw, actor_trace = mlp_trace(actor.params, states)
    actions = actor.center + actor.scale * raw
    x = np.concatenate([states, actions], axis=1)
    q, critic_trace = mlp_trace(critic.params, x)
    # minimize -J with J = mean over batch and networks of Q
    upstream = np.full(q.shape, -1.0 / (n * b))
    _, dx = mlp_backward(critic.params, critic_trace, upstream, param_grads=False)
    d_actions = dx[..., agent.state_dim:].sum(axis=0)
    grads, _ = mlp_backward(actor.params, actor_trace, d_actions * actor.scale)
    actor.params, actor.opt = adam_step(actor.params, grads, actor.opt, agent.config.actor_lr)


def target_update(agent: Agent) -> bool:
    """Hard-copy live parameters into the targets every ``target_interval`` updates."""
    if agent.update_count % agent.config.target_interval != 0:
        return False
    agent.critic.sync_target()
    agent.actor.sync_target()
    return True


def select_action(agent: Agent, s, explore: bool, rng: np.random.Generator) -> np.ndarray:
    """Greedy action, plus Gaussian exploration noise when ``explore``.

    While exploring during warmup the action is uniform over the box.
    """
    actor = agent.actor
    if explore and agent.env_steps < agent.config.warmup_steps:
        return rng.uniform(actor.action_low, actor.action_high)
    a = actor.act(np.asarray(s, dtype=np.float64))
    if explore and agent.config.noise_std > 0:
        a = a + rng.normal(0.0, agent.config.noise_std * actor.scale)
    return actor.clip(a)


def train(
    agent: Agent,
    env,
    total_steps: int,
    env_rng: np.random.Generator | None = None,
    callback=None,
    on_update=None,
) -> list[EpisodeRecord]:
    """Interleave environment steps with ``updates_per_step`` gradient iterations.

    ``callback(agent, step)`` runs after every environment step (1-based
    ``step`` within this call); ``on_update(agent, info)`` after every
    gradient iteration. A final partial episode is not recorded.
    """
    if (env.state_dim, env.action_dim) != (agent.state_dim, agent.action_dim):
        raise ShapeError("agent and environment dimensions differ")
    if total_steps <= 0:
        return []
    cfg = agent.config
    env_rng = env_rng if env_rng is not None else make_rng(agent.seed, 2)
    records: list[EpisodeRecord] = []
    s = env.reset(env_rng)
    ep_return, ep_len, penalties, losses = 0.0, 0, [], []
    for step in range(1, total_steps + 1):
        a = select_action(agent, s, True, agent.rng)
        s_next, r, done = env.step(a)
        agent.buffer.push(Transition(s, a, r, s_next, env.terminated))
        agent.env_steps += 1
        ep_return += r
        ep_len += 1
        if agent.env_steps >= cfg.warmup_steps:
            for _ in range(cfg.updates_per_step):
                try:
                    info = agent.update()
                except PoisonedUpdateError as exc:
                    raise type(exc)(str(exc), step=agent.env_steps) from exc
                penalties.append(info["penalty"])
                losses.append(info["loss"])
                if on_update is not None:
                    on_update(agent, info)
        if done:
            records.append(
                EpisodeRecord(
                    episode=len(records),
                    end_step=agent.env_steps,
                    length=ep_len,
                    episode_return=ep_return,
                    mean_penalty=float(np.mean(penalties)) if penalties else float("nan"),
                    mean_critic_loss=float(np.mean(losses)) if losses else float("nan"),
                )
            )
            s = env.reset(env_rng)
            ep_return, ep_len, penalties, losses = 0.0, 0, [], []
        else:
            s = s_next
        if callback is not None:
            callback(agent, step)
    return records


def evaluate(agent: Agent, env, episodes: int, rng: np.random.Generator) -> float:
    """Mean undiscounted return of the greedy policy over ``episodes`` episodes."""
    total = 0.0
    for _ in range(episodes):
        s = env.reset(rng)
        done = False
        while not done:
            s, r, done = env.step(select_action(agent, s, False, rng))
            total += r
    return total / episodes
