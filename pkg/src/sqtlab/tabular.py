"""Tabular value-estimation rules, a value-iteration oracle, and bias experiments.

Every rule here respects the owning MDP's valid-action mask and treats
terminal successor states as having value 0.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .envs import TabularMDP, mdp_sample_step
from .errors import ConfigError, DivergenceError, ShapeError
from .numerics import make_rng


class QTable:
    """Action values with visit counts.

    ``valid`` and ``terminal`` default to "everything valid" and "nothing
    terminal"; :meth:`for_mdp` copies them from an MDP.
    """

    def __init__(self, values, valid=None, terminal=None):
        self.values = np.array(values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeError(f"Q table must be 2-D, got shape {self.values.shape}")
        n_s, n_a = self.values.shape
        self.valid = np.ones((n_s, n_a), bool) if valid is None else np.asarray(valid, bool)
        self.terminal = np.zeros(n_s, bool) if terminal is None else np.asarray(terminal, bool)
        self.visit_counts = np.zeros((n_s, n_a), dtype=np.int64)

    @classmethod
    def for_mdp(cls, mdp: TabularMDP, fill: float = 0.0) -> QTable:
        return cls(np.full((mdp.n_states, mdp.n_actions), fill), mdp.valid, mdp.terminal)

    @property
    def shape(self):
        return self.values.shape

    def copy(self) -> QTable:
        q = QTable(self.values, self.valid, self.terminal)
        q.visit_counts = self.visit_counts.copy()
        return q

    def check_index(self, s: int, a: int | None = None) -> None:
        n_s, n_a = self.values.shape
        if not 0 <= s < n_s:
            raise IndexError(f"state {s} out of range [0, {n_s})")
        if a is not None and not 0 <= a < n_a:
            raise IndexError(f"action {a} out of range [0, {n_a})")

    def row(self, s: int) -> np.ndarray:
        """Values of the valid actions in ``s``."""
        return self.values[s, self.valid[s]]

    def max_value(self, s: int) -> float:
        return 0.0 if self.terminal[s] else float(self.row(s).max())

    def min_value(self, s: int) -> float:
        return 0.0 if self.terminal[s] else float(self.row(s).min())

    def greedy(self, s: int, rng: np.random.Generator | None = None) -> int:
        """Argmax over valid actions; ties broken uniformly when ``rng`` is given."""
        return _argmax(self.values[s], self.valid[s], rng)


def _argmax(row: np.ndarray, valid: np.ndarray, rng=None) -> int:
    idx = np.flatnonzero(valid)
    vals = row[idx]
    best = idx[vals == vals.max()]
    if rng is None or len(best) == 1:
        return int(best[0])
    return int(best[rng.integers(len(best))])


@dataclass
class TabularPolicy:
    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2:
            raise ShapeError("policy must be an (n_states, n_actions) matrix")
        if (self.probs < 0).any() or not np.allclose(self.probs.sum(axis=1), 1.0, rtol=0, atol=1e-12):
            raise ConfigError("policy rows must be probability distributions")

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> TabularPolicy:
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions: Sequence[int], n_actions: int) -> TabularPolicy:
        probs = np.zeros((len(actions), n_actions))
        probs[np.arange(len(actions)), actions] = 1.0
        return cls(probs)


# --------------------------------------------------------------------------
# oracle


def bellman_backup(mdp: TabularMDP, values: np.ndarray) -> np.ndarray:
    """One optimal Bellman backup of a Q matrix using expected rewards."""
    masked = np.where(mdp.valid, values, -np.inf)
    v = np.where(mdp.terminal, 0.0, masked.max(axis=1))
    q = mdp.reward_mean + mdp.gamma * (mdp.transition @ v)
    q[mdp.terminal] = 0.0
    return np.where(mdp.valid, q, 0.0)


def bellman_residual(mdp: TabularMDP, values: np.ndarray) -> float:
    return float(np.abs(bellman_backup(mdp, values) - values).max())


def value_iteration(mdp: TabularMDP, tol: float = 1e-10, max_sweeps: int = 1_000_000) -> QTable:
    """Q* by repeated synchronous Bellman backups until the sup-norm change < ``tol``."""
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_sweeps):
        new = bellman_backup(mdp, q)
        delta = float(np.abs(new - q).max())
        q = new
        if delta < tol:
            return QTable(q, mdp.valid, mdp.terminal)
    raise DivergenceError(f"value iteration did not converge in {max_sweeps} sweeps")


# --------------------------------------------------------------------------
# update rules


def _check_unit(name: str, x: float) -> None:
    if not 0.0 <= x <= 1.0:
        raise ConfigError(f"{name} must lie in [0, 1], got {x}")


def _toward_min(hi: float, lo: float, w: float) -> float:
    """(1 - w) hi + w lo, exact at w in {0, 1} and monotone in w under rounding."""
    if w == 1.0:
        return lo
    return max(lo, hi - w * (hi - lo))


def q_learning_target(q: QTable, s_next: int, r: float, gamma: float) -> float:
    return r + gamma * q.max_value(s_next)


def q_learning_step(q: QTable, s: int, a: int, r: float, s_next: int, lr: float, gamma: float) -> None:
    """Q(s,a) <- (1 - lr) Q(s,a) + lr (r + gamma max_a' Q(s',a'))."""
    q.check_index(s, a)
    q.check_index(s_next)
    target = q_learning_target(q, s_next, r, gamma)
    q.values[s, a] = (1.0 - lr) * q.values[s, a] + lr * target
    q.visit_counts[s, a] += 1


def double_q_step(
    qa: QTable, qb: QTable, s: int, a: int, r: float, s_next: int,
    lr: float, gamma: float, rng: np.random.Generator,
) -> QTable:
    """Update one table (fair coin) from the other at its own argmax. Returns the updated table."""
    qa.check_index(s, a)
    qa.check_index(s_next)
    upd, other = (qa, qb) if rng.random() < 0.5 else (qb, qa)
    if upd.terminal[s_next]:
        bootstrap = 0.0
    else:
        bootstrap = other.values[s_next, upd.greedy(s_next, rng)]
    upd.values[s, a] = (1.0 - lr) * upd.values[s, a] + lr * (r + gamma * bootstrap)
    upd.visit_counts[s, a] += 1
    return upd


def maxmin_target(tables: Sequence[QTable], s_next: int, r: float, gamma: float) -> float:
    """r + gamma * max_a' min_i Q_i(s', a')."""
    if not tables:
        raise ConfigError("maxmin needs at least one table")
    first = tables[0]
    first.check_index(s_next)
    if first.terminal[s_next]:
        return float(r)
    composite = np.min([t.values[s_next] for t in tables], axis=0)
    return r + gamma * float(composite[first.valid[s_next]].max())


def beta_pessimistic_target(q: QTable, s_next: int, r: float, gamma: float, beta: float) -> float:
    """r + gamma [max Q - beta (max Q - min Q)] at ``s_next``."""
    _check_unit("beta", beta)
    q.check_index(s_next)
    return r + gamma * _toward_min(q.max_value(s_next), q.min_value(s_next), beta)


def q_kappa_delta(
    q: QTable, s: int, a: int, r: float, s_next: int, gamma: float, kappa: float
) -> float:
    """TD residual r + gamma[(1-kappa) max Q(s') + kappa min Q(s')] - Q(s,a)."""
    _check_unit("kappa", kappa)
    q.check_index(s, a)
    q.check_index(s_next)
    bootstrap = _toward_min(q.max_value(s_next), q.min_value(s_next), kappa)
    return r + gamma * bootstrap - q.values[s, a]


def minimax_q_step(q: QTable, s: int, a: int, r: float, s_next: int, gamma: float) -> None:
    """Q(s,a) <- max(Q(s,a), r + gamma min_a' Q(s',a'))."""
    q.check_index(s, a)
    q.check_index(s_next)
    q.values[s, a] = max(q.values[s, a], r + gamma * q.min_value(s_next))
    q.visit_counts[s, a] += 1


def cpi_mix(pi_old: TabularPolicy, pi_new: TabularPolicy, alpha: float) -> TabularPolicy:
    """Conservative policy mixture (1 - alpha) pi_old + alpha pi_new."""
    if pi_old.probs.shape != pi_new.probs.shape:
        raise ShapeError(f"policy shapes differ: {pi_old.probs.shape} vs {pi_new.probs.shape}")
    _check_unit("alpha", alpha)
    return TabularPolicy((1.0 - alpha) * pi_old.probs + alpha * pi_new.probs)


# --------------------------------------------------------------------------
# bias experiments


@dataclass(frozen=True)
class AlgoSpec:
    """A tabular learner: ``name`` plus its one numeric parameter if any."""

    name: str
    n_tables: int = 2
    beta: float = 0.5
    kappa: float = 0.5

    @property
    def label(self) -> str:
        if self.name == "maxmin":
            return f"maxmin:{self.n_tables}"
        if self.name == "beta_pessimistic":
            return f"beta_pessimistic:{self.beta:g}"
        if self.name == "q_kappa":
            return f"q_kappa:{self.kappa:g}"
        return self.name


ALGOS = ("q", "double_q", "maxmin", "beta_pessimistic", "q_kappa", "minimax")


def parse_algo(text: str) -> AlgoSpec:
    """Parse ``q``, ``double_q``, ``minimax``, ``maxmin[:N]``,
    ``beta_pessimistic[:beta]`` or ``q_kappa[:kappa]``.
    """
    m = re.fullmatch(r"([a-z_]+)(?:[:(]([0-9.eE+-]+)\)?)?", text.strip())
    if not m or m.group(1) not in ALGOS:
        raise ConfigError(f"unknown algorithm {text!r}; choose from {ALGOS}")
    name, arg = m.groups()
    try:
        if name == "maxmin":
            spec = AlgoSpec(name, n_tables=int(arg) if arg else 2)
            if spec.n_tables < 1:
                raise ConfigError("maxmin needs at least one table")
            return spec
        if name == "beta_pessimistic":
            spec = AlgoSpec(name, beta=float(arg) if arg else 0.5)
            _check_unit("beta", spec.beta)
            return spec
        if name == "q_kappa":
            spec = AlgoSpec(name, kappa=float(arg) if arg else 0.5)
            _check_unit("kappa", spec.kappa)
            return spec
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"bad parameter in {text!r}") from exc
    if arg:
        raise ConfigError(f"{name} takes no parameter")
    return AlgoSpec(name)


class _Learner:
    """Tables plus the acting estimate and update rule of one algorithm."""

    def __init__(self, spec: AlgoSpec, mdp: TabularMDP, lr: float):
        self.spec = spec
        self.mdp = mdp
        self.lr = lr
        n = {"double_q": 2, "maxmin": spec.n_tables}.get(spec.name, 1)
        self.tables = [QTable.for_mdp(mdp) for _ in range(n)]

    def estimate(self) -> np.ndarray:
        vals = [t.values for t in self.tables]
        if self.spec.name == "double_q":
            return (vals[0] + vals[1]) / 2.0
        if self.spec.name == "maxmin":
            return np.min(vals, axis=0)
        return vals[0]

    def act(self, s: int, epsilon: float, rng) -> int:
        valid = self.mdp.valid[s]
        if rng.random() < epsilon:
            return int(rng.choice(np.flatnonzero(valid)))
        return _argmax(self.estimate()[s], valid, rng)

    def update(self, s, a, r, s_next, rng) -> None:
        name, gamma, lr = self.spec.name, self.mdp.gamma, self.lr
        q = self.tables[0]
        if name == "q":
            q_learning_step(q, s, a, r, s_next, lr, gamma)
        elif name == "double_q":
            double_q_step(self.tables[0], self.tables[1], s, a, r, s_next, lr, gamma, rng)
        elif name == "maxmin":
            upd = self.tables[rng.integers(len(self.tables))]
            y = maxmin_target(self.tables, s_next, r, gamma)
            upd.values[s, a] += lr * (y - upd.values[s, a])
            upd.visit_counts[s, a] += 1
        elif name == "beta_pessimistic":
            y = beta_pessimistic_target(q, s_next, r, gamma, self.spec.beta)
            q.values[s, a] += lr * (y - q.values[s, a])
            q.visit_counts[s, a] += 1
        elif name == "q_kappa":
            q.values[s, a] += lr * q_kappa_delta(q, s, a, r, s_next, gamma, self.spec.kappa)
            q.visit_counts[s, a] += 1
        else:
            minimax_q_step(q, s, a, r, s_next, gamma)


@dataclass
class BiasReport:
    """Start-state estimates per seed against the value-iteration oracle.

    ``deviation`` is measured at ``probe_action`` (the MDP's probe action,
    else the optimal start action). A seed is *suboptimal* when its greedy
    start action is strictly worse, under its own estimates, than no
    optimal action; ties with an optimal action do not count.
    """

    mdp_name: str
    algo: str
    seeds: list[int]
    estimates: np.ndarray  # (n_seeds, n_actions) at the start state
    q_star: np.ndarray  # (n_actions,) at the start state
    valid: np.ndarray
    probe_action: int
    episodes: int
    optimal_actions: np.ndarray = field(init=False)

    def __post_init__(self):
        vals = self.q_star[self.valid]
        best = np.flatnonzero(self.valid)[np.isclose(vals, vals.max(), rtol=0, atol=1e-12)]
        self.optimal_actions = best

    @property
    def deviations(self) -> np.ndarray:
        return self.estimates[:, self.probe_action] - self.q_star[self.probe_action]

    @property
    def mean_estimate(self) -> float:
        return float(self.estimates[:, self.probe_action].mean())

    @property
    def mean_deviation(self) -> float:
        return float(self.deviations.mean())

    @property
    def standard_error(self) -> float:
        n = len(self.seeds)
        return float(self.deviations.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")

    @property
    def suboptimal(self) -> np.ndarray:
        est = np.where(self.valid, self.estimates, -np.inf)
        return est[:, self.optimal_actions].max(axis=1) < est.max(axis=1)

    @property
    def suboptimal_fraction(self) -> float:
        return float(self.suboptimal.mean())

    def direction(self, n_se: float = 3.0) -> str:
        """``over``, ``under`` or ``none`` at ``n_se`` standard errors."""
        se = self.standard_error
        if not math.isfinite(se):
            se = 0.0
        if self.mean_deviation > n_se * se and self.mean_deviation > 0:
            return "over"
        if self.mean_deviation < -n_se * se and self.mean_deviation < 0:
            return "under"
        return "none"

    def rows(self) -> list[dict]:
        return [
            {"seed": seed, "algo": self.algo, "deviation": float(dev), "suboptimal_flag": int(flag)}
            for seed, dev, flag in zip(self.seeds, self.deviations, self.suboptimal)
        ]

    def write_csv(self, fh) -> None:
        write_bias_csv(fh, [self])

    def summary(self) -> str:
        label = {"over": "over-biased", "under": "under-biased", "none": "not significantly biased"}
        return (
            f"{self.mdp_name} {self.algo}: mean Q(start,{self.probe_action}) = "
            f"{self.mean_estimate:+.4f} vs Q* = {self.q_star[self.probe_action]:+.4f}, "
            f"deviation {self.mean_deviation:+.4f} +/- {self.standard_error:.4f} (SE) -> "
            f"{label[self.direction()]}; suboptimal start action in "
            f"{100 * self.suboptimal_fraction:.0f}% of seeds"
        )


BIAS_CSV_COLUMNS = ("seed", "algo", "deviation", "suboptimal_flag")


def write_bias_csv(fh, reports: Sequence[BiasReport]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(BIAS_CSV_COLUMNS)
    for report in reports:
        for row in report.rows():
            writer.writerow([row["seed"], row["algo"], repr(row["deviation"]), row["suboptimal_flag"]])


def run_tabular(
    mdp: TabularMDP, algo: AlgoSpec | str, episodes: int, rng: np.random.Generator,
    lr: float = 0.1, epsilon: float = 0.5, max_episode_steps: int = 100,
) -> np.ndarray:
    """Train one learner for ``episodes`` episodes; return its estimate matrix."""
    spec = parse_algo(algo) if isinstance(algo, str) else algo
    learner = _Learner(spec, mdp, lr)
    for _ in range(episodes):
        s = mdp.start_state
        for _ in range(max_episode_steps):
            if mdp.terminal[s]:
                break
            a = learner.act(s, epsilon, rng)
            s_next, r = mdp_sample_step(mdp, s, a, rng)
            learner.update(s, a, r, s_next, rng)
            s = s_next
    return learner.estimate()


def bias_experiment(
    mdp: TabularMDP, algo: AlgoSpec | str, episodes: int, seeds: int | Sequence[int],
    lr: float = 0.1, epsilon: float = 0.5, max_episode_steps: int = 100,
) -> BiasReport:
    """Run ``algo`` once per seed and compare start-state estimates with Q*.

    Learning uses a constant rate ``lr`` and epsilon-greedy exploration
    with random tie-breaking; tables start at zero. The default
    ``epsilon=0.5`` keeps every arm visited often enough in a few hundred
    episodes that the zero-initialization transient does not swamp the
    estimator bias being measured.
    """
    spec = parse_algo(algo) if isinstance(algo, str) else algo
    seed_list = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    if not seed_list:
        raise ConfigError("need at least one seed")
    q_star = value_iteration(mdp).values[mdp.start_state]
    estimates = np.array(
        [
            run_tabular(mdp, spec, episodes, make_rng(seed, 3), lr, epsilon, max_episode_steps)[
                mdp.start_state
            ]
            for seed in seed_list
        ]
    )
    valid = mdp.valid[mdp.start_state]
    if mdp.probe_action is not None:
        probe = mdp.probe_action
    else:
        probe = _argmax(q_star, valid)
    return BiasReport(mdp.name, spec.label, seed_list, estimates, q_star, valid, probe, episodes)
