"""Multi-seed experiments, CSV persistence and percent-improvement tables.

Results CSV columns (one row per seed and evaluation point)::

    env,algo,seed,step,eval_return,mean_penalty,critic_loss

Floats are written with ``repr`` so files round-trip exactly; ``nan``
marks a diagnostic with no updates behind it (e.g. during warmup).
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .agent import VARIANTS, Agent, TrainingConfig, evaluate, train, variant_config
from .envs import CONTINUOUS_ENVS, make_env
from .errors import ConfigError, FormatError, SqtLabError
from .numerics import make_rng

CSV_COLUMNS = ("env", "algo", "seed", "step", "eval_return", "mean_penalty", "critic_loss")

# Small networks that make 30k-50k step runs practical on one CPU core.
DESK_PRESET = {
    "hidden_sizes": (64, 64),
    "batch_size": 64,
    "actor_lr": 1e-3,
    "critic_lr": 1e-3,
}


def parse_seeds(text: str) -> list[int]:
    """``"0..4"`` (inclusive), ``"3"`` or ``"0,2,5"``."""
    text = str(text).strip()
    try:
        if ".." in text:
            lo, hi = text.split("..")
            seeds = list(range(int(lo), int(hi) + 1))
        else:
            seeds = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"bad seed list {text!r}") from None
    if not seeds:
        raise ConfigError(f"empty seed list {text!r}")
    return seeds


@dataclass
class ExperimentConfig:
    env_id: str
    algo: str
    seeds: list[int]
    total_steps: int
    out_path: str | None = None
    overrides: dict = field(default_factory=dict)
    eval_every: int = 1000
    eval_episodes: int = 10
    workers: int = 1

    def __post_init__(self):
        if self.env_id not in CONTINUOUS_ENVS:
            raise ConfigError(f"unknown env {self.env_id!r}; choose from {sorted(CONTINUOUS_ENVS)}")
        if self.algo not in VARIANTS:
            raise ConfigError(f"unknown algo {self.algo!r}; choose from {VARIANTS}")
        if not self.seeds:
            raise ConfigError("seed list must be non-empty")
        if self.total_steps < 0 or self.eval_every < 1 or self.eval_episodes < 1:
            raise ConfigError("steps must be >= 0 and evaluation settings positive")

    def training_config(self) -> TrainingConfig:
        known = {f.name for f in dataclasses.fields(TrainingConfig)}
        unknown = set(self.overrides) - known
        if unknown:
            raise ConfigError(f"unknown training options {sorted(unknown)}")
        pinned = {"ddpg": {"n_networks", "alpha", "q_operator"}, "td3": {"n_networks", "alpha", "q_operator"}}
        clash = pinned.get(self.algo, set()) & set(self.overrides)
        if clash:
            raise ConfigError(f"{self.algo} fixes {sorted(clash)}; drop those options")
        return variant_config(self.algo, TrainingConfig(**{"total_steps": self.total_steps, **self.overrides}))


@dataclass
class EvalRow:
    step: int
    eval_return: float
    mean_penalty: float
    critic_loss: float


@dataclass
class RunRecord:
    seed: int
    evals: list[EvalRow] = field(default_factory=list)
    episode_returns: list[float] = field(default_factory=list)
    wall_clock: float = 0.0
    error: str | None = None

    @property
    def eval_returns(self) -> list[float]:
        return [row.eval_return for row in self.evals]

    @property
    def max_snapshot(self) -> float:
        return max(self.eval_returns) if self.evals else float("nan")

    @property
    def final_return(self) -> float:
        return self.evals[-1].eval_return if self.evals else float("nan")


def _fmt(x: float) -> str:
    return repr(float(x))


def csv_rows(env_id: str, algo: str, record: RunRecord) -> list[list[str]]:
    return [
        [env_id, algo, str(record.seed), str(row.step), _fmt(row.eval_return),
         _fmt(row.mean_penalty), _fmt(row.critic_loss)]
        for row in record.evals
    ]


def _mean_or_nan(xs) -> float:
    return float(np.mean(xs)) if len(xs) else float("nan")


def run_seed(cfg: ExperimentConfig, seed: int, on_row=None) -> RunRecord:
    """Train one agent and evaluate it every ``cfg.eval_every`` env steps."""
    tcfg = cfg.training_config()
    env, eval_env = make_env(cfg.env_id), make_env(cfg.env_id)
    agent = Agent.for_env(cfg.algo, env, tcfg, seed)
    record = RunRecord(seed)
    penalties: list[float] = []
    losses: list[float] = []

    def on_update(agent, info):
        penalties.append(info["penalty"])
        losses.append(info["loss"])

    def on_step(agent, step):
        if step % cfg.eval_every:
            return
        # the same evaluation start states at every snapshot
        ret = evaluate(agent, eval_env, cfg.eval_episodes, make_rng(seed, 4))
        row = EvalRow(step, ret, _mean_or_nan(penalties), _mean_or_nan(losses))
        penalties.clear()
        losses.clear()
        record.evals.append(row)
        if on_row is not None:
            on_row(record, row)

    start = time.perf_counter()
    try:
        episodes = train(agent, env, cfg.total_steps, callback=on_step, on_update=on_update)
        record.episode_returns = [ep.episode_return for ep in episodes]
    except SqtLabError as exc:
        record.error = f"{type(exc).__name__}: {exc}"
    record.wall_clock = time.perf_counter() - start
    return record


def _run_seed_job(args):
    cfg, seed = args
    return run_seed(cfg, seed)


def run_experiment(cfg: ExperimentConfig) -> list[RunRecord]:
    """Train one agent per seed, writing CSV rows as evaluations complete.

    With ``workers > 1`` seeds run in a process pool and each seed's rows
    are written once all earlier seeds are done, so the file is identical
    to a sequential run.
    """
    cfg.training_config()  # fail fast on bad options
    fh = None
    writer = None
    if cfg.out_path:
        Path(cfg.out_path).parent.mkdir(parents=True, exist_ok=True)
        fh = open(cfg.out_path, "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        fh.flush()

    def emit(record, row):
        if writer is not None:
            writer.writerow(csv_rows(cfg.env_id, cfg.algo, RunRecord(record.seed, [row]))[0])
            fh.flush()

    try:
        if cfg.workers <= 1:
            return [run_seed(cfg, seed, on_row=emit) for seed in cfg.seeds]
        records = []
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for record in pool.map(_run_seed_job, [(cfg, seed) for seed in cfg.seeds]):
                for row in record.evals:
                    emit(record, row)
                records.append(record)
        return records
    finally:
        if fh is not None:
            fh.close()


def write_results_csv(fh, env_id: str, algo: str, records: Iterable[RunRecord]) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for record in records:
        writer.writerows(csv_rows(env_id, algo, record))


@dataclass
class ResultsFile:
    """Parsed results CSV: ``records[env][seed]`` holds that run's evaluations."""

    algo: str
    records: dict[str, dict[int, RunRecord]]

    def mean_max_snapshot(self, env_id: str) -> float:
        runs = self.records[env_id].values()
        return float(np.mean([r.max_snapshot for r in runs]))


def read_results_csv(source) -> ResultsFile:
    """Parse a results CSV from a path or an open text file."""
    if isinstance(source, (str, os.PathLike)):
        with open(source, newline="") as fh:
            return read_results_csv(fh)
    reader = csv.reader(source)
    header = next(reader, None)
    if header is None or tuple(header) != CSV_COLUMNS:
        raise FormatError(f"expected header {','.join(CSV_COLUMNS)}, got {header}")
    records: dict[str, dict[int, RunRecord]] = {}
    algos = set()
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(CSV_COLUMNS):
            raise FormatError(f"line {lineno}: expected {len(CSV_COLUMNS)} fields, got {len(row)}")
        env_id, algo, seed, step, ret, pen, loss = row
        try:
            eval_row = EvalRow(int(step), float(ret), float(pen), float(loss))
            seed = int(seed)
        except ValueError as exc:
            raise FormatError(f"line {lineno}: {exc}") from None
        algos.add(algo)
        records.setdefault(env_id, {}).setdefault(seed, RunRecord(seed)).evals.append(eval_row)
    if len(algos) > 1:
        raise FormatError(f"mixed algorithms in one file: {sorted(algos)}")
    return ResultsFile(algos.pop() if algos else "", records)


def percent_improvement(a: float, b: float) -> float:
    """100 (a - b) / b: how much better ``a`` is than the baseline ``b``."""
    # + 0.0 turns a negative zero into 0.0
    return 100.0 * (a - b) / b + 0.0 if b != 0 else float("nan")


@dataclass
class ComparisonRow:
    env_id: str
    mean_max_a: float
    mean_max_b: float
    improvement: float


@dataclass
class ComparisonTable:
    label_a: str
    label_b: str
    rows: list[ComparisonRow]

    @property
    def total(self) -> float:
        # the total is the plain sum of per-env percentages
        return float(sum(r.improvement for r in self.rows))

    def format(self) -> str:
        width = max([len("Environment")] + [len(r.env_id) for r in self.rows])
        lines = [f"{'Environment':<{width}} | {self.label_b:>12} {self.label_a:>12} {'Improvement':>12}"]
        lines.append("-" * len(lines[0]))
        for r in self.rows:
            lines.append(
                f"{r.env_id:<{width}} | {r.mean_max_b:>12,.1f} {r.mean_max_a:>12,.1f} {r.improvement:>+11.1f}%"
            )
        lines.append("-" * len(lines[0]))
        lines.append(f"{'':<{width}} | {'':>12} {'':>12} {self.total:>+11.1f}%")
        return "\n".join(lines)


def compare(results_a, results_b) -> ComparisonTable:
    """Per-env mean max-snapshot returns of ``a`` vs baseline ``b``."""
    a = results_a if isinstance(results_a, ResultsFile) else read_results_csv(results_a)
    b = results_b if isinstance(results_b, ResultsFile) else read_results_csv(results_b)
    if set(a.records) != set(b.records):
        raise FormatError(f"environment sets differ: {sorted(a.records)} vs {sorted(b.records)}")
    rows = []
    for env_id in sorted(a.records):
        ma, mb = a.mean_max_snapshot(env_id), b.mean_max_snapshot(env_id)
        rows.append(ComparisonRow(env_id, ma, mb, percent_improvement(ma, mb)))
    return ComparisonTable(a.algo or "A", b.algo or "B", rows)


def random_policy_return(env_id: str, episodes: int, seed: int) -> float:
    """Mean return of the uniform-random policy, using evaluation start states."""
    env = make_env(env_id)
    rng = make_rng(seed, 4)
    act_rng = make_rng(seed, 5)
    total = 0.0
    for _ in range(episodes):
        env.reset(rng)
        done = False
        while not done:
            _, r, done = env.step(act_rng.uniform(env.action_low, env.action_high))
            total += r
    return total / episodes


# --------------------------------------------------------------------------
# key=value config files


def _coerce(name: str, value: str):
    types = {f.name: f.type for f in dataclasses.fields(TrainingConfig)}
    kind = types.get(name)
    if kind is None:
        raise ConfigError(f"unknown training option {name!r}")
    kind = str(kind)
    try:
        if kind.startswith("bool"):
            low = value.strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(value)
            return low in ("1", "true", "yes", "on")
        if kind.startswith("int"):
            return int(value)
        if kind.startswith("float"):
            return float(value)
        if kind.startswith("tuple"):
            return tuple(int(v) for v in value.replace("x", ",").split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"bad value {value!r} for {name}") from None
    return value.strip()


def parse_config_text(text: str) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(io.StringIO(text), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


_EXPERIMENT_KEYS = {
    "env": "env_id", "env_id": "env_id", "algo": "algo", "seeds": "seeds",
    "steps": "total_steps", "total_steps": "total_steps", "out": "out_path",
    "eval_every": "eval_every", "eval_episodes": "eval_episodes", "workers": "workers",
    "preset": "preset",
}
_TRAINING_ALIASES = {"operator": "q_operator", "lambda": "weighted_lambda", "lam": "weighted_lambda"}


def experiment_from_settings(settings: dict[str, str]) -> ExperimentConfig:
    """Build an experiment from string settings (config file merged with CLI flags)."""
    exp: dict = {}
    overrides: dict = {}
    for key, value in settings.items():
        if key in _EXPERIMENT_KEYS:
            exp[_EXPERIMENT_KEYS[key]] = value
        else:
            name = _TRAINING_ALIASES.get(key, key)
            overrides[name] = _coerce(name, value)
    preset = exp.pop("preset", "default")
    if preset == "desk":
        overrides = {**DESK_PRESET, **overrides}
    elif preset != "default":
        raise ConfigError(f"unknown preset {preset!r}")
    missing = {"env_id", "algo"} - set(exp)
    if missing:
        raise ConfigError(f"missing settings: {sorted(missing)}")
    try:
        return ExperimentConfig(
            env_id=exp["env_id"],
            algo=exp["algo"],
            seeds=parse_seeds(exp.get("seeds", "0")),
            total_steps=int(exp.get("total_steps", TrainingConfig.total_steps)),
            out_path=exp.get("out_path"),
            overrides=overrides,
            eval_every=int(exp.get("eval_every", 1000)),
            eval_episodes=int(exp.get("eval_episodes", 10)),
            workers=int(exp.get("workers", 1)),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def summarize(records: Sequence[RunRecord]) -> dict:
    finals = [r.final_return for r in records if r.evals]
    maxes = [r.max_snapshot for r in records if r.evals]
    return {
        "seeds": [r.seed for r in records],
        "mean_final": float(np.mean(finals)) if finals else math.nan,
        "std_final": float(np.std(finals)) if finals else math.nan,
        "mean_max_snapshot": float(np.mean(maxes)) if maxes else math.nan,
        "errors": [r.error for r in records if r.error],
    }
