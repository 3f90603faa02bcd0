"""Command line entry point: ``sqtlab train | compare | bias``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness
from .envs import make_maximization_bias_mdp
from .errors import SqtLabError
from .tabular import ALGOS, bias_experiment, parse_algo, write_bias_csv

log = logging.getLogger("sqtlab")

# train flag -> settings key understood by harness.experiment_from_settings
_TRAIN_FLAGS = {
    "env": "env", "algo": "algo", "seeds": "seeds", "steps": "steps", "out": "out",
    "alpha": "alpha", "n_networks": "n_networks", "operator": "operator", "lam": "lambda",
    "gamma": "gamma", "noise_std": "noise_std", "target_interval": "target_interval",
    "batch_size": "batch_size", "updates_per_step": "updates_per_step",
    "actor_lr": "actor_lr", "critic_lr": "critic_lr", "warmup_steps": "warmup_steps",
    "hidden_sizes": "hidden_sizes", "eval_every": "eval_every",
    "eval_episodes": "eval_episodes", "workers": "workers", "preset": "preset",
}


def _algo_list(text: str) -> list[str]:
    if text == "all":
        return ["q", "double_q", "maxmin:2", "beta_pessimistic:0.5", "q_kappa:0.5", "minimax"]
    names = [part.strip() for part in text.split(",") if part.strip()]
    try:
        for name in names:
            parse_algo(name)
    except SqtLabError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    if not names:
        raise argparse.ArgumentTypeError("empty algorithm list")
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sqtlab", description="Train ensemble actor-critic agents, compare result files and run tabular bias experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train agents over seeds and write evaluation CSV")
    t.add_argument("--config", help="key=value file; flags override its entries")
    t.add_argument("--env", choices=sorted(harness.CONTINUOUS_ENVS))
    t.add_argument("--algo", choices=["ddpg", "td3", "sqt"])
    t.add_argument("--alpha", type=float)
    t.add_argument("--n-networks", type=int)
    t.add_argument("--operator", choices=["min", "mean", "wminmax"])
    t.add_argument("--lambda", dest="lam", type=float)
    t.add_argument("--seeds", help="a..b (inclusive) or comma list")
    t.add_argument("--steps", type=int)
    t.add_argument("--out")
    t.add_argument("--gamma", type=float)
    t.add_argument("--noise-std", type=float)
    t.add_argument("--target-interval", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--updates-per-step", type=int)
    t.add_argument("--actor-lr", type=float)
    t.add_argument("--critic-lr", type=float)
    t.add_argument("--warmup-steps", type=int)
    t.add_argument("--hidden-sizes", help="e.g. 64,64")
    t.add_argument("--eval-every", type=int)
    t.add_argument("--eval-episodes", type=int)
    t.add_argument("--workers", type=int)
    t.add_argument("--preset", choices=["default", "desk"])

    c = sub.add_parser("compare", help="percent-improvement table of A over baseline B")
    c.add_argument("results_a")
    c.add_argument("results_b")

    b = sub.add_parser("bias", help="tabular over/under-estimation experiments")
    b.add_argument("--mdp", default="max-bias", choices=["max-bias"])
    b.add_argument(
        "--algo", required=True, type=_algo_list,
        help=f"comma list from {', '.join(ALGOS)} (maxmin:N, beta_pessimistic:B, q_kappa:K) or 'all'",
    )
    b.add_argument("--seeds", type=int, default=100, help="number of seeds, 0..N-1")
    b.add_argument("--episodes", type=int, default=300)
    b.add_argument("--lr", type=float, default=0.1)
    b.add_argument("--epsilon", type=float, default=0.5)
    b.add_argument("--arms", type=int, default=8)
    b.add_argument("--mu", type=float, default=-0.1)
    b.add_argument("--sigma", type=float, default=1.0)
    b.add_argument("--gamma", type=float, default=1.0)
    b.add_argument("--out", help="CSV path; the summary goes next to it as .summary.txt")
    return parser


def cmd_train(args) -> int:
    settings = harness.parse_config_text(Path(args.config).read_text()) if args.config else {}
    for attr, key in _TRAIN_FLAGS.items():
        value = getattr(args, attr, None)
        if value is not None:
            settings[key] = str(value)
    cfg = harness.experiment_from_settings(settings)
    log.info("training %s on %s, seeds %s", cfg.algo, cfg.env_id, cfg.seeds)
    records = harness.run_experiment(cfg)
    for r in records:
        status = f"error: {r.error}" if r.error else "ok"
        print(
            f"seed {r.seed}: final {r.final_return:.2f} max-snapshot {r.max_snapshot:.2f} "
            f"({r.wall_clock:.1f}s, {status})"
        )
    summary = harness.summarize(records)
    print(f"mean max-snapshot {summary['mean_max_snapshot']:.2f}, mean final {summary['mean_final']:.2f}")
    return 1 if summary["errors"] else 0


def cmd_compare(args) -> int:
    print(harness.compare(args.results_a, args.results_b).format())
    return 0


def cmd_bias(args) -> int:
    mdp = make_maximization_bias_mdp(args.arms, args.mu, args.sigma, args.gamma)
    reports = [
        bias_experiment(mdp, algo, args.episodes, args.seeds, lr=args.lr, epsilon=args.epsilon)
        for algo in args.algo
    ]
    summary = "\n".join(r.summary() for r in reports)
    print(summary)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as fh:
            write_bias_csv(fh, reports)
        out.with_suffix(".summary.txt").write_text(summary + "\n")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    handler = {"train": cmd_train, "compare": cmd_compare, "bias": cmd_bias}[args.command]
    try:
        return handler(args)
    except SqtLabError as exc:
        parser.print_usage(sys.stderr)
        print(f"sqtlab {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
