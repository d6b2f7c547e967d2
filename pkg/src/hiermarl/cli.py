"""Command-line entry point.

    hiermarl train --config cfg/spread_3ppo.cfg --seeds 0,1,2 --out runs
    hiermarl eval --ckpt runs/.../checkpoint.bin --episodes 10 --seed 0
    hiermarl analyze --trace runs/.../trace.csv --bottom l0:a0
    hiermarl heuristic --episodes 10 --seed 0 --n-agents 4

Exit codes: 0 ok, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import sys

from . import analysis, harness
from .config import parse_config
from .errors import ConfigError, HiermarlError


def _parse_ref(text: str) -> tuple[int, int]:
    try:
        level_part, slot_part = text.split(":")
        return int(level_part.lstrip("l")), int(slot_part.lstrip("a"))
    except ValueError:
        raise ConfigError(f"bad agent reference {text!r}; expected e.g. l0:a1") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hiermarl")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run a seeded training experiment")
    train.add_argument("--config", required=True)
    train.add_argument("--seeds", default="0", help="comma-separated run seeds")
    train.add_argument("--out", default="runs")
    train.add_argument("--total-steps", type=int, default=None,
                       help="override the configured total environment steps")
    train.add_argument("--trace", choices=("off", "first_seed", "all"), default=None)

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--episodes", type=int, default=10)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--render-trace", default=None,
                    help="dump per-step environment state CSV here")

    an = sub.add_parser("analyze", help="action-mode table from a trace")
    an.add_argument("--trace", required=True)
    an.add_argument("--bottom", required=True, help="agent whose actions to condition on, e.g. l0:a0")
    an.add_argument("--incoming-of", default=None,
                    help="agent whose routed component to use (defaults to --bottom)")
    an.add_argument("--component", type=int, default=0)
    an.add_argument("--bins", type=int, default=None,
                    help="uniform bins for continuous components")
    an.add_argument("--n-actions", type=int, default=None)
    an.add_argument("--out", default=None, help="write CSV here instead of stdout")

    he = sub.add_parser("heuristic", help="run the privileged coverage heuristic")
    he.add_argument("--episodes", type=int, default=10)
    he.add_argument("--seed", type=int, default=0)
    he.add_argument("--n-agents", type=int, default=4)
    he.add_argument("--render-trace", default=None,
                    help="dump per-step environment state CSV here")
    return parser


def _cmd_train(args) -> int:
    cfg = parse_config(args.config)
    cfg.seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
    cfg.out_dir = args.out
    if args.total_steps is not None:
        cfg.total_steps = args.total_steps
    if args.trace is not None:
        cfg.trace = args.trace
    run_dir = harness.run_experiment(cfg)
    print(f"run complete: {run_dir}")
    return 0


def _cmd_eval(args) -> int:
    mean_ret, returns = harness.evaluate(
        args.ckpt, args.episodes, args.seed, render_path=args.render_trace
    )
    for k, r in enumerate(returns):
        print(f"episode {k}: {r}")
    print(f"mean_return {mean_ret}")
    return 0


def _cmd_analyze(args) -> int:
    rows = analysis.read_trace(args.trace)
    bottom = _parse_ref(args.bottom)
    incoming = _parse_ref(args.incoming_of) if args.incoming_of else None
    table = analysis.mode_table(
        rows, bottom, incoming, component=args.component, bins=args.bins,
        n_actions=args.n_actions,
    )
    if args.out:
        with open(args.out, "w", newline="") as fh:
            table.write_csv(fh)
    else:
        table.write_csv(sys.stdout)
    return 0


def _cmd_heuristic(args) -> int:
    mean_ret, returns = harness.heuristic_returns(
        args.n_agents, args.episodes, args.seed, render_path=args.render_trace
    )
    for k, r in enumerate(returns):
        print(f"episode {k}: {r}")
    print(f"mean_return {mean_ret}")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "train": _cmd_train,
        "eval": _cmd_eval,
        "analyze": _cmd_analyze,
        "heuristic": _cmd_heuristic,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (HiermarlError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
