"""Command-line front end.

    fedsel run --config exp.yaml [--alpha F] [--policy NAME] [--schedule SHAPE] [--seed N] [--out DIR]
    fedsel compare --config exp.yaml --policies fedavg_all,cho_loss_rank,fedabc_threshold
    fedsel sweep --config exp.yaml --alphas 1,0.5,0.1

Output goes to --out, else $FEDSEL_OUT, else ./results.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from fedsel import kernels
from fedsel.config import ALIASES, ConfigError, ExperimentConfig, load_config
from fedsel.harness import (
    compare_policies,
    comparison_text,
    run_and_emit,
    run_repeats,
    summarize,
    write_comparison,
    write_outputs,
)
from fedsel.selection import POLICY_KINDS, SCHEDULE_SHAPES

log = logging.getLogger("fedsel")


def _keys_epilog() -> str:
    defaults = ExperimentConfig()
    lines = ["config keys (YAML file; flags override file values):"]
    for f in dataclasses.fields(ExperimentConfig):
        lines.append(f"  {f.name:<18} default {getattr(defaults, f.name)!r}")
    alias = ", ".join(f"{a}={k}" for a, k in ALIASES.items())
    lines.append(f"aliases: {alias}")
    lines.append("environment: FEDSEL_OUT sets the default output directory")
    return "\n".join(lines)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML file of config keys")
    p.add_argument("--alpha", type=float, help="Dirichlet concentration")
    p.add_argument("--schedule", choices=SCHEDULE_SHAPES, help="threshold growth shape")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--repeats", type=int, help="number of seeded repeats")
    p.add_argument("--rounds", type=int, help="global rounds T")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="fedsel", description=__doc__, epilog=_keys_epilog(),
                                     formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one policy with repeats", epilog=_keys_epilog(),
                         formatter_class=fmt)
    _common(run)
    run.add_argument("--policy", choices=POLICY_KINDS)

    cmp_ = sub.add_parser("compare", help="run several policies on identical data",
                          epilog=_keys_epilog(), formatter_class=fmt)
    _common(cmp_)
    cmp_.add_argument("--policies", required=True, help="comma-separated policy names")

    sweep = sub.add_parser("sweep", help="run one policy over several alphas",
                           epilog=_keys_epilog(), formatter_class=fmt)
    _common(sweep)
    sweep.add_argument("--policy", choices=POLICY_KINDS)
    sweep.add_argument("--alphas", required=True, help="comma-separated Dirichlet alphas")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    return {
        "alpha": args.alpha,
        "schedule": args.schedule,
        "master_seed": args.seed,
        "repeats": args.repeats,
        "num_rounds": args.rounds,
        "policy": getattr(args, "policy", None),
    }


def _out_dir(args: argparse.Namespace) -> Path:
    if args.out is not None:
        return args.out
    return Path(os.environ.get("FEDSEL_OUT", "results"))


def _split(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


def _cmd_run(cfg: ExperimentConfig, out: Path) -> None:
    csv_path, json_path = run_and_emit(cfg, out)
    print(f"wrote {csv_path} and {json_path}")


def _cmd_compare(cfg: ExperimentConfig, out: Path, policies: list[str]) -> None:
    if not policies:
        raise ConfigError("policies: need at least one policy name")
    configs = [cfg.replace(policy=p) for p in policies]
    table, rows = compare_policies(configs)
    path = write_comparison(out, table, rows)
    sys.stdout.write(comparison_text(table))
    print(f"wrote {path}")


def _cmd_sweep(cfg: ExperimentConfig, out: Path, alphas: list[str]) -> None:
    try:
        values = [float(a) for a in alphas]
    except ValueError:
        raise ConfigError(f"alphas: not a list of numbers: {alphas}") from None
    if not values:
        raise ConfigError("alphas: need at least one value")
    rows, summary = [], {"config": cfg.to_dict(), "by_alpha": {}}
    for a in values:
        sub = cfg.replace(alpha=a)
        r = run_repeats(sub)
        rows.extend(r)
        summary["by_alpha"][f"{a:g}"] = summarize(r)
    csv_path, json_path = write_outputs(out, rows, summary)
    print(f"wrote {csv_path} and {json_path}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    log.debug("kernel backend: %s", kernels.BACKEND)
    try:
        cfg = load_config(args.config, _overrides(args))
    except ConfigError as exc:
        print(f"fedsel: config error: {exc}", file=sys.stderr)
        return 2
    out = _out_dir(args)
    try:
        if args.command == "run":
            _cmd_run(cfg, out)
        elif args.command == "compare":
            _cmd_compare(cfg, out, _split(args.policies))
        else:
            _cmd_sweep(cfg, out, _split(args.alphas))
    except ConfigError as exc:
        print(f"fedsel: config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"fedsel: cannot write output to {out}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
