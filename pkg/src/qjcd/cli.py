"""Command-line entry point: ``qjcd simulate|replica|preset``."""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from . import harness

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3
log = logging.getLogger("qjcd")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qjcd", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="Monte-Carlo sweep from a TOML config")
    sim.add_argument("--config", required=True)
    sim.add_argument("--trials", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--threads", type=int, help="worker processes (default: all cores)")
    sim.add_argument("--timing", action="store_true", help="add a wall_time column (output no longer reproducible)")
    sim.add_argument("--out", required=True)

    rep = sub.add_parser("replica", help="replica predictions over the config's sweep grid")
    rep.add_argument("--config", required=True)
    rep.add_argument("--mode", choices=("jcd", "perfect-csi", "both"), default="jcd")
    rep.add_argument("--out", required=True)

    pre = sub.add_parser("preset", help="reproduce a figure setting")
    pre.add_argument("name", choices=("fig2", "fig3", "fig4"))
    pre.add_argument("--trials", type=int)
    pre.add_argument("--threads", type=int)
    pre.add_argument("--out", required=True)
    return p


def _simulate(spec, args) -> str:
    if getattr(args, "trials", None) is not None:
        spec = replace(spec, trials=args.trials)
    if getattr(args, "seed", None) is not None:
        spec = replace(spec, master_seed=args.seed)
    rows = harness.run_experiment(spec, threads=args.threads)
    return harness.rows_to_csv(rows, timing=getattr(args, "timing", False))


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "preset":
            spec = harness.preset(args.name, trials=args.trials)
            if spec.estimators:
                text = _simulate(spec, args)
            else:
                text = harness.replica_to_csv(harness.replica_sweep(spec))
        else:
            spec = harness.load_config(args.config)
            if args.command == "simulate":
                text = _simulate(spec, args)
            else:
                modes = ("jcd", "perfect-csi") if args.mode == "both" else (args.mode,)
                text = harness.replica_to_csv(harness.replica_sweep(spec, modes))
        harness.write_text(args.out, text)
    except harness.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
