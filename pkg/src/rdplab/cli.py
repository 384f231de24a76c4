"""Command-line front end.

Subcommands map one-to-one to the runner commands::

    rdplab run           --config CFG [--out DIR] [--seed N] [--chains N]
    rdplab probe-weights --config CFG [--out DIR] [--seed N]
    rdplab probe-pif     --config CFG [--out DIR] [--seed N] [--chains N]
    rdplab probe-bias    --config CFG [--out DIR] [--seed N]
    rdplab compare       RUN_DIR [RUN_DIR ...] --out DIR
    rdplab plot          RUN_DIR [--out DIR]

On success the primary output directory is printed to stdout and the exit
code is 0.  On failure a single JSON object {"error", "message"} is printed
to stderr; configuration problems exit with 2, everything else with 1.
``RDP_LAB_THREADS`` caps sampler parallelism (see ``rdplab.samplers``).
"""

from __future__ import annotations

import argparse
import json
import sys

from . import runner
from .runconfig import ConfigError

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rdplab",
        description="Robust guided-diffusion posterior sampling runs and probes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_command(name: str, help_text: str, chains: bool):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="run config or manifest JSON")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        if chains:
            p.add_argument(
                "--chains", type=int, default=None, help="chain count override"
            )
        return p

    add_config_command("run", "execute one sampling run", chains=True)
    add_config_command(
        "probe-weights", "robustness verdicts for the canonical weight families",
        chains=False,
    )
    add_config_command(
        "probe-pif", "perturbation-influence curves, robust vs plain", chains=True
    )
    add_config_command("probe-bias", "bias gap versus weight scale", chains=False)

    p = sub.add_parser("compare", help="aggregate metrics across run directories")
    p.add_argument("run_dirs", nargs="+", help="completed run directories")
    p.add_argument("--out", required=True, help="directory for the comparison grid")

    p = sub.add_parser("plot", help="render SVG figures for a run directory")
    p.add_argument("run_dir", help="completed run directory")
    p.add_argument("--out", default=None, help="directory for the figures")
    return parser


def _dispatch(args: argparse.Namespace):
    if args.command == "run":
        return runner.cmd_run(
            args.config, out_dir=args.out, seed=args.seed, chains=args.chains
        )
    if args.command == "probe-weights":
        return runner.cmd_probe_weights(args.config, out_dir=args.out, seed=args.seed)
    if args.command == "probe-pif":
        return runner.cmd_probe_pif(
            args.config, out_dir=args.out, seed=args.seed, chains=args.chains
        )
    if args.command == "probe-bias":
        return runner.cmd_probe_bias(args.config, out_dir=args.out, seed=args.seed)
    if args.command == "compare":
        return runner.cmd_compare(args.run_dirs, args.out)
    if args.command == "plot":
        return runner.cmd_plot(args.run_dir, out_dir=args.out)
    raise ValueError(f"unknown command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        out = _dispatch(args)
    except ConfigError as err:
        json.dump({"error": "ConfigError", "message": str(err)}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    except Exception as err:  # keep the contract: errors are machine readable
        json.dump({"error": type(err).__name__, "message": str(err)}, sys.stderr)
        sys.stderr.write("\n")
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
