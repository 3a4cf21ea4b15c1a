"""Command-line entry point.

    acqb run --config FILE [--seed S] [--runs R] [--out DIR]
    acqb compare --config FILE [--seed S] [--runs R] [--out DIR]
    acqb plot --in CSV --out FILE
    acqb train-head --config FILE --out FILE

Output directory precedence: ``--out``, then $ACQB_OUT_DIR, then the config.
Exit status is 2 for configuration errors, 1 for runtime failures, 0 otherwise.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .errors import ConfigError

log = logging.getLogger("acqb")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on its own; route through ConfigError so the
    # status is set in one place
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="acqb", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, help_ in (("run", "simulate one policy over several seeds"),
                        ("compare", "replay several policies on shared instances")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--runs", type=int)
        p.add_argument("--out")

    p = sub.add_parser("plot", help="render an aggregate CSV")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train-head", help="train a utility-aligned projection head")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    return parser


def _load(args):
    from .experiment import load_config
    config = load_config(args.config)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "runs", None) is not None:
        changes["runs"] = args.runs
    return dataclasses.replace(config, **changes).validate() if changes else config


def _dispatch(args) -> None:
    from . import experiment

    if args.command == "plot":
        from .plotting import emit_plot
        path = emit_plot(args.inp, args.out)
        print(path)
        return
    config = _load(args)
    if args.command == "train-head":
        history: list = []
        experiment.train_projection_head(config, args.out, history=history)
        if history:
            log.info("InfoNCE loss %.4g -> %.4g", history[0], history[-1])
        print(args.out)
        return
    fn = experiment.run_experiment if args.command == "run" else experiment.compare_policies
    outputs = fn(config, out_dir=args.out)
    for name, agg in outputs.aggregates.items():
        log.info("%s: final qregret %.3f, final cum_regret %.3f", name,
                 agg.mean_qregret[-1], agg.mean_cum_regret[-1])
    print(outputs.aggregate_csv)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"acqb: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        _dispatch(args)
    except ConfigError as exc:
        print(f"acqb: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"acqb: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
