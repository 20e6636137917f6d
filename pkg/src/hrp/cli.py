"""Command-line entry point: ``hrp {synth,preprocess,train,predict,evaluate,importance}``.

Exit codes: 0 success, 2 user or configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import config as config_mod
from . import pipeline
from .dataio import ParseError, StructureError
from .gpr import ConditioningError
from .preprocess import ConfigError, DegenerateChannelError
from .temporal import DivergenceError

EXIT_OK, EXIT_USER, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("hrp")


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML config file")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--seed", type=int, help="top-level seed")
    common.add_argument("--alpha", type=float, help="interval level is 1 - alpha")
    common.add_argument("--dataset", choices=config_mod.DATASETS)
    common.add_argument("--data-dir", metavar="DIR", help="directory holding the C-MAPSS files")
    common.add_argument("--mode", choices=config_mod.MODES, help="scoring granularity")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key, e.g. --set train.epochs=5")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hrp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write a synthetic dataset as C-MAPSS text")
    sub.add_parser("preprocess", parents=[common], help="emit window CSVs and normalization stats")
    sub.add_parser("train", parents=[common], help="train extractor and fit the GP")
    pr = sub.add_parser("predict", parents=[common], help="predict RUL intervals for test units")
    pr.add_argument("--stream", action="store_true",
                    help="read normalized windows from stdin, one per line")
    ev = sub.add_parser("evaluate", parents=[common], help="RMSE, NAW, coverage and CWC")
    ev.add_argument("--predictions", metavar="PATH")
    ev.add_argument("--truth", metavar="PATH", help="RUL label file (one integer per line)")
    sub.add_parser("importance", parents=[common], help="permutation sensor importance + KDE")
    return p


def _overrides(args) -> dict:
    ov = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        ov[k.strip()] = v.strip()
    flags = {"out": args.out, "seed": args.seed, "predict.alpha": args.alpha,
             "data.dataset": args.dataset, "data.dir": args.data_dir, "predict.mode": args.mode}
    ov.update({k: v for k, v in flags.items() if v is not None})
    return ov


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config is not None:
            from pathlib import Path
            if not Path(args.config).exists():
                raise FileNotFoundError(f"missing config file: {args.config}")
        cfg = config_mod.load(args.config, _overrides(args))
        if args.command == "synth":
            paths = pipeline.cmd_synth(cfg)
        elif args.command == "preprocess":
            paths = pipeline.cmd_preprocess(cfg)
        elif args.command == "train":
            progress = (lambda e, loss: log.info("epoch %d loss %.4f", e, loss)) if args.verbose else None
            paths = pipeline.cmd_train(cfg, progress)
        elif args.command == "predict":
            if args.stream:
                pipeline.cmd_predict(cfg, stream_in=sys.stdin, stream_out=sys.stdout)
                return EXIT_OK
            paths = pipeline.cmd_predict(cfg)
        elif args.command == "evaluate":
            paths = pipeline.cmd_evaluate(cfg, args.predictions, args.truth)
            print(paths[0].read_text(), end="")
        else:
            paths = pipeline.cmd_importance(cfg)
    except (DivergenceError, ConditioningError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except (ConfigError, DegenerateChannelError, ParseError, StructureError, FileNotFoundError,
            pipeline.CompatibilityError, pipeline.OutputLockedError, ValueError, IndexError) as exc:
        log.error("%s", exc)
        return EXIT_USER
    for p in paths:
        log.info("wrote %s", p)
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
