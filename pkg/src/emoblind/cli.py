"""Command-line entry point.

Usage:
  emoblind generate
  emoblind train --method sn|lnl
  emoblind probe
  emoblind ablate
  emoblind fairness
  emoblind report [--sections table1,fairness]
  emoblind all

Every command accepts ``--config FILE``, repeated ``--set key=value`` and
``--output-dir DIR`` (falling back to $EMOBLIND_OUTPUT, then the config's
``output_dir``, then ./emoblind-out).

Exit status: 0 success, 1 configuration error, 2 data error, 3 numeric
error, 4 any other failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import traceback

from .errors import ConfigError, EmoblindError
from .experiment import DEFAULT_OUTPUT, OUTPUT_ENV, Pipeline, build_config, config_keys, parse_overrides, \
    read_config_file

log = logging.getLogger("emoblind")


class _Parser(argparse.ArgumentParser):
    # usage mistakes are configuration errors, not argparse's status 2
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value configuration file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (repeatable)")
    common.add_argument("--output-dir", help=f"output root (default: ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")
    common.add_argument("-q", "--quiet", action="store_true", help="only print warnings and errors")

    parser = _Parser(prog="emoblind", description="Emotion suppression experiments on synthetic face embeddings.",
                     parents=[common])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    sub.add_parser("generate", parents=[common], help="write the synthetic dataset")
    train = sub.add_parser("train", parents=[common], help="train a suppressor")
    train.add_argument("--method", required=True, choices=("sn", "lnl"))
    sub.add_parser("probe", parents=[common], help="probe raw and suppressed embeddings (accuracy and Diff table)")
    sub.add_parser("ablate", parents=[common], help="random feature ablation curve")
    sub.add_parser("fairness", parents=[common], help="equality of opportunity on a smiling-biased split")
    report = sub.add_parser("report", parents=[common], help="emit tables and charts from metrics.json")
    report.add_argument("--sections", help="comma-separated subset of table1,ablation,pca,fairness")
    sub.add_parser("all", parents=[common], help="run every stage from one master seed")
    sub.add_parser("keys", parents=[common], help="list accepted configuration keys")
    return parser


def resolve_output(args, cfg) -> str:
    if args.output_dir:
        return args.output_dir
    return os.environ.get(OUTPUT_ENV) or cfg.output_dir or DEFAULT_OUTPUT


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", datefmt="%H:%M:%S")
    if args.command == "keys":
        print("\n".join(config_keys()))
        return 0
    entries = read_config_file(args.config) if args.config else []
    cfg = build_config(entries + parse_overrides(args.overrides))
    pipe = Pipeline(cfg, resolve_output(args, cfg))
    if args.command == "generate":
        pipe.generate()
    elif args.command == "train":
        pipe.train(args.method)
    elif args.command == "probe":
        pipe.probe()
    elif args.command == "ablate":
        pipe.ablate()
    elif args.command == "fairness":
        pipe.fairness()
    elif args.command == "report":
        sections = [s.strip() for s in args.sections.split(",") if s.strip()] if args.sections else None
        for path in pipe.report(sections):
            print(path)
    elif args.command == "all":
        pipe.run_all()
    log.info("outputs in %s", pipe.out)
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except EmoblindError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 4
    except Exception:
        traceback.print_exc()
        print("error: unexpected failure (see traceback above)", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
