"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 input/output error,
4 numeric error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .data import IdxFormatError
from .errors import ConfigurationError, NumericError, PrecisionError
from .harness import build_config, run_experiment, write_synthetic_idx

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

COMMANDS = {
    "train-classify": "classify",
    "train-compress": "compress",
    "bp-compare": "bp-compare",
    "kf-track": "kf-track",
    "gradcheck": "gradcheck",
    "write-synth": None,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="predcode", description="Predictive coding experiments.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--data", dest="data_dir", help="directory with MNIST-format IDX files")
    common.add_argument("--out", help="output CSV (write-synth: output directory)")
    common.add_argument("--epochs", type=int)
    common.add_argument("--steps", type=int, help="inference steps per training batch")
    common.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE", help="override any configuration key"
    )
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "train-classify": "train a PC classifier (input clamped at the top, label at the bottom)",
        "train-compress": "train a folded PC autoencoder (stimulus clamped at the bottom)",
        "bp-compare": "compare precision-rescaled PC weight updates with BP gradients",
        "kf-track": "filter a trajectory with the Kalman filter and its PC relaxation",
        "gradcheck": "check analytic NFE gradients against finite differences",
        "write-synth": "write seeded synthetic blobs as MNIST-format IDX files",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    overrides = {}
    for item in args.set:
        if "=" not in item:
            print(f"error: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return EXIT_CONFIG
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    for key in ("seed", "data_dir", "out", "epochs", "steps"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    task = COMMANDS[args.command]
    if task is not None:
        overrides["task"] = task
    try:
        cfg = build_config(args.config, **overrides)
        if args.command == "write-synth":
            written = write_synthetic_idx(cfg.out if args.out else "synth-idx", cfg)
            print(f"wrote {len(written) * 2} IDX files to {written['train'].parent}")
            return EXIT_OK
        run_experiment(cfg)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, IdxFormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, PrecisionError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
