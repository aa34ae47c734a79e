import argparse
import sys
from pathlib import Path

from dimensionality_lab.core import logger, config
from dimensionality_lab.core.config import APP_VERSION, LOG_CONFIG_FILE
from dimensionality_lab.core.errors import LabError
from dimensionality_lab.core.experiment import COMMAND_NAMES, parse_config, run_experiment

COMMAND_HELP = {
    "sweep-features": "closed-form I(R;Z) of PCA projections while the blob feature count grows",
    "sweep-variance": "closed-form I(R;Z) of PCA projections while the blob cluster_std grows",
    "train-toy": "train the toy encoder/projector and log its trajectory",
    "metrics": "spectrum and matrix-entropy metrics of CSV feature matrices",
}


def comma_list(value: str) -> list[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dimensionality_lab", description="Representation dimensionality experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {APP_VERSION}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    for command in COMMAND_NAMES:
        subparser = subparsers.add_parser(command, help=COMMAND_HELP[command])
        subparser.add_argument("--config", type=Path, help="YAML experiment config")
        subparser.add_argument("--seed", type=int, help="base seed, overrides the config")
        subparser.add_argument("--out", type=Path, dest="output_dir", help="output directory, overrides the config")

        if command == "metrics":
            subparser.add_argument("--input", type=Path, action="append", dest="inputs", help="CSV feature matrix, repeat for paired metrics")
            subparser.add_argument("--metrics", type=comma_list, help="comma list of er,vne,renyi,mi,cev,count,uniformity,me,alignment")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    logger.configure(LOG_CONFIG_FILE)

    # validate Python environment
    config.validate_environment()

    try:
        source = args.config.read_text(encoding="utf8") if args.config else ""
    except OSError as e:
        logger.channel("cli").error(f"Cannot read config {args.config}: {e}")
        return 1

    overrides = {"seed": args.seed, "output_dir": args.output_dir, "inputs": getattr(args, "inputs", None), "metrics": getattr(args, "metrics", None)}

    try:
        cfg = parse_config(source, overrides, command=args.command)
        manifest = run_experiment(cfg)
    except LabError as e:
        logger.channel("cli").error(str(e))
        return 1
    except PermissionError as e:
        logger.channel("cli").error(f"{e}")
        return 1
    except Exception as e:
        logger.channel("cli").exception(f"Unexpected error: {e}")
        return 1

    logger.channel("cli").info(f"Wrote {len(manifest.artifacts)} artifacts and a manifest to {cfg.output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
