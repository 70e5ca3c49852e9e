"""Command-line entry point: `lulc <command> --config pipeline.toml`."""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

from lulc import services
from lulc.config import PipelineConfig, load_config, parse_config, settings
from lulc.errors import ConfigError, LulcError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INTERNAL = 4


def _csv_ints(value: str) -> List[int]:
    try:
        return [int(part) for part in value.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {value!r}") from exc


def _csv_names(value: str) -> List[str]:
    return [part.strip() for part in value.split(",") if part.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lulc", description="Land cover classification and urban change toolkit")
    parser.add_argument("--log-level", default=None, help="Overrides LULC_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help_text: str, config_required: bool = True) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, required=config_required, help="Pipeline TOML file")
        p.add_argument("--threads", type=int, default=None, help="Worker cap (default LULC_THREADS)")
        return p

    p = command("composite", "QA-mask and median-composite scenes per year")
    p.add_argument("--qa-bits", type=_csv_ints, default=None, help="e.g. 1,3,4")
    p.add_argument("--composite-window", type=int, default=None, metavar="MONTHS")
    p.add_argument("--indices", type=_csv_names, default=None, help="e.g. ndvi,mndwi,ndbi")

    p = command("train", "Build chip datasets, cross-validate and evaluate models")
    p.add_argument("--model", type=_csv_names, default=None, help="kmeans, forest, mlp, cnn or all")

    p = command("classify", "Classify every composite year with a trained model")
    p.add_argument("--model-path", type=Path, default=None)

    command("change", "Urban expansion, proportions and transitions from class maps")

    p = command("sweep", "Accuracy against training sample size")
    p.add_argument("--sizes", type=_csv_ints, default=None, help="e.g. 490,700,1050")
    p.add_argument("--model", default=None)

    p = command("synth", "Write seeded synthetic scenes, labels and ground truth", config_required=False)
    p.add_argument("--out", type=Path, default=None, help="Output directory (default: config output_dir)")
    p.add_argument("--seed", type=int, default=None)
    return parser


def _override(config: PipelineConfig, section: str, **values: Any) -> PipelineConfig:
    """Re-validate the config with CLI values replacing fields of one section."""
    data = config.model_dump()
    data[section].update(values)
    return parse_config(data, source="command line")


def _resolve_config(args: argparse.Namespace) -> PipelineConfig:
    if args.config is not None:
        config = load_config(args.config)
    elif args.command == "synth" and args.seed is not None:
        config = parse_config({"seed": args.seed}, source="command line")
    else:
        raise ConfigError("--config is required (synth accepts --seed instead)", field="config")

    if args.command == "composite":
        if args.qa_bits is not None:
            config = _override(config, "composite", qa_bits=args.qa_bits)
        if args.composite_window is not None:
            config = _override(config, "composite", window_months=args.composite_window)
        if args.indices is not None:
            config = _override(config, "features", indices=args.indices)
    elif args.command == "train" and args.model is not None:
        config = _override(config, "train", models=args.model)
    elif args.command == "sweep":
        if args.model is not None:
            config = _override(config, "sweep", model=args.model.lower())
        if args.sizes is not None:
            config = _override(config, "sweep", sizes=args.sizes)
    elif args.command == "synth" and args.seed is not None:
        config = config.model_copy(update={"seed": args.seed})
    return config


def _dispatch(args: argparse.Namespace, config: PipelineConfig, threads: int) -> Dict[str, Any]:
    commands: Dict[str, Callable[[], Dict[str, Any]]] = {
        "composite": lambda: services.cmd_composite(config, threads=threads),
        "train": lambda: services.cmd_train(config, threads=threads),
        "classify": lambda: services.cmd_classify(config, model_path=args.model_path, threads=threads),
        "change": lambda: services.cmd_change(config),
        "sweep": lambda: services.cmd_sweep(config, threads=threads),
        "synth": lambda: services.cmd_synth(config, out_dir=args.out),
    }
    return commands[args.command]()


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run one command and return its exit code."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=(args.log_level or settings.log_level).upper(),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stderr,
    )
    threads = args.threads if args.threads is not None else settings.threads
    try:
        if threads < 1:
            raise ConfigError(f"--threads must be >= 1, got {threads}", field="threads")
        config = _resolve_config(args)
        manifest = _dispatch(args, config, threads)
    except LulcError as exc:
        logger.error(f"{args.command} failed ({type(exc).__name__}, exit {exc.exit_code}): {exc}")
        return exc.exit_code
    except Exception:
        logger.exception(f"{args.command} failed with an internal error")
        return EXIT_INTERNAL
    logger.info(f"{args.command} finished: {json.dumps(manifest, default=str, sort_keys=True)}")
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
