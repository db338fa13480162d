import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Optional

from src.commands.pipeline import PipelineCommands, RunOutcome
from src.constants import LOG_LEVEL, load_pipeline_config
from src.dataset import load_manifest
from src.exceptions import CSTError
from src.profiling import log_metrics_summary
from src.synthetic import three_shape_spec, two_contrast_spec
from src.utils import logger

logging.basicConfig(
    format="[%(asctime)s] [%(filename)s:%(lineno)d] %(levelname)s: %(message)s",
    level=getattr(logging, LOG_LEVEL, logging.INFO),
)

EXIT_OK = 0
EXIT_FILE_ERRORS = 1
EXIT_FAILURE = 2


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML or JSON file overriding config.yaml")
    common.add_argument("--k", type=int, dest="k_count", help="number of orientations K")
    common.add_argument("--m", type=int, dest="m_count", help="number of coherent tensors M")
    common.add_argument("--max-passes", type=int, dest="max_passes", help="cap on extraction passes")
    common.add_argument("--seed", type=int, help="seed for balancing, training and synthesis")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(
        prog="cst-scan",
        description="Cascaded structure tensor proposals, classification and detection metrics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    extract = sub.add_parser("extract", parents=[common], help="extract proposals from every scan")
    extract.add_argument("manifest", type=Path)

    classify = sub.add_parser("classify", parents=[common], help="label proposals with the baseline")
    classify.add_argument("manifest", type=Path)
    classify.add_argument("--train", type=Path, help="manifest to train on (default: the input)")
    classify.add_argument("--model", type=Path, help="trained model file to use instead of training")

    evaluate = sub.add_parser("evaluate", parents=[common], help="score detections against truths")
    evaluate.add_argument("manifest", type=Path)
    evaluate.add_argument("detections", type=Path)

    ablate = sub.add_parser("ablate", parents=[common], help="mAP and timing over a K x M grid")
    ablate.add_argument("manifest", type=Path)
    ablate.add_argument("--train", type=Path, help="manifest to train on (default: the input)")
    ablate.add_argument("--k-values", type=int, nargs="+", default=[2, 3, 4, 5, 6])
    ablate.add_argument("--m-values", type=int, nargs="+", default=[1, 2, 3, 4, 5])

    synth = sub.add_parser("synth", parents=[common], help="write seeded synthetic scenes")
    synth.add_argument("--count", type=int, default=20)
    synth.add_argument("--preset", choices=["three-shape", "two-contrast"], default="three-shape")
    return parser


def _report(outcome: RunOutcome) -> int:
    if outcome.ok:
        return EXIT_OK
    print(f"{len(outcome.errors)} file(s) failed:", file=sys.stderr)
    for error in outcome.errors:
        print(f"  {error.image_id}: {error.error}", file=sys.stderr)
    return EXIT_FILE_ERRORS


def _dispatch(args: argparse.Namespace) -> int:
    overrides = {
        "k_count": args.k_count,
        "m_count": args.m_count,
        "max_passes": args.max_passes,
        "seed": args.seed,
    }
    if getattr(args, "model", None) is not None:
        overrides["classifier"] = {"model_path": str(args.model)}
    config = load_pipeline_config(args.config, overrides)
    commands = PipelineCommands(config, args.out)

    if args.command == "extract":
        return _report(commands.run_extract(load_manifest(args.manifest)))
    if args.command == "classify":
        train = load_manifest(args.train) if args.train else None
        return _report(commands.run_classify(load_manifest(args.manifest), train))
    if args.command == "evaluate":
        return _report(commands.run_evaluate(load_manifest(args.manifest), args.detections))
    if args.command == "ablate":
        train = load_manifest(args.train) if args.train else None
        result = commands.run_ablation(load_manifest(args.manifest), args.k_values, args.m_values, train)
        return _report(result.outcome)

    spec = two_contrast_spec() if args.preset == "two-contrast" else three_shape_spec()
    return _report(commands.run_synth(args.count, config.seed, spec))


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        code = _dispatch(args)
    except CSTError as e:
        logger.error("❌ %s", e)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    log_metrics_summary()
    return code


def run() -> None:
    """Entry point for the cst-scan CLI."""
    sys.exit(main())


if __name__ == "__main__":
    run()
