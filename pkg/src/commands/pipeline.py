import dataclasses
import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, TypeVar, Union

import numpy as np

from src.base import (
    BoundingBox,
    Detection,
    EvalReport,
    ExtractionResult,
    LabeledProposal,
    PipelineConfig,
    ScanImage,
    ScoredBox,
)
from src.classifier_io import load_model, save_model
from src.constants import (
    ABLATION_MAP_FILE,
    ABLATION_TIME_FILE,
    CROP_DIR,
    DETECTIONS_FILE,
    MANIFEST_FILE,
    MODEL_FILE,
    OVERLAY_DIR,
    PR_CURVES_FILE,
    PROPOSALS_FILE,
    REPORT_FILE,
    ROC_CURVES_FILE,
    TIMING_REPEATS,
    WORKERS,
)
from src.dataset import DatasetManifest, ManifestEntry, load_entry_scan, truth_boxes
from src.evaluation import curves_to_csv, evaluate, report_to_dict, scored_boxes
from src.exceptions import CSTError, InvalidInputError, TrainingError
from src.imaging import preprocess
from src.profiling import median_wall_time
from src.proposals import extract_proposals, proposal_rows, write_crops
from src.recognition import (
    Classifier,
    ClassifierModel,
    assign_label,
    balance_classes,
    classify,
    dataset_summary,
    train_baseline,
)
from src.synthetic import SceneSpec, three_shape_spec, write_corpus
from src.tensor_cascade import family_size
from src.utils import UNDEFINED, draw_overlay, read_json, undefined_if_none, write_json

logger = logging.getLogger(__name__)

T = TypeVar("T")

INFEASIBLE = "-"


@dataclass(frozen=True)
class FileError:
    image_id: str
    error: str

    def to_dict(self) -> dict[str, str]:
        return {"image_id": self.image_id, "error": self.error}


@dataclass
class RunOutcome:
    written: list[Path] = field(default_factory=list)
    errors: list[FileError] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


@dataclass(frozen=True, eq=False)
class ExtractedImage:
    entry: ManifestEntry
    scan: ScanImage
    result: ExtractionResult


@dataclass(frozen=True)
class AblationCell:
    k_count: int
    m_count: int
    feasible: bool
    mean_ap: Optional[float] = None
    seconds_per_image: Optional[float] = None
    error: Optional[str] = None


@dataclass
class AblationResult:
    cells: list[AblationCell]
    k_values: list[int]
    m_values: list[int]
    outcome: RunOutcome

    def cell(self, k_count: int, m_count: int) -> AblationCell:
        for cell in self.cells:
            if cell.k_count == k_count and cell.m_count == m_count:
                return cell
        raise KeyError((k_count, m_count))


def _errors_to_rows(errors: Sequence[FileError]) -> list[dict[str, str]]:
    return [e.to_dict() for e in sorted(errors, key=lambda e: e.image_id)]


def _detection_row(detection: Detection) -> dict[str, Any]:
    p = detection.proposal
    return {
        "image_id": detection.image_id,
        "pass": p.pass_index,
        "label": p.contour_label,
        "box": p.box.to_dict(),
        "class_id": detection.class_id,
        "score": detection.score,
    }


class PipelineCommands:
    """Batch commands over a dataset manifest; every artifact lands under `out_dir`."""

    def __init__(
        self,
        config: PipelineConfig,
        out_dir: Union[str, Path],
        workers: int = WORKERS,
        timing_repeats: int = TIMING_REPEATS,
    ) -> None:
        self.config = config
        self.out_dir = Path(out_dir)
        self.workers = max(1, workers)
        self.timing_repeats = max(1, timing_repeats)

    # ------------------------------------------------------------------
    # Per-image plumbing
    # ------------------------------------------------------------------

    def _map_entries(
        self, manifest: DatasetManifest, func: Callable[[ManifestEntry], T]
    ) -> tuple[dict[str, T], list[FileError]]:
        """Run func on every entry on the worker pool; results and errors come back keyed by image id."""
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            futures = {entry.id: pool.submit(func, entry) for entry in manifest.images}

        results: dict[str, T] = {}
        errors: list[FileError] = []
        for image_id in sorted(futures):
            try:
                results[image_id] = futures[image_id].result()
            except CSTError as e:
                logger.warning("⚠️ Skipping %s: %s", image_id, e)
                errors.append(FileError(image_id, str(e)))
            except Exception as e:
                logger.exception("Unexpected failure on %s", image_id)
                errors.append(FileError(image_id, f"{type(e).__name__}: {e}"))
        return results, errors

    @staticmethod
    def extract_scan(scan: ScanImage, config: PipelineConfig) -> ExtractionResult:
        working = preprocess(scan, config.enhance)
        return extract_proposals(working, config.k_count, config.m_count, config.max_passes, config)

    def extract_manifest(
        self, manifest: DatasetManifest, config: Optional[PipelineConfig] = None
    ) -> tuple[dict[str, ExtractedImage], list[FileError]]:
        config = config or self.config

        def work(entry: ManifestEntry) -> ExtractedImage:
            scan = load_entry_scan(manifest, entry)
            return ExtractedImage(entry=entry, scan=scan, result=self.extract_scan(scan, config))

        return self._map_entries(manifest, work)

    def _write_overlay(self, image: ExtractedImage, predicted: Sequence[BoundingBox]) -> Path:
        path = self.out_dir / OVERLAY_DIR / f"{image.entry.id}.png"
        path.parent.mkdir(parents=True, exist_ok=True)
        draw_overlay(image.scan, predicted, truth_boxes(image.entry)).save(path)
        return path

    # ------------------------------------------------------------------
    # Recognition helpers
    # ------------------------------------------------------------------

    def label_pool(
        self, extracted: dict[str, ExtractedImage], classes: Sequence[str]
    ) -> list[LabeledProposal]:
        fraction = self.config.classifier.min_overlap_fraction
        return [
            assign_label(proposal, image.entry.truths, classes, fraction, image_id)
            for image_id, image in sorted(extracted.items())
            for proposal in image.result.proposals
        ]

    def train(
        self, manifest: DatasetManifest, config: Optional[PipelineConfig] = None
    ) -> tuple[ClassifierModel, dict[str, Any], list[FileError]]:
        """Extract, label, balance and fit the baseline on a training manifest."""
        config = config or self.config
        extracted, errors = self.extract_manifest(manifest, config)
        pool = self.label_pool(extracted, manifest.classes)
        if not pool:
            raise InvalidInputError("Training manifest produced no proposals")
        discarded = 0
        if config.classifier.balance:
            balanced = balance_classes(pool, seed=config.seed)
            pool, discarded = balanced.kept, balanced.discarded
        summary = dataset_summary(pool, scans=len(extracted), discarded=discarded)
        model = train_baseline(pool, config.classifier, seed=config.seed)
        return model, summary, errors

    def obtain_model(
        self, manifest: DatasetManifest, train_manifest: Optional[DatasetManifest], config: PipelineConfig
    ) -> tuple[ClassifierModel, Optional[dict[str, Any]], list[FileError]]:
        if config.classifier.model_path:
            model = load_model(config.classifier.model_path)
            logger.info("📦 Loaded classifier from %s", config.classifier.model_path)
            return model, None, []
        model, summary, errors = self.train(train_manifest or manifest, config)
        return model, summary, errors

    @staticmethod
    def detect(extracted: dict[str, ExtractedImage], model: Classifier) -> dict[str, list[Detection]]:
        return {
            image_id: [classify(model, p, image_id) for p in image.result.proposals]
            for image_id, image in sorted(extracted.items())
        }

    @staticmethod
    def score(
        manifest: DatasetManifest,
        predictions: Sequence[ScoredBox],
        shapes: dict[str, tuple[int, int]],
        iou_min: float,
    ) -> EvalReport:
        truths = [t for entry in manifest.images if entry.id in shapes for t in entry.truths]
        return evaluate(predictions, truths, manifest.classes, iou_min, image_shapes=shapes)

    # ------------------------------------------------------------------
    # Commands
    # ------------------------------------------------------------------

    def run_extract(self, manifest: DatasetManifest) -> RunOutcome:
        """Write every scan's proposals to JSON plus an overlay per scan."""
        extracted, errors = self.extract_manifest(manifest)
        outcome = RunOutcome(errors=errors)

        images = []
        for image_id, image in sorted(extracted.items()):
            result = image.result
            images.append(
                {
                    "image_id": image_id,
                    "shape": list(image.scan.shape),
                    "passes_run": result.passes_run,
                    "terminated_by": result.terminated_by.value,
                    "foreground_per_pass": list(result.foreground_per_pass),
                    "proposals": proposal_rows(image_id, result),
                }
            )
            outcome.written.append(self._write_overlay(image, [p.box for p in result.proposals]))
            if self.config.write_crops:
                outcome.written.extend(write_crops(image_id, result, self.out_dir / CROP_DIR))

        document = {
            "k_count": self.config.k_count,
            "m_count": self.config.m_count,
            "max_passes": self.config.max_passes,
            "images": images,
            "errors": _errors_to_rows(errors),
        }
        outcome.written.insert(0, write_json(document, self.out_dir / PROPOSALS_FILE))
        total = sum(len(row["proposals"]) for row in images)
        logger.info("✅ Extracted %d proposals from %d scans", total, len(images))
        return outcome

    def run_classify(
        self, manifest: DatasetManifest, train_manifest: Optional[DatasetManifest] = None
    ) -> RunOutcome:
        """Train (or load) the baseline, then write class-labeled detections for every scan."""
        model, summary, train_errors = self.obtain_model(manifest, train_manifest, self.config)
        outcome = RunOutcome(errors=list(train_errors))
        if summary is not None:
            outcome.written.append(save_model(model, self.out_dir / MODEL_FILE))

        extracted, errors = self.extract_manifest(manifest)
        outcome.errors.extend(errors)
        detections = self.detect(extracted, model)

        images = []
        for image_id, image in sorted(extracted.items()):
            rows = [_detection_row(d) for d in detections[image_id]]
            images.append({"image_id": image_id, "shape": list(image.scan.shape), "detections": rows})
            suspicious = [d.proposal.box for d in detections[image_id] if d.class_id in manifest.classes]
            outcome.written.append(self._write_overlay(image, suspicious))

        document = {
            "classes": list(model.classes),
            "training": summary,
            "images": images,
            "errors": _errors_to_rows(outcome.errors),
        }
        outcome.written.insert(0, write_json(document, self.out_dir / DETECTIONS_FILE))
        logger.info("✅ Classified proposals on %d scans", len(images))
        return outcome

    @staticmethod
    def read_detections(
        path: Union[str, Path],
    ) -> tuple[list[ScoredBox], dict[str, tuple[int, int]], list[FileError]]:
        """Parse a detections document written by run_classify."""
        try:
            document = read_json(path)
        except (OSError, ValueError) as e:
            raise InvalidInputError(f"Cannot read detections {path}: {e}") from e

        predictions: list[ScoredBox] = []
        shapes: dict[str, tuple[int, int]] = {}
        try:
            for image in document.get("images", []):
                rows, cols = image["shape"]
                shapes[image["image_id"]] = (int(rows), int(cols))
                for row in image["detections"]:
                    predictions.append(
                        ScoredBox(
                            confidence=float(row["score"]),
                            box=BoundingBox(**row["box"]),
                            class_id=row["class_id"],
                            image_id=row["image_id"],
                        )
                    )
            errors = [FileError(e["image_id"], e["error"]) for e in document.get("errors", [])]
        except (AttributeError, KeyError, TypeError, ValueError) as e:
            raise InvalidInputError(f"Malformed detections {path}: {e!r}") from e
        return predictions, shapes, errors

    def run_evaluate(self, manifest: DatasetManifest, detections_path: Union[str, Path]) -> RunOutcome:
        """Score a detections document against the manifest's ground truths."""
        predictions, shapes, errors = self.read_detections(detections_path)
        report = self.score(manifest, predictions, shapes, self.config.iou_min)
        outcome = RunOutcome(errors=errors)
        outcome.written.extend(self._write_report(report))
        logger.info("📈 mAP=%s F1=%s", undefined_if_none(report.mean_ap), undefined_if_none(report.f1))
        return outcome

    def _write_report(self, report: EvalReport) -> list[Path]:
        pr_csv, roc_csv = curves_to_csv(report)
        pr_path = self.out_dir / PR_CURVES_FILE
        roc_path = self.out_dir / ROC_CURVES_FILE
        pr_path.parent.mkdir(parents=True, exist_ok=True)
        pr_path.write_text(pr_csv, encoding="utf-8")
        roc_path.write_text(roc_csv, encoding="utf-8")
        return [write_json(report_to_dict(report), self.out_dir / REPORT_FILE), pr_path, roc_path]

    def run_ablation(
        self,
        manifest: DatasetManifest,
        k_values: Sequence[int],
        m_values: Sequence[int],
        train_manifest: Optional[DatasetManifest] = None,
    ) -> AblationResult:
        """Grid over (K, M): mAP from extract + classify + evaluate, and median seconds per scan.

        Timing runs serially so cells do not compete for cores.
        """
        if not k_values or not m_values:
            raise InvalidInputError("Ablation needs at least one K and one M")

        scans, errors = self._map_entries(manifest, lambda entry: load_entry_scan(manifest, entry))
        outcome = RunOutcome(errors=errors)
        cells: list[AblationCell] = []

        for m_count in m_values:
            for k_count in k_values:
                if k_count < 1 or not 1 <= m_count <= family_size(k_count):
                    cells.append(AblationCell(k_count, m_count, feasible=False))
                    continue
                cell_config = dataclasses.replace(self.config, k_count=k_count, m_count=m_count).validate()
                try:
                    cell = self._ablation_cell(manifest, train_manifest, scans, cell_config, outcome)
                except TrainingError as e:
                    logger.warning("⚠️ K=%d M=%d: training failed, cell left undefined: %s", k_count, m_count, e)
                    cell = AblationCell(k_count, m_count, feasible=True, error=str(e))
                cells.append(cell)

        result = AblationResult(cells=cells, k_values=list(k_values), m_values=list(m_values), outcome=outcome)
        outcome.written.append(self._write_ablation_csv(result, ABLATION_MAP_FILE, lambda c: c.mean_ap))
        outcome.written.append(
            self._write_ablation_csv(result, ABLATION_TIME_FILE, lambda c: c.seconds_per_image)
        )
        return result

    def _ablation_cell(
        self,
        manifest: DatasetManifest,
        train_manifest: Optional[DatasetManifest],
        scans: dict[str, ScanImage],
        config: PipelineConfig,
        outcome: RunOutcome,
    ) -> AblationCell:
        model, _, train_errors = self.obtain_model(manifest, train_manifest, config)
        outcome.errors.extend(train_errors)

        extracted: dict[str, ExtractedImage] = {}
        seconds: list[float] = []
        for image_id, scan in sorted(scans.items()):
            result, elapsed = median_wall_time(lambda s=scan: self.extract_scan(s, config), self.timing_repeats)
            extracted[image_id] = ExtractedImage(manifest.entry(image_id), scan, result)
            seconds.append(elapsed)

        detections = self.detect(extracted, model)
        predictions = scored_boxes(d for image_id in sorted(detections) for d in detections[image_id])
        shapes = {image_id: image.scan.shape for image_id, image in extracted.items()}
        report = self.score(manifest, predictions, shapes, config.iou_min)
        per_image = float(np.mean(seconds)) if seconds else None
        logger.info(
            "🔬 K=%d M=%d: mAP=%s, %.3fs per scan",
            config.k_count,
            config.m_count,
            undefined_if_none(report.mean_ap),
            per_image or 0.0,
        )
        return AblationCell(config.k_count, config.m_count, True, report.mean_ap, per_image)

    def _write_ablation_csv(
        self, result: AblationResult, name: str, value: Callable[[AblationCell], Optional[float]]
    ) -> Path:
        """Rows are M, columns are K; infeasible cells read "-"."""
        lines = [",".join(["m"] + [f"k={k}" for k in result.k_values])]
        for m_count in result.m_values:
            row = [str(m_count)]
            for k_count in result.k_values:
                cell = result.cell(k_count, m_count)
                if not cell.feasible:
                    row.append(INFEASIBLE)
                else:
                    v = value(cell)
                    row.append(UNDEFINED if v is None else f"{v:.6g}")
            lines.append(",".join(row))
        path = self.out_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    def run_synth(self, count: int, seed: int, spec: Optional[SceneSpec] = None) -> RunOutcome:
        manifest = write_corpus(self.out_dir, count, seed, spec or three_shape_spec(), MANIFEST_FILE)
        written = [self.out_dir / MANIFEST_FILE] + [manifest.resolve(e) for e in manifest.images]
        return RunOutcome(written=written)
