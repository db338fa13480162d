"""Detection metrics: IoU, confusion rates, interpolated AP, mAP, F1, ROC/AUC and reports."""

import csv
import io
import logging
from collections import defaultdict
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np

from src.base import (
    NORMAL_CLASS,
    BoundingBox,
    ClassReport,
    ConfusionCounts,
    Detection,
    EvalReport,
    GroundTruth,
    PRPoint,
    ROCPoint,
    ScoredBox,
)
from src.exceptions import InvalidInputError
from src.utils import undefined_if_none

logger = logging.getLogger(__name__)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two pixel boxes."""
    inter = a.intersection_area(b)
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den > 0 else None


def confusion_metrics(c: ConfusionCounts) -> dict[str, Optional[float]]:
    """Accuracy, recall, precision, specificity and false-positive rate; None where undefined."""
    return {
        "accuracy": _ratio(c.tp + c.tn, c.tp + c.tn + c.fp + c.fn),
        "recall": _ratio(c.tp, c.tp + c.fn),
        "precision": _ratio(c.tp, c.tp + c.fp),
        "specificity": _ratio(c.tn, c.tn + c.fp),
        "fpr": _ratio(c.fp, c.fp + c.tn),
    }


# ----------------------------------------------------------------------------
# Matching and average precision
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class MatchResult:
    """Greedy matching outcome; `ordered` holds predictions by descending confidence."""

    ordered: tuple[ScoredBox, ...]
    is_tp: tuple[bool, ...]
    matched_iou: tuple[Optional[float], ...]
    truth_count: int


def match_predictions(
    preds: Sequence[ScoredBox], truths: Sequence[GroundTruth], iou_min: float = 0.5
) -> MatchResult:
    """Confidence-ordered greedy matching, one truth per prediction (Pascal-VOC style).

    A prediction is a true positive when its best still-unmatched truth of the
    same class and image reaches iou_min.
    """
    if not 0.0 < iou_min <= 1.0:
        raise InvalidInputError(f"iou_min must lie in (0, 1], got {iou_min}")
    order = sorted(range(len(preds)), key=lambda k: -preds[k].confidence)
    pool: dict[tuple[str, str], list[int]] = defaultdict(list)
    for idx, truth in enumerate(truths):
        pool[(truth.image_id, truth.class_id)].append(idx)

    taken: set[int] = set()
    is_tp: list[bool] = []
    matched: list[Optional[float]] = []
    for k in order:
        pred = preds[k]
        best_idx, best_iou = -1, 0.0
        for idx in pool.get((pred.image_id, pred.class_id), ()):
            if idx in taken:
                continue
            overlap = iou(pred.box, truths[idx].box)
            if overlap > best_iou:
                best_idx, best_iou = idx, overlap
        if best_idx >= 0 and best_iou >= iou_min:
            taken.add(best_idx)
            is_tp.append(True)
            matched.append(best_iou)
        else:
            is_tp.append(False)
            matched.append(None)
    return MatchResult(
        ordered=tuple(preds[k] for k in order),
        is_tp=tuple(is_tp),
        matched_iou=tuple(matched),
        truth_count=len(truths),
    )


def pr_curve(match: MatchResult) -> list[PRPoint]:
    """One PR point per distinct confidence, with interpolated precision max_{r' >= r} P(r')."""
    if match.truth_count == 0:
        return []
    points: list[tuple[float, float, float]] = []
    tp = 0
    total = len(match.ordered)
    for k, (pred, hit) in enumerate(zip(match.ordered, match.is_tp)):
        tp += int(hit)
        last_of_level = k + 1 == total or match.ordered[k + 1].confidence != pred.confidence
        if last_of_level:
            points.append((tp / match.truth_count, tp / (k + 1), pred.confidence))

    curve: list[PRPoint] = []
    running_max = 0.0
    for recall, precision, confidence in reversed(points):
        running_max = max(running_max, precision)
        curve.append(PRPoint(recall=recall, precision=precision, confidence=confidence, interpolated=running_max))
    curve.reverse()
    return curve


def _area_under_interpolated(curve: Sequence[PRPoint]) -> float:
    area, previous_recall = 0.0, 0.0
    for point in curve:
        area += (point.recall - previous_recall) * point.interpolated
        previous_recall = point.recall
    return area


def average_precision(
    preds: Sequence[ScoredBox], truths: Sequence[GroundTruth], iou_min: float = 0.5
) -> Optional[float]:
    """Area under the interpolated PR curve from recall 0 to 1; None without truths."""
    match = match_predictions(preds, truths, iou_min)
    if match.truth_count == 0:
        return None
    return _area_under_interpolated(pr_curve(match))


def mean_ap(per_class: Iterable[Optional[float]]) -> Optional[float]:
    """Arithmetic mean over classes whose AP is defined."""
    defined = [ap for ap in per_class if ap is not None]
    if not defined:
        return None
    return float(sum(defined) / len(defined))


def f1(precision: float, recall: float) -> Optional[float]:
    if precision + recall <= 0:
        return None
    return 2.0 * precision * recall / (precision + recall)


# ----------------------------------------------------------------------------
# ROC
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class RocResult:
    points: tuple[ROCPoint, ...]
    auc: float


def roc_auc(scores: Sequence[tuple[float, bool]]) -> Optional[RocResult]:
    """ROC by sweeping every distinct score as threshold; AUC by the trapezoidal rule."""
    positives = sum(1 for _, label in scores if label)
    negatives = len(scores) - positives
    if positives == 0 or negatives == 0:
        return None

    ordered = sorted(scores, key=lambda s: -s[0])
    points = [ROCPoint(fpr=0.0, tpr=0.0, threshold=float("inf"))]
    tp = fp = 0
    for k, (score, label) in enumerate(ordered):
        if label:
            tp += 1
        else:
            fp += 1
        if k + 1 == len(ordered) or ordered[k + 1][0] != score:
            points.append(ROCPoint(fpr=fp / negatives, tpr=tp / positives, threshold=float(score)))

    auc = 0.0
    for prev, cur in zip(points[:-1], points[1:]):
        auc += (cur.fpr - prev.fpr) * (cur.tpr + prev.tpr) / 2.0
    return RocResult(points=tuple(points), auc=float(min(max(auc, 0.0), 1.0)))


# ----------------------------------------------------------------------------
# Pixel-level confusion
# ----------------------------------------------------------------------------


def pixel_confusion(
    detections: Sequence[ScoredBox],
    truths: Sequence[GroundTruth],
    shape: tuple[int, int],
    normal_class: str = NORMAL_CLASS,
) -> ConfusionCounts:
    """Item pixels against background pixels for one scan.

    A truth pixel only counts as a true positive when a detection of the same
    class covers it, so a correctly extracted but misrecognized item scores as
    a false negative.
    """
    truth_mask = np.zeros(shape, dtype=bool)
    pred_mask = np.zeros(shape, dtype=bool)
    correct = np.zeros(shape, dtype=bool)
    classes = {t.class_id for t in truths} | {d.class_id for d in detections}
    for class_id in sorted(classes - {normal_class}):
        truth_c = np.zeros(shape, dtype=bool)
        pred_c = np.zeros(shape, dtype=bool)
        for t in truths:
            if t.class_id == class_id:
                truth_c[t.box.slices] = True
        for d in detections:
            if d.class_id == class_id:
                pred_c[d.box.slices] = True
        truth_mask |= truth_c
        pred_mask |= pred_c
        correct |= truth_c & pred_c

    tp = int(correct.sum())
    fn = int((truth_mask & ~correct).sum())
    fp = int((pred_mask & ~truth_mask).sum())
    tn = int(truth_mask.size) - tp - fn - fp
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


# ----------------------------------------------------------------------------
# Reports
# ----------------------------------------------------------------------------


def scored_boxes(detections: Iterable[Detection]) -> list[ScoredBox]:
    return [
        ScoredBox(confidence=d.score, box=d.proposal.box, class_id=d.class_id, image_id=d.image_id)
        for d in detections
    ]


def _class_report(
    class_id: str, preds: Sequence[ScoredBox], truths: Sequence[GroundTruth], iou_min: float
) -> ClassReport:
    match = match_predictions(preds, truths, iou_min)
    curve = pr_curve(match)
    ap = _area_under_interpolated(curve) if match.truth_count else None
    roc = roc_auc([(p.confidence, hit) for p, hit in zip(match.ordered, match.is_tp)])
    ious = [v for v in match.matched_iou if v is not None]
    return ClassReport(
        class_id=class_id,
        ap=ap,
        auc=roc.auc if roc else None,
        mean_iou=float(np.mean(ious)) if ious else None,
        truths=len(truths),
        predictions=len(preds),
        pr_points=tuple(curve),
        roc_points=roc.points if roc else (),
    )


def evaluate(
    predictions: Sequence[ScoredBox],
    truths: Sequence[GroundTruth],
    classes: Sequence[str],
    iou_min: float = 0.5,
    image_shapes: Optional[dict[str, tuple[int, int]]] = None,
    normal_class: str = NORMAL_CLASS,
) -> EvalReport:
    """Per-class AP/AUC/mean IoU, mAP over defined classes and F1 at the operating point."""
    suspicious = [c for c in classes if c != normal_class]
    preds = [p for p in predictions if p.class_id != normal_class]
    per_class = tuple(
        _class_report(
            c,
            [p for p in preds if p.class_id == c],
            [t for t in truths if t.class_id == c],
            iou_min,
        )
        for c in suspicious
    )

    overall = match_predictions(preds, [t for t in truths if t.class_id != normal_class], iou_min)
    tp = sum(overall.is_tp)
    precision = _ratio(tp, len(preds))
    recall = _ratio(tp, overall.truth_count)
    f1_score = f1(precision, recall) if precision is not None and recall is not None else None

    pixel = None
    if image_shapes:
        totals = ConfusionCounts()
        for image_id in sorted(image_shapes):
            counts = pixel_confusion(
                [p for p in preds if p.image_id == image_id],
                [t for t in truths if t.image_id == image_id],
                image_shapes[image_id],
                normal_class,
            )
            totals = ConfusionCounts(
                tp=totals.tp + counts.tp,
                fp=totals.fp + counts.fp,
                tn=totals.tn + counts.tn,
                fn=totals.fn + counts.fn,
            )
        pixel = confusion_metrics(totals)

    return EvalReport(
        per_class=per_class,
        mean_ap=mean_ap(r.ap for r in per_class),
        f1=f1_score,
        precision=precision,
        recall=recall,
        pixel=pixel,
    )


def report_to_dict(report: EvalReport) -> dict[str, Any]:
    return {
        "mean_ap": undefined_if_none(report.mean_ap),
        "f1": undefined_if_none(report.f1),
        "precision": undefined_if_none(report.precision),
        "recall": undefined_if_none(report.recall),
        "pixel": {k: undefined_if_none(v) for k, v in report.pixel.items()} if report.pixel else None,
        "classes": [
            {
                "class": r.class_id,
                "ap": undefined_if_none(r.ap),
                "auc": undefined_if_none(r.auc),
                "mean_iou": undefined_if_none(r.mean_iou),
                "truths": r.truths,
                "predictions": r.predictions,
            }
            for r in report.per_class
        ],
    }


def curves_to_csv(report: EvalReport) -> tuple[str, str]:
    """PR and ROC points as two CSV documents for external plotting."""
    pr_buf, roc_buf = io.StringIO(), io.StringIO()
    pr_writer = csv.writer(pr_buf, lineterminator="\n")
    roc_writer = csv.writer(roc_buf, lineterminator="\n")
    pr_writer.writerow(["class", "confidence", "recall", "precision", "interpolated_precision"])
    roc_writer.writerow(["class", "threshold", "fpr", "tpr"])
    for r in report.per_class:
        for p in r.pr_points:
            pr_writer.writerow([r.class_id, f"{p.confidence:.10g}", f"{p.recall:.10g}", f"{p.precision:.10g}", f"{p.interpolated:.10g}"])
        for q in r.roc_points:
            roc_writer.writerow([r.class_id, f"{q.threshold:.10g}", f"{q.fpr:.10g}", f"{q.tpr:.10g}"])
    return pr_buf.getvalue(), roc_buf.getvalue()
