"""Proposal labeling, class balancing and the baseline softmax classifier."""

import logging
from collections import Counter
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Optional, Protocol, TypeVar

import numpy as np
from skimage.transform import resize

from src.base import (
    NORMAL_CLASS,
    ClassifierConfig,
    Detection,
    GroundTruth,
    LabeledProposal,
    LabelRule,
    Proposal,
    ScanImage,
)
from src.constants import PROBABILITY_FLOOR
from src.exceptions import InvalidInputError, TrainingError
from src.imaging import sobel_gradients
from src.profiling import timed_sync

logger = logging.getLogger(__name__)

# Sobel magnitude on a [0, 1] crop never exceeds sqrt(2)/2
GRADIENT_HIST_RANGE = (0.0, 0.75)

T = TypeVar("T")


# ----------------------------------------------------------------------------
# Labeling
# ----------------------------------------------------------------------------


def assign_label(
    proposal: Proposal,
    truths: Sequence[GroundTruth],
    class_registry: Optional[Sequence[str]] = None,
    min_overlap_fraction: float = 0.0,
    image_id: str = "",
) -> LabeledProposal:
    """Label a proposal with the class whose truth box it overlaps most.

    No overlap gives "normal". Ties on intersection area go to the class with
    the smaller registry index; without a registry classes are ordered by name.
    `min_overlap_fraction` is the share of the proposal area an intersection
    must reach to count.
    """
    registry = list(class_registry) if class_registry is not None else sorted({t.class_id for t in truths})
    rank = {name: k for k, name in enumerate(registry)}

    box = proposal.box
    overlapping: list[tuple[int, str]] = []
    for truth in truths:
        area = box.intersection_area(truth.box)
        if area > 0 and area >= min_overlap_fraction * box.area:
            overlapping.append((area, truth.class_id))

    if not overlapping:
        return LabeledProposal(proposal, NORMAL_CLASS, LabelRule.NORMAL, image_id)

    area, class_id = min(overlapping, key=lambda o: (-o[0], rank.get(o[1], len(rank)), o[1]))
    rule = LabelRule.SINGLE_ITEM if len(overlapping) == 1 else LabelRule.LARGEST_OVERLAP
    return LabeledProposal(proposal, class_id, rule, image_id)


# ----------------------------------------------------------------------------
# Class balancing
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class BalanceResult:
    kept: list[LabeledProposal]
    discarded: int
    warning: bool = False


def balance_classes(
    pool: Sequence[LabeledProposal],
    seed: int,
    normal_target: Optional[int] = None,
) -> BalanceResult:
    """Keep every suspicious proposal and a seeded uniform subsample of normal ones.

    The normal count is brought down to the suspicious count unless
    `normal_target` says otherwise. Output keeps the pool's original order.
    """
    if not pool:
        raise InvalidInputError("Cannot balance an empty proposal pool")

    normal_idx = [k for k, item in enumerate(pool) if item.is_normal]
    suspicious = len(pool) - len(normal_idx)
    if suspicious == 0:
        logger.warning("⚠️ No suspicious proposals in pool of %d; returning it unchanged", len(pool))
        return BalanceResult(kept=list(pool), discarded=0, warning=True)

    target = suspicious if normal_target is None else normal_target
    if target < 0:
        raise InvalidInputError(f"normal_target must be >= 0, got {target}")
    if len(normal_idx) <= target:
        return BalanceResult(kept=list(pool), discarded=0)

    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(normal_idx), size=target, replace=False)
    dropped = set(normal_idx) - {normal_idx[k] for k in chosen.tolist()}
    kept = [item for k, item in enumerate(pool) if k not in dropped]
    logger.info("⚖️ Balanced pool: kept %d normal of %d, discarded %d", target, len(normal_idx), len(dropped))
    return BalanceResult(kept=kept, discarded=len(dropped))


def dataset_summary(pool: Sequence[LabeledProposal], scans: int, discarded: int = 0) -> dict[str, object]:
    """Per-class proposal counts with totals and the average proposals per scan."""
    counts = Counter(item.class_id for item in pool)
    normal = counts.get(NORMAL_CLASS, 0)
    return {
        "classes": dict(sorted(counts.items())),
        "suspicious": len(pool) - normal,
        "normal": normal,
        "total": len(pool),
        "discarded": discarded,
        "per_scan": len(pool) / scans if scans > 0 else None,
    }


def split_train_test(items: Sequence[T], seed: int, train_fraction: float = 0.8) -> tuple[list[T], list[T]]:
    """Seeded shuffle then split; the default keeps the 4:1 train/test ratio."""
    if not 0.0 < train_fraction < 1.0:
        raise InvalidInputError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    order = np.random.default_rng(seed).permutation(len(items))
    cut = int(round(train_fraction * len(items)))
    return [items[k] for k in order[:cut]], [items[k] for k in order[cut:]]


# ----------------------------------------------------------------------------
# Loss
# ----------------------------------------------------------------------------


def cross_entropy(probs: np.ndarray, onehot: np.ndarray) -> float:
    """Categorical cross-entropy -sum_i sum_j y_ij log p_ij.

    Zero probability at a true class is clamped to 1e-12 and logged.
    """
    p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    y = np.atleast_2d(np.asarray(onehot, dtype=np.float64))
    if p.shape != y.shape:
        raise InvalidInputError(f"probs {p.shape} and onehot {y.shape} differ in shape")
    if np.any(p < 0) or not np.allclose(p.sum(axis=1), 1.0, rtol=0.0, atol=1e-9):
        raise InvalidInputError("Each sample's probabilities must be nonnegative and sum to 1")

    at_truth = (y > 0) & (p < PROBABILITY_FLOOR)
    if np.any(at_truth):
        logger.warning(
            "⚠️ %d true-class probabilities below %.0e clamped in cross-entropy",
            int(at_truth.sum()),
            PROBABILITY_FLOOR,
        )
    clamped = np.maximum(p, PROBABILITY_FLOOR)
    return float(-np.sum(y * np.log(clamped)))


# ----------------------------------------------------------------------------
# Features and the baseline model
# ----------------------------------------------------------------------------


def extract_features(pixels: np.ndarray, crop_size: int = 32, hist_bins: int = 16) -> np.ndarray:
    """Crop resized to crop_size^2 normalized intensities plus a gradient-magnitude histogram."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise InvalidInputError(f"Cannot extract features from a crop of shape {arr.shape}")
    lo, hi = float(arr.min()), float(arr.max())
    norm = (arr - lo) / (hi - lo) if hi > lo else np.zeros_like(arr)

    resized = resize(norm, (crop_size, crop_size), order=1, mode="edge", anti_aliasing=False)
    gx, gy = sobel_gradients(norm)
    hist, _ = np.histogram(np.hypot(gx, gy), bins=hist_bins, range=GRADIENT_HIST_RANGE)
    return np.concatenate([resized.ravel(), hist / norm.size])


@dataclass(frozen=True, eq=False)
class FeatureSpec:
    crop_size: int
    hist_bins: int
    mean: np.ndarray
    scale: np.ndarray

    @property
    def n_features(self) -> int:
        return self.crop_size * self.crop_size + self.hist_bins

    def features(self, crop: ScanImage) -> np.ndarray:
        return extract_features(crop.pixels, self.crop_size, self.hist_bins)

    def standardize(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.scale


def with_bias(x: np.ndarray) -> np.ndarray:
    return np.hstack([x, np.ones((x.shape[0], 1))])


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class ClassifierModel:
    """Multinomial logistic regression; weights carry one bias column."""

    classes: tuple[str, ...]
    spec: FeatureSpec
    weights: np.ndarray
    loss_history: tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        if not self.classes:
            raise InvalidInputError("Class registry must not be empty")
        expected = (len(self.classes), self.spec.n_features + 1)
        if self.weights.shape != expected:
            raise InvalidInputError(f"Weights shape {self.weights.shape} != {expected}")

    def predict_proba_features(self, features: np.ndarray) -> np.ndarray:
        x = with_bias(self.spec.standardize(np.atleast_2d(features)))
        return softmax(x @ self.weights.T)

    def predict_proba(self, crop: ScanImage) -> np.ndarray:
        return self.predict_proba_features(self.spec.features(crop))[0]


class Classifier(Protocol):
    """Anything with a class registry and per-crop class probabilities can classify proposals."""

    classes: tuple[str, ...]

    def predict_proba(self, crop: ScanImage) -> np.ndarray: ...


def loss_and_gradient(
    weights: np.ndarray, x: np.ndarray, y: np.ndarray, l2: float = 0.0
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of softmax(x W^T) plus an L2 penalty on non-bias weights, and its gradient.

    `x` already carries the bias column.
    """
    n = x.shape[0]
    probs = softmax(x @ weights.T)
    loss = -float(np.sum(y * np.log(np.maximum(probs, PROBABILITY_FLOOR)))) / n
    grad = (probs - y).T @ x / n
    if l2 > 0:
        penalized = weights[:, :-1]
        loss += 0.5 * l2 * float(np.sum(penalized * penalized))
        grad[:, :-1] += l2 * penalized
    return loss, grad


@timed_sync
def train_baseline(
    data: Sequence[LabeledProposal],
    config: Optional[ClassifierConfig] = None,
    seed: int = 0,
) -> ClassifierModel:
    """Full-batch gradient descent on the mean cross-entropy.

    The step is step_scale / L with L the smoothness constant of the loss
    (half the top eigenvalue of X^T X / n plus the L2 weight), so the loss
    never increases between epochs.
    """
    config = config or ClassifierConfig()
    classes = tuple(sorted({item.class_id for item in data}))
    if len(classes) < 2:
        raise TrainingError(f"Training needs at least two classes, got {list(classes)}")

    raw = np.stack(
        [extract_features(item.proposal.crop.pixels, config.crop_size, config.hist_bins) for item in data]
    )
    mean = raw.mean(axis=0)
    scale = raw.std(axis=0)
    scale[scale < 1e-12] = 1.0
    spec = FeatureSpec(crop_size=config.crop_size, hist_bins=config.hist_bins, mean=mean, scale=scale)

    x = with_bias(spec.standardize(raw))
    index = {name: k for k, name in enumerate(classes)}
    y = np.zeros((len(data), len(classes)))
    y[np.arange(len(data)), [index[item.class_id] for item in data]] = 1.0

    smoothness = 0.5 * float(np.linalg.norm(x, 2)) ** 2 / x.shape[0] + config.l2
    step = config.step_scale / smoothness

    rng = np.random.default_rng(seed)
    weights = rng.normal(0.0, 0.01, size=(len(classes), x.shape[1]))
    history: list[float] = []
    for _ in range(config.epochs):
        loss, grad = loss_and_gradient(weights, x, y, config.l2)
        history.append(loss)
        weights = weights - step * grad
    history.append(loss_and_gradient(weights, x, y, config.l2)[0])

    logger.info(
        "🧠 Trained baseline on %d proposals, %d classes: loss %.4f -> %.4f",
        len(data),
        len(classes),
        history[0],
        history[-1],
    )
    return ClassifierModel(classes=classes, spec=spec, weights=weights, loss_history=tuple(history))


def classify(model: Classifier, proposal: Proposal, image_id: str = "") -> Detection:
    """Argmax class of the model's distribution, with its probability as score."""
    probs = np.asarray(model.predict_proba(proposal.crop), dtype=np.float64)
    best = int(np.argmax(probs))
    score = float(min(max(probs[best], 0.0), 1.0))
    return Detection(proposal=proposal, class_id=model.classes[best], score=score, image_id=image_id)
