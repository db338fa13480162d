from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

import numpy as np

from src.exceptions import ConfigError, InvalidInputError

NORMAL_CLASS = "normal"


def _frozen_array(values: Any, dtype: Any = np.float64) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ScanImage:
    """Grayscale raster; pixels are real-valued in [0, max_level - 1]."""

    pixels: np.ndarray
    max_level: int = 256

    def __post_init__(self) -> None:
        arr = _frozen_array(self.pixels)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidInputError(f"Scan must be a nonempty 2D raster, got shape {arr.shape}")
        if self.max_level < 2:
            raise InvalidInputError(f"max_level must be at least 2, got {self.max_level}")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("Scan contains non-finite pixels")
        if arr.min() < 0 or arr.max() > self.max_level - 1:
            raise InvalidInputError(
                f"Pixels must lie in [0, {self.max_level - 1}], got [{arr.min()}, {arr.max()}]"
            )
        object.__setattr__(self, "pixels", arr)

    @property
    def rows(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def cols(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def quantized(self) -> np.ndarray:
        """Round to integer levels for storage."""
        dtype = np.uint8 if self.max_level <= 256 else np.uint16
        return np.clip(np.rint(self.pixels), 0, self.max_level - 1).astype(dtype)

    def with_pixels(self, pixels: np.ndarray) -> "ScanImage":
        return ScanImage(pixels=pixels, max_level=self.max_level)


@dataclass(frozen=True)
class PatchGrid:
    """Row/column cut points of an I x J tiling; boundary patches absorb the remainder."""

    row_edges: tuple[int, ...]
    col_edges: tuple[int, ...]

    @property
    def grid_rows(self) -> int:
        return len(self.row_edges) - 1

    @property
    def grid_cols(self) -> int:
        return len(self.col_edges) - 1

    def patches(self) -> list[tuple[slice, slice]]:
        return [
            (slice(r0, r1), slice(c0, c1))
            for r0, r1 in zip(self.row_edges[:-1], self.row_edges[1:])
            for c0, c1 in zip(self.col_edges[:-1], self.col_edges[1:])
        ]

    def tiles(self, img: ScanImage) -> bool:
        return (
            self.row_edges[0] == 0
            and self.col_edges[0] == 0
            and self.row_edges[-1] == img.rows
            and self.col_edges[-1] == img.cols
            and all(b > a for a, b in zip(self.row_edges[:-1], self.row_edges[1:]))
            and all(b > a for a, b in zip(self.col_edges[:-1], self.col_edges[1:]))
        )


@dataclass(frozen=True, eq=False)
class GradientField:
    orientation: float
    values: np.ndarray


@dataclass(frozen=True, eq=False)
class TensorField:
    i_orient: int
    j_orient: int
    values: np.ndarray
    norm: float

    @property
    def pair(self) -> tuple[int, int]:
        return self.i_orient, self.j_orient


@dataclass(frozen=True, eq=False)
class TensorFamily:
    k_count: int
    unique_fields: tuple[TensorField, ...]

    def field(self, i: int, j: int) -> TensorField:
        """Look up Im_j^i; the family is symmetric so (i, j) and (j, i) coincide."""
        lo, hi = min(i, j), max(i, j)
        for tensor in self.unique_fields:
            if tensor.pair == (lo, hi):
                return tensor
        raise InvalidInputError(f"No tensor for orientation pair ({i}, {j}) with K={self.k_count}")


@dataclass(frozen=True, eq=False)
class CoherentMap:
    values: np.ndarray
    contributing: tuple[tuple[int, int], ...]
    m_count: int


@dataclass(frozen=True)
class BoundingBox:
    top: int
    left: int
    height: int
    width: int

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1:
            raise InvalidInputError(f"Box extents must be positive, got {self.height}x{self.width}")
        if self.top < 0 or self.left < 0:
            raise InvalidInputError(f"Box origin must be nonnegative, got ({self.top}, {self.left})")

    @property
    def bottom(self) -> int:
        """Exclusive end row."""
        return self.top + self.height

    @property
    def right(self) -> int:
        """Exclusive end column."""
        return self.left + self.width

    @property
    def area(self) -> int:
        return self.height * self.width

    @property
    def slices(self) -> tuple[slice, slice]:
        return slice(self.top, self.bottom), slice(self.left, self.right)

    def fits(self, rows: int, cols: int) -> bool:
        return self.bottom <= rows and self.right <= cols

    def intersection_area(self, other: "BoundingBox") -> int:
        h = min(self.bottom, other.bottom) - max(self.top, other.top)
        w = min(self.right, other.right) - max(self.left, other.left)
        return max(h, 0) * max(w, 0)

    def to_dict(self) -> dict[str, int]:
        return {"top": self.top, "left": self.left, "height": self.height, "width": self.width}


@dataclass(frozen=True, eq=False)
class Proposal:
    box: BoundingBox
    crop: ScanImage
    pass_index: int
    contour_label: int

    def __post_init__(self) -> None:
        if self.pass_index < 1:
            raise InvalidInputError(f"pass_index must be >= 1, got {self.pass_index}")
        if self.crop.shape != (self.box.height, self.box.width):
            raise InvalidInputError("Proposal crop does not match its box")


class TerminationReason(Enum):
    EMPTY_MAP = "empty_map"
    MAX_PASSES = "max_passes"


@dataclass(frozen=True, eq=False)
class ExtractionResult:
    proposals: tuple[Proposal, ...]
    passes_run: int
    terminated_by: TerminationReason
    foreground_per_pass: tuple[int, ...] = ()

    def by_pass(self, pass_index: int) -> list[Proposal]:
        return [p for p in self.proposals if p.pass_index == pass_index]


class LabelRule(Enum):
    SINGLE_ITEM = "single_item"
    LARGEST_OVERLAP = "largest_overlap"
    NORMAL = "normal"


@dataclass(frozen=True)
class GroundTruth:
    class_id: str
    box: BoundingBox
    image_id: str = ""


@dataclass(frozen=True, eq=False)
class LabeledProposal:
    proposal: Proposal
    class_id: str
    source_rule: LabelRule
    image_id: str = ""

    @property
    def is_normal(self) -> bool:
        return self.class_id == NORMAL_CLASS


@dataclass(frozen=True, eq=False)
class Detection:
    proposal: Proposal
    class_id: str
    score: float
    image_id: str = ""

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise InvalidInputError(f"Detection score must lie in [0, 1], got {self.score}")


@dataclass(frozen=True)
class ScoredBox:
    """A prediction as seen by the metric code: confidence, box, class and image."""

    confidence: float
    box: BoundingBox
    class_id: str
    image_id: str = ""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self) -> None:
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise InvalidInputError("Confusion counts must be nonnegative")


@dataclass(frozen=True)
class PRPoint:
    recall: float
    precision: float
    confidence: float
    interpolated: float = 0.0


@dataclass(frozen=True)
class ROCPoint:
    fpr: float
    tpr: float
    threshold: float


@dataclass(frozen=True)
class ClassReport:
    class_id: str
    ap: Optional[float]
    auc: Optional[float]
    mean_iou: Optional[float]
    truths: int
    predictions: int
    pr_points: tuple[PRPoint, ...] = ()
    roc_points: tuple[ROCPoint, ...] = ()


@dataclass(frozen=True)
class EvalReport:
    per_class: tuple[ClassReport, ...]
    mean_ap: Optional[float]
    f1: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    pixel: Optional[dict[str, Optional[float]]] = None

    def class_report(self, class_id: str) -> ClassReport:
        for report in self.per_class:
            if report.class_id == class_id:
                return report
        raise KeyError(class_id)


# ----------------------------------------------------------------------------
# Pipeline configuration
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class EnhanceConfig:
    enabled: bool = True
    grid_rows: int = 8
    grid_cols: int = 8
    clip_limit: Optional[float] = None
    whole_image_denominator: bool = False


@dataclass(frozen=True)
class DiffusionConfig:
    iterations: int = 10
    step: float = 0.2
    kappa: float = 30.0


@dataclass(frozen=True)
class MorphologyConfig:
    area_min: int = 32
    min_energy: float = 4.0
    closing_size: int = 3
    edge_trim: int = 1


@dataclass(frozen=True)
class InpaintConfig:
    solver: str = "sor"
    omega: float = 1.9
    tolerance: float = 1e-6


@dataclass(frozen=True)
class ClassifierConfig:
    model_path: Optional[str] = None
    epochs: int = 300
    step_scale: float = 1.0
    l2: float = 1e-4
    crop_size: int = 32
    hist_bins: int = 16
    min_overlap_fraction: float = 0.0
    balance: bool = True


@dataclass(frozen=True)
class PipelineConfig:
    k_count: int = 4
    m_count: int = 2
    max_passes: int = 5
    iou_min: float = 0.5
    seed: int = 0
    dedup_iou: Optional[float] = None
    write_crops: bool = False
    enhance: EnhanceConfig = field(default_factory=EnhanceConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    morphology: MorphologyConfig = field(default_factory=MorphologyConfig)
    inpaint: InpaintConfig = field(default_factory=InpaintConfig)
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)

    def validate(self) -> "PipelineConfig":
        """Raise ConfigError naming the first violated bound."""
        family_size = self.k_count * (self.k_count + 1) // 2
        checks = [
            (self.k_count >= 1, f"k_count must be >= 1, got {self.k_count}"),
            (self.m_count >= 1, f"m_count must be >= 1, got {self.m_count}"),
            (
                self.m_count <= family_size,
                f"m_count must be <= K(K+1)/2 = {family_size}, got {self.m_count}",
            ),
            (self.max_passes >= 1, f"max_passes must be >= 1, got {self.max_passes}"),
            (0.0 < self.iou_min <= 1.0, f"iou_min must lie in (0, 1], got {self.iou_min}"),
            (
                self.dedup_iou is None or 0.0 < self.dedup_iou <= 1.0,
                f"dedup_iou must lie in (0, 1], got {self.dedup_iou}",
            ),
            (self.enhance.grid_rows >= 1, f"grid_rows must be >= 1, got {self.enhance.grid_rows}"),
            (self.enhance.grid_cols >= 1, f"grid_cols must be >= 1, got {self.enhance.grid_cols}"),
            (
                self.enhance.clip_limit is None or self.enhance.clip_limit > 0,
                f"clip_limit must be positive, got {self.enhance.clip_limit}",
            ),
            (
                self.diffusion.iterations >= 0,
                f"diffusion.iterations must be >= 0, got {self.diffusion.iterations}",
            ),
            (
                0.0 < self.diffusion.step <= 0.25,
                f"diffusion.step must lie in (0, 0.25], got {self.diffusion.step}",
            ),
            (self.diffusion.kappa > 0, f"diffusion.kappa must be positive, got {self.diffusion.kappa}"),
            (
                self.morphology.area_min >= 0,
                f"morphology.area_min must be >= 0, got {self.morphology.area_min}",
            ),
            (
                self.morphology.closing_size >= 1,
                f"morphology.closing_size must be >= 1, got {self.morphology.closing_size}",
            ),
            (
                self.morphology.edge_trim >= 0,
                f"morphology.edge_trim must be >= 0, got {self.morphology.edge_trim}",
            ),
            (
                self.inpaint.solver in ("sor", "direct"),
                f"inpaint.solver must be 'sor' or 'direct', got {self.inpaint.solver!r}",
            ),
            (0.0 < self.inpaint.omega < 2.0, f"inpaint.omega must lie in (0, 2), got {self.inpaint.omega}"),
            (self.inpaint.tolerance > 0, f"inpaint.tolerance must be positive, got {self.inpaint.tolerance}"),
            (self.classifier.epochs >= 1, f"classifier.epochs must be >= 1, got {self.classifier.epochs}"),
            (
                0.0 < self.classifier.step_scale <= 1.0,
                f"classifier.step_scale must lie in (0, 1], got {self.classifier.step_scale}",
            ),
            (
                0.0 <= self.classifier.min_overlap_fraction <= 1.0,
                "classifier.min_overlap_fraction must lie in [0, 1], "
                f"got {self.classifier.min_overlap_fraction}",
            ),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        return self
