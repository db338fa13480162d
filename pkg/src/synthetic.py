"""Seeded synthetic scans with known shapes, used for desk-scale runs and tests."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from skimage.draw import disk, polygon

from src.base import BoundingBox, GroundTruth, ScanImage
from src.dataset import DatasetManifest, ManifestEntry, save_manifest
from src.exceptions import SceneSpecError
from src.imaging import save_scan

logger = logging.getLogger(__name__)

SHAPE_KINDS = ("square", "disk", "triangle")
STRONG_CONTRAST = 120.0
WEAK_CONTRAST = 15.0


@dataclass(frozen=True)
class ShapeSpec:
    """One shape to place: `size` is the side, diameter or triangle base (= height)."""

    kind: str
    contrast: float
    min_size: int
    max_size: int

    def __post_init__(self) -> None:
        if self.kind not in SHAPE_KINDS:
            raise SceneSpecError(f"Unknown shape kind {self.kind!r}; expected one of {SHAPE_KINDS}")
        if not 3 <= self.min_size <= self.max_size:
            raise SceneSpecError(f"Shape sizes must satisfy 3 <= min <= max, got {self.min_size}..{self.max_size}")


@dataclass(frozen=True)
class SceneSpec:
    shapes: tuple[ShapeSpec, ...]
    rows: int = 128
    cols: int = 128
    background: float = 60.0
    noise_sigma: float = 1.0
    gap: int = 8
    margin: int = 4
    overlap_fraction: float = 0.0
    max_level: int = 256
    max_attempts: int = 500

    def __post_init__(self) -> None:
        if not self.shapes:
            raise SceneSpecError("A scene needs at least one shape")
        if not 0.0 <= self.overlap_fraction < 1.0:
            raise SceneSpecError(f"overlap_fraction must lie in [0, 1), got {self.overlap_fraction}")
        if self.noise_sigma < 0 or self.gap < 0 or self.margin < 0:
            raise SceneSpecError("noise_sigma, gap and margin must be nonnegative")
        if not 0 <= self.background <= self.max_level - 1:
            raise SceneSpecError(f"background must lie in [0, {self.max_level - 1}], got {self.background}")
        usable = min(self.rows, self.cols) - 2 * self.margin
        for shape in self.shapes:
            if shape.max_size > usable:
                raise SceneSpecError(
                    f"{shape.kind} of size up to {shape.max_size} cannot fit a "
                    f"{self.rows}x{self.cols} scan with margin {self.margin}"
                )


@dataclass(frozen=True)
class SyntheticShape:
    kind: str
    contrast: float
    box: BoundingBox

    def truth(self, image_id: str = "") -> GroundTruth:
        return GroundTruth(class_id=self.kind, box=self.box, image_id=image_id)


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    image: ScanImage
    shapes: tuple[SyntheticShape, ...]
    seed: int
    spec: SceneSpec = field(repr=False)

    def truths(self, image_id: str = "") -> list[GroundTruth]:
        return [shape.truth(image_id) for shape in self.shapes]


def two_contrast_spec(weak_kind: str = "disk") -> SceneSpec:
    """A strong-edged square beside a faint shape; the faint one only shows once the square is gone."""
    return SceneSpec(
        shapes=(
            ShapeSpec("square", STRONG_CONTRAST, 28, 36),
            ShapeSpec(weak_kind, WEAK_CONTRAST, 18, 24),
        )
    )


def three_shape_spec(contrast: float = STRONG_CONTRAST) -> SceneSpec:
    return SceneSpec(shapes=tuple(ShapeSpec(kind, contrast, 24, 36) for kind in SHAPE_KINDS))


def _shape_mask(kind: str, top: int, left: int, size: int, shape: tuple[int, int]) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    if kind == "square":
        mask[top : top + size, left : left + size] = True
    elif kind == "disk":
        centre = (top + (size - 1) / 2.0, left + (size - 1) / 2.0)
        rr, cc = disk(centre, size / 2.0, shape=shape)
        mask[rr, cc] = True
    else:
        base = top + size - 1
        rr, cc = polygon(
            [base, base, top],
            [left, left + size - 1, left + (size - 1) / 2.0],
            shape=shape,
        )
        mask[rr, cc] = True
    return mask


def _mask_box(mask: np.ndarray) -> BoundingBox:
    rows, cols = np.nonzero(mask)
    top, left = int(rows.min()), int(cols.min())
    return BoundingBox(top, left, int(rows.max()) - top + 1, int(cols.max()) - left + 1)


def _padded(box: BoundingBox, gap: int) -> tuple[int, int, int, int]:
    return box.top - gap, box.left - gap, box.bottom + gap, box.right + gap


def _admissible(candidate: BoundingBox, placed: list[BoundingBox], spec: SceneSpec) -> bool:
    for other in placed:
        if spec.overlap_fraction > 0:
            shared = candidate.intersection_area(other)
            if shared > spec.overlap_fraction * min(candidate.area, other.area):
                return False
            continue
        t1, l1, b1, r1 = _padded(candidate, spec.gap)
        if t1 < other.bottom and other.top < b1 and l1 < other.right and other.left < r1:
            return False
    return True


def make_synthetic(seed: int, spec: SceneSpec) -> SyntheticScene:
    """Render the spec's shapes at seeded sizes and positions, then add Gaussian noise.

    Truth boxes are the exact extent of each rendered shape. Overlapping
    shapes add their contrasts.
    """
    rng = np.random.default_rng(seed)
    canvas_shape = (spec.rows, spec.cols)
    pixels = np.full(canvas_shape, spec.background, dtype=np.float64)
    placed: list[BoundingBox] = []
    shapes: list[SyntheticShape] = []

    for shape_spec in spec.shapes:
        for _ in range(spec.max_attempts):
            size = int(rng.integers(shape_spec.min_size, shape_spec.max_size + 1))
            top = int(rng.integers(spec.margin, spec.rows - spec.margin - size + 1))
            left = int(rng.integers(spec.margin, spec.cols - spec.margin - size + 1))
            candidate = BoundingBox(top, left, size, size)
            if _admissible(candidate, placed, spec):
                break
        else:
            raise SceneSpecError(
                f"Could not place {shape_spec.kind} after {spec.max_attempts} attempts (seed {seed})"
            )
        mask = _shape_mask(shape_spec.kind, top, left, size, canvas_shape)
        pixels[mask] += shape_spec.contrast
        placed.append(candidate)
        shapes.append(SyntheticShape(shape_spec.kind, shape_spec.contrast, _mask_box(mask)))

    if spec.noise_sigma > 0:
        pixels += rng.normal(0.0, spec.noise_sigma, size=canvas_shape)
    pixels = np.rint(np.clip(pixels, 0, spec.max_level - 1))
    return SyntheticScene(
        image=ScanImage(pixels, max_level=spec.max_level),
        shapes=tuple(shapes),
        seed=seed,
        spec=spec,
    )


def scene_id(index: int) -> str:
    return f"scene_{index:04d}"


def write_corpus(
    out_dir: Union[str, Path],
    count: int,
    seed: int,
    spec: SceneSpec,
    manifest_name: str = "manifest.json",
) -> DatasetManifest:
    """Write `count` scenes (seeds seed, seed+1, ...) as PNGs plus their manifest."""
    if count < 0:
        raise SceneSpecError(f"Scene count must be >= 0, got {count}")
    out = Path(out_dir)
    entries: list[ManifestEntry] = []
    for index in range(count):
        image_id = scene_id(index)
        scene = make_synthetic(seed + index, spec)
        filename = f"{image_id}.png"
        save_scan(scene.image, out / filename)
        entries.append(ManifestEntry(id=image_id, path=filename, truths=scene.truths(image_id)))

    classes = sorted({s.kind for s in spec.shapes})
    manifest = DatasetManifest(classes=classes, images=entries, root=out)
    save_manifest(manifest, out / manifest_name)
    logger.info("🧪 Wrote %d synthetic scenes to %s", count, out)
    return manifest
