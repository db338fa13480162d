"""Contour maps, bounding boxes, Dirichlet in-painting and the multi-pass extraction loop."""

import logging
from itertools import combinations
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import spsolve
from skimage.filters import threshold_otsu

from src.base import (
    BoundingBox,
    CoherentMap,
    ExtractionResult,
    MorphologyConfig,
    PipelineConfig,
    Proposal,
    ScanImage,
    TerminationReason,
)
from src.evaluation import iou
from src.exceptions import InvalidInputError
from src.imaging import save_scan
from src.profiling import timed_sync
from src.tensor_cascade import build_family, family_size, select_coherent

logger = logging.getLogger(__name__)

EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)
CROSS = ndimage.generate_binary_structure(2, 1)


# ----------------------------------------------------------------------------
# Contour map and components
# ----------------------------------------------------------------------------


def _closing(mask: np.ndarray, size: int) -> np.ndarray:
    if size <= 1:
        return mask
    # pad so the erosion half does not eat pixels along the image border
    padded = np.pad(mask, size, mode="constant")
    closed = ndimage.binary_closing(padded, structure=np.ones((size, size), dtype=bool))
    return closed[size:-size, size:-size]


FRAME_SIDES = ("top", "bottom", "left", "right")


def _sides_touched(mask: np.ndarray) -> list[str]:
    edges = {
        "top": mask[0, :],
        "bottom": mask[-1, :],
        "left": mask[:, 0],
        "right": mask[:, -1],
    }
    return [side for side in FRAME_SIDES if edges[side].any()]


def _fill_against_frame(mask: np.ndarray, sides: tuple[str, ...]) -> np.ndarray:
    """Fill holes with the given image edges counted as part of the outline."""
    padded = np.pad(mask, 1, mode="constant")
    if "top" in sides:
        padded[0, :] = True
    if "bottom" in sides:
        padded[-1, :] = True
    if "left" in sides:
        padded[:, 0] = True
    if "right" in sides:
        padded[:, -1] = True
    return ndimage.binary_fill_holes(padded)[1:-1, 1:-1]


def _fill_holes(mask: np.ndarray) -> np.ndarray:
    """Fill enclosed regions, including those the outline closes off against one or two image edges.

    Regions bounded by three or more edges stay open; a band across the frame
    would otherwise swallow the background on one of its sides.
    """
    filled = ndimage.binary_fill_holes(mask)
    sides = _sides_touched(mask)
    for group in [(side,) for side in sides] + list(combinations(sides, 2)):
        filled |= _fill_against_frame(mask, group)
    return filled


def _trim_band(mask: np.ndarray, edge_trim: int) -> np.ndarray:
    # the band straddles the true edge; sides on the image border are kept
    if edge_trim <= 0 or not mask.any():
        return mask
    return ndimage.binary_erosion(mask, structure=CROSS, iterations=edge_trim, border_value=1)


def _drop_small_blobs(mask: np.ndarray, area_min: int) -> np.ndarray:
    if area_min <= 1 or not mask.any():
        return mask
    labeled, _ = ndimage.label(mask, structure=EIGHT_CONNECTED)
    sizes = np.bincount(labeled.ravel())
    keep = sizes >= area_min
    keep[0] = False
    return keep[labeled]


@timed_sync
def contour_map(coherent: Union[CoherentMap, np.ndarray], thresholds: Optional[MorphologyConfig] = None) -> np.ndarray:
    """Binarize Im_Theta: Otsu on the min-max normalized map, then morphological clean-up.

    Pixels must also carry at least `min_energy` of coherent energy, so a map
    whose transitions were all in-painted comes out empty instead of having its
    residual noise stretched to full range. Transitions are closed and their
    holes filled, counting the image border as outline, before the 3x3 cross
    opening. `edge_trim` pixels are then peeled off the outside of each blob,
    where the contour band overshoots the object, ahead of the small-blob filter.
    """
    thresholds = thresholds or MorphologyConfig()
    values = np.asarray(coherent.values if isinstance(coherent, CoherentMap) else coherent, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise InvalidInputError("Coherent map contains non-finite values")

    empty = np.zeros(values.shape, dtype=bool)
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo or hi <= 0 or hi < thresholds.min_energy:
        return empty

    normalized = (values - lo) / (hi - lo)
    level = threshold_otsu(normalized)
    mask = (normalized > level) & (values >= thresholds.min_energy)

    mask = _closing(mask, thresholds.closing_size)
    mask = _fill_holes(mask)
    mask = ndimage.binary_opening(mask, structure=CROSS)
    mask = _trim_band(mask, thresholds.edge_trim)
    return _drop_small_blobs(mask, thresholds.area_min)


def label_components(binary: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connected labeling; labels run 1..L and 0 is background."""
    labeled, count = ndimage.label(np.asarray(binary, dtype=bool), structure=EIGHT_CONNECTED)
    return labeled, int(count)


def bounding_box(labeled: np.ndarray, label: int) -> BoundingBox:
    """Minimum axis-aligned rectangle covering every pixel carrying `label`."""
    if label < 1:
        raise InvalidInputError(f"Label must be >= 1, got {label}")
    rows, cols = np.nonzero(labeled == label)
    if rows.size == 0:
        raise InvalidInputError(f"Label {label} is not present in the map")
    top, left = int(rows.min()), int(cols.min())
    return BoundingBox(
        top=top,
        left=left,
        height=int(rows.max()) - top + 1,
        width=int(cols.max()) - left + 1,
    )


def _grow(box: BoundingBox, margin: int, shape: tuple[int, int]) -> BoundingBox:
    top, left = max(0, box.top - margin), max(0, box.left - margin)
    bottom, right = min(shape[0], box.bottom + margin), min(shape[1], box.right + margin)
    return BoundingBox(top=top, left=left, height=bottom - top, width=right - left)


# ----------------------------------------------------------------------------
# Dirichlet in-painting
# ----------------------------------------------------------------------------


def _bordered_region(img: ScanImage, box: BoundingBox) -> np.ndarray:
    """Box plus its one-pixel ring; ring pixels outside the scan take the nearest edge value."""
    if not box.fits(img.rows, img.cols):
        raise InvalidInputError(f"Box {box.to_dict()} does not fit a {img.rows}x{img.cols} scan")
    padded = np.pad(img.pixels, 1, mode="edge")
    return padded[box.top : box.bottom + 2, box.left : box.right + 2].copy()


def _neighbour_sum(work: np.ndarray) -> np.ndarray:
    return work[:-2, 1:-1] + work[2:, 1:-1] + work[1:-1, :-2] + work[1:-1, 2:]


def laplace_residual(work: np.ndarray) -> float:
    """max |4u - sum of neighbours| over the interior of a bordered region."""
    interior = work[1:-1, 1:-1]
    if interior.size == 0:
        return 0.0
    return float(np.max(np.abs(4.0 * interior - _neighbour_sum(work))))


def _sor(work: np.ndarray, omega: float, residual_limit: float, max_sweeps: int) -> tuple[int, float]:
    h, w = work.shape[0] - 2, work.shape[1] - 2
    rows, cols = np.indices((h, w))
    red = (rows + cols) % 2 == 0
    colours = (red, ~red)

    residual = laplace_residual(work)
    sweeps = 0
    while residual > residual_limit and sweeps < max_sweeps:
        for colour in colours:
            interior = work[1:-1, 1:-1]
            target = 0.25 * _neighbour_sum(work)
            interior[colour] += omega * (target[colour] - interior[colour])
        sweeps += 1
        residual = laplace_residual(work)
    return sweeps, residual


def _finish(img: ScanImage, box: BoundingBox, interior: np.ndarray) -> ScanImage:
    out = np.array(img.pixels, copy=True)
    out[box.slices] = np.clip(interior, 0, img.max_level - 1)
    return img.with_pixels(out)


def optimal_omega(height: int, width: int) -> float:
    """Optimal SOR factor for the 5-point Laplacian on an h x w interior."""
    jacobi_radius = 0.5 * (np.cos(np.pi / (height + 1)) + np.cos(np.pi / (width + 1)))
    return float(2.0 / (1.0 + np.sqrt(1.0 - jacobi_radius**2)))


def inpaint(img: ScanImage, box: BoundingBox, omega: float = 1.9, tolerance: float = 1e-6) -> ScanImage:
    """Replace the box with the discrete-harmonic fill of its surrounding ring (red-black SOR).

    `omega` is capped at the box's optimal factor; small boxes over-relax
    otherwise. Iteration stops once the Laplace residual guarantees the
    solution is within tolerance * L_M of the exact discrete solution, or
    after 10*h*w sweeps.
    """
    work = _bordered_region(img, box)
    h, w = box.height, box.width
    # max-norm of the inverse 5-point operator is bounded by (min(h, w) + 1)^2 / 8
    inverse_bound = max(1.0, (min(h, w) + 1) ** 2 / 8.0)
    residual_limit = tolerance * img.max_level / inverse_bound
    max_sweeps = 10 * h * w

    sweeps, residual = _sor(work, min(omega, optimal_omega(h, w)), residual_limit, max_sweeps)
    if residual > residual_limit:
        logger.warning(
            "SOR stopped after %d sweeps with residual %.3g on box %s",
            sweeps,
            residual,
            box.to_dict(),
        )
    return _finish(img, box, work[1:-1, 1:-1])


def _laplacian_1d(n: int) -> sparse.csr_matrix:
    return sparse.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n, n), format="csr")


def inpaint_dense(img: ScanImage, box: BoundingBox) -> ScanImage:
    """Same Dirichlet problem solved directly with a sparse factorization."""
    work = _bordered_region(img, box)
    h, w = box.height, box.width
    operator = sparse.kron(sparse.identity(h), _laplacian_1d(w)) + sparse.kron(
        _laplacian_1d(h), sparse.identity(w)
    )
    rhs = np.zeros((h, w))
    rhs[0, :] += work[0, 1:-1]
    rhs[-1, :] += work[-1, 1:-1]
    rhs[:, 0] += work[1:-1, 0]
    rhs[:, -1] += work[1:-1, -1]
    solution = spsolve(operator.tocsc(), rhs.ravel())
    return _finish(img, box, np.asarray(solution).reshape(h, w))


# ----------------------------------------------------------------------------
# Multi-pass extraction
# ----------------------------------------------------------------------------


def dedup_proposals(proposals: list[Proposal], iou_threshold: float = 0.9) -> list[Proposal]:
    """Drop any proposal overlapping an earlier kept one at IoU >= iou_threshold."""
    kept: list[Proposal] = []
    for proposal in proposals:
        if all(iou(proposal.box, other.box) < iou_threshold for other in kept):
            kept.append(proposal)
    return kept


@timed_sync
def extract_proposals(
    img: ScanImage,
    k_count: int,
    m_count: int,
    max_passes: int,
    config: Optional[PipelineConfig] = None,
) -> ExtractionResult:
    """Repeat tensor fusion, contour labeling, cropping and in-painting until no transitions remain."""
    if k_count < 1:
        raise InvalidInputError(f"k_count must be >= 1, got {k_count}")
    if not 1 <= m_count <= family_size(k_count):
        raise InvalidInputError(f"m_count must lie in [1, {family_size(k_count)}], got {m_count}")
    if max_passes < 1:
        raise InvalidInputError(f"max_passes must be >= 1, got {max_passes}")
    config = config or PipelineConfig()

    working = img
    proposals: list[Proposal] = []
    foreground: list[int] = []
    terminated_by = TerminationReason.MAX_PASSES
    passes_run = 0

    for pass_index in range(1, max_passes + 1):
        passes_run = pass_index
        family = build_family(working, k_count, config.diffusion)
        coherent = select_coherent(family, m_count)
        mask = contour_map(coherent, config.morphology)
        labeled, count = label_components(mask)
        foreground.append(int(mask.sum()))
        if count == 0:
            terminated_by = TerminationReason.EMPTY_MAP
            break

        # crops come from the scan as it stood at the start of the pass
        boxes = [bounding_box(labeled, label) for label in range(1, count + 1)]
        for label, box in enumerate(boxes, start=1):
            crop = working.with_pixels(working.pixels[box.slices])
            proposals.append(Proposal(box=box, crop=crop, pass_index=pass_index, contour_label=label))

        # in-paint the band trimmed off the blob as well
        for box in (_grow(b, config.morphology.edge_trim, working.shape) for b in boxes):
            if config.inpaint.solver == "direct":
                working = inpaint_dense(working, box)
            else:
                working = inpaint(working, box, config.inpaint.omega, config.inpaint.tolerance)
        logger.debug("Pass %d: %d proposals, %d foreground pixels", pass_index, count, foreground[-1])

    if config.dedup_iou is not None:
        proposals = dedup_proposals(proposals, config.dedup_iou)

    return ExtractionResult(
        proposals=tuple(proposals),
        passes_run=passes_run,
        terminated_by=terminated_by,
        foreground_per_pass=tuple(foreground),
    )


# ----------------------------------------------------------------------------
# Export
# ----------------------------------------------------------------------------


def proposal_rows(image_id: str, result: ExtractionResult) -> list[dict[str, Any]]:
    return [
        {
            "image_id": image_id,
            "pass": p.pass_index,
            "label": p.contour_label,
            "box": p.box.to_dict(),
        }
        for p in result.proposals
    ]


def crop_filename(image_id: str, proposal: Proposal) -> str:
    return f"{image_id}_p{proposal.pass_index}_l{proposal.contour_label}.png"


def write_crops(image_id: str, result: ExtractionResult, out_dir: Union[str, Path]) -> list[Path]:
    out = Path(out_dir)
    return [save_scan(p.crop, out / crop_filename(image_id, p)) for p in result.proposals]
