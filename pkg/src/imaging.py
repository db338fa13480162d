"""Scan loading, per-patch contrast enhancement, oriented gradients and diffusion smoothing."""

import logging
import math
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from src.base import EnhanceConfig, GradientField, PatchGrid, ScanImage
from src.exceptions import InvalidInputError

logger = logging.getLogger(__name__)

# Sobel responses are divided by this gain so gradients read in gray levels per pixel
SOBEL_GAIN = 8.0
LUMA_WEIGHTS = (0.299, 0.587, 0.114)
_SIXTEEN_BIT_MODES = ("I;16", "I;16B", "I;16L", "I")


# ----------------------------------------------------------------------------
# I/O
# ----------------------------------------------------------------------------


def load_scan(path: Union[str, Path]) -> ScanImage:
    """Read an 8/16-bit grayscale PNG/PGM; color inputs are reduced to luminance."""
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode == "L":
                return ScanImage(np.asarray(im, dtype=np.float64), max_level=256)
            if im.mode in _SIXTEEN_BIT_MODES:
                return ScanImage(np.asarray(im).astype(np.float64), max_level=65536)
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (OSError, UnidentifiedImageError, ValueError) as e:
        raise InvalidInputError(f"Cannot read scan {path}: {e}") from e

    luma = sum(w * rgb[..., c] for c, w in enumerate(LUMA_WEIGHTS))
    return ScanImage(np.clip(np.rint(luma), 0, 255), max_level=256)


def save_scan(img: ScanImage, path: Union[str, Path]) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img.quantized()).save(out)
    return out


# ----------------------------------------------------------------------------
# Contrast enhancement
# ----------------------------------------------------------------------------


def make_grid(img: ScanImage, grid_rows: int = 8, grid_cols: int = 8) -> PatchGrid:
    """Split the scan into an I x J grid; the last row/column of patches takes the remainder."""
    if grid_rows < 1 or grid_cols < 1:
        raise InvalidInputError(f"Grid must be at least 1x1, got {grid_rows}x{grid_cols}")
    if grid_rows > img.rows or grid_cols > img.cols:
        raise InvalidInputError(
            f"Grid {grid_rows}x{grid_cols} is finer than the {img.rows}x{img.cols} scan"
        )
    row_step, col_step = img.rows // grid_rows, img.cols // grid_cols
    row_edges = tuple(i * row_step for i in range(grid_rows)) + (img.rows,)
    col_edges = tuple(j * col_step for j in range(grid_cols)) + (img.cols,)
    return PatchGrid(row_edges=row_edges, col_edges=col_edges)


def _clipped_histogram(hist: np.ndarray, clip_limit: float, pixel_count: int) -> np.ndarray:
    levels = hist.size
    ceiling = max(1.0, clip_limit * pixel_count / levels)
    clipped = np.minimum(hist, ceiling)
    excess = float(hist.sum() - clipped.sum())
    return clipped + excess / levels


def _equalize_patch(
    levels: np.ndarray,
    max_level: int,
    denominator_count: int,
    clip_limit: Optional[float],
) -> np.ndarray:
    hist = np.bincount(levels.ravel(), minlength=max_level).astype(np.float64)
    if clip_limit is not None:
        hist = _clipped_histogram(hist, clip_limit, levels.size)
    cdf = np.cumsum(hist)
    cdf_min = float(cdf[cdf > 0].min())
    denominator = denominator_count - cdf_min
    if denominator <= 0:
        # single-level patch: nothing to spread
        return levels.astype(np.float64)
    mapped = np.rint((cdf[levels] - cdf_min) / denominator * (max_level - 1))
    return np.clip(mapped, 0, max_level - 1)


def enhance_contrast(
    img: ScanImage,
    grid: PatchGrid,
    clip_limit: Optional[float] = None,
    whole_image_denominator: bool = False,
) -> ScanImage:
    """Per-patch histogram equalization over the cumulative pixel count of each patch.

    The denominator is the patch pixel count P; `whole_image_denominator`
    switches to the scan's M*N. `clip_limit` caps each histogram bin at
    clip_limit * P / L_M and spreads the excess evenly (off by default).
    """
    if not grid.tiles(img):
        raise InvalidInputError("Patch grid does not tile the scan")
    levels = np.clip(np.rint(img.pixels), 0, img.max_level - 1).astype(np.int64)
    out = np.empty(img.shape, dtype=np.float64)
    for rows, cols in grid.patches():
        patch = levels[rows, cols]
        if patch.size == 0:
            raise InvalidInputError("Empty patch in grid")
        denominator_count = img.rows * img.cols if whole_image_denominator else patch.size
        out[rows, cols] = _equalize_patch(patch, img.max_level, denominator_count, clip_limit)
    return img.with_pixels(out)


def preprocess(img: ScanImage, config: EnhanceConfig) -> ScanImage:
    """Produce the working scan the proposal loop runs on."""
    if not config.enabled:
        return img
    grid = make_grid(img, min(config.grid_rows, img.rows), min(config.grid_cols, img.cols))
    return enhance_contrast(
        img,
        grid,
        clip_limit=config.clip_limit,
        whole_image_denominator=config.whole_image_denominator,
    )


# ----------------------------------------------------------------------------
# Gradients
# ----------------------------------------------------------------------------


def orientation_set(k_count: int) -> list[float]:
    """Orientations 2*pi*k/K for k = 0..K-1, ascending."""
    if k_count < 1:
        raise InvalidInputError(f"Orientation count must be >= 1, got {k_count}")
    return [2.0 * math.pi * k / k_count for k in range(k_count)]


def sobel_gradients(pixels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return (G_x, G_y) from 3x3 Sobel kernels, scaled to gray levels per pixel."""
    arr = np.asarray(pixels, dtype=np.float64)
    gx = ndimage.sobel(arr, axis=1, mode="nearest") / SOBEL_GAIN
    gy = ndimage.sobel(arr, axis=0, mode="nearest") / SOBEL_GAIN
    return gx, gy


def _snap(value: float) -> float:
    # cos(pi/2) and friends come out as ~1e-17; keep opposite orientations exact negations
    return 0.0 if abs(value) < 1e-12 else value


def steer(gx: np.ndarray, gy: np.ndarray, theta: float) -> np.ndarray:
    return _snap(math.cos(theta)) * gx + _snap(math.sin(theta)) * gy


def directional_gradient(img: ScanImage, theta: float) -> GradientField:
    """Steered first derivative cos(theta)*G_x + sin(theta)*G_y."""
    if not 0.0 <= theta < 2.0 * math.pi:
        raise InvalidInputError(f"Orientation must lie in [0, 2*pi), got {theta}")
    gx, gy = sobel_gradients(img.pixels)
    return GradientField(orientation=theta, values=steer(gx, gy, theta))


# ----------------------------------------------------------------------------
# Anisotropic diffusion
# ----------------------------------------------------------------------------


def _flux(diff: np.ndarray, kappa: float) -> np.ndarray:
    return np.exp(-((diff / kappa) ** 2)) * diff


def diffuse(field: np.ndarray, iterations: int = 10, conductance: float = 30.0, step: float = 0.2) -> np.ndarray:
    """Perona-Malik smoothing with g(s) = exp(-(s/kappa)^2) on the 4-neighbour stencil.

    Borders are zero-flux. With step <= 0.25 each update is a convex
    combination of neighbours, so the input's min/max bounds are kept.
    """
    if iterations < 0:
        raise InvalidInputError(f"iterations must be >= 0, got {iterations}")
    if conductance <= 0:
        raise InvalidInputError(f"conductance must be positive, got {conductance}")
    if not 0.0 < step <= 0.25:
        raise InvalidInputError(f"step must lie in (0, 0.25], got {step}")

    u = np.array(field, dtype=np.float64, copy=True)
    if u.ndim != 2:
        raise InvalidInputError(f"diffuse expects a 2D field, got shape {u.shape}")

    update = np.empty_like(u)
    for _ in range(iterations):
        update.fill(0.0)
        north = _flux(u[:-1, :] - u[1:, :], conductance)
        west = _flux(u[:, :-1] - u[:, 1:], conductance)
        update[1:, :] += north
        update[:-1, :] -= north
        update[:, 1:] += west
        update[:, :-1] -= west
        u += step * update
    return u
