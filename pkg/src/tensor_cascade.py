"""Classic structure tensor, the K x K modified tensor family and coherent-tensor fusion."""

import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy import ndimage

from src.base import CoherentMap, DiffusionConfig, ScanImage, TensorFamily, TensorField
from src.exceptions import InvalidInputError
from src.imaging import diffuse, orientation_set, sobel_gradients, steer
from src.profiling import timed_sync
from src.utils import save_normalized_png16

logger = logging.getLogger(__name__)

# Relative tolerance under which two tensors count as the same map up to sign
REDUNDANCY_RTOL = 1e-9
# Norms agreeing to this many significant digits are ties, broken by (i, j)
NORM_RANK_DIGITS = 12


def family_size(k_count: int) -> int:
    return k_count * (k_count + 1) // 2


# ----------------------------------------------------------------------------
# Classic 2x2 tensor and coherence
# ----------------------------------------------------------------------------


def classic_tensor(img: ScanImage, window: float = 1.0) -> np.ndarray:
    """Per-pixel second-moment matrix of (G_x, G_y) smoothed by a Gaussian window.

    Returns an array of shape (rows, cols, 2, 2). window=0 disables smoothing.
    """
    if window < 0:
        raise InvalidInputError(f"window must be >= 0, got {window}")
    gx, gy = sobel_gradients(img.pixels)
    products = (gx * gx, gx * gy, gy * gy)
    if window > 0:
        products = tuple(ndimage.gaussian_filter(p, sigma=window, mode="nearest") for p in products)
    s11, s12, s22 = products
    tensor = np.empty(img.shape + (2, 2), dtype=np.float64)
    tensor[..., 0, 0] = s11
    tensor[..., 0, 1] = s12
    tensor[..., 1, 0] = s12
    tensor[..., 1, 1] = s22
    return tensor


def tensor_eigenvalues(tensor: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form eigenvalues (lambda1 >= lambda2) of symmetric 2x2 fields."""
    a = tensor[..., 0, 0]
    b = tensor[..., 0, 1]
    c = tensor[..., 1, 1]
    trace = a + c
    root = np.sqrt(np.maximum((a - c) ** 2 + 4.0 * b * b, 0.0))
    lambda1 = 0.5 * (trace + root)
    lambda2 = np.maximum(0.5 * (trace - root), 0.0)
    return lambda1, lambda2


def coherence(lambda1: float, lambda2: float) -> float:
    """((l1 - l2) / (l1 + l2))^2, defined as 0 where both eigenvalues vanish."""
    if lambda1 < 0 or lambda2 < 0:
        raise InvalidInputError(f"Eigenvalues must be nonnegative, got ({lambda1}, {lambda2})")
    total = lambda1 + lambda2
    if total == 0:
        return 0.0
    return ((lambda1 - lambda2) / total) ** 2


def coherence_map(tensor: np.ndarray) -> np.ndarray:
    """Vectorized coherence of a classic tensor field (diagnostics only)."""
    lambda1, lambda2 = tensor_eigenvalues(tensor)
    total = lambda1 + lambda2
    out = np.zeros_like(total)
    nonzero = total > 0
    out[nonzero] = ((lambda1[nonzero] - lambda2[nonzero]) / total[nonzero]) ** 2
    return out


# ----------------------------------------------------------------------------
# Modified tensor family
# ----------------------------------------------------------------------------


def _tensor_field(
    gradients: list[np.ndarray], i: int, j: int, smoothing: DiffusionConfig
) -> TensorField:
    values = diffuse(
        gradients[i] * gradients[j],
        iterations=smoothing.iterations,
        conductance=smoothing.kappa,
        step=smoothing.step,
    )
    return TensorField(i_orient=i, j_orient=j, values=values, norm=float(np.linalg.norm(values)))


@timed_sync
def build_family(
    img: ScanImage,
    k_count: int,
    smoothing: Optional[DiffusionConfig] = None,
    workers: int = 1,
) -> TensorFamily:
    """Build Im_j^i = diffuse(grad_i * grad_j) for every orientation pair i <= j."""
    if k_count < 1:
        raise InvalidInputError(f"k_count must be >= 1, got {k_count}")
    smoothing = smoothing or DiffusionConfig()

    gx, gy = sobel_gradients(img.pixels)
    gradients = [steer(gx, gy, theta) for theta in orientation_set(k_count)]
    pairs = [(i, j) for i in range(k_count) for j in range(i, k_count)]

    if workers > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            fields = list(pool.map(lambda p: _tensor_field(gradients, p[0], p[1], smoothing), pairs))
    else:
        fields = [_tensor_field(gradients, i, j, smoothing) for i, j in pairs]

    return TensorFamily(k_count=k_count, unique_fields=tuple(fields))


# ----------------------------------------------------------------------------
# Coherent tensor selection
# ----------------------------------------------------------------------------


def _rank_key(tensor: TensorField) -> tuple[float, int, int]:
    rounded = float(f"{tensor.norm:.{NORM_RANK_DIGITS - 1}e}")
    return -rounded, tensor.i_orient, tensor.j_orient


def _is_redundant(candidate: TensorField, leader: TensorField) -> bool:
    scale = max(leader.norm, candidate.norm)
    if scale == 0:
        return True
    limit = REDUNDANCY_RTOL * scale
    return bool(
        np.linalg.norm(candidate.values - leader.values) <= limit
        or np.linalg.norm(candidate.values + leader.values) <= limit
    )


def rank_tensors(family: TensorFamily) -> list[TensorField]:
    """Order tensors for selection: by norm (ties by (i, j)), sign-duplicates deferred.

    Opposite orientations give gradients that are exact negations, so several
    tensors repeat a higher-ranked one up to sign; they are placed after every
    distinct tensor in the same norm order.
    """
    leaders: list[TensorField] = []
    deferred: list[TensorField] = []
    for tensor in sorted(family.unique_fields, key=_rank_key):
        if any(_is_redundant(tensor, leader) for leader in leaders):
            deferred.append(tensor)
        else:
            leaders.append(tensor)
    return leaders + deferred


@timed_sync
def select_coherent(family: TensorFamily, m_count: int) -> CoherentMap:
    """Fuse the M predominant tensors into Im_Theta by summing their magnitudes."""
    size = len(family.unique_fields)
    if not 1 <= m_count <= size:
        raise InvalidInputError(f"m_count must lie in [1, {size}], got {m_count}")

    chosen = sorted(rank_tensors(family)[:m_count], key=_rank_key)
    values = np.zeros_like(chosen[0].values)
    for tensor in chosen:
        values += np.abs(tensor.values)

    logger.debug("Coherent tensors for K=%d M=%d: %s", family.k_count, m_count, [t.pair for t in chosen])
    return CoherentMap(
        values=values,
        contributing=tuple(t.pair for t in chosen),
        m_count=m_count,
    )


def dump_field(values: np.ndarray, path: Union[str, Path]) -> Path:
    """Write a tensor field or Im_Theta as a min-max normalized 16-bit PNG."""
    return save_normalized_png16(values, path)
