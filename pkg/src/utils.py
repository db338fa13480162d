import json
import logging
import math
from collections.abc import Iterable
from pathlib import Path
from typing import Any, Union

import numpy as np
from PIL import Image, ImageDraw

from src.base import BoundingBox, ScanImage

# Use module-level logger
logger = logging.getLogger(__name__)

PREDICTION_COLOR = (255, 0, 0)
TRUTH_COLOR = (0, 255, 255)
UNDEFINED = "undefined"

PathLike = Union[str, Path]


def round_floats(obj: Any, digits: int = 10) -> Any:
    """Recursively round floats to a fixed number of significant digits for stable output."""
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return UNDEFINED
        return float(f"{obj:.{digits}g}")
    if isinstance(obj, (np.floating, np.integer)):
        return round_floats(obj.item(), digits)
    if isinstance(obj, dict):
        return {str(k): round_floats(v, digits) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [round_floats(v, digits) for v in obj]
    return obj


def undefined_if_none(value: Any) -> Any:
    """Undefined metrics are surfaced explicitly, never as 0."""
    return UNDEFINED if value is None else value


def dumps_json(obj: Any) -> str:
    """Deterministic JSON: sorted keys, fixed indentation, rounded floats, trailing newline."""
    return json.dumps(round_floats(obj), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(obj: Any, path: PathLike) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(dumps_json(obj), encoding="utf-8")
    logger.debug("Wrote %s", out)
    return out


def read_json(path: PathLike) -> Any:
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def to_display_bytes(img: ScanImage) -> np.ndarray:
    """Map a scan of any bit depth onto 8-bit levels for viewing."""
    scale = 255.0 / (img.max_level - 1)
    return np.clip(np.rint(img.pixels * scale), 0, 255).astype(np.uint8)


def _outline(draw: ImageDraw.ImageDraw, box: BoundingBox, color: tuple[int, int, int]) -> None:
    draw.rectangle(
        [box.left, box.top, box.right - 1, box.bottom - 1],
        outline=color,
        width=1,
    )


def draw_overlay(
    img: ScanImage,
    predicted: Iterable[BoundingBox],
    truths: Iterable[BoundingBox] = (),
) -> Image.Image:
    """Draw predicted boxes in red and ground truths in cyan over the scan."""
    canvas = Image.fromarray(to_display_bytes(img)).convert("RGB")
    draw = ImageDraw.Draw(canvas)
    for box in truths:
        _outline(draw, box, TRUTH_COLOR)
    for box in predicted:
        _outline(draw, box, PREDICTION_COLOR)
    return canvas


def save_normalized_png16(values: np.ndarray, path: PathLike) -> Path:
    """Min-max normalize a real field to 16-bit levels and write it as PNG (debug dumps)."""
    arr = np.asarray(values, dtype=np.float64)
    lo, hi = float(arr.min()), float(arr.max())
    scaled = np.zeros_like(arr) if hi <= lo else (arr - lo) / (hi - lo) * 65535.0
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.rint(scaled).astype(np.uint16)).save(out)
    return out
