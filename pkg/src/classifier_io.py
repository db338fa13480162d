"""Versioned little-endian binary format for trained baseline classifiers.

Layout: magic, u32 version, u32 class count, per class (u16 length + UTF-8
name), u32 crop size, u32 histogram bins, u32 feature count, then f8 arrays
for the feature mean, the feature scale and the (classes, features + 1)
weight matrix.
"""

import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np

from src.constants import MODEL_MAGIC, MODEL_VERSION
from src.exceptions import ModelFormatError
from src.recognition import ClassifierModel, FeatureSpec

logger = logging.getLogger(__name__)

_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_F8 = np.dtype("<f8")


def model_to_bytes(model: ClassifierModel) -> bytes:
    parts = [MODEL_MAGIC, _U32.pack(MODEL_VERSION), _U32.pack(len(model.classes))]
    for name in model.classes:
        encoded = name.encode("utf-8")
        parts.append(_U16.pack(len(encoded)))
        parts.append(encoded)
    spec = model.spec
    parts.append(_U32.pack(spec.crop_size))
    parts.append(_U32.pack(spec.hist_bins))
    parts.append(_U32.pack(spec.n_features))
    for array in (spec.mean, spec.scale, model.weights):
        parts.append(np.ascontiguousarray(array, dtype=_F8).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise ModelFormatError(
                f"Model file truncated: wanted {size} bytes at offset {self.offset}, "
                f"have {len(self.data) - self.offset}"
            )
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def u16(self) -> int:
        return _U16.unpack(self.take(_U16.size))[0]

    def u32(self) -> int:
        return _U32.unpack(self.take(_U32.size))[0]

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(count * _F8.itemsize), dtype=_F8).astype(np.float64)


def model_from_bytes(data: bytes) -> ClassifierModel:
    reader = _Reader(data)
    magic = reader.take(len(MODEL_MAGIC))
    if magic != MODEL_MAGIC:
        raise ModelFormatError(f"Not a classifier model file (magic {magic!r})")
    version = reader.u32()
    if version != MODEL_VERSION:
        raise ModelFormatError(f"Unsupported model version {version}, expected {MODEL_VERSION}")

    try:
        classes = tuple(reader.take(reader.u16()).decode("utf-8") for _ in range(reader.u32()))
    except UnicodeDecodeError as e:
        raise ModelFormatError(f"Class name is not valid UTF-8: {e}") from e
    if not classes:
        raise ModelFormatError("Model file declares no classes")

    crop_size = reader.u32()
    hist_bins = reader.u32()
    n_features = reader.u32()
    if n_features != crop_size * crop_size + hist_bins:
        raise ModelFormatError(
            f"Feature count {n_features} does not match crop {crop_size} and {hist_bins} bins"
        )
    mean = reader.floats(n_features)
    scale = reader.floats(n_features)
    weights = reader.floats(len(classes) * (n_features + 1)).reshape(len(classes), n_features + 1)
    if reader.offset != len(data):
        raise ModelFormatError(f"{len(data) - reader.offset} trailing bytes after model payload")

    spec = FeatureSpec(crop_size=crop_size, hist_bins=hist_bins, mean=mean, scale=scale)
    return ClassifierModel(classes=classes, spec=spec, weights=weights)


def save_model(model: ClassifierModel, path: Union[str, Path]) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(model_to_bytes(model))
    logger.info("💾 Saved classifier (%d classes) to %s", len(model.classes), out)
    return out


def load_model(path: Union[str, Path]) -> ClassifierModel:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise ModelFormatError(f"Cannot read model file {path}: {e}") from e
    return model_from_bytes(data)
