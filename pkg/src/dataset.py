"""JSON dataset manifests: scan paths, ground-truth boxes and the class registry.

A manifest looks like::

    {
      "classes": ["gun", "knife"],
      "images": [
        {"id": "B0001_0001", "path": "B0001/B0001_0001.png",
         "truths": [{"class_id": "gun", "box": {"top": 10, "left": 4, "height": 30, "width": 52}}]}
      ]
    }

Paths are relative to the manifest's directory. GDXray or SIXray annotations
convert by writing one image entry per scan with its annotated boxes.
"""

import dataclasses
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Union

import dacite

from src.base import NORMAL_CLASS, BoundingBox, GroundTruth, ScanImage
from src.exceptions import CSTError, ManifestError
from src.imaging import load_scan
from src.utils import write_json

logger = logging.getLogger(__name__)

_DACITE_CONFIG = dacite.Config(strict=True)


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: str
    truths: list[GroundTruth] = field(default_factory=list)


@dataclass(frozen=True)
class DatasetManifest:
    classes: list[str]
    images: list[ManifestEntry]
    root: Path = Path(".")

    def resolve(self, entry: ManifestEntry) -> Path:
        path = Path(entry.path)
        return path if path.is_absolute() else self.root / path

    def entry(self, image_id: str) -> ManifestEntry:
        for entry in self.images:
            if entry.id == image_id:
                return entry
        raise KeyError(image_id)

    def truths(self) -> list[GroundTruth]:
        """Every ground truth in the dataset, tagged with its image id."""
        return [truth for entry in self.images for truth in entry.truths]


def _validate(manifest: DatasetManifest, source: str) -> None:
    if NORMAL_CLASS in manifest.classes:
        raise ManifestError(f"{source}: '{NORMAL_CLASS}' is reserved and cannot be a dataset class")
    duplicates = [name for name, n in Counter(manifest.classes).items() if n > 1]
    if duplicates:
        raise ManifestError(f"{source}: duplicate classes {duplicates}")
    ids = Counter(entry.id for entry in manifest.images)
    repeated = sorted(image_id for image_id, n in ids.items() if n > 1)
    if repeated:
        raise ManifestError(f"{source}: duplicate image ids {repeated}")
    registry = set(manifest.classes)
    for entry in manifest.images:
        for truth in entry.truths:
            if truth.class_id not in registry:
                raise ManifestError(f"{source}: image {entry.id} uses unknown class {truth.class_id!r}")


def _tag_truths(entry: ManifestEntry) -> ManifestEntry:
    truths = [dataclasses.replace(t, image_id=entry.id) for t in entry.truths]
    return dataclasses.replace(entry, truths=truths)


def manifest_from_dict(data: dict[str, Any], root: Union[str, Path] = ".", source: str = "manifest") -> DatasetManifest:
    try:
        images = [dacite.from_dict(ManifestEntry, item, config=_DACITE_CONFIG) for item in data.get("images", [])]
        classes = [str(name) for name in data["classes"]]
    except (dacite.DaciteError, KeyError, TypeError, AttributeError) as e:
        raise ManifestError(f"{source}: invalid manifest structure: {e}") from e
    except CSTError as e:
        # BoundingBox validation fails on negative or empty boxes
        raise ManifestError(f"{source}: {e}") from e

    manifest = DatasetManifest(
        classes=classes,
        images=[_tag_truths(entry) for entry in images],
        root=Path(root),
    )
    _validate(manifest, source)
    return manifest


def load_manifest(path: Union[str, Path]) -> DatasetManifest:
    """Parse and validate a manifest; image files are only opened when a run needs them."""
    manifest_path = Path(path)
    try:
        with open(manifest_path, encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError(f"Cannot read manifest {manifest_path}: {e}") from e
    if not isinstance(data, dict):
        raise ManifestError(f"{manifest_path}: top level must be an object")

    manifest = manifest_from_dict(data, root=manifest_path.parent, source=str(manifest_path))
    logger.info(
        "📂 Loaded manifest %s: %d images, %d classes",
        manifest_path.name,
        len(manifest.images),
        len(manifest.classes),
    )
    return manifest


def manifest_to_dict(manifest: DatasetManifest) -> dict[str, Any]:
    return {
        "classes": list(manifest.classes),
        "images": [
            {
                "id": entry.id,
                "path": entry.path,
                "truths": [{"class_id": t.class_id, "box": t.box.to_dict()} for t in entry.truths],
            }
            for entry in manifest.images
        ],
    }


def save_manifest(manifest: DatasetManifest, path: Union[str, Path]) -> Path:
    return write_json(manifest_to_dict(manifest), path)


def load_entry_scan(manifest: DatasetManifest, entry: ManifestEntry) -> ScanImage:
    """Load an entry's scan and check its truths fit inside it."""
    img = load_scan(manifest.resolve(entry))
    for truth in entry.truths:
        if not truth.box.fits(img.rows, img.cols):
            raise ManifestError(
                f"Truth box {truth.box.to_dict()} of {entry.id} exceeds the {img.rows}x{img.cols} scan"
            )
    return img


def truth_boxes(entry: ManifestEntry) -> list[BoundingBox]:
    return [truth.box for truth in entry.truths]
