import dataclasses
from pathlib import Path

import numpy as np
import pytest

from src.base import EnhanceConfig, PipelineConfig, ScanImage
from src.constants import DEFAULT_CONFIG
from src.dataset import DatasetManifest
from src.synthetic import SyntheticScene, make_synthetic, three_shape_spec, two_contrast_spec, write_corpus


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator so random-input tests are reproducible."""
    return np.random.default_rng(1234)


@pytest.fixture
def synthetic_config() -> PipelineConfig:
    """Packaged defaults without contrast enhancement.

    Per-patch equalization stretches the flat noise of synthetic backgrounds,
    so scene tests run the proposal loop on the raw render.
    """
    return dataclasses.replace(DEFAULT_CONFIG, enhance=EnhanceConfig(enabled=False))


@pytest.fixture
def flat_scan() -> ScanImage:
    return ScanImage(np.full((32, 32), 80.0))


@pytest.fixture
def step_scan() -> ScanImage:
    """64x64 scan with a vertical 60 -> 180 edge at column 32."""
    pixels = np.full((64, 64), 60.0)
    pixels[:, 32:] = 180.0
    return ScanImage(pixels)


@pytest.fixture
def two_contrast_scene() -> SyntheticScene:
    return make_synthetic(7, two_contrast_spec("disk"))


@pytest.fixture
def three_shape_scene() -> SyntheticScene:
    return make_synthetic(11, three_shape_spec())


@pytest.fixture
def small_corpus(tmp_path: Path) -> DatasetManifest:
    """Three seeded three-shape scenes written to disk with their manifest."""
    return write_corpus(tmp_path / "corpus", count=3, seed=100, spec=three_shape_spec())
