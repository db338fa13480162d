import os
from collections.abc import Mapping
from pathlib import Path
from typing import Any, Final, Optional

import dacite
import yaml
from dotenv import load_dotenv

from src.base import PipelineConfig
from src.exceptions import ConfigError
from src.utils import logger

load_dotenv()


def _get_int_env(key: str, default: int) -> int:
    try:
        val = os.environ.get(key)
        if val is None or not val.strip():
            return default
        return int(val)
    except (ValueError, TypeError):
        logger.warning("Invalid value for environment variable %s, defaulting to %s", key, default)
        return default


def _get_str_env(key: str, default: str) -> str:
    val = os.environ.get(key)
    return val.strip() if val and val.strip() else default


_DACITE_CONFIG: Final[dacite.Config] = dacite.Config(strict=True, type_hooks={float: float})


def _deep_merge(base: dict[str, Any], override: Mapping[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _read_config_file(path: Path) -> dict[str, Any]:
    # JSON documents are valid YAML, so one loader covers both formats
    try:
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"Failed to read config file {path}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"Config file {path} must contain a mapping at top level")
    return data


def build_config(data: Mapping[str, Any]) -> PipelineConfig:
    """Turn a plain mapping into a validated PipelineConfig."""
    try:
        config = dacite.from_dict(PipelineConfig, dict(data), config=_DACITE_CONFIG)
    except dacite.DaciteError as e:
        raise ConfigError(f"Invalid pipeline configuration: {e}") from e
    return config.validate()


# Configuration Loading
SCRIPT_DIR: Final[Path] = Path(__file__).parent.resolve()
CONFIG_PATH: Final[Path] = SCRIPT_DIR / "config.yaml"

try:
    DEFAULT_CONFIG_DATA: Final[dict[str, Any]] = _read_config_file(CONFIG_PATH)
    DEFAULT_CONFIG: Final[PipelineConfig] = build_config(DEFAULT_CONFIG_DATA)
except Exception as e:
    raise ConfigError(f"Failed to load config.yaml: {e}") from e


def load_pipeline_config(
    path: Optional[Path] = None, overrides: Optional[Mapping[str, Any]] = None
) -> PipelineConfig:
    """Packaged defaults, then the user's file, then explicit overrides (CLI flags)."""
    data = dict(DEFAULT_CONFIG_DATA)
    if path is not None:
        data = _deep_merge(data, _read_config_file(Path(path)))
    if overrides:
        data = _deep_merge(data, {k: v for k, v in overrides.items() if v is not None})
    return build_config(data)


# Runtime Configuration
LOG_LEVEL: Final[str] = _get_str_env("CST_LOG_LEVEL", "INFO").upper()
WORKERS: Final[int] = max(1, _get_int_env("CST_WORKERS", 4))
TIMING_REPEATS: Final[int] = max(1, _get_int_env("CST_TIMING_REPEATS", 3))

# Output naming
PROPOSALS_FILE: Final[str] = "proposals.json"
DETECTIONS_FILE: Final[str] = "detections.json"
REPORT_FILE: Final[str] = "report.json"
PR_CURVES_FILE: Final[str] = "pr_curves.csv"
ROC_CURVES_FILE: Final[str] = "roc_curves.csv"
ABLATION_MAP_FILE: Final[str] = "ablation_map.csv"
ABLATION_TIME_FILE: Final[str] = "ablation_time.csv"
MODEL_FILE: Final[str] = "baseline.cstm"
MANIFEST_FILE: Final[str] = "manifest.json"
OVERLAY_DIR: Final[str] = "overlays"
CROP_DIR: Final[str] = "crops"

# Classifier file format
MODEL_MAGIC: Final[bytes] = b"CSTMODL\x00"
MODEL_VERSION: Final[int] = 1

# Numerical floors
PROBABILITY_FLOOR: Final[float] = 1e-12
