"""Runtime settings, experiment configuration loading and logging setup."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Optional

import boto3
from pydantic import ValidationError

from schemas import ExperimentConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger(__name__)

FACE_ANALYZERS = ("geometric", "face_recognition")


class ConfigurationError(RuntimeError):
    """Raised when required configuration is missing or invalid."""

    def to_record(self) -> Dict[str, Any]:
        return {"error": type(self).__name__, "message": str(self), "details": {}}


def _int_env(name: str, default: int, *, minimum: int = 0) -> int:
    """Parse an integer environment variable, rejecting values below `minimum`."""
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    try:
        value = int(raw)
    except ValueError as exc:
        raise ConfigurationError(f"Environment variable {name} must be an integer, got {raw!r}") from exc
    if value < minimum:
        raise ConfigurationError(f"Environment variable {name} must be >= {minimum}")
    return value


def _path_env(name: str) -> Optional[Path]:
    raw = os.getenv(name)
    return Path(raw).expanduser() if raw else None


@dataclass(frozen=True)
class Settings:
    """In-memory representation of runtime settings."""

    log_level: str
    workers: int
    face_analyzer: str
    asset_dir: Optional[Path]
    lut_dir: Optional[Path]
    weights_dir: Path
    landmark_model: Optional[Path]
    aws_region: Optional[str]


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Load and cache settings from the environment."""
    face_analyzer = os.getenv("BENCH_FACE_ANALYZER", "geometric")
    if face_analyzer not in FACE_ANALYZERS:
        raise ConfigurationError(
            f"BENCH_FACE_ANALYZER must be one of {', '.join(FACE_ANALYZERS)}, got {face_analyzer!r}"
        )

    return Settings(
        log_level=os.getenv("BENCH_LOG_LEVEL", "INFO"),
        workers=_int_env("BENCH_WORKERS", 4, minimum=1),
        face_analyzer=face_analyzer,
        asset_dir=_path_env("BENCH_ASSET_DIR"),
        lut_dir=_path_env("BENCH_LUT_DIR"),
        weights_dir=_path_env("BENCH_WEIGHTS_DIR") or Path("~/.cache/face-filter-bench").expanduser(),
        landmark_model=_path_env("BENCH_LANDMARK_MODEL"),
        aws_region=os.getenv("AWS_REGION"),
    )


@lru_cache(maxsize=1)
def _boto_session():
    """Create and cache a boto3 session bound to the configured region."""
    return boto3.session.Session(region_name=get_settings().aws_region)


def get_s3_client():
    """Return a boto3 S3 client."""
    return _boto_session().client("s3")


def load_experiment_config(path: str | Path, **overrides: Any) -> ExperimentConfig:
    """Read a TOML experiment file and validate it.

    Keyword overrides (e.g. from `--seed`) are applied on top of the file
    before validation; `seed` replaces all three seeds.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Experiment config not found: {path}")
    try:
        with path.open("rb") as handle:
            payload = tomllib.load(handle)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"Experiment config {path} is not valid TOML: {exc}") from exc
    return build_experiment_config(payload, **overrides)


def build_experiment_config(payload: Dict[str, Any], **overrides: Any) -> ExperimentConfig:
    """Validate a plain mapping into an `ExperimentConfig`."""
    data = dict(payload)
    seed = overrides.pop("seed", None)
    if seed is not None:
        data["seeds"] = {"split": seed, "filter": seed, "train": seed}
    data.update({key: value for key, value in overrides.items() if value is not None})
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigurationError(f"Invalid experiment config: {exc.errors(include_url=False)}") from exc


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable short digest of an experiment configuration."""
    canonical = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def configure_logging():
    """Configure the root logger once using settings from the environment."""
    settings = get_settings()
    level = getattr(logging, settings.log_level.upper(), logging.INFO)
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )
