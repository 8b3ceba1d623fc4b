import os
import sys
from importlib import import_module
from typing import Generator

import boto3
import pytest
from moto import mock_s3

PROJECT_ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
SRC_ROOT = os.path.join(PROJECT_ROOT, "src")

if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

if SRC_ROOT not in sys.path:
    sys.path.insert(0, SRC_ROOT)

# Ensure absolute imports like `import config` resolve to the same module as `src.config`.
# Listed so every module's own imports are already aliased when it loads.
MODULE_ALIASES = {
    "errors": "src.errors",
    "schemas": "src.schemas",
    "config": "src.config",
    "storage": "src.storage",
    "imaging": "src.imaging",
    "assets": "src.assets",
    "face_analysis": "src.face_analysis",
    "filters": "src.filters",
    "synthetic": "src.synthetic",
    "reconstructor": "src.reconstructor",
    "embedding": "src.embedding",
    "matchers": "src.matchers",
    "metrics": "src.metrics",
    "experiments": "src.experiments",
    "reports": "src.reports",
    "cli": "src.cli",
}

for alias, target in MODULE_ALIASES.items():
    if alias not in sys.modules:
        sys.modules[alias] = import_module(target)


REQUIRED_ENV = {
    "AWS_REGION": "us-east-1",
    "AWS_ACCESS_KEY_ID": "testing",
    "AWS_SECRET_ACCESS_KEY": "testing",
    "AWS_SESSION_TOKEN": "testing",
    "BENCH_LOG_LEVEL": "WARNING",
    "BENCH_WORKERS": "2",
    "BENCH_FACE_ANALYZER": "geometric",
}

OPTIONAL_ENV = ("BENCH_ASSET_DIR", "BENCH_LUT_DIR", "BENCH_LANDMARK_MODEL")

TEST_BUCKET = "bench-test-bucket"


def _clear_caches() -> None:
    from src import assets, config, embedding, face_analysis, filters

    config.get_settings.cache_clear()
    config._boto_session.cache_clear()
    assets.clear_caches()
    filters.clear_caches()
    face_analysis.clear_caches()
    embedding.clear_caches()


@pytest.fixture(autouse=True)
def _env_vars(monkeypatch, tmp_path) -> Generator[None, None, None]:
    for key, value in REQUIRED_ENV.items():
        monkeypatch.setenv(key, value)
    for key in OPTIONAL_ENV:
        monkeypatch.delenv(key, raising=False)
    monkeypatch.setenv("BENCH_WEIGHTS_DIR", str(tmp_path / "weights"))
    _clear_caches()
    yield
    _clear_caches()


@pytest.fixture
def aws_mock() -> Generator[None, None, None]:
    with mock_s3():
        from src import config

        config._boto_session.cache_clear()
        yield
        config._boto_session.cache_clear()


@pytest.fixture
def s3_bucket(aws_mock) -> str:
    session = boto3.session.Session(region_name=REQUIRED_ENV["AWS_REGION"])
    session.client("s3").create_bucket(Bucket=TEST_BUCKET)
    return TEST_BUCKET


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """4 identities x 4 images, rendered once per session."""
    from src.synthetic import generate_synthetic_corpus

    out_dir = tmp_path_factory.mktemp("corpus")
    manifest, truth = generate_synthetic_corpus(4, 4, seed=3, out_dir=str(out_dir))
    return manifest, truth


@pytest.fixture
def out_dir(tmp_path) -> str:
    path = tmp_path / "out"
    path.mkdir()
    return str(path)
