import sys
from pathlib import Path

import pytest

from src import config
from src.config import ConfigurationError

BENCH_TOML = Path(__file__).resolve().parents[1] / "bench.toml"


def test_settings_read_from_environment(monkeypatch):
    monkeypatch.setenv("BENCH_WORKERS", "6")
    monkeypatch.setenv("BENCH_LUT_DIR", "/luts")
    settings = config.get_settings()
    assert settings.workers == 6
    assert settings.face_analyzer == "geometric"
    assert str(settings.lut_dir) == "/luts"
    assert settings.asset_dir is None


def test_settings_are_cached():
    assert config.get_settings() is config.get_settings()


@pytest.mark.parametrize("value", ["many", "0"])
def test_invalid_worker_count(monkeypatch, value):
    monkeypatch.setenv("BENCH_WORKERS", value)
    with pytest.raises(ConfigurationError):
        config.get_settings()


def test_unknown_face_analyzer(monkeypatch):
    monkeypatch.setenv("BENCH_FACE_ANALYZER", "mtcnn")
    with pytest.raises(ConfigurationError) as excinfo:
        config.get_settings()
    assert "mtcnn" in str(excinfo.value)


def test_load_bundled_experiment_config():
    cfg = config.load_experiment_config(BENCH_TOML)
    assert cfg.seeds.split == 7
    assert cfg.corpus.n_identities == 20
    assert cfg.reconstruction.unet.skip_mode == "add"
    assert cfg.reconstruction.corpus.seed == 1000


def test_seed_override_replaces_every_seed():
    cfg = config.load_experiment_config(BENCH_TOML, seed=42)
    assert (cfg.seeds.split, cfg.seeds.filter, cfg.seeds.train) == (42, 42, 42)


def test_missing_and_malformed_config_files(tmp_path):
    with pytest.raises(ConfigurationError):
        config.load_experiment_config(tmp_path / "absent.toml")
    broken = tmp_path / "broken.toml"
    broken.write_text("[seeds\nsplit = 1")
    with pytest.raises(ConfigurationError):
        config.load_experiment_config(broken)


def test_toml_parser_matches_the_interpreter():
    expected = "tomllib" if sys.version_info >= (3, 11) else "tomli"
    assert config.tomllib.__name__ == expected
    requirements = (Path(__file__).resolve().parents[1] / "src" / "requirements.txt").read_text()
    assert 'tomli>=2.0,<3.0; python_version < "3.11"' in requirements.splitlines()


@pytest.mark.parametrize(
    "payload",
    [
        {"split_ratio": 1.5},
        {"variants": ["dog"]},
        {"variants": ["benchmark", "sepia"]},
        {"corpus": {"kind": "manifest"}},
        {},
    ],
)
def test_invalid_payloads_are_configuration_errors(payload):
    payload = {"seeds": {"split": 1, "filter": 1, "train": 1}, **payload} if payload else payload
    with pytest.raises(ConfigurationError):
        config.build_experiment_config(payload)


def test_config_hash_is_stable_and_sensitive():
    a = config.build_experiment_config({}, seed=1)
    b = config.build_experiment_config({}, seed=1)
    c = config.build_experiment_config({}, seed=2)
    assert config.config_hash(a) == config.config_hash(b)
    assert config.config_hash(a) != config.config_hash(c)
    assert len(config.config_hash(a)) == 16
