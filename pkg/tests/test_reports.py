from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from src import config, experiments, reports
from src.embedding import EmbeddingSet
from src.errors import ContractViolation
from src.schemas import DatasetManifest, DatasetRecord, DETCurve, DETPoint, DetectionSummary, ExcludedRecord, ProvenanceStep

PROVENANCE = reports.Provenance(
    config_hash="abc123",
    seeds={"train": 1, "split": 1, "filter": 1},
    analyzer="geometric-1",
    backbone="pixproj-128 (pixproj-1)",
    corpora=["synthetic-s0-n20-k12"],
)


def _source():
    records = [DatasetRecord(image_id=f"img{k}", identity=f"id{k % 2}", path=f"{k}.png") for k in range(4)]
    return DatasetManifest(name="benchmark", source="synthetic-s0-n2-k2", records=records)


def test_write_table_prefixes_provenance(tmp_path):
    uri = str(tmp_path / "tables" / "t.csv")
    frame = pd.DataFrame({"gar": [0.5, 1 / 3]}, index=pd.Index(["benchmark", "dog"], name="variant"))

    reports.write_table(frame, uri, PROVENANCE)

    lines = Path(uri).read_text().splitlines()
    assert lines[0] == "# config_hash: abc123"
    assert lines[1] == "# seeds: filter=1 split=1 train=1"
    assert lines[5:] == ["variant,gar", "benchmark,0.500000", "dog,0.333333"]
    back = pd.read_csv(uri, comment="#", index_col="variant")
    assert back.loc["dog", "gar"] == pytest.approx(0.333333)


def test_grayscale_cells_map_gar_to_gray_levels():
    matrix = pd.DataFrame([[1.0, 0.0], [0.5, np.nan]], index=["all", "dog"], columns=["benchmark", "dog"])
    cells = reports.grayscale_cells(matrix)
    assert list(cells.columns) == ["train", "test", "gar", "gray"]
    assert list(cells["gray"]) == [255, 0, 128, 0]
    assert list(cells["train"]) == ["all", "all", "dog", "dog"]


def test_curve_frame_names_axes():
    curve = DETCurve(axes="far_frr", points=[DETPoint(threshold=0.5, error_x=0.1, error_y=0.25)])
    frame = reports.curve_frame(curve)
    assert list(frame.columns) == ["threshold", "far", "frr", "gar"]
    assert frame.loc[0, "gar"] == pytest.approx(0.75)


def test_detection_table_needs_summaries():
    summary = DetectionSummary(variant="dog", total=4, accepted=3, rejected_none=1, rejected_multiple=0, excluded_at_build=0)
    emb = EmbeddingSet("dog", "pixproj-128", ["a"], ["id0"], np.zeros((1, 2)), summary=summary)
    table = reports.detection_table({"dog": emb})
    assert table.loc["dog", "rate"] == pytest.approx(0.75)
    assert table.loc["dog", "reference_rate_pct"] == pytest.approx(97.8)

    with pytest.raises(ContractViolation):
        reports.detection_table({"dog": EmbeddingSet("dog", "pixproj-128", [], [], np.zeros((0, 2)))})


def test_exclusion_report_covers_every_source_image():
    source = _source()
    dog = source.model_copy(
        update={
            "name": "dog",
            "records": source.records[1:],
            "excluded": [ExcludedRecord(image_id="img0", identity="id0", reason="landmarks_absent")],
        }
    )
    emb = EmbeddingSet(
        "dog", "pixproj-128", ["img2", "img3"], ["id0", "id1"], np.zeros((2, 2)),
        rejected=[ExcludedRecord(image_id="img1", identity="id1", reason="none")],
    )
    frame = reports.exclusion_report(source, {"dog": dog}, {"dog": emb})
    assert list(frame["status"]) == ["excluded_at_build", "rejected_by_detector", "accepted", "accepted"]
    assert list(frame["reason"]) == ["landmarks_absent", "none", "", ""]


def test_corpus_ids_include_reconstruction_training_corpora():
    source = _source()
    step = ProvenanceStep(op="reconstruction", filter_id="shades_no_leak", params={"trained_on": "synthetic-s1000-n30-k8"})
    recon = source.model_copy(
        update={"name": "shades_recon_no_leak", "records": [r.model_copy(update={"provenance": [step]}) for r in source.records]}
    )
    assert reports.corpus_ids({"benchmark": source, "shades_recon_no_leak": recon}) == [
        "synthetic-s0-n2-k2",
        "synthetic-s1000-n30-k8",
    ]


def test_open_set_summary_lists_operating_points():
    curve = DETCurve(axes="fpir_fnir", points=[DETPoint(threshold=-np.inf, error_x=1.0, error_y=0.2)])
    result = experiments.OpenSetResult(
        curve=curve, held_out=["id1"], enrolled=["id0", "id2"], closed_set_gar=0.8,
        operating_points={0.1: 0.5, 0.01: 0.25}, mated=10, nonmated=4,
    )
    summary = reports.open_set_summary(result)
    assert summary.loc["rightmost_gar", "value"] == pytest.approx(0.8)
    assert list(summary.index[-2:]) == ["gar_at_fpir_0.1", "gar_at_fpir_0.01"]


def test_backbone_open_set_frame_has_one_row_per_backbone():
    curve = DETCurve(axes="fpir_fnir", points=[DETPoint(threshold=-np.inf, error_x=1.0, error_y=0.1)])
    results = {
        name: experiments.OpenSetResult(
            curve=curve, held_out=["id1"], enrolled=["id0", "id2"], closed_set_gar=gar,
            operating_points={0.1: gar, 0.01: gar / 2}, mated=10, nonmated=4,
        )
        for name, gar in (("pixproj-128", 0.9), ("squeezenet", 0.6))
    }
    frame = reports.backbone_open_set_frame(results)
    assert list(frame.index) == ["pixproj-128", "squeezenet"]
    assert frame.loc["squeezenet", "gar_at_fpir_0.01"] == pytest.approx(0.3)
    assert frame.loc["pixproj-128", "rightmost_gar"] == pytest.approx(0.9)


def test_provenance_names_analyzer_and_backbone():
    cfg = config.build_experiment_config({}, seed=3)
    provenance = reports.provenance_for(cfg, {"benchmark": _source()})
    assert provenance.analyzer == "geometric-1"
    assert provenance.backbone.startswith("pixproj-128 (")
    assert provenance.config_hash == config.config_hash(cfg)
    assert provenance.seeds == {"split": 3, "filter": 3, "train": 3}


# --------------------------------------------------------------------------- #
# End to end on the synthetic corpus
# --------------------------------------------------------------------------- #

PIPELINE_CONFIG = {
    "corpus": {"n_identities": 20, "images_per_identity": 12, "seed": 0, "min_images": 10},
    "reconstruction": {
        "unet": {"input_size": 64, "depth": 3, "base_channels": 16},
        "hyper": {"epochs": 40, "lr": 0.002},
    },
    "classifier": {"n_estimators": 50},
    "perplexity": 20.0,
}

OCCLUDED = ("dog", "glasses", "shades_leak", "shades_no_leak")


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    """The full pipeline, twice, into separate directories."""
    with pytest.MonkeyPatch.context() as mp:
        mp.setenv("BENCH_LOG_LEVEL", "WARNING")
        mp.setenv("BENCH_FACE_ANALYZER", "geometric")
        mp.setenv("BENCH_WEIGHTS_DIR", str(tmp_path_factory.mktemp("weights")))
        config.get_settings.cache_clear()
        cfg = config.build_experiment_config(PIPELINE_CONFIG, seed=7)
        runs = []
        for name in ("first", "second"):
            out_dir = tmp_path_factory.mktemp(name)
            reports.run_pipeline(cfg, str(out_dir))
            runs.append(out_dir)
        config.get_settings.cache_clear()
    return runs


def _table(out_dir, name, **kwargs):
    return pd.read_csv(out_dir / "tables" / name, comment="#", **kwargs)


@pytest.mark.slow
def test_pipeline_writes_every_report(pipeline_runs):
    out_dir = pipeline_runs[0]
    tables = {p.name for p in (out_dir / "tables").iterdir()}
    assert {
        "datasets.csv",
        "exclusions.csv",
        "identification_closed_set.csv",
        "cross_filter_one_vs_all_margin.csv",
        "cross_filter_boosted_softmax_gray.csv",
        "open_set_summary.csv",
        "verification_eer.csv",
        "backbone_comparison.csv",
        "backbone_open_set.csv",
    } <= tables
    assert (out_dir / "curves" / "open_set.json").exists()
    assert (out_dir / "curves" / "open_set_pixproj-128.csv").exists()
    assert len(list((out_dir / "tsne").glob("*.csv"))) == 8

    matrix = _table(out_dir, "cross_filter_one_vs_all_margin.csv", index_col="train")
    assert matrix.shape == (9, 8)


@pytest.mark.slow
def test_pipeline_is_byte_reproducible(pipeline_runs):
    first, second = pipeline_runs
    for path in sorted((first / "tables").iterdir()):
        assert path.read_bytes() == (second / "tables" / path.name).read_bytes(), path.name


@pytest.mark.slow
def test_filters_degrade_detection_and_identification(pipeline_runs):
    out_dir = pipeline_runs[0]
    detection = _table(out_dir, "datasets.csv", index_col="variant")["rate"]
    closed = _table(out_dir, "identification_closed_set.csv", index_col="variant")
    gar = closed["euclidean"]

    for series in (detection, gar):
        assert series["benchmark"] > series["shades_no_leak"]
        assert series["benchmark"] >= series["dog"] >= series["shades_leak"] >= series["shades_no_leak"]
    assert gar["shades_recon_leak"] > gar["shades_leak"]

    for variant in OCCLUDED:
        assert closed.loc[variant, "one_vs_all_margin:all"] >= closed.loc[variant, "one_vs_all_margin:benchmark"]


@pytest.mark.slow
def test_cross_filter_and_verification_directions(pipeline_runs):
    out_dir = pipeline_runs[0]
    matrix = _table(out_dir, "cross_filter_one_vs_all_margin.csv", index_col="train")
    assert matrix.loc["dog", "shades_no_leak"] < matrix.loc["dog", "benchmark"]

    eer = _table(out_dir, "verification_eer.csv", index_col="variant")
    assert eer.loc["benchmark", "euclidean"] < eer.loc["shades_no_leak", "euclidean"]
