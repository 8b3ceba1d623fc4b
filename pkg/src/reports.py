"""CSV and JSON report writers and the end-to-end benchmark pipeline.

Every table starts with `#`-prefixed provenance lines (config hash, seeds,
analyzer and backbone versions, corpus ids) and carries no timestamps, so a
rerun with the same configuration reproduces the files byte for byte. Read
them back with `pandas.read_csv(uri, comment="#")`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional

import pandas as pd

import config
import storage
from embedding import EmbeddingSet, get_backbone
from errors import ContractViolation
from experiments import (
    BackboneComparison,
    ClosedSetResult,
    EvaluationContext,
    OpenSetResult,
    VerificationResult,
    build_all_variants,
    build_context,
    embed_variants,
    manifest_uri,
    prepare_corpus,
    project_embeddings_2d,
    reconstruction_models,
    run_backbone_comparison,
    run_closed_set,
    run_cross_filter,
    run_open_set,
    run_verification,
    write_manifest,
)
from face_analysis import get_face_analyzer
from schemas import DatasetManifest, DETCurve, ExperimentConfig

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.6f"

# Detection rates (%) measured on the full-scale corpus, shown next to ours for context.
REFERENCE_DETECTION_RATES: Dict[str, float] = {
    "benchmark": 98.9,
    "dog": 97.8,
    "glasses": 84.8,
    "instagram": 98.9,
    "shades_leak": 89.1,
    "shades_recon_leak": 99.2,
    "shades_no_leak": 88.5,
    "shades_recon_no_leak": 98.8,
}

AXIS_NAMES = {"fpir_fnir": ("fpir", "fnir"), "far_frr": ("far", "frr")}


@dataclass
class Provenance:
    config_hash: str
    seeds: Dict[str, int]
    analyzer: str
    backbone: str
    corpora: List[str] = field(default_factory=list)

    def lines(self) -> List[str]:
        seeds = " ".join(f"{k}={v}" for k, v in sorted(self.seeds.items()))
        return [
            f"# config_hash: {self.config_hash}",
            f"# seeds: {seeds}",
            f"# face_analyzer: {self.analyzer}",
            f"# backbone: {self.backbone}",
            f"# corpora: {', '.join(self.corpora)}",
        ]

    def to_dict(self) -> Dict[str, object]:
        return {
            "config_hash": self.config_hash,
            "seeds": dict(sorted(self.seeds.items())),
            "face_analyzer": self.analyzer,
            "backbone": self.backbone,
            "corpora": list(self.corpora),
        }


def corpus_ids(variants: Mapping[str, DatasetManifest]) -> List[str]:
    """Evaluation corpus plus every corpus a reconstruction model was trained on."""
    ids = {manifest.source for manifest in variants.values()}
    for manifest in variants.values():
        for record in manifest.records:
            for step in record.provenance:
                trained_on = step.params.get("trained_on") if step.op == "reconstruction" else None
                if trained_on:
                    ids.add(str(trained_on))
    return sorted(ids)


def provenance_for(cfg: ExperimentConfig, variants: Mapping[str, DatasetManifest], backbone: Optional[str] = None) -> Provenance:
    backbone_id = backbone or cfg.backbone
    return Provenance(
        config_hash=config.config_hash(cfg),
        seeds=cfg.seeds.model_dump(),
        analyzer=get_face_analyzer().version,
        backbone=f"{backbone_id} ({get_backbone(backbone_id).version})",
        corpora=corpus_ids(variants),
    )


def write_table(frame: pd.DataFrame, uri: str, provenance: Provenance, *, index: bool = True) -> str:
    body = frame.to_csv(index=index, float_format=FLOAT_FORMAT, na_rep="nan", lineterminator="\n")
    storage.write_text(uri, "\n".join(provenance.lines()) + "\n" + body)
    logger.info("report_written", extra={"uri": uri, "rows": len(frame)})
    return uri


def write_json(payload: Dict[str, object], uri: str) -> str:
    storage.write_text(uri, json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n")
    logger.info("report_written", extra={"uri": uri})
    return uri


def table_uri(out_dir: str, name: str) -> str:
    return storage.join(out_dir, f"tables/{name}")


# --------------------------------------------------------------------------- #
# Table builders
# --------------------------------------------------------------------------- #


def detection_table(embeddings: Mapping[str, EmbeddingSet]) -> pd.DataFrame:
    rows = []
    for name, emb in embeddings.items():
        if emb.summary is None:
            raise ContractViolation(f"embeddings for {name} carry no detection summary")
        s = emb.summary
        rows.append(
            {
                "variant": name,
                "total": s.total,
                "accepted": s.accepted,
                "rate": s.rate,
                "rejected_none": s.rejected_none,
                "rejected_multiple": s.rejected_multiple,
                "excluded_at_build": s.excluded_at_build,
                "reference_rate_pct": REFERENCE_DETECTION_RATES.get(name, float("nan")),
            }
        )
    return pd.DataFrame(rows).set_index("variant")


def exclusion_report(source: DatasetManifest, variants: Mapping[str, DatasetManifest], embeddings: Mapping[str, EmbeddingSet]) -> pd.DataFrame:
    """One row per (variant, source image): accepted, or excluded with a reason."""
    rows = []
    for name, manifest in variants.items():
        at_build = {r.image_id: r.reason for r in manifest.excluded}
        emb = embeddings.get(name)
        rejected = {r.image_id: r.reason for r in emb.rejected} if emb else {}
        for record in source.records:
            if record.image_id in at_build:
                status, reason = "excluded_at_build", at_build[record.image_id]
            elif record.image_id in rejected:
                status, reason = "rejected_by_detector", rejected[record.image_id]
            else:
                status, reason = "accepted", ""
            rows.append({"variant": name, "image_id": record.image_id, "identity": record.identity, "status": status, "reason": reason})
    return pd.DataFrame(rows, columns=["variant", "image_id", "identity", "status", "reason"])


def grayscale_cells(matrix: pd.DataFrame) -> pd.DataFrame:
    """Long-form cells with an 8-bit gray level (black = 0, white = 1)."""
    long = matrix.stack(future_stack=True).rename("gar").reset_index()
    long.columns = ["train", "test", "gar"]
    long["gray"] = (long["gar"].clip(0.0, 1.0).fillna(0.0) * 255).round().astype(int)
    return long


def curve_frame(curve: DETCurve) -> pd.DataFrame:
    x_name, y_name = AXIS_NAMES[curve.axes]
    return pd.DataFrame(
        {
            "threshold": [p.threshold for p in curve.points],
            x_name: [p.error_x for p in curve.points],
            y_name: [p.error_y for p in curve.points],
            "gar": [1.0 - p.error_y for p in curve.points],
        }
    )


def open_set_summary(result: OpenSetResult) -> pd.DataFrame:
    rows = {
        "held_out_identities": len(result.held_out),
        "enrolled_identities": len(result.enrolled),
        "mated_searches": result.mated,
        "nonmated_searches": result.nonmated,
        "closed_set_gar": result.closed_set_gar,
        "rightmost_gar": result.rightmost_gar,
    }
    for fpir, gar in sorted(result.operating_points.items(), reverse=True):
        rows[f"gar_at_fpir_{fpir:g}"] = gar
    return pd.DataFrame({"metric": list(rows), "value": list(rows.values())}).set_index("metric")


# --------------------------------------------------------------------------- #
# Writers
# --------------------------------------------------------------------------- #


def write_datasets(ctx: EvaluationContext, out_dir: str, provenance: Provenance) -> List[str]:
    return [
        write_table(detection_table(ctx.embeddings), table_uri(out_dir, "datasets.csv"), provenance),
        write_table(
            exclusion_report(ctx.source, ctx.variants, ctx.embeddings),
            table_uri(out_dir, "exclusions.csv"),
            provenance,
            index=False,
        ),
    ]


def write_closed_set(result: ClosedSetResult, out_dir: str, provenance: Provenance) -> List[str]:
    return [
        write_table(result.table, table_uri(out_dir, "identification_closed_set.csv"), provenance),
        write_table(result.training_rows, table_uri(out_dir, "closed_set_training_rows.csv"), provenance),
    ]


def write_cross_filter(matrices: Mapping[str, pd.DataFrame], out_dir: str, provenance: Provenance) -> List[str]:
    written = []
    for kind, matrix in matrices.items():
        written.append(write_table(matrix, table_uri(out_dir, f"cross_filter_{kind}.csv"), provenance))
        written.append(
            write_table(grayscale_cells(matrix), table_uri(out_dir, f"cross_filter_{kind}_gray.csv"), provenance, index=False)
        )
    return written


def write_open_set(result: OpenSetResult, out_dir: str, provenance: Provenance) -> List[str]:
    curve_uri = storage.join(out_dir, "curves/open_set")
    return [
        write_table(open_set_summary(result), table_uri(out_dir, "open_set_summary.csv"), provenance),
        write_table(curve_frame(result.curve), f"{curve_uri}.csv", provenance, index=False),
        write_json(
            {
                "provenance": provenance.to_dict(),
                "held_out": result.held_out,
                "curve": json.loads(result.curve.model_dump_json()),
            },
            f"{curve_uri}.json",
        ),
    ]


def write_verification(result: VerificationResult, out_dir: str, provenance: Provenance) -> List[str]:
    written = [write_table(result.table, table_uri(out_dir, "verification_eer.csv"), provenance)]
    curves = {}
    for (variant, metric), curve in result.curves.items():
        uri = storage.join(out_dir, f"curves/verification_{variant}_{metric}.csv")
        written.append(write_table(curve_frame(curve), uri, provenance, index=False))
        curves[f"{variant}/{metric}"] = json.loads(curve.model_dump_json())
    written.append(
        write_json(
            {"provenance": provenance.to_dict(), "unenrolled": result.unenrolled, "curves": curves},
            storage.join(out_dir, "curves/verification.json"),
        )
    )
    return written


def write_tsne(ctx: EvaluationContext, out_dir: str, provenance: Provenance) -> List[str]:
    """One projection per variant; perplexity is capped below the record count."""
    written = []
    for name in ctx.names:
        emb = ctx.embeddings[name]
        if len(emb) < 5:
            logger.warning("tsne_skipped", extra={"variant": name, "records": len(emb)})
            continue
        perplexity = min(ctx.config.perplexity, len(emb) - 1)
        if perplexity != ctx.config.perplexity:
            logger.warning("tsne_perplexity_capped", extra={"variant": name, "perplexity": perplexity})
        frame = project_embeddings_2d(emb.vectors, emb.identities, perplexity, ctx.config.seeds.split)
        frame.insert(0, "image_id", emb.image_ids)
        written.append(write_table(frame, storage.join(out_dir, f"tsne/{name}.csv"), provenance, index=False))
    return written


def backbone_open_set_frame(results: Mapping[str, OpenSetResult]) -> pd.DataFrame:
    """One row per backbone with its open-set summary metrics."""
    frame = pd.DataFrame({backbone: open_set_summary(result)["value"] for backbone, result in results.items()}).T
    frame.index.name = "backbone"
    return frame


def write_backbone_comparison(result: BackboneComparison, out_dir: str, provenance: Provenance) -> List[str]:
    written = [
        write_table(result.table, table_uri(out_dir, "backbone_comparison.csv"), provenance, index=False),
        write_table(backbone_open_set_frame(result.open_set), table_uri(out_dir, "backbone_open_set.csv"), provenance),
    ]
    for backbone, open_set in result.open_set.items():
        curve_uri = storage.join(out_dir, f"curves/open_set_{backbone}")
        written.append(write_table(curve_frame(open_set.curve), f"{curve_uri}.csv", provenance, index=False))
        written.append(
            write_json(
                {
                    "provenance": provenance.to_dict(),
                    "backbone": backbone,
                    "held_out": open_set.held_out,
                    "curve": json.loads(open_set.curve.model_dump_json()),
                },
                f"{curve_uri}.json",
            )
        )
    return written


# --------------------------------------------------------------------------- #
# Pipeline
# --------------------------------------------------------------------------- #


def run_pipeline(cfg: ExperimentConfig, out_dir: str) -> List[str]:
    """Corpus, reconstruction models, variants, embeddings, every evaluation and every report."""
    logger.info("pipeline_started", extra={"out_dir": out_dir, "config_hash": config.config_hash(cfg)})
    source = prepare_corpus(cfg.corpus, out_dir, fmt=cfg.image_format)
    write_manifest(source, manifest_uri(out_dir, "source"))
    models = reconstruction_models(cfg, out_dir)
    variants = build_all_variants(source, models, cfg.seeds.filter, out_dir, names=cfg.variants, fmt=cfg.image_format)
    embeddings = embed_variants(variants, cfg.backbone, out_dir)
    ctx = build_context(cfg, variants, embeddings)
    provenance = provenance_for(cfg, variants)

    written = write_datasets(ctx, out_dir, provenance)
    written += write_closed_set(run_closed_set(ctx), out_dir, provenance)
    written += write_cross_filter(run_cross_filter(ctx), out_dir, provenance)
    written += write_open_set(run_open_set(ctx), out_dir, provenance)
    written += write_verification(run_verification(ctx), out_dir, provenance)
    written += write_tsne(ctx, out_dir, provenance)

    comparison = run_backbone_comparison(cfg, variants, cached={cfg.backbone: embeddings}, out_dir=out_dir)
    written += write_backbone_comparison(comparison, out_dir, provenance)

    excluded = sum(len(m.excluded) for m in variants.values())
    logger.info("pipeline_done", extra={"files": len(written), "excluded_at_build": excluded})
    return written
