"""Pydantic models for manifests, configurations, reports and score curves."""

from __future__ import annotations

import math
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

VARIANT_NAMES = (
    "benchmark",
    "dog",
    "glasses",
    "instagram",
    "shades_leak",
    "shades_recon_leak",
    "shades_no_leak",
    "shades_recon_no_leak",
)

AR_FILTER_IDS = ("dog", "glasses", "shades_leak", "shades_no_leak")


class ProvenanceStep(BaseModel):
    """One manipulation applied to an image."""

    op: Literal["source", "enhancement", "ar_overlay", "reconstruction"]
    filter_id: Optional[str] = None
    params: Dict[str, float | str] = Field(default_factory=dict)


class DatasetRecord(BaseModel):
    image_id: str
    identity: str
    path: str
    provenance: List[ProvenanceStep] = Field(default_factory=list)


class ExcludedRecord(BaseModel):
    image_id: str
    identity: str
    reason: str


class DatasetManifest(BaseModel):
    """Identity-labelled image inventory of one dataset variant."""

    name: str
    source: str
    root: str = ""
    records: List[DatasetRecord] = Field(default_factory=list)
    excluded: List[ExcludedRecord] = Field(default_factory=list)

    @model_validator(mode="after")
    def _unique_ids(self) -> "DatasetManifest":
        seen: set[str] = set()
        for record in self.records:
            if record.image_id in seen:
                raise ValueError(f"duplicate image_id {record.image_id!r} in manifest {self.name!r}")
            seen.add(record.image_id)
        return self

    def identities(self) -> List[str]:
        """Identities in first-appearance order."""
        return list(dict.fromkeys(record.identity for record in self.records))

    def by_id(self) -> Dict[str, DatasetRecord]:
        return {record.image_id: record for record in self.records}


class FilterSpec(BaseModel):
    """Declarative description of one filter and its parameters."""

    kind: Literal["enhancement", "ar_overlay"]
    filter_id: str
    params: Dict[str, float] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _opacity_rules(self) -> "FilterSpec":
        if self.kind != "ar_overlay":
            return self
        if self.filter_id not in AR_FILTER_IDS:
            raise ValueError(f"unknown AR filter {self.filter_id!r}")
        expected = 0.95 if self.filter_id == "shades_leak" else 1.0
        opacity = self.params.setdefault("opacity", expected)
        if opacity != expected:
            raise ValueError(f"{self.filter_id} requires opacity {expected}, got {opacity}")
        return self


class UNetConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    input_size: int = 128
    depth: int = 4
    base_channels: int = 32
    skip_mode: Literal["add", "concat"] = "add"

    @model_validator(mode="after")
    def _divisible(self) -> "UNetConfig":
        if self.depth < 1 or self.base_channels < 1 or self.input_size < 1:
            raise ValueError("depth, base_channels and input_size must be positive")
        if self.input_size % (2**self.depth):
            raise ValueError(f"input_size {self.input_size} not divisible by 2^{self.depth}")
        return self

    def stage_channels(self) -> List[int]:
        return [self.base_channels * 2**i for i in range(self.depth + 1)]


class TrainHyper(BaseModel):
    batch_size: int = Field(default=64, ge=1)
    lr: float = Field(default=1e-3, gt=0)
    epochs: int = Field(default=10, ge=0)
    seed: int = 0
    val_fraction: float = Field(default=0.1, ge=0, lt=1)


class TrainReport(BaseModel):
    epoch_losses: List[float] = Field(default_factory=list)
    final_val_loss: float = 0.0
    steps: int = 0
    seed: int = 0

    @field_validator("epoch_losses")
    @classmethod
    def _finite_losses(cls, values: List[float]) -> List[float]:
        if any(not math.isfinite(v) or v < 0 for v in values):
            raise ValueError("epoch losses must be finite and non-negative")
        return values

    @field_validator("final_val_loss")
    @classmethod
    def _finite_val(cls, value: float) -> float:
        if not math.isfinite(value) or value < 0:
            raise ValueError("validation loss must be finite and non-negative")
        return value


class ImagePair(BaseModel):
    image_id: str
    occluded_path: str
    clean_path: str


class PairManifest(BaseModel):
    """Occluded/clean training pairs for the reconstruction network."""

    corpus: str
    filter_id: str
    root: str = ""
    pairs: List[ImagePair] = Field(default_factory=list)


class Seeds(BaseModel):
    split: int
    filter: int
    train: int


class CorpusConfig(BaseModel):
    kind: Literal["synthetic", "manifest"] = "synthetic"
    manifest: Optional[str] = None
    n_identities: int = Field(default=20, ge=2)
    images_per_identity: int = Field(default=12, ge=1)
    seed: int = 0
    min_images: int = Field(default=10, ge=1)

    @model_validator(mode="after")
    def _manifest_path(self) -> "CorpusConfig":
        if self.kind == "manifest" and not self.manifest:
            raise ValueError("corpus.manifest is required when corpus.kind = 'manifest'")
        return self


class ReconstructionConfig(BaseModel):
    unet: UNetConfig = Field(default_factory=UNetConfig)
    hyper: TrainHyper = Field(default_factory=TrainHyper)
    corpus: CorpusConfig = Field(default_factory=lambda: CorpusConfig(n_identities=30, images_per_identity=8, seed=1000, min_images=1))
    checkpoint: Optional[str] = None


class ClassifierHyper(BaseModel):
    C: float = Field(default=1.0, gt=0)
    max_iter: int = Field(default=5000, ge=1)
    n_estimators: int = Field(default=200, ge=1)
    max_depth: int = Field(default=4, ge=1)
    learning_rate: float = Field(default=0.1, gt=0)
    min_child_weight: float = Field(default=0.0, ge=0)
    nthread: int = Field(default=1, ge=1)


class ExperimentConfig(BaseModel):
    """Everything a full protocol run depends on."""

    corpus: CorpusConfig = Field(default_factory=CorpusConfig)
    reconstruction: ReconstructionConfig = Field(default_factory=ReconstructionConfig)
    backbone: str = "pixproj-128"
    compare_backbones: List[str] = Field(default_factory=lambda: ["pixproj-128"])
    classifier_kinds: List[Literal["one_vs_all_margin", "boosted_softmax"]] = Field(
        default_factory=lambda: ["one_vs_all_margin", "boosted_softmax"]
    )
    classifier: ClassifierHyper = Field(default_factory=ClassifierHyper)
    regimes: List[Literal["benchmark", "filter", "all"]] = Field(default_factory=lambda: ["benchmark", "filter", "all"])
    split_ratio: float = 0.8
    seeds: Seeds
    open_set_holdout: Optional[int] = Field(default=None, ge=1)
    perplexity: float = Field(default=30.0, gt=0)
    image_format: Literal["png", "jpeg"] = "png"
    variants: List[str] = Field(default_factory=lambda: list(VARIANT_NAMES))

    @field_validator("split_ratio")
    @classmethod
    def _ratio(cls, value: float) -> float:
        if not 0 < value < 1:
            raise ValueError("split_ratio must lie in (0, 1)")
        return value

    @field_validator("variants")
    @classmethod
    def _known_variants(cls, values: List[str]) -> List[str]:
        unknown = [v for v in values if v not in VARIANT_NAMES]
        if unknown:
            raise ValueError(f"unknown variants: {unknown}")
        if "benchmark" not in values:
            raise ValueError("the benchmark variant is required")
        return values


class DetectionSummary(BaseModel):
    variant: str
    total: int
    accepted: int
    rejected_none: int
    rejected_multiple: int
    excluded_at_build: int

    @property
    def rate(self) -> float:
        return self.accepted / self.total if self.total else 0.0


class DETPoint(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    threshold: float
    error_x: float
    error_y: float


class DETCurve(BaseModel):
    """Threshold-swept error pairs; axes name what error_x / error_y mean."""

    model_config = ConfigDict(ser_json_inf_nan="constants")

    axes: Literal["fpir_fnir", "far_frr"]
    points: List[DETPoint] = Field(default_factory=list)
    monotone: bool = True

    @field_validator("points")
    @classmethod
    def _bounded(cls, points: List[DETPoint]) -> List[DETPoint]:
        for point in points:
            if not (0.0 <= point.error_x <= 1.0 and 0.0 <= point.error_y <= 1.0):
                raise ValueError("error values must lie in [0, 1]")
        return points


class EERResult(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    eer: float
    threshold: float
    no_crossing: bool = False
