"""Face detection with the single-face discard policy, backbone embeddings and min-max scaling."""

from __future__ import annotations

import hashlib
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import requests
import torch
import torch.nn.functional as F
from sklearn.preprocessing import MinMaxScaler as _SkMinMaxScaler
from torch import nn

import config
import storage
from config import ConfigurationError
from errors import BenchError, ContractViolation
from face_analysis import get_face_analyzer
from imaging import Box, Image, crop_resize, decode_image
from schemas import DatasetManifest, DetectionSummary, ExcludedRecord

logger = logging.getLogger(__name__)

BOX_MARGIN = 1.1
PROJECTION_SEED = 128
DOWNLOAD_TIMEOUT = 60


class BackboneRegistryError(BenchError):
    """Raised for backbone ids that are not registered."""


@dataclass(frozen=True)
class BackboneInfo:
    id: str
    input_size: int
    dim: int
    description: str


REGISTRY: Dict[str, BackboneInfo] = {
    "pixproj-128": BackboneInfo("pixproj-128", 64, 128, "standardised 16x16 pixels, seeded Gaussian projection"),
    "dlib-resnet34": BackboneInfo("dlib-resnet34", 150, 128, "dlib ResNet-34 face encoder via face_recognition"),
    "squeezenet": BackboneInfo("squeezenet", 113, 1000, "torchvision SqueezeNet 1.1, class-logit layer"),
    "resnet50": BackboneInfo("resnet50", 224, 2048, "torchvision ResNet-50, pooled features before fc"),
}


@dataclass(frozen=True)
class FaceDetection:
    """Exactly one of `box` / `reason` is set; reason is `none` or `multiple(n)`."""

    box: Optional[Box] = None
    reason: Optional[str] = None
    count: int = 0

    @property
    def accepted(self) -> bool:
        return self.box is not None


@dataclass(frozen=True)
class EmbeddingRecord:
    vector: np.ndarray
    identity: str
    dataset: str
    image_id: str

    def __post_init__(self):
        vector = np.asarray(self.vector, dtype=np.float64)
        if vector.ndim != 1 or not np.all(np.isfinite(vector)):
            raise ContractViolation("embedding vectors must be finite 1-D arrays")
        object.__setattr__(self, "vector", vector)


@dataclass
class EmbeddingSet:
    """Embeddings of one dataset variant under one backbone, in manifest order."""

    dataset: str
    backbone: str
    image_ids: List[str]
    identities: List[str]
    vectors: np.ndarray
    rejected: List[ExcludedRecord] = field(default_factory=list)
    summary: Optional[DetectionSummary] = None
    scaler_id: str = ""

    def __len__(self) -> int:
        return len(self.image_ids)

    def index(self) -> Dict[str, int]:
        return {image_id: i for i, image_id in enumerate(self.image_ids)}

    def subset(self, image_ids: Sequence[str]) -> "EmbeddingSet":
        lookup = self.index()
        rows = [lookup[i] for i in image_ids if i in lookup]
        return EmbeddingSet(
            dataset=self.dataset,
            backbone=self.backbone,
            image_ids=[self.image_ids[r] for r in rows],
            identities=[self.identities[r] for r in rows],
            vectors=self.vectors[rows] if rows else np.zeros((0, self.vectors.shape[1])),
            scaler_id=self.scaler_id,
        )

    def records(self) -> List[EmbeddingRecord]:
        return [
            EmbeddingRecord(vector=v, identity=ident, dataset=self.dataset, image_id=image_id)
            for v, ident, image_id in zip(self.vectors, self.identities, self.image_ids)
        ]


def square_box(box: Box, margin: float = BOX_MARGIN) -> Box:
    x0, y0, x1, y1 = box
    side = max(x1 - x0, y1 - y0) * margin
    cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
    return cx - side / 2, cy - side / 2, cx + side / 2, cy + side / 2


def detect_single_face(img: Image) -> FaceDetection:
    """Accept images with exactly one detected face."""
    candidates = get_face_analyzer().analyze(img)
    if not candidates:
        return FaceDetection(reason="none", count=0)
    if len(candidates) > 1:
        return FaceDetection(reason=f"multiple({len(candidates)})", count=len(candidates))
    return FaceDetection(box=square_box(candidates[0].box), count=1)


class PixelProjection(nn.Module):
    """Self-contained baseline: per-image standardisation, 16x16 pooling, random projection."""

    def __init__(self, dim: int = 128, pooled: int = 16, seed: int = PROJECTION_SEED):
        super().__init__()
        self.pooled = pooled
        generator = torch.Generator().manual_seed(seed)
        features = 3 * pooled * pooled
        weight = torch.randn(dim, features, generator=generator, dtype=torch.float64) / features**0.5
        self.register_buffer("projection", weight)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x.double()
        mean = x.mean(dim=(1, 2, 3), keepdim=True)
        std = x.std(dim=(1, 2, 3), keepdim=True).clamp_min(1e-6)
        pooled = F.adaptive_avg_pool2d((x - mean) / std, self.pooled)
        return pooled.flatten(1) @ self.projection.T


class Backbone:
    """Adapter around one pretrained (or fixed) feature extractor."""

    def __init__(self, info: BackboneInfo, version: str):
        self.info = info
        self.version = version

    def embed(self, crops: Sequence[Image]) -> np.ndarray:
        raise NotImplementedError


class TorchBackbone(Backbone):
    def __init__(self, info: BackboneInfo, module: nn.Module, version: str, *, normalize: bool = False):
        super().__init__(info, version)
        self.module = module.eval()
        self.normalize = normalize

    def embed(self, crops: Sequence[Image]) -> np.ndarray:
        if not crops:
            return np.zeros((0, self.info.dim))
        batch = torch.from_numpy(np.stack([c.pixels for c in crops]).transpose(0, 3, 1, 2).copy())
        if self.normalize:
            mean = torch.tensor([0.485, 0.456, 0.406], dtype=torch.float64).view(1, 3, 1, 1)
            std = torch.tensor([0.229, 0.224, 0.225], dtype=torch.float64).view(1, 3, 1, 1)
            batch = ((batch - mean) / std).float()
        with torch.no_grad():
            out = self.module(batch)
        return out.double().cpu().numpy().reshape(len(crops), -1)


class DlibBackbone(Backbone):
    def __init__(self, info: BackboneInfo):
        try:
            import face_recognition
        except ImportError as exc:
            raise ConfigurationError("dlib-resnet34 needs the face_recognition package and its models") from exc
        super().__init__(info, f"face_recognition-{getattr(face_recognition, '__version__', 'unknown')}")
        self._fr = face_recognition

    def embed(self, crops: Sequence[Image]) -> np.ndarray:
        out = []
        for crop in crops:
            size = crop.width
            encodings = self._fr.face_encodings(crop.to_uint8(), known_face_locations=[(0, size, size, 0)])
            out.append(encodings[0])
        return np.asarray(out, dtype=np.float64).reshape(len(crops), self.info.dim)


def download_weights(url: str) -> Path:
    """Fetch a weights file once into `BENCH_WEIGHTS_DIR`."""
    target_dir = config.get_settings().weights_dir
    name = hashlib.sha256(url.encode("utf-8")).hexdigest()[:16] + "-" + url.rstrip("/").split("/")[-1]
    target = target_dir / name
    if target.exists():
        return target
    try:
        response = requests.get(url, timeout=DOWNLOAD_TIMEOUT)
        response.raise_for_status()
    except requests.RequestException as exc:
        logger.error("weights_download_failed", extra={"url": url, "error": str(exc)})
        raise ConfigurationError(f"Could not download backbone weights from {url}") from exc
    target_dir.mkdir(parents=True, exist_ok=True)
    target.write_bytes(response.content)
    logger.info("weights_downloaded", extra={"url": url, "path": str(target), "bytes": len(response.content)})
    return target


def _load_state(module: nn.Module, weights: str) -> str:
    path = download_weights(weights) if weights.startswith(("http://", "https://")) else Path(weights)
    if not path.exists():
        raise ConfigurationError(f"Backbone weights not found at {path}")
    state = torch.load(path, map_location="cpu", weights_only=True)
    module.load_state_dict(state)
    return path.name


def _torchvision_backbone(info: BackboneInfo, weights: Optional[str]) -> Backbone:
    import torchvision
    from torchvision import models

    if info.id == "squeezenet":
        module = models.squeezenet1_1(weights=None if weights else models.SqueezeNet1_1_Weights.DEFAULT)
    else:
        module = models.resnet50(weights=None if weights else models.ResNet50_Weights.DEFAULT)
    source = _load_state(module, weights) if weights else "imagenet-default"
    if info.id == "resnet50":
        module.fc = nn.Identity()
    return TorchBackbone(info, module, f"torchvision-{torchvision.__version__}:{source}", normalize=True)


@lru_cache(maxsize=None)
def get_backbone(backbone_id: str, weights: Optional[str] = None) -> Backbone:
    """Load a registered backbone once; `weights` is a local path or URL."""
    info = REGISTRY.get(backbone_id)
    if info is None:
        raise BackboneRegistryError(
            f"Unknown backbone {backbone_id!r}; registered: {', '.join(REGISTRY)}",
            details={"backbone": backbone_id, "valid": list(REGISTRY)},
        )
    if backbone_id == "pixproj-128":
        backbone = TorchBackbone(info, PixelProjection(info.dim), f"pixproj-1:seed{PROJECTION_SEED}")
    elif backbone_id == "dlib-resnet34":
        backbone = DlibBackbone(info)
    else:
        backbone = _torchvision_backbone(info, weights)
    logger.info("backbone_loaded", extra={"backbone": backbone_id, "version": backbone.version})
    return backbone


def extract_embedding(
    img: Image,
    box: Box,
    backbone_id: str,
    *,
    identity: str = "",
    dataset: str = "",
    image_id: str = "",
) -> EmbeddingRecord:
    backbone = get_backbone(backbone_id)
    crop = crop_resize(img, box, backbone.info.input_size)
    (vector,) = backbone.embed([crop])
    return EmbeddingRecord(vector=vector, identity=identity, dataset=dataset, image_id=image_id)


def embed_manifest(manifest: DatasetManifest, backbone_id: str) -> EmbeddingSet:
    """Detect, crop and embed every record; rejected images are listed, not embedded."""
    backbone = get_backbone(backbone_id)
    size = backbone.info.input_size

    def prepare(record):
        img = decode_image(storage.read_bytes(storage.join(manifest.root, record.path)))
        detection = detect_single_face(img)
        if not detection.accepted:
            return detection, None
        return detection, crop_resize(img, detection.box, size)

    with ThreadPoolExecutor(max_workers=config.get_settings().workers) as pool:
        prepared = list(pool.map(prepare, manifest.records))

    accepted, crops, rejected = [], [], []
    none = multiple = 0
    for record, (detection, crop) in zip(manifest.records, prepared):
        if crop is None:
            none += detection.reason == "none"
            multiple += detection.reason != "none"
            rejected.append(ExcludedRecord(image_id=record.image_id, identity=record.identity, reason=detection.reason))
            logger.debug("face_rejected", extra={"dataset": manifest.name, "image_id": record.image_id, "reason": detection.reason})
            continue
        accepted.append(record)
        crops.append(crop)

    vectors = backbone.embed(crops) if crops else np.zeros((0, backbone.info.dim))
    if not np.all(np.isfinite(vectors)):
        raise ContractViolation(f"backbone {backbone_id} produced non-finite embeddings")
    summary = DetectionSummary(
        variant=manifest.name,
        total=len(manifest.records) + len(manifest.excluded),
        accepted=len(accepted),
        rejected_none=none,
        rejected_multiple=multiple,
        excluded_at_build=len(manifest.excluded),
    )
    logger.info(
        "embeddings_extracted",
        extra={"dataset": manifest.name, "backbone": backbone_id, "accepted": len(accepted), "rejected": len(rejected)},
    )
    return EmbeddingSet(
        dataset=manifest.name,
        backbone=backbone_id,
        image_ids=[r.image_id for r in accepted],
        identities=[r.identity for r in accepted],
        vectors=vectors,
        rejected=rejected,
        summary=summary,
    )


@dataclass(frozen=True)
class MinMaxScaler:
    """Per-dimension range fitted on a training matrix."""

    minimum: np.ndarray
    maximum: np.ndarray
    fitted_on: str = ""

    def transform(self, matrix: np.ndarray) -> np.ndarray:
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[1] != len(self.minimum):
            raise ContractViolation(
                "embedding dimension does not match the scaler",
                details={"expected": len(self.minimum), "got": list(matrix.shape)},
            )
        sk = _SkMinMaxScaler(clip=True)
        sk.fit(np.vstack([self.minimum, self.maximum]))
        scaled = sk.transform(matrix) if len(matrix) else matrix.copy()
        scaled[:, self.maximum == self.minimum] = 0.0
        return scaled


def fit_minmax(train: np.ndarray, fitted_on: str = "") -> MinMaxScaler:
    train = np.asarray(train, dtype=np.float64)
    if train.ndim != 2 or len(train) == 0:
        raise ContractViolation("min-max scaling needs a non-empty training matrix")
    sk = _SkMinMaxScaler().fit(train)
    return MinMaxScaler(minimum=sk.data_min_, maximum=sk.data_max_, fitted_on=fitted_on)


def fit_apply_minmax(
    train: np.ndarray,
    others: Sequence[np.ndarray] = (),
    *,
    fitted_on: str = "",
) -> Tuple[np.ndarray, List[np.ndarray], MinMaxScaler]:
    """Fit on `train` only; scale train and every other matrix with it."""
    scaler = fit_minmax(train, fitted_on)
    return scaler.transform(train), [scaler.transform(m) for m in others], scaler


def save_embeddings(embeddings: EmbeddingSet, uri: str) -> None:
    """Columnar `.npz` store with a JSON header."""
    header = {
        "backbone": embeddings.backbone,
        "dim": int(embeddings.vectors.shape[1]) if embeddings.vectors.ndim == 2 else 0,
        "scaler": embeddings.scaler_id,
        "dataset": embeddings.dataset,
        "rejected": [r.model_dump() for r in embeddings.rejected],
        "summary": embeddings.summary.model_dump() if embeddings.summary else None,
    }
    buffer = io.BytesIO()
    np.savez_compressed(
        buffer,
        header=np.array(json.dumps(header, sort_keys=True)),
        image_id=np.array(embeddings.image_ids, dtype=str),
        identity=np.array(embeddings.identities, dtype=str),
        vector=embeddings.vectors,
    )
    storage.write_bytes(uri, buffer.getvalue())


def load_embeddings(uri: str) -> EmbeddingSet:
    with np.load(io.BytesIO(storage.read_bytes(uri)), allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        return EmbeddingSet(
            dataset=header["dataset"],
            backbone=header["backbone"],
            image_ids=[str(v) for v in data["image_id"]],
            identities=[str(v) for v in data["identity"]],
            vectors=np.asarray(data["vector"], dtype=np.float64).reshape(-1, header["dim"]),
            rejected=[ExcludedRecord(**r) for r in header["rejected"]],
            summary=DetectionSummary(**header["summary"]) if header["summary"] else None,
            scaler_id=header["scaler"],
        )


def to_frame(embeddings: EmbeddingSet) -> pd.DataFrame:
    frame = pd.DataFrame(embeddings.vectors, columns=[f"e{i}" for i in range(embeddings.vectors.shape[1])])
    frame.insert(0, "dataset", embeddings.dataset)
    frame.insert(0, "identity", embeddings.identities)
    frame.insert(0, "image_id", embeddings.image_ids)
    return frame


def export_csv(embeddings: EmbeddingSet, uri: str) -> None:
    storage.write_text(uri, to_frame(embeddings).to_csv(index=False, float_format="%.8g"))


def clear_caches() -> None:
    get_backbone.cache_clear()
