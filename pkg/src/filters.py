"""Enhancement (tone/colour) and AR overlay filters, and filtered dataset builds.

Enhancement filters are global colour mappings stored as 33x33x33 RGB lookup
tables in `luts/` (float32 `.npy`), baked once from the tone recipes below with
`export_luts`. A `<filter_id>.cube` file in `BENCH_LUT_DIR` replaces a bundled
table. AR filters detect landmarks, place a sprite with a similarity transform
and alpha-blend it at the filter's opacity.
"""

from __future__ import annotations

import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

import config
import storage
from assets import DOG_NOSE_SPAN, ArAsset, get_asset
from errors import BenchError
from face_analysis import LandmarkSet, get_face_analyzer, largest
from imaging import Image, Placement, alpha_blend, decode_image, encode_image, make_placement
from schemas import AR_FILTER_IDS, DatasetManifest, DatasetRecord, ExcludedRecord, FilterSpec, ProvenanceStep

logger = logging.getLogger(__name__)

LUT_SIZE = 33
RANDOM_ENHANCEMENT = "random-enhancement"
BUNDLED_LUT_DIR = Path(__file__).resolve().parent / "luts"


class FilterRegistryError(BenchError):
    """Raised for filter identifiers that are not registered."""


class PlacementError(BenchError):
    """Raised when landmarks cannot anchor an asset."""


@dataclass(frozen=True)
class ToneRecipe:
    """Global colour mapping, applied in field order. Defaults are neutral."""

    sepia: float = 0.0
    contrast: float = 1.0
    brightness: float = 0.0
    gamma: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    saturation: float = 1.0
    tint: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    fade: float = 0.0

    @property
    def is_identity(self) -> bool:
        return self == ToneRecipe()


RECIPES: Dict[str, ToneRecipe] = {
    "identity": ToneRecipe(),
    "clarendon": ToneRecipe(contrast=1.35, saturation=1.15, tint=(-0.02, 0.0, 0.03)),
    "juno": ToneRecipe(gamma=(0.95, 1.0, 1.05), saturation=1.2, tint=(0.02, 0.01, -0.02)),
    "lark": ToneRecipe(brightness=0.06, gamma=(1.0, 0.97, 0.95), saturation=0.85),
    "gingham": ToneRecipe(contrast=0.9, saturation=0.8, fade=0.12),
    "valencia": ToneRecipe(sepia=0.08, contrast=1.08, brightness=0.03, tint=(0.03, 0.01, -0.02)),
    "ludwig": ToneRecipe(contrast=1.05, gamma=(0.97, 1.0, 1.03), saturation=0.9),
    "aden": ToneRecipe(brightness=0.04, saturation=0.85, tint=(0.02, -0.01, 0.03), fade=0.08),
    "lofi": ToneRecipe(contrast=1.5, saturation=1.1),
    "xpro2": ToneRecipe(sepia=0.1, contrast=1.3, tint=(0.02, 0.02, -0.04)),
}

ENHANCEMENT_IDS: Tuple[str, ...] = tuple(name for name in RECIPES if name != "identity")

_SEPIA = np.array(
    [
        [0.393, 0.769, 0.189],
        [0.349, 0.686, 0.168],
        [0.272, 0.534, 0.131],
    ]
)
_LUMA = np.array([0.299, 0.587, 0.114])


def tone_map(rgb: np.ndarray, recipe: ToneRecipe) -> np.ndarray:
    """Apply a recipe to an (..., 3) array of intensities in [0, 1]."""
    out = np.asarray(rgb, dtype=np.float64).copy()
    if recipe.sepia:
        out = (1 - recipe.sepia) * out + recipe.sepia * np.clip(out @ _SEPIA.T, 0, 1)
    if recipe.contrast != 1.0:
        out = 0.5 + recipe.contrast * (out - 0.5)
    if recipe.brightness:
        out = out + recipe.brightness
    out = np.clip(out, 0, 1)
    if recipe.gamma != (1.0, 1.0, 1.0):
        out = out ** np.asarray(recipe.gamma)
    if recipe.saturation != 1.0:
        luma = (out @ _LUMA)[..., None]
        out = luma + recipe.saturation * (out - luma)
    if recipe.tint != (0.0, 0.0, 0.0):
        out = out + np.asarray(recipe.tint)
    if recipe.fade:
        out = recipe.fade + (1 - recipe.fade) * np.clip(out, 0, 1)
    return np.clip(out, 0, 1)


@dataclass(frozen=True)
class Lut:
    """Cube of RGB outputs indexed [r, g, b] on a uniform grid over [0, 1]."""

    table: np.ndarray
    is_identity: bool = False

    @property
    def size(self) -> int:
        return self.table.shape[0]


def bake_lut(recipe: ToneRecipe, size: int = LUT_SIZE) -> Lut:
    grid = np.linspace(0.0, 1.0, size)
    r, g, b = np.meshgrid(grid, grid, grid, indexing="ij")
    table = tone_map(np.stack([r, g, b], axis=-1), recipe)
    return Lut(table=table, is_identity=recipe.is_identity)


def apply_lut(pixels: np.ndarray, lut: Lut) -> np.ndarray:
    """Trilinear interpolation of `lut` at every pixel."""
    n = lut.size
    scaled = np.clip(pixels, 0, 1) * (n - 1)
    base = np.minimum(np.floor(scaled).astype(np.int64), n - 2)
    frac = scaled - base
    r0, g0, b0 = base[..., 0], base[..., 1], base[..., 2]
    fr, fg, fb = frac[..., 0:1], frac[..., 1:2], frac[..., 2:3]
    t = lut.table
    out = np.zeros(pixels.shape, dtype=np.float64)
    for dr, wr in ((0, 1 - fr), (1, fr)):
        for dg, wg in ((0, 1 - fg), (1, fg)):
            for db, wb in ((0, 1 - fb), (1, fb)):
                out += wr * wg * wb * t[r0 + dr, g0 + dg, b0 + db]
    return out


def parse_cube(text: str) -> Lut:
    """Parse an Adobe `.cube` 3D LUT (red varies fastest)."""
    size = None
    rows: List[List[float]] = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        head = line.split()[0]
        if head == "LUT_3D_SIZE":
            size = int(line.split()[1])
        elif head[0].isdigit() or head[0] in "-.":
            rows.append([float(value) for value in line.split()[:3]])
    if size is None or len(rows) != size**3:
        raise FilterRegistryError("malformed .cube file", details={"size": size, "rows": len(rows)})
    table = np.asarray(rows, dtype=np.float64).reshape(size, size, size, 3).transpose(2, 1, 0, 3)
    return Lut(table=np.clip(table, 0, 1))


def format_cube(lut: Lut, title: str = "") -> str:
    lines = [f'TITLE "{title}"'] if title else []
    lines.append(f"LUT_3D_SIZE {lut.size}")
    flat = lut.table.transpose(2, 1, 0, 3).reshape(-1, 3)
    lines.extend(f"{r:.6f} {g:.6f} {b:.6f}" for r, g, b in flat)
    return "\n".join(lines) + "\n"


def _unknown(filter_id: str, valid: Sequence[str]) -> FilterRegistryError:
    return FilterRegistryError(
        f"Unknown filter {filter_id!r}; valid ids: {', '.join(valid)}",
        details={"filter_id": filter_id, "valid": list(valid)},
    )


@lru_cache(maxsize=None)
def get_lut(filter_id: str) -> Lut:
    """Bundled table for `filter_id`; a `.cube` in `BENCH_LUT_DIR` takes precedence."""
    if filter_id not in RECIPES:
        raise _unknown(filter_id, list(RECIPES))
    if filter_id == "identity":
        return bake_lut(RECIPES[filter_id])
    lut_dir = config.get_settings().lut_dir
    if lut_dir is not None:
        cube = lut_dir / f"{filter_id}.cube"
        if cube.exists():
            logger.info("lut_override_loaded", extra={"filter_id": filter_id, "path": str(cube)})
            return parse_cube(cube.read_text())
    bundled = BUNDLED_LUT_DIR / f"{filter_id}.npy"
    if not bundled.exists():
        raise FilterRegistryError(f"bundled LUT for {filter_id!r} is missing", details={"path": str(bundled)})
    return load_lut(bundled.read_bytes())


def load_lut(data: bytes) -> Lut:
    """Decode an (n, n, n, 3) table stored in `.npy` format."""
    table = np.load(io.BytesIO(data), allow_pickle=False)
    if table.ndim != 4 or table.shape[3] != 3 or len(set(table.shape[:3])) != 1 or table.shape[0] < 2:
        raise FilterRegistryError("malformed LUT table", details={"shape": list(table.shape)})
    return Lut(table=np.clip(table.astype(np.float64), 0, 1))


def save_lut(lut: Lut) -> bytes:
    buffer = io.BytesIO()
    np.save(buffer, lut.table.astype("<f4"), allow_pickle=False)
    return buffer.getvalue()


def export_luts(out_dir: str) -> List[str]:
    """Bake every enhancement recipe and write `<filter_id>.npy` tables."""
    written = []
    for filter_id in ENHANCEMENT_IDS:
        uri = storage.join(out_dir, f"{filter_id}.npy")
        storage.write_bytes(uri, save_lut(bake_lut(RECIPES[filter_id])))
        written.append(uri)
    logger.info("luts_exported", extra={"out_dir": out_dir, "count": len(written)})
    return written


def apply_enhancement(img: Image, filter_id: str) -> Image:
    """Global colour filter; `identity` returns the input untouched."""
    lut = get_lut(filter_id)
    if lut.is_identity:
        return img
    return Image(apply_lut(img.pixels, lut))


def detect_landmarks(img: Image) -> Optional[LandmarkSet]:
    """Landmarks of the largest detected face, or None."""
    candidate = largest([c for c in get_face_analyzer().analyze(img) if c.landmarks is not None])
    if candidate is None or not candidate.landmarks.is_valid():
        return None
    return candidate.landmarks


def _asset_name(filter_id: str) -> str:
    if filter_id not in AR_FILTER_IDS:
        raise _unknown(filter_id, AR_FILTER_IDS)
    return "shades" if filter_id.startswith("shades") else filter_id


def _similarity(scale: float, angle: float, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    c, s = scale * math.cos(angle), scale * math.sin(angle)
    linear = np.array([[c, -s], [s, c]])
    return np.hstack([linear, (dst - linear @ src)[:, None]])


def placement_affine(landmarks: LandmarkSet, filter_id: str, asset: ArAsset) -> np.ndarray:
    """Asset-to-image similarity transform for an AR filter."""
    left, right = (np.asarray(p) for p in landmarks.eye_centers())
    spacing = float(np.linalg.norm(right - left))
    if spacing < 1e-6:
        raise PlacementError("eye centres coincide", details={"left": left.tolist(), "right": right.tolist()})

    if filter_id == "dog":
        nose = np.asarray(landmarks.centroid("nose_tip"))
        if "nose_left" in asset.anchors and "nose_right" in asset.anchors:
            nose_width = float(np.linalg.norm(np.subtract(asset.anchors["nose_right"], asset.anchors["nose_left"])))
        else:
            nose_width = float(asset.size[0])
        scale = DOG_NOSE_SPAN * spacing / nose_width
        return _similarity(scale, 0.0, np.asarray(asset.anchors["center"]), nose)

    hole_l, hole_r = np.asarray(asset.anchors["left_eye"]), np.asarray(asset.anchors["right_eye"])
    scale = spacing / float(np.linalg.norm(hole_r - hole_l))
    angle = math.atan2(right[1] - left[1], right[0] - left[0]) - math.atan2(
        hole_r[1] - hole_l[1], hole_r[0] - hole_l[0]
    )
    return _similarity(scale, angle, hole_l, left)


def place_asset(landmarks: LandmarkSet, filter_id: str, img_dims: Tuple[int, int]) -> Placement:
    asset = get_asset(_asset_name(filter_id))
    affine = placement_affine(landmarks, filter_id, asset)
    return make_placement(affine, asset.alpha, img_dims)


def render_ar(img: Image, filter_id: str, landmarks: LandmarkSet) -> Tuple[Image, Placement]:
    """Blend the filter's asset using known landmarks; returns the placement as well."""
    spec = FilterSpec(kind="ar_overlay", filter_id=filter_id)
    asset = get_asset(_asset_name(filter_id))
    placement = place_asset(landmarks, filter_id, img.dims)
    return alpha_blend(img, asset.rgb, placement, spec.params["opacity"]), placement


def apply_ar_filter(img: Image, filter_id: str) -> Optional[Image]:
    """Overlay an AR asset; None when no landmarks are found."""
    _asset_name(filter_id)
    landmarks = detect_landmarks(img)
    if landmarks is None:
        return None
    out, _ = render_ar(img, filter_id, landmarks)
    return out


Transform = Callable[[Image, DatasetRecord], Tuple[Optional[Image], ProvenanceStep]]


def transform_dataset(
    manifest: DatasetManifest,
    name: str,
    transforms: Sequence[Transform],
    out_dir: str,
    *,
    fmt: str = "png",
    absent_reason: str = "landmarks_absent",
) -> DatasetManifest:
    """Apply transforms[i] to record i and write a new manifest variant.

    Records are processed concurrently; output order follows the input. A
    transform returning no image, or any per-image failure, excludes the
    record with a reason and the build continues.
    """
    if len(transforms) != len(manifest.records):
        raise ValueError("one transform per record is required")

    def work(index: int):
        record = manifest.records[index]
        try:
            img = decode_image(storage.read_bytes(storage.join(manifest.root, record.path)))
            out, step = transforms[index](img, record)
            if out is None:
                return ExcludedRecord(image_id=record.image_id, identity=record.identity, reason=absent_reason)
            relative = f"images/{name}/{record.image_id}.{fmt}"
            storage.write_bytes(storage.join(out_dir, relative), encode_image(out, fmt))
        except BenchError as exc:
            logger.warning("variant_image_failed", extra={"variant": name, "image_id": record.image_id, "error": str(exc)})
            return ExcludedRecord(image_id=record.image_id, identity=record.identity, reason=f"{type(exc).__name__}: {exc}")
        return DatasetRecord(
            image_id=record.image_id,
            identity=record.identity,
            path=relative,
            provenance=[*record.provenance, step],
        )

    with ThreadPoolExecutor(max_workers=config.get_settings().workers) as pool:
        results = list(pool.map(work, range(len(manifest.records))))

    records = [r for r in results if isinstance(r, DatasetRecord)]
    excluded = [r for r in results if isinstance(r, ExcludedRecord)]
    logger.info("variant_built", extra={"variant": name, "records": len(records), "excluded": len(excluded)})
    return DatasetManifest(name=name, source=manifest.source, root=str(out_dir), records=records, excluded=excluded)


def assign_enhancements(count: int, seed: int) -> List[str]:
    """Seeded per-image filter draw, made before any work is scheduled."""
    rng = np.random.default_rng(seed)
    return [ENHANCEMENT_IDS[i] for i in rng.integers(0, len(ENHANCEMENT_IDS), size=count)]


def _enhancement(filter_id: str) -> Transform:
    def transform(img: Image, record: DatasetRecord):
        return apply_enhancement(img, filter_id), ProvenanceStep(op="enhancement", filter_id=filter_id)

    return transform


def _ar(filter_id: str) -> Transform:
    opacity = FilterSpec(kind="ar_overlay", filter_id=filter_id).params["opacity"]

    def transform(img: Image, record: DatasetRecord):
        step = ProvenanceStep(op="ar_overlay", filter_id=filter_id, params={"opacity": opacity})
        return apply_ar_filter(img, filter_id), step

    return transform


def build_filtered_dataset(
    manifest: DatasetManifest,
    choice: str,
    seed: int,
    out_dir: str,
    *,
    name: Optional[str] = None,
    fmt: str = "png",
) -> DatasetManifest:
    """Variant with one fixed filter, or a seeded random enhancement per image."""
    count = len(manifest.records)
    if choice == RANDOM_ENHANCEMENT:
        transforms = [_enhancement(fid) for fid in assign_enhancements(count, seed)]
        name = name or "instagram"
    elif choice in AR_FILTER_IDS:
        transforms = [_ar(choice)] * count
    elif choice in RECIPES:
        transforms = [_enhancement(choice)] * count
    else:
        raise _unknown(choice, [RANDOM_ENHANCEMENT, *RECIPES, *AR_FILTER_IDS])
    return transform_dataset(manifest, name or choice, transforms, out_dir, fmt=fmt)


def clear_caches() -> None:
    get_lut.cache_clear()
