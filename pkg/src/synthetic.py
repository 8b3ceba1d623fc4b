"""Parameterised cartoon-face corpus with exact landmark ground truth.

Each identity fixes face shape, skin/hair/iris/lip colours and the placement
of eyes, brows, nose and mouth. Each image of an identity adds a small
similarity transform, a brow raise, a brightness gain and sensor noise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

import cv2
import numpy as np

import storage
from errors import ContractViolation
from face_analysis import LandmarkSet
from imaging import Image, encode_image
from schemas import DatasetManifest, DatasetRecord, ProvenanceStep

logger = logging.getLogger(__name__)

CANVAS = 128
CENTER = (64.0, 66.0)

SKIN_TONES = (
    (0.96, 0.82, 0.71),
    (0.92, 0.75, 0.62),
    (0.86, 0.67, 0.52),
    (0.80, 0.60, 0.46),
    (0.76, 0.56, 0.41),
)
HAIR_COLORS = (
    (0.08, 0.07, 0.06),
    (0.30, 0.20, 0.12),
    (0.40, 0.16, 0.08),
    (0.42, 0.33, 0.20),
    (0.22, 0.22, 0.24),
)
IRIS_COLORS = (
    (0.25, 0.15, 0.08),
    (0.30, 0.45, 0.70),
    (0.35, 0.55, 0.35),
    (0.45, 0.45, 0.48),
    (0.12, 0.08, 0.05),
)
LIP_COLORS = (
    (0.35, 0.10, 0.12),
    (0.30, 0.12, 0.15),
    (0.38, 0.14, 0.10),
    (0.25, 0.08, 0.10),
)


@dataclass(frozen=True)
class FaceGeometry:
    """Identity-level appearance parameters (canonical, un-jittered frame)."""

    half_width: float
    aspect: float
    eye_spacing: float
    eye_height: float
    brow_height: float
    brow_tilt: float
    brow_length: float
    nose_length: float
    nostril_spread: float
    mouth_offset: float
    mouth_width: float
    hairline: float
    skin: Tuple[float, float, float]
    hair: Tuple[float, float, float]
    iris: Tuple[float, float, float]
    lips: Tuple[float, float, float]


@dataclass(frozen=True)
class Jitter:
    angle: float
    scale: float
    shift: Tuple[float, float]
    brow_raise: float
    gain: float
    noise: float
    background: Tuple[float, float, float]


def identity_geometry(rng: np.random.Generator) -> FaceGeometry:
    half_width = rng.uniform(32.0, 36.0)
    skin = np.clip(np.asarray(SKIN_TONES[rng.integers(len(SKIN_TONES))]) + rng.uniform(-0.03, 0.03, 3), 0, 1)
    return FaceGeometry(
        half_width=half_width,
        aspect=rng.uniform(1.15, 1.28),
        eye_spacing=rng.uniform(0.74, 0.86) * half_width,
        eye_height=rng.uniform(0.15, 0.22),
        brow_height=rng.uniform(0.34, 0.62),
        brow_tilt=rng.uniform(-10.0, 10.0),
        brow_length=rng.uniform(0.48, 0.62),
        nose_length=rng.uniform(0.55, 0.75),
        nostril_spread=rng.uniform(0.10, 0.16),
        mouth_offset=rng.uniform(0.45, 0.60),
        mouth_width=rng.uniform(0.38, 0.52),
        hairline=rng.uniform(0.84, 0.95),
        skin=tuple(float(c) for c in skin),
        hair=HAIR_COLORS[rng.integers(len(HAIR_COLORS))],
        iris=IRIS_COLORS[rng.integers(len(IRIS_COLORS))],
        lips=LIP_COLORS[rng.integers(len(LIP_COLORS))],
    )


def image_jitter(rng: np.random.Generator) -> Jitter:
    base = rng.uniform(0.10, 0.28)
    tint = rng.uniform(-0.04, 0.04, 3)
    return Jitter(
        angle=rng.uniform(-6.0, 6.0),
        scale=rng.uniform(0.96, 1.04),
        shift=(rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)),
        brow_raise=rng.uniform(-0.03, 0.03),
        gain=rng.uniform(0.94, 1.06),
        noise=0.012,
        background=tuple(float(c) for c in np.clip(base + tint, 0, 1)),
    )


def _u8(color) -> Tuple[int, int, int]:
    return tuple(int(round(255 * c)) for c in color)


def _pt(x: float, y: float) -> Tuple[int, int]:
    return int(round(x)), int(round(y))


def _canonical_landmarks(geom: FaceGeometry, jitter: Jitter) -> Dict[str, np.ndarray]:
    cx, cy = CENTER
    a, b, d = geom.half_width, geom.half_width * geom.aspect, geom.eye_spacing
    eye_y = cy - geom.eye_height * b
    eyes = {"left": cx - d / 2, "right": cx + d / 2}
    sclera = (0.22 * d, 0.11 * d)

    groups: Dict[str, np.ndarray] = {}
    theta = np.pi - np.arange(17) * np.pi / 16
    groups["chin"] = np.stack([cx + a * np.cos(theta), cy + b * np.sin(theta)], axis=1)

    phis = np.deg2rad([180, 120, 60, 0, 300, 240])
    for side, ex in eyes.items():
        groups[f"{side}_eye"] = np.stack([ex + sclera[0] * np.cos(phis), eye_y - sclera[1] * np.sin(phis)], axis=1)

    brow_y = eye_y - (geom.brow_height + jitter.brow_raise) * d
    half = geom.brow_length * d / 2
    for side, ex in eyes.items():
        tilt = np.deg2rad(geom.brow_tilt if side == "left" else -geom.brow_tilt)
        ts = np.linspace(-half, half, 5)
        groups[f"{side}_eyebrow"] = np.stack([ex + ts * np.cos(tilt), brow_y + ts * np.sin(tilt)], axis=1)

    nose_y = eye_y + geom.nose_length * d
    groups["nose_bridge"] = np.stack([np.full(4, cx), np.linspace(eye_y, nose_y - 0.15 * d, 4)], axis=1)
    spread = geom.nostril_spread * d
    groups["nose_tip"] = np.stack([cx + np.linspace(-spread, spread, 5), np.full(5, nose_y)], axis=1)

    mouth_y = nose_y + geom.mouth_offset * d
    mw, mh = geom.mouth_width * d, 0.10 * d
    upper = np.linspace(np.pi, 0, 7)
    inner = np.linspace(np.pi, 0, 7)[1:-1][:5]
    groups["top_lip"] = np.concatenate([
        np.stack([cx + mw * np.cos(upper), mouth_y - mh * np.sin(upper)], axis=1),
        np.stack([cx + 0.8 * mw * np.cos(inner), mouth_y - 0.3 * mh * np.sin(inner)], axis=1),
    ])
    groups["bottom_lip"] = np.concatenate([
        np.stack([cx + mw * np.cos(upper), mouth_y + mh * np.sin(upper)], axis=1),
        np.stack([cx + 0.8 * mw * np.cos(inner), mouth_y + 0.3 * mh * np.sin(inner)], axis=1),
    ])
    return groups


def _draw(geom: FaceGeometry, jitter: Jitter, groups: Dict[str, np.ndarray]) -> np.ndarray:
    cx, cy = CENTER
    a, b, d = geom.half_width, geom.half_width * geom.aspect, geom.eye_spacing
    canvas = np.empty((CANVAS, CANVAS, 3), dtype=np.uint8)
    canvas[:] = _u8(jitter.background)

    cv2.ellipse(canvas, _pt(cx, cy), _pt(a, b), 0, 0, 360, _u8(geom.skin), -1, lineType=cv2.LINE_AA)
    # Hair covers the crown above the hairline.
    hair_mask = np.zeros((CANVAS, CANVAS), dtype=np.uint8)
    cv2.ellipse(hair_mask, _pt(cx, cy), _pt(a + 2, b + 2), 0, 0, 360, 255, -1)
    hair_mask[int(round(cy - geom.hairline * b)):, :] = 0
    canvas[hair_mask > 0] = _u8(geom.hair)

    brow_color = _u8(np.asarray(geom.hair) * 0.6)
    thickness = max(2, int(round(0.09 * d)))
    for side in ("left", "right"):
        brow = groups[f"{side}_eyebrow"]
        cv2.line(canvas, _pt(*brow[0]), _pt(*brow[-1]), brow_color, thickness, lineType=cv2.LINE_AA)

    eye_y = groups["left_eye"][:, 1].mean()
    for side in ("left", "right"):
        ex = groups[f"{side}_eye"][:, 0].mean()
        cv2.ellipse(canvas, _pt(ex, eye_y), _pt(0.22 * d, 0.11 * d), 0, 0, 360, (245, 245, 245), -1, lineType=cv2.LINE_AA)
        cv2.circle(canvas, _pt(ex, eye_y), max(2, int(round(0.15 * d))), _u8(geom.iris), -1, lineType=cv2.LINE_AA)
        cv2.circle(canvas, _pt(ex, eye_y), max(1, int(round(0.07 * d))), (10, 10, 10), -1, lineType=cv2.LINE_AA)

    shade = _u8(np.asarray(geom.skin) * 0.85)
    bridge = groups["nose_bridge"]
    cv2.line(canvas, _pt(*bridge[0]), _pt(*bridge[-1]), shade, 1, lineType=cv2.LINE_AA)
    tip = groups["nose_tip"]
    for nostril in (tip[0], tip[-1]):
        cv2.circle(canvas, _pt(*nostril), max(1, int(round(0.05 * d))), (40, 25, 25), -1, lineType=cv2.LINE_AA)

    top = groups["top_lip"][:7]
    mouth_y = top[:, 1].max()
    mouth_x = top[:, 0].mean()
    cv2.ellipse(canvas, _pt(mouth_x, mouth_y), _pt(geom.mouth_width * d, 0.10 * d), 0, 0, 360, _u8(geom.lips), -1, lineType=cv2.LINE_AA)
    return canvas


def render_face(geom: FaceGeometry, jitter: Jitter, rng: np.random.Generator) -> Tuple[Image, LandmarkSet]:
    """Draw one jittered face and return it with its exact landmarks."""
    groups = _canonical_landmarks(geom, jitter)
    canonical = _draw(geom, jitter, groups).astype(np.float32) / 255.0

    affine = cv2.getRotationMatrix2D(CENTER, jitter.angle, jitter.scale)
    affine[:, 2] += jitter.shift
    warped = cv2.warpAffine(
        canonical,
        affine,
        (CANVAS, CANVAS),
        flags=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=tuple(float(c) for c in jitter.background),
    ).astype(np.float64)
    pixels = warped * jitter.gain + rng.normal(0.0, jitter.noise, warped.shape)

    points = {
        name: np.hstack([pts, np.ones((len(pts), 1))]) @ affine.T
        for name, pts in groups.items()
    }
    landmarks = LandmarkSet(**{name: [tuple(map(float, p)) for p in pts] for name, pts in points.items()})
    return Image(pixels), landmarks.clamped((CANVAS, CANVAS))


def corpus_id(n_identities: int, images_per_identity: int, seed: int) -> str:
    return f"synthetic-s{seed}-n{n_identities}-k{images_per_identity}"


def generate_synthetic_corpus(
    n_identities: int,
    images_per_identity: int,
    seed: int,
    out_dir: str,
    *,
    fmt: str = "png",
) -> Tuple[DatasetManifest, Dict[str, LandmarkSet]]:
    """Render and store a corpus; returns its manifest and per-image landmarks."""
    if n_identities < 2:
        raise ContractViolation("a synthetic corpus needs at least 2 identities")
    if images_per_identity < 1:
        raise ContractViolation("images_per_identity must be >= 1")

    source = corpus_id(n_identities, images_per_identity, seed)
    records: List[DatasetRecord] = []
    truth: Dict[str, LandmarkSet] = {}
    for identity_index in range(n_identities):
        geom = identity_geometry(np.random.default_rng([seed, identity_index]))
        identity = f"id{identity_index:04d}"
        for image_index in range(images_per_identity):
            rng = np.random.default_rng([seed, identity_index, image_index + 1])
            img, landmarks = render_face(geom, image_jitter(rng), rng)
            image_id = f"{identity}_{image_index:04d}"
            relative = f"images/source/{image_id}.{fmt}"
            storage.write_bytes(storage.join(out_dir, relative), encode_image(img, fmt))
            records.append(
                DatasetRecord(
                    image_id=image_id,
                    identity=identity,
                    path=relative,
                    provenance=[ProvenanceStep(op="source", params={"corpus": source})],
                )
            )
            truth[image_id] = landmarks

    logger.info(
        "synthetic_corpus_generated",
        extra={"corpus": source, "identities": n_identities, "images": len(records)},
    )
    manifest = DatasetManifest(name="benchmark", source=source, root=str(out_dir), records=records)
    return manifest, truth


def render_identity_images(seed: int, identity_index: int, count: int) -> List[Tuple[Image, LandmarkSet]]:
    """In-memory rendering of one identity's images (no storage)."""
    geom = identity_geometry(np.random.default_rng([seed, identity_index]))
    out = []
    for image_index in range(count):
        rng = np.random.default_rng([seed, identity_index, image_index + 1])
        out.append(render_face(geom, image_jitter(rng), rng))
    return out
