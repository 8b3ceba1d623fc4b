"""Face and landmark analyzers.

Two adapters share one interface, `analyze(img) -> list[FaceCandidate]`:

* `geometric` segments bright skin regions and verifies each one by finding dark
  ocular blobs on both sides of its upper half. It needs no model files and is
  tuned for the synthetic corpus.
* `face_recognition` wraps dlib's HOG detector and 68-point shape predictor.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import cv2
import numpy as np

import config
from config import ConfigurationError
from imaging import Box, Image

logger = logging.getLogger(__name__)

Point = Tuple[float, float]

GROUP_SIZES: Dict[str, int] = {
    "chin": 17,
    "left_eyebrow": 5,
    "right_eyebrow": 5,
    "nose_bridge": 4,
    "nose_tip": 5,
    "left_eye": 6,
    "right_eye": 6,
    "top_lip": 12,
    "bottom_lip": 12,
}

MIN_FACE_FRACTION = 0.02
MAX_FACE_FRACTION = 0.8
DARK_RATIO = 0.55
OCULAR_AREA = (0.0008, 0.03)
OCULAR_MAX_WIDTH = 0.35


@dataclass(frozen=True)
class LandmarkSet:
    """68-point landmarks grouped by facial region; left/right are image-left/right."""

    chin: List[Point] = field(default_factory=list)
    left_eyebrow: List[Point] = field(default_factory=list)
    right_eyebrow: List[Point] = field(default_factory=list)
    nose_bridge: List[Point] = field(default_factory=list)
    nose_tip: List[Point] = field(default_factory=list)
    left_eye: List[Point] = field(default_factory=list)
    right_eye: List[Point] = field(default_factory=list)
    top_lip: List[Point] = field(default_factory=list)
    bottom_lip: List[Point] = field(default_factory=list)

    def groups(self) -> Dict[str, List[Point]]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def is_valid(self) -> bool:
        return len(self.left_eye) >= 4 and len(self.right_eye) >= 4 and len(self.nose_tip) >= 1

    def centroid(self, group: str) -> Point:
        points = np.asarray(getattr(self, group), dtype=np.float64)
        if points.size == 0:
            raise ValueError(f"landmark group {group!r} is empty")
        x, y = points.mean(axis=0)
        return float(x), float(y)

    def eye_centers(self) -> Tuple[Point, Point]:
        return self.centroid("left_eye"), self.centroid("right_eye")

    def clamped(self, dims: Tuple[int, int]) -> "LandmarkSet":
        width, height = dims
        out = {}
        for name, points in self.groups().items():
            out[name] = [
                (float(min(max(x, 0.0), width - 1)), float(min(max(y, 0.0), height - 1)))
                for x, y in points
            ]
        return replace(self, **out)

    def to_dict(self) -> Dict[str, List[List[float]]]:
        return {name: [list(p) for p in points] for name, points in self.groups().items()}


@dataclass(frozen=True)
class FaceCandidate:
    box: Box
    landmarks: Optional[LandmarkSet] = None


@dataclass(frozen=True, eq=False)
class _Blob:
    area: int
    centroid: np.ndarray
    x0: int
    y0: int
    width: int
    height: int


def _blobs(mask: np.ndarray) -> List[_Blob]:
    count, _, stats, centroids = cv2.connectedComponentsWithStats(mask.astype(np.uint8), connectivity=8)
    return [
        _Blob(
            area=int(stats[i, cv2.CC_STAT_AREA]),
            centroid=centroids[i].astype(np.float64),
            x0=int(stats[i, cv2.CC_STAT_LEFT]),
            y0=int(stats[i, cv2.CC_STAT_TOP]),
            width=int(stats[i, cv2.CC_STAT_WIDTH]),
            height=int(stats[i, cv2.CC_STAT_HEIGHT]),
        )
        for i in range(1, count)
    ]


def _ellipse_points(center: np.ndarray, radii: Tuple[float, float], u: np.ndarray, v: np.ndarray, angles) -> List[Point]:
    return [
        tuple(map(float, center + radii[0] * np.cos(phi) * u - radii[1] * np.sin(phi) * v))
        for phi in angles
    ]


class GeometricFaceAnalyzer:
    """Skin-segmentation detector with blob-derived landmarks."""

    name = "geometric"
    version = "geometric-1"

    def analyze(self, img: Image) -> List[FaceCandidate]:
        lum = img.luminance()
        gray = np.rint(lum * 255.0).astype(np.uint8)
        if int(gray.max()) - int(gray.min()) < 16:
            return []
        _, bright = cv2.threshold(gray, 0, 1, cv2.THRESH_BINARY + cv2.THRESH_OTSU)
        count, labels, stats, _ = cv2.connectedComponentsWithStats(bright, connectivity=8)

        total = img.width * img.height
        candidates: List[FaceCandidate] = []
        for label in range(1, count):
            area = stats[label, cv2.CC_STAT_AREA]
            if not MIN_FACE_FRACTION * total <= area <= MAX_FACE_FRACTION * total:
                continue
            component = (labels == label).astype(np.uint8)
            candidate = self._verify(lum, component)
            if candidate is not None:
                candidates.append(candidate)
        return candidates

    def _verify(self, lum: np.ndarray, component: np.ndarray) -> Optional[FaceCandidate]:
        contours, _ = cv2.findContours(component, cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_NONE)
        contour = max(contours, key=cv2.contourArea)
        filled = np.zeros_like(component)
        cv2.drawContours(filled, [contour], -1, 1, thickness=-1)

        ys, xs = np.nonzero(filled)
        face_area = len(xs)
        centre = np.array([xs.mean(), ys.mean()])
        x0, x1, y0, y1 = xs.min(), xs.max() + 1, ys.min(), ys.max() + 1
        face_width = x1 - x0

        skin = float(np.median(lum[component > 0]))
        dark = (lum < DARK_RATIO * skin) & (filled > 0)
        blobs = _blobs(dark)
        lo, hi = OCULAR_AREA[0] * face_area, OCULAR_AREA[1] * face_area
        ocular = [
            b for b in blobs
            if lo <= b.area <= hi and b.centroid[1] < centre[1] and b.width <= OCULAR_MAX_WIDTH * face_width
        ]
        left = [b for b in ocular if b.centroid[0] < centre[0]]
        right = [b for b in ocular if b.centroid[0] >= centre[0]]
        if not left or not right:
            return None

        box = (float(x0), float(y0), float(x1), float(y1))
        ocular_ids = {id(b) for b in ocular}
        others = [b for b in blobs if id(b) not in ocular_ids]
        landmarks = self._landmarks(left, right, others, contour)
        return FaceCandidate(box=box, landmarks=landmarks.clamped((lum.shape[1], lum.shape[0])))

    def _landmarks(self, left: List[_Blob], right: List[_Blob], others: List[_Blob], contour) -> LandmarkSet:
        # The pupil is the lowest ocular blob on each side; a brow sits above it.
        eye_l = max(left, key=lambda b: b.centroid[1])
        eye_r = max(right, key=lambda b: b.centroid[1])
        pl, pr = eye_l.centroid, eye_r.centroid
        spacing = max(float(np.linalg.norm(pr - pl)), 1.0)
        u = (pr - pl) / spacing
        v = np.array([-u[1], u[0]])
        mid = (pl + pr) / 2

        def frame(p: np.ndarray) -> Tuple[float, float]:
            rel = p - mid
            return float(rel @ u) / spacing, float(rel @ v) / spacing

        groups: Dict[str, List[Point]] = {}
        eye_angles = np.deg2rad([180, 120, 60, 0, 300, 240])
        for side, eye, pool in (("left", eye_l, left), ("right", eye_r, right)):
            groups[f"{side}_eye"] = _ellipse_points(eye.centroid, (0.22 * spacing, 0.11 * spacing), u, v, eye_angles)
            above = [b for b in pool if b is not eye and frame(b.centroid)[1] < frame(eye.centroid)[1] - 0.15]
            if above:
                brow = min(above, key=lambda b: b.centroid[1])
                centre, half = brow.centroid, brow.width / 2.0
            else:
                centre, half = eye.centroid - 0.45 * spacing * v, 0.27 * spacing
            groups[f"{side}_eyebrow"] = [tuple(map(float, centre + t * u)) for t in np.linspace(-half, half, 5)]

        nostrils = [b for b in others if 0.35 <= frame(b.centroid)[1] <= 0.9 and abs(frame(b.centroid)[0]) < 0.35]
        if nostrils:
            nose = np.mean([b.centroid for b in nostrils], axis=0)
        else:
            nose = mid + 0.65 * spacing * v
        groups["nose_tip"] = [tuple(map(float, nose + t * spacing * u)) for t in np.linspace(-0.15, 0.15, 5)]
        bridge_end = nose - 0.15 * spacing * v
        groups["nose_bridge"] = [tuple(map(float, mid + t * (bridge_end - mid))) for t in np.linspace(0, 1, 4)]

        mouths = [b for b in others if 0.9 <= frame(b.centroid)[1] <= 1.6]
        if mouths:
            blob = max(mouths, key=lambda b: b.area)
            mouth, half = blob.centroid, blob.width / 2.0
        else:
            mouth, half = mid + 1.15 * spacing * v, 0.45 * spacing
        arc = np.linspace(np.pi, 0, 7)
        inner = arc[1:6]
        mh = 0.10 * spacing
        groups["top_lip"] = _ellipse_points(mouth, (half, mh), u, v, arc) + _ellipse_points(mouth, (0.8 * half, 0.3 * mh), u, v, inner)
        groups["bottom_lip"] = _ellipse_points(mouth, (half, mh), u, v, -arc) + _ellipse_points(mouth, (0.8 * half, 0.3 * mh), u, v, -inner)

        groups["chin"] = self._jawline(contour)
        return LandmarkSet(**groups)

    @staticmethod
    def _jawline(contour) -> List[Point]:
        if len(contour) < 5:
            x, y, w, h = cv2.boundingRect(contour)
            return [(float(x + w * t), float(y + h)) for t in np.linspace(0, 1, 17)]
        (cx, cy), (w, h), angle = cv2.fitEllipse(contour)
        rot = np.deg2rad(angle)
        c, s = np.cos(rot), np.sin(rot)
        points = []
        # Rays from the centre sweeping image-left, through the bottom, to image-right.
        for phi in np.linspace(np.pi, 0, 17):
            dx, dy = np.cos(phi), np.sin(phi)
            ex, ey = c * dx + s * dy, -s * dx + c * dy
            r = 1.0 / np.sqrt((ex / (w / 2)) ** 2 + (ey / (h / 2)) ** 2)
            points.append((float(cx + r * dx), float(cy + r * dy)))
        return points


class FaceRecognitionAnalyzer:
    """dlib HOG detector + 68-point predictor through the face_recognition package."""

    name = "face_recognition"

    def __init__(self, landmark_model: Optional[Path] = None):
        try:
            import face_recognition
            import face_recognition_models
        except ImportError as exc:
            expected = landmark_model or "shape_predictor_68_face_landmarks.dat"
            raise ConfigurationError(
                f"face_recognition adapter is unavailable; install it and provide the landmark model at {expected}"
            ) from exc

        path = Path(landmark_model) if landmark_model else Path(face_recognition_models.pose_predictor_model_location())
        if not path.exists():
            raise ConfigurationError(f"Landmark model not found at {path} (set BENCH_LANDMARK_MODEL)")
        if landmark_model:
            import dlib

            face_recognition.api.pose_predictor_68_point = dlib.shape_predictor(str(path))
        self._fr = face_recognition
        self.version = f"face_recognition-{getattr(face_recognition, '__version__', 'unknown')}"
        logger.info("landmark_model_loaded", extra={"path": str(path)})

    def analyze(self, img: Image) -> List[FaceCandidate]:
        array = img.to_uint8()
        locations = self._fr.face_locations(array, number_of_times_to_upsample=1, model="hog")
        marks = self._fr.face_landmarks(array, face_locations=locations, model="large")
        candidates = []
        for (top, right, bottom, left), groups in zip(locations, marks):
            # dlib's "left_eye" is the subject's left, which appears on image-right.
            landmarks = LandmarkSet(
                chin=groups["chin"],
                left_eyebrow=groups["right_eyebrow"],
                right_eyebrow=groups["left_eyebrow"],
                nose_bridge=groups["nose_bridge"],
                nose_tip=groups["nose_tip"],
                left_eye=groups["right_eye"],
                right_eye=groups["left_eye"],
                top_lip=groups["top_lip"],
                bottom_lip=groups["bottom_lip"],
            )
            candidates.append(
                FaceCandidate(
                    box=(float(left), float(top), float(right), float(bottom)),
                    landmarks=_as_float(landmarks).clamped(img.dims),
                )
            )
        return candidates


def _as_float(landmarks: LandmarkSet) -> LandmarkSet:
    return LandmarkSet(**{name: [(float(x), float(y)) for x, y in pts] for name, pts in landmarks.groups().items()})


@lru_cache(maxsize=None)
def get_face_analyzer(name: Optional[str] = None):
    """Analyzer named by `BENCH_FACE_ANALYZER` unless `name` is given; loaded once."""
    settings = config.get_settings()
    name = name or settings.face_analyzer
    if name == "geometric":
        return GeometricFaceAnalyzer()
    if name == "face_recognition":
        return FaceRecognitionAnalyzer(settings.landmark_model)
    raise ConfigurationError(f"Unknown face analyzer {name!r}; expected one of {config.FACE_ANALYZERS}")


def largest(candidates: Sequence[FaceCandidate]) -> Optional[FaceCandidate]:
    if not candidates:
        return None
    return max(candidates, key=lambda c: (c.box[2] - c.box[0]) * (c.box[3] - c.box[1]))


def clear_caches() -> None:
    get_face_analyzer.cache_clear()
