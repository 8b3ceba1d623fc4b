"""AR overlay assets: procedurally drawn RGBA sprites with their anchor points.

Eyewear assets are drawn in a frame where the two eye holes are `EYE_SPACING`
units apart; the canvas extends 25% beyond the assumed eye corners. The dog
asset is a nose sprite with two ears above it, anchored on the nose centre.
Any asset can be replaced by an RGBA PNG in `BENCH_ASSET_DIR` (`<name>.png`,
optional `<name>.json` anchors).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Tuple

import cv2
import numpy as np

import config
from imaging import Image, decode_rgba

logger = logging.getLogger(__name__)

EYE_SPACING = 100.0
EYE_HALF_WIDTH = 0.25 * EYE_SPACING
PADDING = 1.25
LENS_RADII = (0.36 * EYE_SPACING, 0.30 * EYE_SPACING)
FRAME_THICKNESS = 4

FRAME_COLOR = (0, 0, 0)
LENS_COLOR = (13, 13, 18)
NOSE_COLOR = (20, 15, 15)
NOSE_HIGHLIGHT = (90, 80, 80)
EAR_COLOR = (70, 45, 30)
EAR_INNER_COLOR = (110, 75, 70)

# Dog sprite: the nose spans DOG_NOSE_SPAN inter-eye distances once placed; ears
# sit above the nose on the crown, offsets and radii in the same units.
DOG_NOSE_SPAN = 1.5
NOSE_RADII = (48, 26)
EAR_OFFSET = (1.1, 2.0)
EAR_RADII = (0.35, 0.5)
EAR_TILT = 20.0

Point = Tuple[float, float]


@dataclass(frozen=True)
class ArAsset:
    name: str
    rgb: Image
    alpha: np.ndarray
    anchors: Dict[str, Point] = field(default_factory=dict)

    @property
    def size(self) -> Tuple[int, int]:
        return self.rgb.width, self.rgb.height


def _eyewear_canvas() -> Tuple[int, int, Point, Point]:
    half_width = (EYE_SPACING / 2 + EYE_HALF_WIDTH) * PADDING
    half_height = (LENS_RADII[1] + FRAME_THICKNESS) * PADDING
    width, height = 2 * int(np.ceil(half_width)), 2 * int(np.ceil(half_height))
    cx, cy = width / 2.0, height / 2.0
    return width, height, (cx - EYE_SPACING / 2, cy), (cx + EYE_SPACING / 2, cy)


def _draw_eyewear(tinted_lenses: bool) -> Tuple[np.ndarray, np.ndarray, Dict[str, Point]]:
    width, height, left, right = _eyewear_canvas()
    rgb = np.zeros((height, width, 3), dtype=np.uint8)
    alpha = np.zeros((height, width), dtype=np.uint8)
    rx, ry = int(round(LENS_RADII[0])), int(round(LENS_RADII[1]))
    outer = (rx + FRAME_THICKNESS, ry + FRAME_THICKNESS)

    for cx, cy in (left, right):
        centre = (int(round(cx)), int(round(cy)))
        cv2.ellipse(rgb, centre, outer, 0, 0, 360, FRAME_COLOR, -1, lineType=cv2.LINE_8)
        cv2.ellipse(alpha, centre, outer, 0, 0, 360, 255, -1, lineType=cv2.LINE_8)
        if tinted_lenses:
            cv2.ellipse(rgb, centre, (rx, ry), 0, 0, 360, LENS_COLOR, -1, lineType=cv2.LINE_8)
        else:
            cv2.ellipse(alpha, centre, (rx, ry), 0, 0, 360, 0, -1, lineType=cv2.LINE_8)

    bridge_y = int(round(left[1] - 0.3 * ry))
    x0 = int(round(left[0] + outer[0])) - 1
    x1 = int(round(right[0] - outer[0])) + 1
    cv2.rectangle(rgb, (x0, bridge_y - 2), (x1, bridge_y + 2), FRAME_COLOR, -1)
    cv2.rectangle(alpha, (x0, bridge_y - 2), (x1, bridge_y + 2), 255, -1)
    return rgb, alpha, {"left_eye": left, "right_eye": right}


def _draw_dog() -> Tuple[np.ndarray, np.ndarray, Dict[str, Point]]:
    # Ear offsets are in inter-eye units, the nose being DOG_NOSE_SPAN of them wide.
    unit = 2 * NOSE_RADII[0] / DOG_NOSE_SPAN
    width, height = 200, 196
    centre = (width // 2, height - NOSE_RADII[1] - 4)
    rgb = np.zeros((height, width, 3), dtype=np.uint8)
    alpha = np.zeros((height, width), dtype=np.uint8)

    ear_radii = (int(round(EAR_RADII[0] * unit)), int(round(EAR_RADII[1] * unit)))
    inner_radii = (int(round(0.6 * ear_radii[0])), int(round(0.7 * ear_radii[1])))
    for side in (-1, 1):
        ear = (int(round(centre[0] + side * EAR_OFFSET[0] * unit)), int(round(centre[1] - EAR_OFFSET[1] * unit)))
        tilt = side * EAR_TILT
        cv2.ellipse(rgb, ear, ear_radii, tilt, 0, 360, EAR_COLOR, -1, lineType=cv2.LINE_8)
        cv2.ellipse(alpha, ear, ear_radii, tilt, 0, 360, 255, -1, lineType=cv2.LINE_8)
        cv2.ellipse(rgb, ear, inner_radii, tilt, 0, 360, EAR_INNER_COLOR, -1, lineType=cv2.LINE_8)

    cv2.ellipse(rgb, centre, NOSE_RADII, 0, 0, 360, NOSE_COLOR, -1, lineType=cv2.LINE_8)
    cv2.ellipse(alpha, centre, NOSE_RADII, 0, 0, 360, 255, -1, lineType=cv2.LINE_8)
    highlight = (centre[0] - 15, centre[1] - 10)
    cv2.ellipse(rgb, highlight, (10, 5), -20, 0, 360, NOSE_HIGHLIGHT, -1, lineType=cv2.LINE_8)

    cx, cy = float(centre[0]), float(centre[1])
    return rgb, alpha, {
        "center": (cx, cy),
        "nose_left": (cx - NOSE_RADII[0], cy),
        "nose_right": (cx + NOSE_RADII[0], cy),
    }


_DRAWERS = {
    "dog": _draw_dog,
    "glasses": lambda: _draw_eyewear(tinted_lenses=False),
    "shades": lambda: _draw_eyewear(tinted_lenses=True),
}


def _load_override(name: str) -> ArAsset | None:
    asset_dir = config.get_settings().asset_dir
    if asset_dir is None:
        return None
    png = asset_dir / f"{name}.png"
    if not png.exists():
        return None
    rgb, alpha = decode_rgba(png.read_bytes())
    sidecar = asset_dir / f"{name}.json"
    if sidecar.exists():
        anchors = {key: tuple(value) for key, value in json.loads(sidecar.read_text()).items()}
    else:
        # Scale the built-in anchors to the override canvas.
        default = get_builtin_asset(name)
        sx, sy = rgb.width / default.rgb.width, rgb.height / default.rgb.height
        anchors = {key: (x * sx, y * sy) for key, (x, y) in default.anchors.items()}
    logger.info("ar_asset_override_loaded", extra={"asset": name, "path": str(png)})
    return ArAsset(name=name, rgb=rgb, alpha=alpha, anchors=anchors)


@lru_cache(maxsize=None)
def get_builtin_asset(name: str) -> ArAsset:
    if name not in _DRAWERS:
        raise KeyError(name)
    rgb, alpha, anchors = _DRAWERS[name]()
    return ArAsset(name=name, rgb=Image.from_uint8(rgb), alpha=alpha.astype(np.float64) / 255.0, anchors=anchors)


@lru_cache(maxsize=None)
def get_asset(name: str) -> ArAsset:
    """Asset for `dog`, `glasses` or `shades`, honouring directory overrides."""
    return _load_override(name) or get_builtin_asset(name)


def clear_caches() -> None:
    """Reset cached assets (useful for tests)."""
    get_asset.cache_clear()
    get_builtin_asset.cache_clear()
