"""Image representation, codecs and the geometric/compositing primitives."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Literal, Tuple

import cv2
import numpy as np
from PIL import Image as PILImage
from PIL import UnidentifiedImageError

from errors import BenchError, ContractViolation

JPEG_QUALITY = 95
PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
JPEG_SOI = b"\xff\xd8"

Box = Tuple[float, float, float, float]


class DecodeError(BenchError):
    """Raised when bytes are not a decodable PNG or JPEG stream."""


@dataclass(frozen=True)
class Image:
    """RGB raster with real-valued intensities in [0, 1], shape (height, width, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float64)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise ContractViolation(f"expected an (H, W, 3) array, got shape {pixels.shape}")
        if pixels.shape[0] < 1 or pixels.shape[1] < 1:
            raise ContractViolation("image width and height must be >= 1")
        pixels = np.clip(np.nan_to_num(pixels, nan=0.0), 0.0, 1.0)
        pixels.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def dims(self) -> Tuple[int, int]:
        """(width, height)"""
        return self.width, self.height

    @classmethod
    def blank(cls, width: int, height: int, color: Tuple[float, float, float] = (0.0, 0.0, 0.0)) -> "Image":
        return cls(np.broadcast_to(np.asarray(color, dtype=np.float64), (height, width, 3)).copy())

    @classmethod
    def from_uint8(cls, array: np.ndarray) -> "Image":
        array = np.asarray(array)
        if array.ndim == 2:
            array = np.repeat(array[:, :, None], 3, axis=2)
        return cls(array[:, :, :3].astype(np.float64) / 255.0)

    def to_uint8(self) -> np.ndarray:
        return np.rint(self.pixels * 255.0).astype(np.uint8)

    def quantized(self) -> "Image":
        """The image as it would read back from an 8-bit file."""
        return Image.from_uint8(self.to_uint8())

    def luminance(self) -> np.ndarray:
        r, g, b = self.pixels[..., 0], self.pixels[..., 1], self.pixels[..., 2]
        return 0.299 * r + 0.587 * g + 0.114 * b


@dataclass(frozen=True)
class Placement:
    """Affine map from asset to image coordinates plus per-pixel coverage."""

    affine: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        affine = np.asarray(self.affine, dtype=np.float64)
        if affine.shape != (2, 3):
            raise ContractViolation(f"affine must be 2x3, got {affine.shape}")
        mask = np.asarray(self.mask, dtype=np.float64)
        if mask.ndim != 2:
            raise ContractViolation("mask must be a 2-D array")
        if mask.min(initial=0.0) < 0.0 or mask.max(initial=0.0) > 1.0:
            raise ContractViolation("mask values must lie in [0, 1]")
        object.__setattr__(self, "affine", affine)
        object.__setattr__(self, "mask", mask)

    @property
    def dims(self) -> Tuple[int, int]:
        return self.mask.shape[1], self.mask.shape[0]

    def support(self) -> np.ndarray:
        return self.mask > 0.0


def _sniff(data: bytes) -> str:
    if data.startswith(PNG_SIGNATURE):
        return "png"
    if data.startswith(JPEG_SOI):
        return "jpeg"
    raise DecodeError(
        "unrecognized image signature at byte offset 0",
        details={"offset": 0, "head": data[:8].hex()},
    )


def _open(data: bytes) -> PILImage.Image:
    codec = _sniff(data)
    try:
        pil = PILImage.open(io.BytesIO(data))
        pil.load()
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DecodeError(f"{codec} codec failure: {exc}", details={"codec": codec}) from exc
    return pil


def decode_image(data: bytes) -> Image:
    """Decode PNG/JPEG bytes; grayscale inputs are replicated to three channels."""
    pil = _open(data)
    return Image.from_uint8(np.asarray(pil.convert("RGB")))


def decode_rgba(data: bytes) -> Tuple[Image, np.ndarray]:
    """Decode an asset, returning its RGB image and alpha channel in [0, 1]."""
    pil = _open(data).convert("RGBA")
    array = np.asarray(pil)
    return Image.from_uint8(array[:, :, :3]), array[:, :, 3].astype(np.float64) / 255.0


def encode_image(img: Image, fmt: Literal["png", "jpeg"] = "png") -> bytes:
    buffer = io.BytesIO()
    pil = PILImage.fromarray(img.to_uint8())
    if fmt == "jpeg":
        pil.save(buffer, format="JPEG", quality=JPEG_QUALITY)
    elif fmt == "png":
        pil.save(buffer, format="PNG")
    else:
        raise ContractViolation(f"unsupported format {fmt!r}; use png or jpeg")
    return buffer.getvalue()


def encode_rgba(rgb: Image, alpha: np.ndarray) -> bytes:
    array = np.dstack([rgb.to_uint8(), np.rint(np.clip(alpha, 0, 1) * 255).astype(np.uint8)])
    buffer = io.BytesIO()
    PILImage.fromarray(array).save(buffer, format="PNG")
    return buffer.getvalue()


def warp_array(array: np.ndarray, affine: np.ndarray, dims: Tuple[int, int]) -> np.ndarray:
    """Bilinearly warp an (H, W) or (H, W, C) array into a `dims` = (width, height) canvas."""
    warped = cv2.warpAffine(
        np.ascontiguousarray(array, dtype=np.float32),
        np.asarray(affine, dtype=np.float64),
        dims,
        flags=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=0,
    )
    return warped.astype(np.float64)


def make_placement(affine: np.ndarray, asset_alpha: np.ndarray, dims: Tuple[int, int]) -> Placement:
    """Warp an asset's alpha channel into image space to form the placement mask."""
    mask = np.clip(warp_array(asset_alpha, affine, dims), 0.0, 1.0)
    # Interpolation weights may not sum to exactly one.
    mask[mask > 1.0 - 1e-6] = 1.0
    mask[mask < 1e-6] = 0.0
    return Placement(affine=affine, mask=mask)


def alpha_blend(src: Image, asset: Image, placement: Placement, alpha: float) -> Image:
    """Composite `asset`, warped by the placement, over `src` at constant opacity `alpha`."""
    if placement.dims != src.dims:
        raise ContractViolation(
            "placement mask does not match image dimensions",
            details={"mask": placement.dims, "image": src.dims},
        )
    if not 0.0 <= alpha <= 1.0:
        raise ContractViolation(f"alpha must lie in [0, 1], got {alpha}")
    warped = warp_array(asset.pixels, placement.affine, src.dims)
    coverage = (alpha * placement.mask)[:, :, None]
    out = coverage * warped + (1.0 - coverage) * src.pixels
    outside = ~placement.support()
    out[outside] = src.pixels[outside]
    return Image(out)


def clip_box(box: Box, dims: Tuple[int, int]) -> Tuple[int, int, int, int]:
    width, height = dims
    x0, y0, x1, y1 = box
    cx0, cy0 = max(0, math.floor(x0)), max(0, math.floor(y0))
    cx1, cy1 = min(width, math.ceil(x1)), min(height, math.ceil(y1))
    if cx1 <= cx0 or cy1 <= cy0:
        raise ContractViolation("box does not intersect the image", details={"box": list(box), "dims": list(dims)})
    return cx0, cy0, cx1, cy1


def crop_resize(img: Image, box: Box, out_size: int) -> Image:
    """Clip `box` to the image, crop, and bilinearly resample to out_size x out_size."""
    if out_size < 1:
        raise ContractViolation("out_size must be >= 1")
    x0, y0, x1, y1 = clip_box(box, img.dims)
    crop = img.pixels[y0:y1, x0:x1]
    if crop.shape[0] == out_size and crop.shape[1] == out_size:
        return Image(crop.copy())
    resized = cv2.resize(crop.astype(np.float32), (out_size, out_size), interpolation=cv2.INTER_LINEAR)
    return Image(resized.astype(np.float64))


def resize(img: Image, dims: Tuple[int, int]) -> Image:
    """Bilinear resample to `dims` = (width, height)."""
    if img.dims == tuple(dims):
        return img
    resized = cv2.resize(img.pixels.astype(np.float32), tuple(dims), interpolation=cv2.INTER_LINEAR)
    return Image(resized.astype(np.float64))
