"""Image primitives shared by every degradation operator.

Frames are float64 grids of normalized intensities in [0, 1] with shape
(height, width, channels). Public operations clamp exactly once on the way
out, never between internal steps, so linear identities hold right up to the
final clamp. PNG is the authoritative on-disk format (lossless round trip);
JPEG is accepted for ingestion only.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image as _PilImage
from scipy import ndimage as _ndimage

_RANGE_SLACK = 1e-9


class DimensionError(ValueError):
    """A grid shape or size violates an operation's contract."""


class ImageIOError(OSError):
    """A raster file could not be read or written."""


def _clamp01(arr: np.ndarray) -> np.ndarray:
    return np.clip(arr, 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class Image:
    """A single image: normalized intensities in [0, 1].

    ``data`` has shape (height, width, channels); channels is 1 or 3.
    """

    width: int
    height: int
    channels: int
    data: np.ndarray

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise DimensionError(
                f"image dimensions must be positive, got {self.width}x{self.height}"
            )
        if self.channels not in (1, 3):
            raise DimensionError(f"channels must be 1 or 3, got {self.channels}")
        data = np.asarray(self.data, dtype=np.float64)
        expected = (self.height, self.width, self.channels)
        if data.shape != expected:
            raise DimensionError(f"data shape {data.shape} does not match {expected}")
        if not np.isfinite(data).all():
            raise ValueError("image intensities must be finite")
        if float(data.min()) < -_RANGE_SLACK or float(data.max()) > 1.0 + _RANGE_SLACK:
            raise ValueError("image intensities must lie in [0, 1]")
        object.__setattr__(self, "data", _clamp01(data))

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Image":
        """Build an image from a (h, w) or (h, w, c) array."""
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise DimensionError(f"expected a 2D or 3D array, got ndim={arr.ndim}")
        h, w, c = arr.shape
        return cls(width=w, height=h, channels=c, data=arr)

    @classmethod
    def constant(cls, width: int, height: int, value: float, channels: int = 1) -> "Image":
        return cls.from_array(np.full((height, width, channels), float(value)))

    def plane(self, channel: int = 0) -> np.ndarray:
        return self.data[:, :, channel]

    def same_shape(self, other: "Image") -> bool:
        return (self.width, self.height, self.channels) == (
            other.width,
            other.height,
            other.channels,
        )


@dataclass(frozen=True, eq=False)
class Frame:
    """One timestep of a sequence, tagged with what was done to it."""

    index: int
    image: Image
    is_corrupted: bool = False
    applied_ops: tuple = ()

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError(f"frame index must be >= 0, got {self.index}")
        # applied_ops is the audit trail of degradations, so it must agree
        # with the corruption flag in both directions.
        if self.is_corrupted != bool(self.applied_ops):
            raise ValueError("applied_ops must be non-empty exactly when is_corrupted")


@dataclass(frozen=True, eq=False)
class Sequence:
    """An ordered run of frames indexed 0..T-1."""

    frames: tuple

    def __post_init__(self) -> None:
        if not self.frames:
            raise ValueError("a sequence needs at least one frame")
        indices = [f.index for f in self.frames]
        if indices != list(range(len(self.frames))):
            raise ValueError(f"frame indices must be 0..T-1, got {indices}")

    @property
    def length(self) -> int:
        return len(self.frames)


def convolve2d(image: Image, kernel: np.ndarray, boundary: str = "replicate") -> Image:
    """True 2D convolution (kernel flipped) with replicate border padding.

    The kernel must be odd-sided and non-negative so the center pixel is well
    defined. Output is clamped to [0, 1]; for a kernel that sums to one the
    clamp never bites because each output pixel is a convex combination of
    input intensities. Pre-clamp the operation is linear in the image.
    """
    if boundary != "replicate":
        raise ValueError(f"unsupported boundary mode: {boundary!r}")
    k = np.asarray(kernel, dtype=np.float64)
    if k.ndim != 2 or k.shape[0] % 2 == 0 or k.shape[1] % 2 == 0:
        raise DimensionError(f"kernel must be 2D with odd sides, got shape {k.shape}")
    if (k < 0).any():
        raise ValueError("kernel entries must be non-negative")
    out = np.empty_like(image.data)
    for c in range(image.channels):
        out[:, :, c] = _ndimage.convolve(image.data[:, :, c], k, mode="nearest")
    return Image(image.width, image.height, image.channels, _clamp01(out))


def psnr(a: Image, b: Image) -> float:
    """Peak signal-to-noise ratio in dB on the [0, 1] intensity scale.

    Returns +inf for identical images (zero MSE).
    """
    if not a.same_shape(b):
        raise DimensionError(
            f"psnr needs matching shapes, got {(a.height, a.width, a.channels)} "
            f"vs {(b.height, b.width, b.channels)}"
        )
    mse = float(np.mean((a.data - b.data) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def load_image(path) -> Image:
    """Load a raster file into normalized intensities.

    8-bit sources are divided by 255, 16-bit grayscale PNGs by 65535. Other
    color modes are converted to 8-bit RGB first. JPEG works for ingestion;
    writing always goes through :func:`save_image` as PNG.
    """
    path = Path(path)
    try:
        with _PilImage.open(path) as img:
            img.load()
            arr = _decode_pil(img)
    except (OSError, ValueError) as exc:
        raise ImageIOError(f"cannot read image {path}: {exc}") from exc
    return Image.from_array(arr)


def _decode_pil(img) -> np.ndarray:
    if img.mode in ("I;16", "I;16B", "I;16L", "I"):
        return np.asarray(img, dtype=np.float64) / 65535.0
    if img.mode == "L":
        return np.asarray(img, dtype=np.float64) / 255.0
    return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0


def save_image(image: Image, path, bit_depth: int = 8) -> None:
    """Write a PNG at 8 or 16 bits per sample.

    Intensities already on the target code grid (k/255 or k/65535) round
    trip bit exactly; everything else is rounded to the nearest code.
    16-bit output is single channel only.
    """
    pil = _to_pil(image, bit_depth)
    path = Path(path)
    try:
        pil.save(path, format="PNG")
    except OSError as exc:
        raise ImageIOError(f"cannot write image {path}: {exc}") from exc


def encode_png(image: Image, bit_depth: int = 8) -> bytes:
    """PNG-encode an image in memory (used by the model wire protocol)."""
    buf = io.BytesIO()
    _to_pil(image, bit_depth).save(buf, format="PNG")
    return buf.getvalue()


def _to_pil(image: Image, bit_depth: int):
    if bit_depth == 8:
        codes = np.round(image.data * 255.0).astype(np.uint8)
        if image.channels == 1:
            return _PilImage.fromarray(codes[:, :, 0], "L")
        return _PilImage.fromarray(codes, "RGB")
    if bit_depth == 16:
        if image.channels != 1:
            raise ValueError("16-bit output supports single-channel images only")
        codes = np.round(image.data[:, :, 0] * 65535.0).astype(np.uint16)
        return _PilImage.fromarray(codes)
    raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
