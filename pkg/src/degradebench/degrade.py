"""Physics-based degradation operators and corruption scheduling.

Three operator families cover the implemented degradations:

* blur kernels rendered from 6-DOF camera motion over one exposure,
* Poisson-Gaussian sensor noise (shot noise plus read noise),
* a block-transform compression surrogate with an escape hatch for real
  external encoders.

A wider vocabulary of degradation tags (glare, dead pixels, banding, ...)
rides along as schedule metadata; each tag maps onto one of the families
above rather than getting its own bespoke operator.
"""

from __future__ import annotations

import math
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft as _fft

from .imaging import DimensionError, Image, _clamp01, convolve2d, load_image, save_image

# Degradation vocabulary: three families, twelve tags. Tags beyond the three
# directly implemented operators are recorded as schedule metadata and are
# realized through the family they map to (for example defocus is a disk
# kernel rendered through the same splatting path as motion blur).
DEGRADATION_TAXONOMY = {
    "optical": ("motion_blur", "defocus_blur", "glare", "chromatic_aberration"),
    "sensor": ("low_light_noise", "dead_pixels", "fixed_pattern_noise", "rolling_shutter"),
    "compression": ("block_artifacts", "ringing", "banding", "packet_loss"),
}

ALL_DEGRADATION_TAGS = frozenset(
    tag for tags in DEGRADATION_TAXONOMY.values() for tag in tags
)

OPERATOR_FAMILY = {
    **{tag: "psf" for tag in DEGRADATION_TAXONOMY["optical"]},
    **{tag: "noise" for tag in DEGRADATION_TAXONOMY["sensor"]},
    **{tag: "codec" for tag in DEGRADATION_TAXONOMY["compression"]},
}

# Default coefficient quantization step per bitrate level, on the 0-255
# coefficient scale: step(B) = round(64 / B). Override via quant_steps when a
# differently tuned surrogate is wanted.
DEFAULT_QUANT_STEPS = {1: 64, 2: 32, 3: 21, 4: 16, 5: 13}

BITRATE_LEVELS = (1, 2, 3, 4, 5)


class EmptyKernelError(ValueError):
    """Every trajectory sample projected outside the kernel grid."""


class CodecBackendError(RuntimeError):
    """An external codec invocation failed; carries the child's stderr."""

    def __init__(self, message: str, stderr: str = ""):
        super().__init__(message if not stderr else f"{message}\n{stderr.strip()}")
        self.stderr = stderr


@dataclass(frozen=True, eq=False)
class MotionTrajectory:
    """Camera motion over one exposure: N samples of (tx, ty, tz, rx, ry, rz).

    Translations are in scene units, rotations in radians. Samples are
    assumed uniformly spaced in time across the exposure.
    """

    samples: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim == 1 and arr.shape == (6,):
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] != 6:
            raise DimensionError(f"trajectory must be (N, 6), got {arr.shape}")
        if arr.shape[0] < 1:
            raise ValueError("trajectory needs at least one sample")
        if not np.isfinite(arr).all():
            raise ValueError("trajectory samples must be finite")
        object.__setattr__(self, "samples", arr)

    @property
    def sample_count(self) -> int:
        return int(self.samples.shape[0])


@dataclass(frozen=True, eq=False)
class PsfKernel:
    """A normalized blur kernel: odd-sided square grid, non-negative, sum 1."""

    grid: np.ndarray

    def __post_init__(self) -> None:
        grid = np.asarray(self.grid, dtype=np.float64)
        if grid.ndim != 2 or grid.shape[0] != grid.shape[1]:
            raise DimensionError(f"kernel grid must be square, got {grid.shape}")
        if grid.shape[0] % 2 == 0:
            raise DimensionError(f"kernel side must be odd, got {grid.shape[0]}")
        if (grid < 0).any():
            raise ValueError("kernel weights must be non-negative")
        total = float(grid.sum())
        if not math.isclose(total, 1.0, rel_tol=0.0, abs_tol=1e-9):
            raise ValueError(f"kernel weights must sum to 1 within 1e-9, got {total}")
        object.__setattr__(self, "grid", grid)

    @property
    def side(self) -> int:
        return int(self.grid.shape[0])


@dataclass(frozen=True)
class NoiseParams:
    """Sensor noise settings.

    ``gain`` is the photon budget per unit intensity: the Poisson draw uses
    mean gain * I and is renormalized back to the intensity scale, so shot
    noise variance is I / gain. ``read_sigma`` is the additive Gaussian read
    noise on the normalized scale.
    """

    gain: float
    read_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.gain <= 0:
            raise ValueError(f"gain must be > 0, got {self.gain}")
        if self.read_sigma < 0:
            raise ValueError(f"read_sigma must be >= 0, got {self.read_sigma}")


@dataclass(frozen=True)
class CompressionLevel:
    """Compression strength on the 1..5 bitrate ladder (5 = gentlest)."""

    bitrate: int
    backend: str = "surrogate"

    def __post_init__(self) -> None:
        if self.bitrate not in BITRATE_LEVELS:
            raise ValueError(f"bitrate must be in {BITRATE_LEVELS}, got {self.bitrate}")
        if self.backend not in ("surrogate", "external"):
            raise ValueError(f"backend must be surrogate or external, got {self.backend!r}")


@dataclass(frozen=True)
class DegradationSchedule:
    """When corruption strikes within an episode of ``length`` frames.

    Regimes:
      * early: frames 0..boundary-1 corrupted, the rest clean
      * late: frames 0..boundary-1 clean, the rest corrupted
      * intermittent: ``duty`` corrupted frames at the start of every
        ``period`` frames, beginning at frame 0
    """

    regime: str
    length: int
    boundary: int | None = None
    period: int | None = None
    duty: int | None = None
    severity_overrides: tuple | None = None
    tags: tuple = ()

    def __post_init__(self) -> None:
        if self.length < 1:
            raise ValueError(f"schedule length must be >= 1, got {self.length}")
        if self.regime in ("early", "late"):
            if self.boundary is None or not (0 < self.boundary < self.length):
                raise ValueError(
                    f"{self.regime} regime needs 0 < boundary < length, got {self.boundary}"
                )
        elif self.regime == "intermittent":
            if self.period is None or self.period < 2:
                raise ValueError(f"intermittent regime needs period >= 2, got {self.period}")
            if self.duty is None or not (1 <= self.duty < self.period):
                raise ValueError(
                    f"intermittent regime needs 1 <= duty < period, got {self.duty}"
                )
        else:
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.severity_overrides is not None:
            overrides = tuple(float(v) for v in self.severity_overrides)
            if len(overrides) != self.length:
                raise ValueError("severity_overrides must have one value per frame")
            if any(not (0.0 <= v <= 1.0) for v in overrides):
                raise ValueError("severity overrides must lie in [0, 1]")
            object.__setattr__(self, "severity_overrides", overrides)
        tags = tuple(self.tags)
        unknown = [t for t in tags if t not in ALL_DEGRADATION_TAGS]
        if unknown:
            raise ValueError(f"unknown degradation tags: {unknown}")
        object.__setattr__(self, "tags", tags)


def corruption_mask(schedule: DegradationSchedule) -> list:
    """Per-frame booleans: True where the schedule corrupts the frame."""
    T = schedule.length
    if schedule.regime == "early":
        return [t < schedule.boundary for t in range(T)]
    if schedule.regime == "late":
        return [t >= schedule.boundary for t in range(T)]
    return [(t % schedule.period) < schedule.duty for t in range(T)]


def render_psf(
    trajectory: MotionTrajectory,
    side: int,
    depth: float,
    focal_px: float = 1.0,
) -> PsfKernel:
    """Rasterize an exposure trajectory into a normalized blur kernel.

    Each pose sample is projected to an image-plane displacement with a
    first-order pinhole model at a single scene depth:

        dx = focal_px * (tx / depth + ry)
        dy = focal_px * (ty / depth + rx)

    Axial translation (tz) and roll (rz) move pixels only at second order
    and are dropped. Displacements are splatted around the kernel center
    with bilinear weights; contributions falling off the grid are discarded
    and the result is normalized to unit sum. If every sample lands outside
    the grid there is nothing to normalize and EmptyKernelError is raised.
    """
    if side < 1 or side % 2 == 0:
        raise DimensionError(f"kernel side must be odd and >= 1, got {side}")
    if depth <= 0:
        raise ValueError(f"depth must be > 0, got {depth}")
    grid = np.zeros((side, side), dtype=np.float64)
    center = side // 2
    for tx, ty, _tz, rx, ry, _rz in trajectory.samples:
        u = center + focal_px * (tx / depth + ry)
        v = center + focal_px * (ty / depth + rx)
        j0 = math.floor(u)
        i0 = math.floor(v)
        fu = u - j0
        fv = v - i0
        for i, j, w in (
            (i0, j0, (1 - fv) * (1 - fu)),
            (i0, j0 + 1, (1 - fv) * fu),
            (i0 + 1, j0, fv * (1 - fu)),
            (i0 + 1, j0 + 1, fv * fu),
        ):
            if w > 0 and 0 <= i < side and 0 <= j < side:
                grid[i, j] += w
    total = float(grid.sum())
    if total <= 0.0:
        raise EmptyKernelError("all trajectory samples project outside the kernel grid")
    return PsfKernel(grid / total)


def delta_psf(side: int = 1) -> PsfKernel:
    """The identity kernel: all weight at the center."""
    if side < 1 or side % 2 == 0:
        raise DimensionError(f"kernel side must be odd and >= 1, got {side}")
    grid = np.zeros((side, side), dtype=np.float64)
    grid[side // 2, side // 2] = 1.0
    return PsfKernel(grid)


def linear_trajectory(extent_px: float, n_samples: int = 16, angle: float = 0.0) -> MotionTrajectory:
    """Straight-line camera motion covering ``extent_px`` pixels of image shift.

    Convenience constructor for the common jitter case; assumes depth 1 and
    focal_px 1 when rendered, so tx/ty are expressed directly in pixels.
    """
    if extent_px < 0:
        raise ValueError(f"extent must be >= 0, got {extent_px}")
    if n_samples < 1:
        raise ValueError(f"need at least one sample, got {n_samples}")
    if n_samples == 1:
        steps = np.zeros(1)
    else:
        steps = np.linspace(0.0, extent_px, n_samples)
    samples = np.zeros((n_samples, 6))
    samples[:, 0] = steps * math.cos(angle)
    samples[:, 1] = steps * math.sin(angle)
    return MotionTrajectory(samples)


def disk_trajectory(radius_px: float, n_samples: int = 256) -> MotionTrajectory:
    """Fermat-spiral samples filling a disk; renders to a defocus kernel."""
    if radius_px < 0:
        raise ValueError(f"radius must be >= 0, got {radius_px}")
    if n_samples < 1:
        raise ValueError(f"need at least one sample, got {n_samples}")
    golden = math.pi * (3.0 - math.sqrt(5.0))
    k = np.arange(n_samples, dtype=np.float64)
    r = radius_px * np.sqrt((k + 0.5) / n_samples)
    theta = k * golden
    samples = np.zeros((n_samples, 6))
    samples[:, 0] = r * np.cos(theta)
    samples[:, 1] = r * np.sin(theta)
    return MotionTrajectory(samples)


def defocus_psf(radius_px: float, side: int, n_samples: int = 256) -> PsfKernel:
    """Disk kernel for the defocus_blur tag, rendered through render_psf."""
    return render_psf(disk_trajectory(radius_px, n_samples), side, depth=1.0)


def load_trajectory(path) -> MotionTrajectory:
    """Read a 6-column plain-text pose trace (whitespace separated, # comments)."""
    path = Path(path)
    try:
        arr = np.loadtxt(path, dtype=np.float64, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ValueError(f"cannot parse trajectory file {path}: {exc}") from exc
    if arr.shape[1] != 6:
        raise DimensionError(f"trajectory file {path} must have 6 columns, got {arr.shape[1]}")
    return MotionTrajectory(arr)


def apply_motion_blur(
    image: Image,
    psf: PsfKernel,
    epsilon_sigma: float = 0.0,
    seed: int = 0,
) -> Image:
    """Blur with a rendered kernel, then add small zero-mean Gaussian noise.

    The additive term models residual exposure error and is applied before
    the single final clamp. epsilon_sigma = 0 makes the op purely linear, so
    constant images are fixed points (any normalized kernel averages a
    constant to itself).
    """
    if epsilon_sigma < 0:
        raise ValueError(f"epsilon_sigma must be >= 0, got {epsilon_sigma}")
    blurred = convolve2d(image, psf.grid)
    if epsilon_sigma == 0:
        return blurred
    rng = np.random.default_rng(seed)
    noisy = blurred.data + rng.normal(0.0, epsilon_sigma, size=blurred.data.shape)
    return Image(image.width, image.height, image.channels, _clamp01(noisy))


def apply_sensor_noise(image: Image, params: NoiseParams) -> Image:
    """Poisson-Gaussian sensor model on normalized intensities.

    Photon counts are drawn as Poisson(gain * I) and divided by gain, which
    keeps the mean at I and makes the shot-noise variance I / gain; Gaussian
    read noise with std read_sigma is added on top. One clamp at the end.
    """
    rng = np.random.default_rng(params.seed)
    out = rng.poisson(params.gain * image.data).astype(np.float64) / params.gain
    if params.read_sigma > 0:
        out = out + rng.normal(0.0, params.read_sigma, size=out.shape)
    return Image(image.width, image.height, image.channels, _clamp01(out))


def quant_step_for_bitrate(bitrate: int, quant_steps=None) -> int:
    table = dict(DEFAULT_QUANT_STEPS)
    if quant_steps:
        table.update({int(k): int(v) for k, v in quant_steps.items()})
    if bitrate not in table:
        raise ValueError(f"no quantization step configured for bitrate {bitrate}")
    step = table[bitrate]
    if step < 1:
        raise ValueError(f"quantization step must be >= 1, got {step}")
    return step


def _block_quantize_plane(plane255: np.ndarray, step: int) -> np.ndarray:
    """8x8 block DCT-II, uniform coefficient quantization, inverse transform."""
    h, w = plane255.shape
    pad_h = (-h) % 8
    pad_w = (-w) % 8
    padded = np.pad(plane255, ((0, pad_h), (0, pad_w)), mode="edge")
    H, W = padded.shape
    blocks = padded.reshape(H // 8, 8, W // 8, 8).transpose(0, 2, 1, 3)
    coef = _fft.dctn(blocks, type=2, norm="ortho", axes=(2, 3))
    coef = np.round(coef / step) * step
    rec = _fft.idctn(coef, type=2, norm="ortho", axes=(2, 3))
    out = rec.transpose(0, 2, 1, 3).reshape(H, W)
    return out[:h, :w]


@dataclass(frozen=True)
class ExternalCodec:
    """Escape hatch wrapping a real encoder/decoder pair.

    Invocation contract:

        <encoder> -in <frame.png> -bitrate <level> -out <stream>
        <decoder> -in <stream> -out <frame.png>

    Any binary adapted to this argument shape slots in. Failures raise
    CodecBackendError carrying the child process stderr.
    """

    encoder: str
    decoder: str

    def roundtrip(self, image: Image, bitrate: int) -> Image:
        with tempfile.TemporaryDirectory(prefix="degradebench-codec-") as td:
            tdir = Path(td)
            src = tdir / "in.png"
            stream = tdir / "frame.bin"
            dst = tdir / "out.png"
            save_image(image, src)
            _run_codec([self.encoder, "-in", str(src), "-bitrate", str(bitrate), "-out", str(stream)])
            _run_codec([self.decoder, "-in", str(stream), "-out", str(dst)])
            try:
                return load_image(dst)
            except OSError as exc:
                raise CodecBackendError(f"decoder produced no readable frame: {exc}") from exc


def _run_codec(cmd: list) -> None:
    try:
        proc = subprocess.run(cmd, capture_output=True, text=True, check=False)
    except OSError as exc:
        raise CodecBackendError(f"cannot launch {cmd[0]!r}: {exc}") from exc
    if proc.returncode != 0:
        raise CodecBackendError(
            f"{cmd[0]!r} exited with status {proc.returncode}", stderr=proc.stderr
        )


def apply_compression(
    image: Image,
    level: CompressionLevel,
    quant_steps=None,
    codec: ExternalCodec | None = None,
) -> Image:
    """Compress-decompress an image at the requested bitrate level.

    The surrogate backend runs a blockwise orthonormal DCT with uniform
    coefficient quantization on the 0-255 scale; lower bitrate means a
    coarser step and stronger blocking. The external backend shells out to
    a wrapped encoder/decoder pair instead.
    """
    if level.backend == "external":
        if codec is None:
            raise CodecBackendError("external backend selected but no codec configured")
        out = codec.roundtrip(image, level.bitrate)
        if not out.same_shape(image):
            raise CodecBackendError(
                f"external codec changed frame shape: {(out.height, out.width)} "
                f"vs {(image.height, image.width)}"
            )
        return out
    step = quant_step_for_bitrate(level.bitrate, quant_steps)
    out = np.empty_like(image.data)
    for c in range(image.channels):
        out[:, :, c] = _block_quantize_plane(image.data[:, :, c] * 255.0, step) / 255.0
    return Image(image.width, image.height, image.channels, _clamp01(out))


def dead_pixel_mask(image: Image, fraction: float, seed: int = 0) -> Image:
    """Deterministic dead-pixel variant of the sensor family.

    Zeroes a seeded random fraction of pixel sites across all channels.
    """
    if not (0.0 <= fraction <= 1.0):
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    n_sites = image.height * image.width
    n_dead = int(math.floor(fraction * n_sites))
    data = image.data.copy()
    if n_dead > 0:
        rng = np.random.default_rng(seed)
        flat = rng.choice(n_sites, size=n_dead, replace=False)
        rows, cols = np.unravel_index(flat, (image.height, image.width))
        data[rows, cols, :] = 0.0
    return Image(image.width, image.height, image.channels, data)
