#!/usr/bin/env python3
"""Gallery of the degradation operators.

Builds one clean synthetic frame, pushes it through each corruption
operator at a few strengths, writes every variant as a PNG and prints a
PSNR table so the quality ladder is visible at a glance.

Outputs land in demos/output/gallery/.
"""

import math
from pathlib import Path

import numpy as np

from degradebench import (
    CompressionLevel,
    Image,
    NoiseParams,
    apply_compression,
    apply_motion_blur,
    apply_sensor_noise,
    linear_trajectory,
    psnr,
    render_psf,
    save_image,
)

OUT = Path(__file__).parent / "output" / "gallery"
OUT.mkdir(parents=True, exist_ok=True)


def make_scene(width=160, height=120):
    """A gradient backdrop with a bright disk and a dark bar: enough
    structure that blur, noise and blocking all show up differently."""
    yy, xx = np.mgrid[0:height, 0:width]
    scene = 0.25 + 0.5 * xx / width
    disk = (xx - width * 0.35) ** 2 + (yy - height * 0.4) ** 2 < (height * 0.18) ** 2
    scene[disk] = 0.95
    scene[int(height * 0.65) : int(height * 0.75), int(width * 0.55) : int(width * 0.9)] = 0.08
    return Image.from_array(np.repeat(scene[:, :, None], 3, axis=2))


clean = make_scene()
save_image(clean, OUT / "clean.png")
print(f"clean frame -> {OUT / 'clean.png'}")
print()

# --- motion blur: longer trajectories smear the disk and the bar -----------
print("motion blur (linear camera path)")
for extent in (1.0, 3.0, 6.0):
    side = 2 * math.ceil(extent) + 1
    kernel = render_psf(linear_trajectory(extent, angle=0.6), side, depth=1.0)
    blurred = apply_motion_blur(clean, kernel, epsilon_sigma=0.0, seed=1)
    save_image(blurred, OUT / f"blur_extent{extent:.0f}.png")
    print(f"  extent {extent:>3.0f} px   kernel {side}x{side}   psnr {psnr(clean, blurred):6.2f} dB")
print()

# --- sensor noise: lower gain means fewer photons means more shot noise ----
print("sensor noise (shot + read)")
for gain in (400.0, 100.0, 50.0):
    noisy = apply_sensor_noise(clean, NoiseParams(gain=gain, read_sigma=0.02, seed=2))
    save_image(noisy, OUT / f"noise_gain{gain:.0f}.png")
    print(f"  gain {gain:>5.0f}        psnr {psnr(clean, noisy):6.2f} dB")
print()

# --- compression: the block-transform codec at every bitrate level ---------
print("compression (8x8 block transform)")
for bitrate in range(1, 6):
    coded = apply_compression(clean, CompressionLevel(bitrate=bitrate))
    save_image(coded, OUT / f"codec_b{bitrate}.png")
    print(f"  bitrate level {bitrate}  psnr {psnr(clean, coded):6.2f} dB")
print()

# --- the full stack, as the harness applies it on a corrupted frame --------
print("stacked (blur -> noise -> compression), mild to harsh")
for label, extent, gain, bitrate in (("mild", 1.0, 300.0, 4), ("medium", 3.0, 150.0, 3), ("harsh", 6.0, 50.0, 1)):
    kernel = render_psf(linear_trajectory(extent, angle=0.6), 2 * math.ceil(extent) + 1, depth=1.0)
    frame = apply_motion_blur(clean, kernel, epsilon_sigma=0.0, seed=3)
    frame = apply_sensor_noise(frame, NoiseParams(gain=gain, read_sigma=0.02, seed=4))
    frame = apply_compression(frame, CompressionLevel(bitrate=bitrate))
    save_image(frame, OUT / f"stack_{label}.png")
    print(f"  {label:<7}        psnr {psnr(clean, frame):6.2f} dB")

print()
print(f"wrote gallery to {OUT}")
