import math
import os
import stat

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from degradebench import (
    ALL_DEGRADATION_TAGS,
    DEFAULT_QUANT_STEPS,
    DEGRADATION_TAXONOMY,
    CodecBackendError,
    CompressionLevel,
    DegradationSchedule,
    DimensionError,
    EmptyKernelError,
    ExternalCodec,
    Image,
    MotionTrajectory,
    NoiseParams,
    PsfKernel,
    apply_compression,
    apply_motion_blur,
    apply_sensor_noise,
    corruption_mask,
    dead_pixel_mask,
    defocus_psf,
    delta_psf,
    disk_trajectory,
    linear_trajectory,
    load_image,
    load_trajectory,
    psnr,
    quant_step_for_bitrate,
    render_psf,
    save_image,
)
from degradebench.degrade import OPERATOR_FAMILY

from conftest import smooth_corpus


# ---------------------------------------------------------------------------
# PSF rendering
# ---------------------------------------------------------------------------


def _traj(*rows):
    return MotionTrajectory(np.array(rows, dtype=np.float64))


def test_trajectory_validation():
    with pytest.raises(DimensionError):
        MotionTrajectory(np.zeros((3, 5)))
    with pytest.raises(ValueError):
        MotionTrajectory(np.zeros((0, 6)))
    with pytest.raises(ValueError):
        _traj([np.inf, 0, 0, 0, 0, 0])
    # a single flat pose vector is promoted to one sample
    assert MotionTrajectory(np.zeros(6)).sample_count == 1


def test_psf_kernel_validation():
    with pytest.raises(ValueError):
        PsfKernel(np.ones((3, 3)))  # sums to 9
    with pytest.raises(DimensionError):
        PsfKernel(np.ones((2, 2)) / 4)
    with pytest.raises(DimensionError):
        PsfKernel(np.ones((2, 3)) / 6)


def test_render_psf_stationary_camera_is_delta():
    kernel = render_psf(_traj([0, 0, 0, 0, 0, 0]), side=3, depth=1.0)
    expected = np.zeros((3, 3))
    expected[1, 1] = 1.0
    assert np.array_equal(kernel.grid, expected)


def test_render_psf_half_pixel_shift_splits_bilinearly():
    kernel = render_psf(_traj([0.5, 0, 0, 0, 0, 0]), side=3, depth=1.0)
    expected = np.zeros((3, 3))
    expected[1, 1] = 0.5
    expected[1, 2] = 0.5
    assert np.allclose(kernel.grid, expected, atol=1e-12)


def test_render_psf_two_integer_samples():
    kernel = render_psf(_traj([0, 0, 0, 0, 0, 0], [1, 0, 0, 0, 0, 0]), side=3, depth=1.0)
    expected = np.zeros((3, 3))
    expected[1, 1] = 0.5
    expected[1, 2] = 0.5
    assert np.allclose(kernel.grid, expected, atol=1e-12)


def _splat_oracle(displacements, side):
    """Vectorized bilinear splat, written independently of the renderer."""
    grid = np.zeros((side, side))
    c = side // 2
    for dx, dy in displacements:
        u, v = c + dx, c + dy
        j0, i0 = math.floor(u), math.floor(v)
        fu, fv = u - j0, v - i0
        for ii, jj, w in (
            (i0, j0, (1 - fv) * (1 - fu)),
            (i0, j0 + 1, (1 - fv) * fu),
            (i0 + 1, j0, fv * (1 - fu)),
            (i0 + 1, j0 + 1, fv * fu),
        ):
            if w > 0 and 0 <= ii < side and 0 <= jj < side:
                grid[ii, jj] += w
    return grid / grid.sum()


def test_render_psf_linear_ramp_matches_splat_oracle():
    steps = np.linspace(0.0, 2.0, 10)
    traj = linear_trajectory(2.0, n_samples=10)
    kernel = render_psf(traj, side=5, depth=1.0)
    expected = _splat_oracle([(s, 0.0) for s in steps], 5)
    assert np.allclose(kernel.grid, expected, atol=1e-12)


def test_render_psf_rotation_translation_equivalence():
    # first-order model: ry of 0.3 rad at focal 10 px == 3 px of x-translation
    by_rotation = render_psf(_traj([0, 0, 0, 0, 0.3, 0]), side=9, depth=1.0, focal_px=10.0)
    by_translation = render_psf(_traj([3, 0, 0, 0, 0, 0]), side=9, depth=1.0)
    assert np.allclose(by_rotation.grid, by_translation.grid, atol=1e-12)

    by_rx = render_psf(_traj([0, 0, 0, 0.2, 0, 0]), side=5, depth=1.0, focal_px=5.0)
    by_ty = render_psf(_traj([0, 1, 0, 0, 0, 0]), side=5, depth=1.0)
    assert np.allclose(by_rx.grid, by_ty.grid, atol=1e-12)


def test_render_psf_depth_scales_translation():
    near = render_psf(_traj([1, 0, 0, 0, 0, 0]), side=5, depth=1.0)
    far = render_psf(_traj([2, 0, 0, 0, 0, 0]), side=5, depth=2.0)
    assert np.allclose(near.grid, far.grid, atol=1e-12)


def test_render_psf_ignores_axial_and_roll():
    kernel = render_psf(_traj([0, 0, 5.0, 0, 0, 2.0]), side=3, depth=1.0)
    assert np.array_equal(kernel.grid, delta_psf(3).grid)


def test_render_psf_drops_out_of_grid_contributions():
    kernel = render_psf(
        _traj([0, 0, 0, 0, 0, 0], [10, 0, 0, 0, 0, 0]), side=3, depth=1.0
    )
    assert np.array_equal(kernel.grid, delta_psf(3).grid)


def test_render_psf_all_outside_raises():
    with pytest.raises(EmptyKernelError):
        render_psf(_traj([10, 0, 0, 0, 0, 0]), side=3, depth=1.0)


def test_render_psf_argument_validation():
    traj = _traj([0, 0, 0, 0, 0, 0])
    with pytest.raises(DimensionError):
        render_psf(traj, side=4, depth=1.0)
    with pytest.raises(ValueError):
        render_psf(traj, side=3, depth=0.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_render_psf_random_trajectories_conserve_mass(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 32))
    samples = np.zeros((n, 6))
    samples[:, 0] = rng.uniform(-2, 2, n)
    samples[:, 1] = rng.uniform(-2, 2, n)
    samples[:, 3] = rng.uniform(-0.3, 0.3, n)
    samples[:, 4] = rng.uniform(-0.3, 0.3, n)
    kernel = render_psf(MotionTrajectory(samples), side=9, depth=1.0)
    assert (kernel.grid >= 0).all()
    assert abs(float(kernel.grid.sum()) - 1.0) <= 1e-9


def test_trajectory_constructors():
    lin = linear_trajectory(2.0, n_samples=3)
    assert np.allclose(lin.samples[:, 0], [0, 1, 2])
    up = linear_trajectory(2.0, n_samples=3, angle=math.pi / 2)
    assert np.allclose(up.samples[:, 1], [0, 1, 2], atol=1e-12)
    assert linear_trajectory(5.0, n_samples=1).samples.sum() == 0.0
    with pytest.raises(ValueError):
        linear_trajectory(-1.0)

    disk = disk_trajectory(3.0, n_samples=64)
    radii = np.hypot(disk.samples[:, 0], disk.samples[:, 1])
    assert radii.max() <= 3.0 + 1e-12
    assert np.array_equal(defocus_psf(0.0, 3).grid, delta_psf(3).grid)


def test_load_trajectory(tmp_path):
    path = tmp_path / "траектория.txt"
    path.write_text("# pose trace\n0 0 0 0 0 0\n1.5 0.5 0 0 0 0\n")
    traj = load_trajectory(path)
    assert traj.sample_count == 2
    assert traj.samples[1, 0] == 1.5

    bad = tmp_path / "bad.txt"
    bad.write_text("1 2 3 4 5\n")
    with pytest.raises((DimensionError, ValueError)):
        load_trajectory(bad)


def test_apply_motion_blur_constant_fixed_point():
    img = Image.constant(16, 12, 0.4, channels=3)
    kernel = render_psf(linear_trajectory(2.0, 8), side=5, depth=1.0)
    out = apply_motion_blur(img, kernel)
    assert np.allclose(out.data, 0.4, atol=1e-12)


def test_apply_motion_blur_epsilon_noise_is_seeded():
    img = Image.constant(8, 8, 0.5)
    kernel = delta_psf(3)
    a = apply_motion_blur(img, kernel, epsilon_sigma=0.01, seed=1)
    b = apply_motion_blur(img, kernel, epsilon_sigma=0.01, seed=1)
    c = apply_motion_blur(img, kernel, epsilon_sigma=0.01, seed=2)
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)
    with pytest.raises(ValueError):
        apply_motion_blur(img, kernel, epsilon_sigma=-0.1)


# ---------------------------------------------------------------------------
# Sensor noise
# ---------------------------------------------------------------------------


def test_sensor_noise_is_seeded():
    img = Image.constant(16, 16, 0.3)
    a = apply_sensor_noise(img, NoiseParams(gain=100, read_sigma=0.02, seed=9))
    b = apply_sensor_noise(img, NoiseParams(gain=100, read_sigma=0.02, seed=9))
    c = apply_sensor_noise(img, NoiseParams(gain=100, read_sigma=0.02, seed=10))
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)


def test_sensor_noise_vanishes_at_high_gain():
    rng = np.random.default_rng(2)
    img = Image.from_array(rng.uniform(0.1, 0.9, size=(32, 32)))
    out = apply_sensor_noise(img, NoiseParams(gain=1e6, read_sigma=0.0, seed=0))
    assert float(np.abs(out.data - img.data).max()) < 0.01


def test_sensor_noise_moments_track_the_model():
    # mean I, variance I/gain + read_sigma^2 (away from the clamp)
    img = Image.constant(200, 200, 0.25)
    out = apply_sensor_noise(img, NoiseParams(gain=100, read_sigma=0.02, seed=123))
    target_var = 0.25 / 100 + 0.02**2
    assert abs(float(out.data.mean()) - 0.25) < 0.01
    assert abs(float(out.data.var()) - target_var) < 0.15 * target_var


def test_sensor_noise_dark_pixels_stay_dark_without_read_noise():
    img = Image.constant(8, 8, 0.0)
    out = apply_sensor_noise(img, NoiseParams(gain=50, read_sigma=0.0, seed=0))
    assert float(out.data.max()) == 0.0


def test_noise_params_validation():
    with pytest.raises(ValueError):
        NoiseParams(gain=0.0)
    with pytest.raises(ValueError):
        NoiseParams(gain=10.0, read_sigma=-0.1)


# ---------------------------------------------------------------------------
# Surrogate codec
# ---------------------------------------------------------------------------


def test_default_quant_ladder():
    assert DEFAULT_QUANT_STEPS == {1: 64, 2: 32, 3: 21, 4: 16, 5: 13}
    # the ladder is round(64 / B)
    for b, step in DEFAULT_QUANT_STEPS.items():
        assert step == round(64 / b)
    assert quant_step_for_bitrate(3) == 21
    assert quant_step_for_bitrate(5, quant_steps={5: 1}) == 1
    with pytest.raises(ValueError):
        quant_step_for_bitrate(7)
    with pytest.raises(ValueError):
        quant_step_for_bitrate(5, quant_steps={5: 0})


def test_compression_level_validation():
    with pytest.raises(ValueError):
        CompressionLevel(bitrate=0)
    with pytest.raises(ValueError):
        CompressionLevel(bitrate=3, backend="webp")


def test_codec_dc_on_quant_grid_is_preserved():
    # a constant 128/255 block has DC = 128*8 = 1024, a multiple of step 64
    img = Image.constant(16, 16, 128.0 / 255.0)
    out = apply_compression(img, CompressionLevel(1))
    assert np.allclose(out.data, img.data, atol=1e-9)


def test_codec_fine_quantization_is_near_lossless():
    img = smooth_corpus(count=1)[0]
    out = apply_compression(img, CompressionLevel(5), quant_steps={5: 1})
    assert psnr(img, out) > 40.0


def test_codec_coarse_quantization_visibly_damages():
    img = smooth_corpus(count=1, seed=99)[0]
    out = apply_compression(img, CompressionLevel(1))
    assert 10.0 < psnr(img, out) < 45.0


def test_codec_quality_improves_with_bitrate():
    img = smooth_corpus(count=1, seed=3)[0]
    values = [psnr(img, apply_compression(img, CompressionLevel(b))) for b in (1, 3, 5)]
    assert values[0] < values[1] < values[2]


def test_codec_padding_matches_explicit_edge_pad():
    rng = np.random.default_rng(8)
    arr = rng.uniform(0.2, 0.8, size=(10, 13, 1))
    img = Image.from_array(arr)
    padded = Image.from_array(np.pad(arr, ((0, 6), (0, 3), (0, 0)), mode="edge"))
    direct = apply_compression(img, CompressionLevel(2))
    via_pad = apply_compression(padded, CompressionLevel(2))
    assert np.allclose(direct.data, via_pad.data[:10, :13, :], atol=1e-12)


def _write_script(path, body):
    path.write_text("#!/usr/bin/env python3\n" + body)
    path.chmod(path.stat().st_mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)
    return str(path)


_ARG_PARSE = (
    "import sys\n"
    "args = dict(zip(sys.argv[1::2], sys.argv[2::2]))\n"
)


def test_external_codec_roundtrip(tmp_path):
    copy_body = _ARG_PARSE + (
        "data = open(args['-in'], 'rb').read()\n"
        "open(args['-out'], 'wb').write(data)\n"
    )
    encoder = _write_script(tmp_path / "enc.py", copy_body)
    decoder = _write_script(tmp_path / "dec.py", copy_body)
    rng = np.random.default_rng(4)
    img = Image.from_array(rng.integers(0, 256, size=(8, 8, 3)) / 255.0)
    out = apply_compression(
        img, CompressionLevel(3, backend="external"), codec=ExternalCodec(encoder, decoder)
    )
    assert np.array_equal(out.data, img.data)


def test_external_codec_failure_carries_stderr(tmp_path):
    encoder = _write_script(
        tmp_path / "enc.py",
        "import sys\nsys.stderr.write('bitrate knob fell off')\nsys.exit(3)\n",
    )
    decoder = _write_script(tmp_path / "dec.py", _ARG_PARSE)
    img = Image.constant(8, 8, 0.5)
    with pytest.raises(CodecBackendError) as err:
        apply_compression(
            img, CompressionLevel(2, backend="external"), codec=ExternalCodec(encoder, decoder)
        )
    assert "bitrate knob fell off" in str(err.value)
    assert err.value.stderr == "bitrate knob fell off"


def test_external_codec_missing_binary(tmp_path):
    img = Image.constant(8, 8, 0.5)
    codec = ExternalCodec("/nonexistent/encoder", "/nonexistent/decoder")
    with pytest.raises(CodecBackendError, match="cannot launch"):
        apply_compression(img, CompressionLevel(2, backend="external"), codec=codec)


def test_external_codec_shape_change_rejected(tmp_path):
    encoder = _write_script(
        tmp_path / "enc.py",
        _ARG_PARSE + "open(args['-out'], 'wb').write(open(args['-in'], 'rb').read())\n",
    )
    decoder = _write_script(
        tmp_path / "dec.py",
        _ARG_PARSE + "from PIL import Image\nImage.new('RGB', (2, 2)).save(args['-out'])\n",
    )
    img = Image.constant(8, 8, 0.5, channels=3)
    with pytest.raises(CodecBackendError, match="shape"):
        apply_compression(
            img, CompressionLevel(2, backend="external"), codec=ExternalCodec(encoder, decoder)
        )


def test_external_backend_requires_codec():
    with pytest.raises(CodecBackendError):
        apply_compression(Image.constant(8, 8, 0.5), CompressionLevel(2, backend="external"))


# ---------------------------------------------------------------------------
# Corruption schedules
# ---------------------------------------------------------------------------


def test_corruption_masks():
    early = DegradationSchedule("early", length=6, boundary=2)
    assert corruption_mask(early) == [True, True, False, False, False, False]
    late = DegradationSchedule("late", length=6, boundary=2)
    assert corruption_mask(late) == [False, False, True, True, True, True]
    inter = DegradationSchedule("intermittent", length=7, period=3, duty=1)
    assert corruption_mask(inter) == [True, False, False, True, False, False, True]


@settings(max_examples=60, deadline=None)
@given(
    st.integers(1, 60),
    st.integers(2, 12),
    st.integers(1, 11),
)
def test_intermittent_corruption_count_invariant(length, period, duty):
    if duty >= period:
        duty = period - 1
    schedule = DegradationSchedule("intermittent", length=length, period=period, duty=duty)
    count = sum(corruption_mask(schedule))
    assert count == duty * (length // period) + min(duty, length % period)


def test_schedule_validation():
    with pytest.raises(ValueError):
        DegradationSchedule("early", length=6, boundary=0)
    with pytest.raises(ValueError):
        DegradationSchedule("late", length=6, boundary=6)
    with pytest.raises(ValueError):
        DegradationSchedule("intermittent", length=6, period=1, duty=1)
    with pytest.raises(ValueError):
        DegradationSchedule("intermittent", length=6, period=4, duty=4)
    with pytest.raises(ValueError):
        DegradationSchedule("sometimes", length=6)
    with pytest.raises(ValueError):
        DegradationSchedule("early", length=4, boundary=2, severity_overrides=(0.5,))
    with pytest.raises(ValueError):
        DegradationSchedule("early", length=2, boundary=1, severity_overrides=(0.5, 1.5))
    with pytest.raises(ValueError):
        DegradationSchedule("early", length=4, boundary=2, tags=("film_grain",))
    ok = DegradationSchedule("early", length=4, boundary=2, tags=("motion_blur", "banding"))
    assert ok.tags == ("motion_blur", "banding")


def test_degradation_taxonomy_shape():
    assert set(DEGRADATION_TAXONOMY) == {"optical", "sensor", "compression"}
    assert len(ALL_DEGRADATION_TAGS) == 12
    assert set(OPERATOR_FAMILY) == set(ALL_DEGRADATION_TAGS)
    assert set(OPERATOR_FAMILY.values()) == {"psf", "noise", "codec"}


def test_dead_pixel_mask():
    img = Image.constant(4, 4, 0.5, channels=3)
    out = dead_pixel_mask(img, fraction=0.25, seed=1)
    dead_sites = int(np.sum(out.data.sum(axis=2) == 0.0))
    assert dead_sites == 4
    again = dead_pixel_mask(img, fraction=0.25, seed=1)
    assert np.array_equal(out.data, again.data)
    untouched = dead_pixel_mask(img, fraction=0.0, seed=1)
    assert np.array_equal(untouched.data, img.data)
    with pytest.raises(ValueError):
        dead_pixel_mask(img, fraction=1.5)
