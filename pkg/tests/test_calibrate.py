import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from degradebench import (
    CalibratorConfig,
    DifficultyCalibrator,
    FeedbackWindow,
    PerformanceFeedback,
    map_to_params,
    next_severity,
    replay_trail,
)

unit = st.floats(0.0, 1.0, allow_nan=False)


def test_severity_worked_example():
    config = CalibratorConfig(alpha=0.5, beta=0.5)
    fb = PerformanceFeedback(accuracy=0.3, hallucination=0.5)
    assert next_severity(config, fb) == 0.5 * 0.3 + 0.5 * 0.5
    assert next_severity(config, fb) == pytest.approx(0.4, abs=0)


def test_severity_clamps_both_ends():
    high = CalibratorConfig(alpha=2.0, beta=2.0)
    assert next_severity(high, PerformanceFeedback(1.0, 1.0)) == 1.0
    flat = CalibratorConfig(alpha=0.0, beta=0.0)
    assert next_severity(flat, PerformanceFeedback(1.0, 1.0)) == 0.0


def test_severity_polarity_modes():
    direct = CalibratorConfig(alpha=1.0, beta=0.0, accuracy_polarity="direct")
    inverted = CalibratorConfig(alpha=1.0, beta=0.0, accuracy_polarity="inverted")
    fb = PerformanceFeedback(accuracy=0.8, hallucination=0.0)
    assert next_severity(direct, fb) == 0.8
    assert next_severity(inverted, fb) == 1.0 - 0.8


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 3, allow_nan=False), st.floats(0, 3, allow_nan=False), unit, unit)
def test_severity_equals_clamp_oracle_bitwise(alpha, beta, acc, hall):
    config = CalibratorConfig(alpha=alpha, beta=beta)
    got = next_severity(config, PerformanceFeedback(acc, hall))
    want = min(max(alpha * acc + beta * hall, 0.0), 1.0)
    assert got == want  # exact float equality, not approx
    assert 0.0 <= got <= 1.0


def test_transfer_endpoints_and_midpoint():
    config = CalibratorConfig()
    lo = map_to_params(config, 0.0)
    assert (lo.motion_sigma, lo.gain, lo.bitrate) == (0.0, 50.0, 5)
    hi = map_to_params(config, 1.0)
    assert (hi.motion_sigma, hi.gain, hi.bitrate) == (6.0, 400.0, 1)
    mid = map_to_params(config, 0.5)
    assert (mid.motion_sigma, mid.gain, mid.bitrate) == (3.0, 225.0, 3)
    with pytest.raises(ValueError):
        map_to_params(config, 1.1)


def test_transfer_monotonicity_over_sweep():
    config = CalibratorConfig()
    params = [map_to_params(config, i / 100) for i in range(101)]
    for a, b in zip(params, params[1:]):
        assert b.motion_sigma >= a.motion_sigma
        assert b.gain >= a.gain
        assert b.bitrate <= a.bitrate
    assert {p.bitrate for p in params} == {1, 2, 3, 4, 5}


def test_config_validation():
    with pytest.raises(ValueError):
        CalibratorConfig(alpha=-0.1)
    with pytest.raises(ValueError):
        CalibratorConfig(motion_sigma_range=(4.0, 2.0))
    with pytest.raises(ValueError):
        CalibratorConfig(gain_range=(0.0, 100.0))
    with pytest.raises(ValueError):
        CalibratorConfig(motion_sigma_range=(-1.0, 2.0))
    with pytest.raises(ValueError):
        CalibratorConfig(severity_init=1.5)
    with pytest.raises(ValueError):
        CalibratorConfig(accuracy_polarity="sideways")
    with pytest.raises(ValueError):
        CalibratorConfig(window=0)


def test_calibrator_trail_and_replay():
    config = CalibratorConfig(alpha=0.6, beta=0.4, severity_init=0.2)
    calibrator = DifficultyCalibrator(config)
    severity, params = calibrator.step()
    assert severity == 0.2
    assert params.bitrate == map_to_params(config, 0.2).bitrate
    calibrator.step(PerformanceFeedback(1.0, 0.0))
    calibrator.step(PerformanceFeedback(0.0, 1.0))
    recorded = [entry["severity"] for entry in calibrator.trail]
    assert recorded == [0.2, 0.6, 0.4]
    assert [entry["t"] for entry in calibrator.trail] == [0, 1, 2]
    # the trail is enough to reproduce the whole severity trace
    assert replay_trail(config, calibrator.trail) == recorded


def test_feedback_window_rolls():
    window = FeedbackWindow(size=3)
    assert window.feedback() is None
    window.push(True)
    fb = window.feedback()
    assert (fb.accuracy, fb.hallucination) == (1.0, 0.0)
    window.push(False)
    window.push(False)
    fb = window.feedback()
    assert fb.accuracy == pytest.approx(1 / 3)
    assert fb.hallucination == pytest.approx(2 / 3)
    window.push(True)  # evicts the first True
    fb = window.feedback()
    assert fb.accuracy == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        FeedbackWindow(size=0)


def test_feedback_validation():
    with pytest.raises(ValueError):
        PerformanceFeedback(accuracy=1.2, hallucination=0.0)
    with pytest.raises(ValueError):
        PerformanceFeedback(accuracy=0.5, hallucination=-0.1)
