"""Closed-loop difficulty control.

Each turn the controller folds the model's recent performance into a scalar
severity in [0, 1], then maps severity onto concrete degradation parameters
through fixed affine transfers. Strong recent performance pushes severity up;
so does a high hallucination fraction, which keeps pressure on a model that
is confidently wrong.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

POLARITY_MODES = ("direct", "inverted")


@dataclass(frozen=True)
class PerformanceFeedback:
    """Windowed judgment summary: fractions over recent judged turns."""

    accuracy: float
    hallucination: float

    def __post_init__(self) -> None:
        for name, value in (("accuracy", self.accuracy), ("hallucination", self.hallucination)):
            if not (0.0 <= value <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {value}")


@dataclass(frozen=True)
class DegradationParams:
    """Concrete per-frame degradation settings produced by the controller."""

    motion_sigma: float
    gain: float
    bitrate: int


@dataclass(frozen=True)
class CalibratorConfig:
    """Severity update weights and severity-to-parameter transfer ranges.

    ``accuracy_polarity`` selects how the accuracy term enters the update:
    "direct" raises severity when recent accuracy is high (ratchet the
    difficulty up while the model copes), "inverted" raises severity as
    accuracy falls. Both are clamped to [0, 1] either way.
    """

    alpha: float = 0.5
    beta: float = 0.5
    motion_sigma_range: tuple = (0.0, 6.0)
    gain_range: tuple = (50.0, 400.0)
    severity_init: float = 0.0
    accuracy_polarity: str = "direct"
    window: int = 1

    def __post_init__(self) -> None:
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        for name, rng in (("motion_sigma_range", self.motion_sigma_range), ("gain_range", self.gain_range)):
            lo, hi = rng
            if lo > hi:
                raise ValueError(f"{name} must have min <= max, got {rng}")
        if self.gain_range[0] <= 0:
            raise ValueError("gain range must be positive")
        if self.motion_sigma_range[0] < 0:
            raise ValueError("motion sigma range must be non-negative")
        if not (0.0 <= self.severity_init <= 1.0):
            raise ValueError(f"severity_init must be in [0, 1], got {self.severity_init}")
        if self.accuracy_polarity not in POLARITY_MODES:
            raise ValueError(f"accuracy_polarity must be one of {POLARITY_MODES}")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")


def next_severity(config: CalibratorConfig, feedback: PerformanceFeedback) -> float:
    """Severity update: clamp(alpha * accuracy_term + beta * hallucination, 0, 1)."""
    if config.accuracy_polarity == "direct":
        accuracy_term = feedback.accuracy
    else:
        accuracy_term = 1.0 - feedback.accuracy
    raw = config.alpha * accuracy_term + config.beta * feedback.hallucination
    return min(max(raw, 0.0), 1.0)


def map_to_params(config: CalibratorConfig, severity: float) -> DegradationParams:
    """Affine severity-to-parameter transfers.

    Motion extent and sensor gain interpolate linearly across their ranges;
    the bitrate level steps down from 5 (severity 0) to 1 (severity 1).
    """
    if not (0.0 <= severity <= 1.0):
        raise ValueError(f"severity must be in [0, 1], got {severity}")
    m_lo, m_hi = config.motion_sigma_range
    g_lo, g_hi = config.gain_range
    motion = m_lo + severity * (m_hi - m_lo)
    gain = g_lo + severity * (g_hi - g_lo)
    bitrate = int(round(5.0 - 4.0 * severity))
    bitrate = min(max(bitrate, 1), 5)
    return DegradationParams(motion_sigma=motion, gain=gain, bitrate=bitrate)


class DifficultyCalibrator:
    """Sequential severity controller for one episode.

    Keeps an audit trail of (t, accuracy, hallucination, severity) so a run
    can be replayed and verified after the fact.
    """

    def __init__(self, config: CalibratorConfig):
        self.config = config
        self.trail: list = []
        self._t = 0

    def step(self, feedback: PerformanceFeedback | None = None):
        """Advance one turn; no feedback (first turn) holds severity_init."""
        if feedback is None:
            severity = self.config.severity_init
            accuracy = hallucination = None
        else:
            severity = next_severity(self.config, feedback)
            accuracy = feedback.accuracy
            hallucination = feedback.hallucination
        self.trail.append(
            {
                "t": self._t,
                "accuracy": accuracy,
                "hallucination": hallucination,
                "severity": severity,
            }
        )
        self._t += 1
        return severity, map_to_params(self.config, severity)


def replay_trail(config: CalibratorConfig, trail) -> list:
    """Recompute the severity trace from recorded feedback values.

    Returns the recomputed severities; equality with the recorded ones is
    the determinism check.
    """
    severities = []
    for entry in trail:
        if entry["accuracy"] is None:
            severities.append(config.severity_init)
        else:
            fb = PerformanceFeedback(entry["accuracy"], entry["hallucination"])
            severities.append(next_severity(config, fb))
    return severities


class FeedbackWindow:
    """Rolling window over judged turns feeding the calibrator."""

    def __init__(self, size: int = 1):
        if size < 1:
            raise ValueError(f"window size must be >= 1, got {size}")
        self._window = deque(maxlen=size)

    def push(self, valid: bool) -> None:
        self._window.append(bool(valid))

    def feedback(self) -> PerformanceFeedback | None:
        if not self._window:
            return None
        n = len(self._window)
        good = sum(self._window)
        return PerformanceFeedback(accuracy=good / n, hallucination=(n - good) / n)
