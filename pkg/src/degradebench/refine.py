"""Uncertainty-filtered pseudo-labeling through perturbed ensembles.

A perturbable model is queried several times per item under varied input
noise, decoding dropout and seeds. Disagreement across the ensemble is
measured as mean pairwise Jensen-Shannon divergence of the answer
distributions; feature vectors are aggregated robustly with the
Hodges-Lehmann estimator, whose dispersion feeds an adaptive dropout rate.
Items whose divergence stays at or above the retention threshold are
rejected instead of being written as ground truth, and rejection can repeat
for several refinement rounds with increasingly aggressive perturbation.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .seeds import child_seed

LN2 = math.log(2.0)


class EnsembleError(RuntimeError):
    """A model call inside an ensemble round failed."""

    def __init__(self, round_index: int, run_index: int, cause: Exception):
        super().__init__(f"round {round_index}, run {run_index} failed: {cause}")
        self.round_index = round_index
        self.run_index = run_index
        self.cause = cause


@dataclass(frozen=True, eq=False)
class InferenceRun:
    """One perturbed model pass: answer, answer distribution, features."""

    answer: str
    dist: dict
    features: np.ndarray
    noise_level: float
    dropout_rate: float
    seed: int

    def __post_init__(self) -> None:
        dist = {str(k): float(v) for k, v in dict(self.dist).items()}
        if not dist:
            raise ValueError("answer distribution must be non-empty")
        if any(v < 0 for v in dist.values()):
            raise ValueError("answer probabilities must be >= 0")
        total = sum(dist.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"answer probabilities must sum to 1 within 1e-9, got {total}")
        object.__setattr__(self, "dist", dist)
        features = np.asarray(self.features, dtype=np.float64).ravel()
        if not np.isfinite(features).all():
            raise ValueError("features must be finite")
        object.__setattr__(self, "features", features)


@dataclass(frozen=True)
class EnsembleConfig:
    """Ensemble size, perturbation schedule and retention threshold."""

    runs: int = 5
    base_dropout: float = 0.1
    gain: float = 1.0
    hl_weight: float = 1.0
    threshold: float = 0.15
    max_rounds: int = 3
    noise_grid: tuple = (0.0, 0.25, 0.5)
    max_dropout: float = 0.9

    def __post_init__(self) -> None:
        if self.runs < 2:
            raise ValueError(f"need at least 2 runs, got {self.runs}")
        if not (0.0 <= self.base_dropout < 1.0):
            raise ValueError(f"base_dropout must be in [0, 1), got {self.base_dropout}")
        if self.gain < 0 or self.hl_weight < 0:
            raise ValueError("gain and hl_weight must be >= 0")
        if self.threshold <= 0:
            raise ValueError(f"threshold must be > 0, got {self.threshold}")
        if self.max_rounds < 1:
            raise ValueError(f"max_rounds must be >= 1, got {self.max_rounds}")
        grid = tuple(float(v) for v in self.noise_grid)
        if not grid:
            raise ValueError("noise_grid must be non-empty")
        object.__setattr__(self, "noise_grid", grid)
        if not (0.0 < self.max_dropout < 1.0):
            raise ValueError(f"max_dropout must be in (0, 1), got {self.max_dropout}")


@dataclass(frozen=True, eq=False)
class UncertaintyReport:
    """Ensemble disagreement summary for one refinement round."""

    js: float
    var_hl: float
    delta_l: float
    pairwise: np.ndarray

    def __post_init__(self) -> None:
        if self.js < 0 or self.var_hl < 0:
            raise ValueError("uncertainty components must be >= 0")


@dataclass(frozen=True, eq=False)
class PseudoLabel:
    """Outcome of refining one item."""

    answer: str
    retained: bool
    rounds_used: int
    report: UncertaintyReport


def js_divergence(p, q) -> float:
    """Jensen-Shannon divergence in nats between two probability vectors.

    Defined against the midpoint mixture m = (p + q) / 2 with the convention
    0 * log(0/x) = 0. Symmetric and bounded by log 2; the return value is
    clamped into [0, log 2] to absorb float round-off at the extremes.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.ndim != 1 or q.ndim != 1 or p.shape != q.shape:
        raise ValueError(f"need two equal-length 1D vectors, got {p.shape} and {q.shape}")
    for name, vec in (("p", p), ("q", q)):
        if (vec < -1e-12).any():
            raise ValueError(f"{name} has negative entries")
        if abs(float(vec.sum()) - 1.0) > 1e-6:
            raise ValueError(f"{name} must sum to 1 within 1e-6, got {float(vec.sum())}")
    m = 0.5 * (p + q)

    def _kl(a: np.ndarray) -> float:
        mask = a > 0
        return float(np.sum(a[mask] * np.log(a[mask] / m[mask])))

    value = 0.5 * _kl(p) + 0.5 * _kl(q)
    return min(max(value, 0.0), LN2)


def _align_distributions(runs) -> np.ndarray:
    """Project the runs' answer distributions onto one shared answer space."""
    space = sorted(set().union(*(run.dist.keys() for run in runs)))
    return np.array([[run.dist.get(a, 0.0) for a in space] for run in runs])


def ensemble_uncertainty(runs) -> float:
    """Mean pairwise Jensen-Shannon divergence across ensemble runs."""
    if len(runs) < 2:
        raise ValueError(f"ensemble uncertainty needs >= 2 runs, got {len(runs)}")
    aligned = _align_distributions(runs)
    n = aligned.shape[0]
    total = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            total += js_divergence(aligned[i], aligned[j])
    return total * 2.0 / (n * (n - 1))


def _as_matrix(vectors) -> np.ndarray:
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"expected a (K, d) stack of vectors, got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise ValueError(f"need at least 2 vectors, got {arr.shape[0]}")
    if not np.isfinite(arr).all():
        raise ValueError("vectors must be finite")
    return arr


def hl_estimate(vectors) -> np.ndarray | float:
    """Hodges-Lehmann location estimate: median of strict-pair midpoints.

    Midpoints (h_i + h_j) / 2 are formed for every pair i < j and the median
    is taken coordinatewise (mean of the two central values for even
    counts). Far more outlier-resistant than the mean: a single wild run
    shifts the estimate only as far as the midpoint lattice allows.
    Scalar input (a flat list of numbers) returns a scalar.
    """
    scalar = np.asarray(vectors).ndim == 1
    arr = _as_matrix(vectors)
    k = arr.shape[0]
    idx_i, idx_j = np.triu_indices(k, k=1)
    midpoints = 0.5 * (arr[idx_i] + arr[idx_j])
    est = np.median(midpoints, axis=0)
    return float(est[0]) if scalar else est


def hl_dispersion(vectors, estimate) -> float:
    """Mean squared distance to the location estimate, per coordinate."""
    scalar = np.asarray(vectors).ndim == 1
    arr = _as_matrix(vectors)
    est = np.asarray(estimate, dtype=np.float64).ravel() if not scalar else np.array([float(estimate)])
    if est.shape[0] != arr.shape[1]:
        raise ValueError(f"estimate width {est.shape[0]} does not match vectors {arr.shape[1]}")
    sq = np.sum((arr - est[None, :]) ** 2, axis=1)
    return float(np.mean(sq) / arr.shape[1])


def assess_ensemble(runs, hl_weight: float = 1.0) -> UncertaintyReport:
    """Score an ensemble: divergence, robust feature dispersion, combined."""
    if len(runs) < 2:
        raise ValueError(f"need >= 2 runs, got {len(runs)}")
    widths = {run.features.shape[0] for run in runs}
    if len(widths) != 1:
        raise ValueError(f"feature widths differ across runs: {sorted(widths)}")
    aligned = _align_distributions(runs)
    n = aligned.shape[0]
    pairwise = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = js_divergence(aligned[i], aligned[j])
            pairwise[i, j] = pairwise[j, i] = d
    js = float(pairwise[np.triu_indices(n, k=1)].mean())
    features = np.stack([run.features for run in runs])
    if features.shape[1] == 0:
        var_hl = 0.0
    else:
        var_hl = hl_dispersion(features, hl_estimate(features))
    return UncertaintyReport(js=js, var_hl=var_hl, delta_l=js + hl_weight * var_hl, pairwise=pairwise)


def adapt_dropout(config: EnsembleConfig, report: UncertaintyReport) -> float:
    """Raise decoding dropout with combined uncertainty, capped below 1."""
    raw = config.base_dropout + config.gain * report.delta_l
    return min(max(raw, 0.0), config.max_dropout)


def consensus_answer(runs) -> str:
    """Most common answer; ties go to the answer of the lowest-seed run."""
    counts = Counter(run.answer for run in runs)
    best = max(counts.values())
    tied = {a for a, c in counts.items() if c == best}
    return min(
        (run for run in runs if run.answer in tied),
        key=lambda run: run.seed,
    ).answer


def refine_loop(model, image, query: str, config: EnsembleConfig, seed: int = 0) -> PseudoLabel:
    """Run perturbed ensembles until agreement or the round budget runs out.

    Each round issues ``config.runs`` model calls cycling through the noise
    grid at the current dropout rate, with per-run seeds derived from
    (seed, round, run). The item is retained exactly when the final round's
    divergence falls strictly below the threshold; otherwise dropout is
    adapted upward and the ensemble is re-queried.
    """
    dropout = config.base_dropout
    report = None
    runs: list = []
    for round_index in range(1, config.max_rounds + 1):
        runs = []
        for i in range(config.runs):
            run_seed = child_seed(seed, "round", round_index, "run", i)
            noise = config.noise_grid[i % len(config.noise_grid)]
            try:
                run = model.infer(
                    image, query, noise_level=noise, dropout_rate=dropout, seed=run_seed
                )
            except Exception as exc:
                raise EnsembleError(round_index, i, exc) from exc
            runs.append(run)
        report = assess_ensemble(runs, config.hl_weight)
        if report.js < config.threshold:
            return PseudoLabel(consensus_answer(runs), True, round_index, report)
        dropout = adapt_dropout(config, report)
    return PseudoLabel(consensus_answer(runs), False, config.max_rounds, report)


def tune_threshold(js_scores, hallucinated, grid=None):
    """Sweep retention thresholds, maximizing F1 of hallucination rejection.

    ``js_scores`` are per-item divergences, ``hallucinated`` the matching
    ground-truth flags. An item is predicted hallucinated when its score is
    at or above the candidate threshold. Returns (best_threshold, best_f1);
    ties keep the smallest threshold.
    """
    scores = np.asarray(js_scores, dtype=np.float64)
    labels = np.asarray(hallucinated, dtype=bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length 1D arrays")
    if scores.size == 0:
        raise ValueError("cannot tune a threshold on an empty set")
    if grid is None:
        grid = np.linspace(0.01, LN2, 70)
    best_tau = float(grid[0])
    best_f1 = -1.0
    for tau in grid:
        predicted = scores >= tau
        tp = int(np.sum(predicted & labels))
        fp = int(np.sum(predicted & ~labels))
        fn = int(np.sum(~predicted & labels))
        if tp == 0:
            f1 = 0.0
        else:
            precision = tp / (tp + fp)
            recall = tp / (tp + fn)
            f1 = 2 * precision * recall / (precision + recall)
        if f1 > best_f1 + 1e-12:
            best_f1 = f1
            best_tau = float(tau)
    return best_tau, best_f1
