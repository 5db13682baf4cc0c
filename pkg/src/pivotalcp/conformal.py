"""Split conformal calibration and prediction-region machinery.

The calibration rule is the classical one: the region threshold is the
``ceil((n+1)(1-alpha))``-th smallest element of the calibration scores
augmented with a ``+inf`` sentinel.  The sentinel is an explicit tagged
value (:attr:`Threshold.value` is ``None``) so it never leaks into float
arithmetic.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import NumericalError, ValidationError
from .scores import ScoreFunction, evaluate_score

log = logging.getLogger(__name__)

TIE_JITTER = 1e-12


@dataclass(frozen=True)
class Threshold:
    """A region threshold; ``value is None`` encodes the +inf sentinel."""

    value: float | None

    @property
    def is_infinite(self) -> bool:
        return self.value is None

    def admits(self, score: float) -> bool:
        return self.value is None or score <= self.value

    def __le__(self, other: "Threshold") -> bool:
        if self.value is None:
            return other.value is None
        return other.value is None or self.value <= other.value


INFINITE = Threshold(None)


def _dejitter_ties(scores: np.ndarray, seed: int = 0) -> np.ndarray:
    """Break exact ties with deterministic seeded jitter of size 1e-12."""
    if np.unique(scores).size == scores.size:
        return scores
    log.info("exact score ties detected; applying jitter of magnitude %g", TIE_JITTER)
    rng = np.random.Generator(np.random.Philox(seed))
    return scores + TIE_JITTER * rng.uniform(-1.0, 1.0, size=scores.size)


@dataclass(frozen=True)
class ConformalCalibrator:
    """Sorted calibration scores plus the empirical quantile rule."""

    calibration_scores: np.ndarray

    def __post_init__(self):
        scores = np.sort(np.asarray(self.calibration_scores, dtype=float))
        if scores.size < 1:
            raise ValidationError("calibration scores must be nonempty")
        if not np.all(np.isfinite(scores)):
            raise NumericalError("calibration scores contain non-finite values")
        scores.setflags(write=False)
        object.__setattr__(self, "calibration_scores", scores)

    @property
    def n(self) -> int:
        return self.calibration_scores.size

    def threshold(self, alpha: float) -> Threshold:
        k = quantile_index(self.n, alpha)
        if k > self.n:
            return INFINITE
        return Threshold(float(self.calibration_scores[k - 1]))


def quantile_index(n: int, alpha: float) -> int:
    """The order-statistic index ``ceil((n+1)(1-alpha))``."""
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    return int(math.ceil((n + 1) * (1.0 - alpha)))


def calibrate(scores, alpha: float, tie_seed: int = 0) -> Threshold:
    """Empirical quantile rule on a set of calibration scores.

    Returns the ``ceil((n+1)(1-alpha))``-th smallest of the scores
    augmented with a +inf sentinel; ties are broken by seeded jitter.
    """
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ValidationError("scores must be nonempty")
    if not np.all(np.isfinite(scores)):
        raise NumericalError("scores contain non-finite values")
    scores = _dejitter_ties(scores, tie_seed)
    return ConformalCalibrator(scores).threshold(alpha)


@dataclass(frozen=True)
class PredictionRegion:
    """The sublevel set ``{y : score(x, y) <= threshold}``."""

    score: ScoreFunction | Callable[[np.ndarray, np.ndarray], float]
    threshold: Threshold
    alpha: float


def region_contains(region: PredictionRegion, x, y) -> bool:
    """Membership test; always true for the +inf sentinel threshold."""
    if region.threshold.is_infinite:
        return True
    if isinstance(region.score, ScoreFunction):
        s = evaluate_score(region.score, x, y)
    else:
        s = float(region.score(np.asarray(x, float), np.asarray(y, float)))
    return region.threshold.admits(s)


def interval_from_threshold(region: PredictionRegion, x) -> list[tuple[float, float]]:
    """Extract the 1-D region as a list of disjoint intervals.

    Supports the base kinds with obvious sublevel geometry; corrected
    scores are handled by the pipeline layer, which maps the threshold
    back to base-score space first.
    """
    if not isinstance(region.score, ScoreFunction):
        raise ValidationError(
            "interval extraction requires a ScoreFunction; use the pipeline "
            "helpers for corrected scores"
        )
    f = region.score
    if f.kind not in ("absolute_residual", "raw_response"):
        raise ValidationError(f"no interval extraction for score kind {f.kind!r}")
    x = np.asarray(x, dtype=float).reshape(-1)
    center = 0.0
    if f.predictor is not None:
        center = float(np.asarray(f.predictor(x), dtype=float).reshape(-1)[0])

    if region.threshold.is_infinite:
        return [(-math.inf, math.inf)]
    t = region.threshold.value
    if f.kind == "absolute_residual":
        if t < 0:
            return []
        return [(center - t, center + t)]
    return [(-math.inf, center + t)]


def marginal_coverage_trial(
    dgp: Callable[[np.random.Generator, int], np.ndarray],
    n: int,
    alpha: float,
    repetitions: int,
    seed: int,
) -> float:
    """Monte-Carlo estimate of marginal coverage of the quantile rule.

    ``dgp(rng, m)`` must return ``m`` i.i.d. draws of the score.  Each
    repetition draws a fresh calibration set of size ``n`` plus one test
    score and checks membership.  Deterministic for a fixed seed.
    """
    if repetitions < 1:
        raise ValidationError("repetitions must be >= 1")
    k = quantile_index(n, alpha)
    rng = np.random.Generator(np.random.Philox(seed))
    hits = 0
    for _ in range(repetitions):
        draws = np.asarray(dgp(rng, n + 1), dtype=float)
        cal, test = draws[:n], draws[n]
        if k > n:
            hits += 1
        else:
            hits += test <= np.partition(cal, k - 1)[k - 1]
    return hits / repetitions
