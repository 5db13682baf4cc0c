"""Evaluation metrics: KS distances, coverage-gap estimators, k-means
binning, forward KL by quadrature, and Monte-Carlo HPD volume.

The region-provider convention used throughout: a callable
``regions(test, alpha) -> bool array`` returning per-point membership
indicators at miscoverage level ``alpha``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import NumericalError, ValidationError

# ---------------------------------------------------------------------------
# Kolmogorov-Smirnov distances


def ks_distance_functions(F, G, grid: Sequence[float], tol: float = 1e-4,
                          max_points: int = 2**16) -> float:
    """Sup-distance between two CDF evaluators over a refined grid.

    Starts from the given sorted grid's range and doubles the resolution
    until the supremum changes by less than ``tol`` or the grid exceeds
    ``max_points``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValidationError("grid must be nonempty")
    lo, hi = float(grid[0]), float(grid[-1])
    Fv = np.vectorize(F, otypes=[float])
    Gv = np.vectorize(G, otypes=[float])

    sup = float(np.max(np.abs(Fv(grid) - Gv(grid))))
    n = max(grid.size, 2)
    while n <= max_points:
        n *= 2
        t = np.linspace(lo, hi, n)
        new = float(np.max(np.abs(Fv(t) - Gv(t))))
        if abs(new - sup) < tol:
            return max(new, sup)
        sup = max(new, sup)
    return sup


def ks_distance_sample_vs_uniform(samples: Sequence[float]) -> float:
    """One-sample KS statistic against Unif(0, 1), exact at jump points."""
    s = np.sort(np.asarray(samples, dtype=float))
    if s.size == 0:
        raise ValidationError("samples must be nonempty")
    n = s.size
    i = np.arange(1, n + 1)
    return float(np.max(np.maximum(i / n - s, s - (i - 1) / n)))


# critical values D_crit(n) ~ c(level) / sqrt(n) for the one-sample test
_KS_CRIT = {0.10: 1.224, 0.05: 1.358, 0.01: 1.628}


def ks_uniform_test_passes(samples, level: float = 0.01) -> bool:
    """Large-sample one-sample KS test of uniformity on (0, 1)."""
    if level not in _KS_CRIT:
        raise ValidationError(f"no critical value tabulated for level {level}")
    n = len(samples)
    return ks_distance_sample_vs_uniform(samples) <= _KS_CRIT[level] / math.sqrt(n)


# ---------------------------------------------------------------------------
# K-means binning


@dataclass(frozen=True)
class KmeansModel:
    """Seeded k-means fit on standardized features.

    ``centers`` are reported in original units; assignment standardizes
    with the stored per-coordinate mean and deviation first.
    """

    centers: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    def assign(self, points: np.ndarray) -> np.ndarray:
        Z = (np.atleast_2d(points) - self.mean) / self.std
        C = (self.centers - self.mean) / self.std
        d2 = ((Z[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
        # ties broken toward the lowest center index by argmin
        return d2.argmin(axis=1)


def kmeans_fit(points: np.ndarray, K: int, seed: int) -> KmeansModel:
    """k-means++ initialization plus Lloyd iterations to a fixpoint."""
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    n_distinct = np.unique(P, axis=0).shape[0]
    if K > n_distinct:
        raise ValidationError(
            f"K = {K} exceeds the number of distinct points ({n_distinct})"
        )
    mean = P.mean(axis=0)
    std = P.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    Z = (P - mean) / std

    rng = np.random.Generator(np.random.Philox(seed))
    # k-means++ seeding
    centers = [Z[rng.integers(len(Z))]]
    for _ in range(1, K):
        d2 = np.min(((Z[:, None, :] - np.array(centers)[None]) ** 2).sum(axis=2),
                    axis=1)
        total = d2.sum()
        if total <= 0:
            probs = np.full(len(Z), 1.0 / len(Z))
        else:
            probs = d2 / total
        centers.append(Z[rng.choice(len(Z), p=probs)])
    C = np.array(centers)

    assign = None
    for _ in range(100):
        d2 = ((Z[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(K):
            mask = assign == j
            if np.any(mask):
                C[j] = Z[mask].mean(axis=0)
    return KmeansModel(mean + std * C, mean, std)


# ---------------------------------------------------------------------------
# Conditional coverage gap metrics


@dataclass(frozen=True)
class GapReport:
    """Per-bin empirical coverages plus peak-to-peak gap and MAE."""

    per_bin: tuple  # (bin id, count, coverage) triples
    gap: float
    mae: float
    alpha: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "alpha": self.alpha,
                "gap": self.gap,
                "mae": self.mae,
                "bins": [
                    {"bin": int(b), "count": int(c), "coverage": cov}
                    for b, c, cov in self.per_bin
                ],
            }
        )

    def rows(self) -> list[tuple]:
        """Flat rows ``(alpha, bin, count, coverage, gap, mae)`` for CSV."""
        return [
            (self.alpha, int(b), int(c), cov, self.gap, self.mae)
            for b, c, cov in self.per_bin
        ]


def _bin_assignments(bins, features: np.ndarray) -> np.ndarray:
    if isinstance(bins, KmeansModel):
        return bins.assign(features)
    return np.asarray(bins, dtype=int)


def _per_bin_coverage(cov: np.ndarray, assign: np.ndarray):
    ids = np.unique(assign)
    counts = []
    coverages = []
    for b in ids:
        mask = assign == b
        if not np.any(mask):
            raise ValidationError(f"bin {b} is empty")
        counts.append(int(mask.sum()))
        coverages.append(float(cov[mask].mean()))
    return ids, np.array(counts), np.array(coverages)


def conditional_gap_mae(regions, test, bins, alpha: float) -> GapReport:
    """Peak-to-peak gap and count-weighted MAE of per-bin coverage."""
    cov = np.asarray(regions(test, alpha), dtype=float)
    assign = _bin_assignments(bins, test.features)
    if assign.size != cov.size:
        raise ValidationError("bin assignments and indicators disagree in length")
    k = getattr(bins, "k", None)
    if k is not None and np.unique(assign).size < k:
        missing = sorted(set(range(k)) - set(np.unique(assign)))
        raise ValidationError(f"empty bin(s) {missing}")
    ids, counts, coverages = _per_bin_coverage(cov, assign)
    overall = float(cov.mean())
    gap = float(coverages.max() - coverages.min())
    mae = float(np.sum(counts * np.abs(coverages - overall)) / counts.sum())
    per_bin = tuple(zip(ids.tolist(), counts.tolist(), coverages.tolist()))
    return GapReport(per_bin, gap, mae, alpha)


def l1_gap_over_grid(regions, test, bins, alpha_grid) -> float:
    """Empirical L1 coverage gap: per-bin max deviation over the alpha
    grid, count-weighted average over bins."""
    alpha_grid = np.asarray(alpha_grid, dtype=float)
    if np.any((alpha_grid <= 0) | (alpha_grid >= 1)):
        raise ValidationError("alpha grid must lie in (0, 1)")
    assign = _bin_assignments(bins, test.features)
    ids = np.unique(assign)
    counts = np.array([(assign == b).sum() for b in ids])

    max_dev = np.zeros(ids.size)
    for alpha in alpha_grid:
        cov = np.asarray(regions(test, float(alpha)), dtype=float)
        overall = cov.mean()
        dev = np.array([abs(cov[assign == b].mean() - overall) for b in ids])
        max_dev = np.maximum(max_dev, dev)
    return float(np.sum(counts * max_dev) / counts.sum())


# ---------------------------------------------------------------------------
# Forward KL by adaptive quadrature


def forward_kl_1d(p, q, support: tuple[float, float], tol: float = 1e-4,
                  max_points: int = 2**18) -> float:
    """Trapezoid quadrature of ``p log(p/q)`` with doubling refinement."""
    lo, hi = float(support[0]), float(support[1])
    if not hi > lo:
        raise ValidationError("empty support interval")
    pv = np.vectorize(p, otypes=[float])
    qv = np.vectorize(q, otypes=[float])

    def integrand(t):
        pt = pv(t)
        qt = qv(t)
        if np.any(pt < 0) or np.any(qt < 0):
            raise NumericalError("negative density encountered")
        out = np.zeros_like(pt)
        mask = pt > 0
        out[mask] = pt[mask] * (np.log(pt[mask]) - np.log(np.maximum(qt[mask],
                                                                     1e-300)))
        return out

    n = 1024
    prev = float(np.trapezoid(integrand(np.linspace(lo, hi, n)),
                              np.linspace(lo, hi, n)))
    while n <= max_points:
        n *= 2
        t = np.linspace(lo, hi, n)
        cur = float(np.trapezoid(integrand(t), t))
        if abs(cur - prev) < tol:
            return max(cur, 0.0)
        prev = cur
    return max(prev, 0.0)


# ---------------------------------------------------------------------------
# Monte-Carlo HPD volume


def hpd_volume_mc(sampler, pdf, x, tau: float, B: int, seed: int):
    """Highest-predictive-density region volume by importance counting.

    ``sampler(rng, x, B)`` draws from the conditional density at ``x``
    and ``pdf(x, Y)`` evaluates it.  Returns ``(volume, standard_error)``
    of the Monte-Carlo mean of ``1{pdf >= tau} / pdf``.
    """
    if tau <= 0:
        raise ValidationError("tau must be positive")
    if B < 1:
        raise ValidationError("B must be >= 1")
    if sampler is None:
        raise ValidationError("density sampler unavailable")
    rng = np.random.Generator(np.random.Philox(seed))
    Y = sampler(rng, x, B)
    dens = np.asarray(pdf(x, Y), dtype=float)
    if np.any(dens <= 0):
        raise NumericalError("sampled point with nonpositive density")
    ratio = np.where(dens >= tau, 1.0 / dens, 0.0)
    vol = float(ratio.mean())
    stderr = float(ratio.std(ddof=1) / math.sqrt(B)) if B > 1 else float("inf")
    return vol, stderr


# ---------------------------------------------------------------------------
# Oracle inclusion check


def oracle_inclusion_check(
    pipe_factory: Callable[[np.random.Generator], "object"],
    oracle,
    alpha: float,
    delta: float,
    test_xs,
    resamples: int = 500,
    seed: int = 0,
    dks_fn: Callable[[np.ndarray], float] | None = None,
) -> float:
    """Fraction of calibration resamples violating the oracle inclusions.

    For each resampled pipeline the corrected threshold is mapped back
    to base-score space at every ``x`` and compared against the oracle
    quantiles at levels ``1 - alpha -/+ L(x, n, delta)`` with
    ``L = d_KS + sqrt(log(2/delta) / 2n) + 2/n`` (levels truncated to
    [0, 1], the boundary levels giving unbounded quantiles).
    """
    if not 0.0 < delta < 1.0:
        raise ValidationError("delta must lie in (0, 1)")
    rng = np.random.Generator(np.random.Philox([seed, 0x0C1]))
    violations = 0
    for _ in range(resamples):
        pipe = pipe_factory(rng)
        n = pipe.n
        slack = math.sqrt(math.log(2.0 / delta) / (2.0 * n)) + 2.0 / n
        bad = False
        for x in test_xs:
            L = slack + (0.0 if dks_fn is None else float(dks_fn(x)))
            level_lo = 1.0 - alpha - L
            level_hi = 1.0 - alpha + L
            b = pipe.base_threshold(x, alpha)
            b = math.inf if b is None else b
            q_lo = -math.inf if level_lo <= 0.0 else (
                math.inf if level_lo >= 1.0 else oracle.inverse_cdf(x, level_lo)
            )
            q_hi = -math.inf if level_hi <= 0.0 else (
                math.inf if level_hi >= 1.0 else oracle.inverse_cdf(x, level_hi)
            )
            if b < q_lo or b > q_hi:
                bad = True
                break
        violations += bad
    return violations / resamples
