import math

import numpy as np
import pytest

from pivotalcp.conformal import (
    ConformalCalibrator,
    PredictionRegion,
    Threshold,
    calibrate,
    interval_from_threshold,
    marginal_coverage_trial,
    quantile_index,
    region_contains,
)
from pivotalcp.errors import NumericalError, ValidationError
from pivotalcp.scores import ScoreFunction


class TestCalibrate:
    def test_ceiling_rule_midpoint(self):
        # n=4, alpha=0.5: k = ceil(2.5) = 3 -> third smallest
        assert calibrate([1, 2, 3, 4], 0.5).value == 3.0

    def test_sentinel_when_k_exceeds_n(self):
        # n=4, alpha=0.1: k = 5 > 4 -> +inf sentinel
        thr = calibrate([1, 2, 3, 4], 0.1)
        assert thr.is_infinite and thr.value is None

    def test_single_score(self):
        # n=1, alpha=0.6: k = ceil(0.8) = 1 -> the score itself
        assert calibrate([5], 0.6).value == 5.0

    def test_permutation_invariance(self):
        rng = np.random.Generator(np.random.Philox(0))
        scores = rng.normal(size=50)
        for alpha in (0.1, 0.37, 0.9):
            a = calibrate(scores, alpha)
            b = calibrate(rng.permutation(scores), alpha)
            assert a.value == b.value

    def test_alpha_validation(self):
        for alpha in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(ValidationError):
                calibrate([1.0], alpha)

    def test_empty_and_nonfinite(self):
        with pytest.raises(ValidationError):
            calibrate([], 0.5)
        with pytest.raises(NumericalError):
            calibrate([1.0, np.inf], 0.5)

    def test_ties_jittered_not_crashing(self):
        thr = calibrate([1.0, 1.0, 1.0, 2.0], 0.5)
        assert thr.value == pytest.approx(1.0, abs=1e-9)


class TestThreshold:
    def test_sentinel_is_tagged_not_float(self):
        thr = Threshold(None)
        assert thr.is_infinite
        assert thr.admits(1e300)

    def test_ordering(self):
        assert Threshold(1.0) <= Threshold(2.0)
        assert Threshold(5.0) <= Threshold(None)
        assert not Threshold(None) <= Threshold(5.0)

    def test_nesting_in_alpha(self):
        cal = ConformalCalibrator(np.linspace(0, 1, 40))
        alphas = np.linspace(0.05, 0.95, 19)
        thresholds = [cal.threshold(float(a)) for a in alphas]
        for t_small_alpha, t_large_alpha in zip(thresholds, thresholds[1:]):
            assert t_large_alpha <= t_small_alpha


class TestQuantileIndex:
    def test_values(self):
        assert quantile_index(4, 0.5) == 3
        assert quantile_index(4, 0.1) == 5
        assert quantile_index(1, 0.6) == 1
        assert quantile_index(1, 0.4) == 2


class TestRegionContains:
    def test_sentinel_always_true(self):
        region = PredictionRegion(ScoreFunction("absolute_residual"),
                                  Threshold(None), 0.1)
        assert region_contains(region, [0.0], [1e12])

    def test_boundary_closed(self):
        region = PredictionRegion(ScoreFunction("absolute_residual"),
                                  Threshold(1.0), 0.1)
        assert region_contains(region, [0.0], [0.5])
        assert region_contains(region, [0.0], [1.0])
        assert not region_contains(region, [0.0], [-1.5])


class TestIntervalFromThreshold:
    def test_absolute_residual(self):
        # symmetric sublevel set
        region = PredictionRegion(ScoreFunction("absolute_residual"),
                                  Threshold(2.0), 0.1)
        assert interval_from_threshold(region, [0.0]) == [(-2.0, 2.0)]

    def test_raw_response(self):
        region = PredictionRegion(ScoreFunction("raw_response"),
                                  Threshold(0.7), 0.1)
        assert interval_from_threshold(region, [0.0]) == [(-math.inf, 0.7)]

    def test_centered_on_predictor(self):
        f = ScoreFunction("absolute_residual", predictor=lambda x: np.array([3.0]))
        region = PredictionRegion(f, Threshold(1.0), 0.1)
        assert interval_from_threshold(region, [0.0]) == [(2.0, 4.0)]

    def test_sentinel(self):
        region = PredictionRegion(ScoreFunction("raw_response"),
                                  Threshold(None), 0.1)
        assert interval_from_threshold(region, [0.0]) == [(-math.inf, math.inf)]

    def test_unsupported_kind(self):
        f = ScoreFunction("negative_density", density=lambda x, y: 1.0)
        region = PredictionRegion(f, Threshold(0.5), 0.1)
        with pytest.raises(ValidationError):
            interval_from_threshold(region, [0.0])


class TestCompositionInvariance:
    def test_increasing_reparameterizations(self):
        # membership decisions are unchanged when every score is passed
        # through the same strictly increasing map
        rng = np.random.Generator(np.random.Philox(12))
        maps = [lambda t: 2.0 * t + 1.0, lambda t: t**3, np.exp]
        for _ in range(50):
            cal = rng.normal(size=rng.integers(3, 40))
            test = rng.normal(size=10)
            alpha = float(rng.uniform(0.05, 0.95))
            thr = calibrate(cal, alpha)
            base = [thr.admits(float(s)) for s in test]
            for g in maps:
                thr_g = calibrate(g(cal), alpha)
                assert [thr_g.admits(float(g(s))) for s in test] == base


class TestMarginalCoverageTrial:
    def test_iid_coverage_in_bracket(self):
        # finite-sample coverage bracket plus a 3-sigma binomial band
        n, alpha, reps = 99, 0.1, 2000
        cov = marginal_coverage_trial(
            lambda rng, m: rng.normal(size=m), n, alpha, reps, seed=0
        )
        band = 3 * math.sqrt(alpha * (1 - alpha) / reps)
        assert 1 - alpha - band <= cov <= 1 - alpha + 1 / (n + 1) + band

    def test_sentinel_gives_full_coverage(self):
        # n=1, alpha=0.4: k=2>1 so every repetition covers
        cov = marginal_coverage_trial(
            lambda rng, m: rng.normal(size=m), 1, 0.4, 200, seed=1
        )
        assert cov == 1.0

    def test_repetitions_validation(self):
        with pytest.raises(ValidationError):
            marginal_coverage_trial(lambda rng, m: rng.normal(size=m),
                                    10, 0.1, 0, seed=0)
