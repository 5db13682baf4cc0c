"""Conditional-CDF score correction pipelines.

A corrected score composes a base nonconformity score with the
estimated conditional CDF of the score given the features (or with the
raw flow latent, which is an increasing reparameterization of it and
therefore calibrates to the same regions).  Pipelines store the sorted
corrected calibration scores once and answer region queries for any
miscoverage level without retraining.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .conformal import (
    ConformalCalibrator,
    PredictionRegion,
    Threshold,
    _dejitter_ties,
)
from .density import ConditionalScoreModel, SplineFlowModel
from .errors import ValidationError
from .scores import Dataset, ScoreFunction, evaluate_score, evaluate_scores

log = logging.getLogger(__name__)

LATENT_MODES = ("probability", "flow_latent")


@dataclass(frozen=True)
class PitCorrectedScore:
    """A base score composed with an estimated conditional score CDF."""

    base: ScoreFunction
    model: ConditionalScoreModel
    latent_mode: str = "probability"

    def __post_init__(self):
        if self.latent_mode not in LATENT_MODES:
            raise ValidationError(f"unknown latent mode {self.latent_mode!r}")
        if self.latent_mode == "flow_latent" and not isinstance(
            self.model, SplineFlowModel
        ):
            raise ValidationError("flow_latent mode requires a spline flow model")

    def __call__(self, x, y) -> float:
        return corrected_score(self, x, y)

    def evaluate_batch(self, data: Dataset) -> np.ndarray:
        s = evaluate_scores(self.base, data)
        if self.latent_mode == "flow_latent":
            return self.model.latent_many(data.features, s)
        return self.model.cdf_many(data.features, s)


def corrected_score(p: PitCorrectedScore, x, y) -> float:
    """Evaluate the corrected score at a single pair."""
    s = evaluate_score(p.base, x, y)
    if p.latent_mode == "flow_latent":
        return p.model.latent(x, s)
    return p.model.cdf(x, s)


def default_latent_mode(model: ConditionalScoreModel) -> str:
    """Flows calibrate in latent space; other variants in probability space."""
    return "flow_latent" if isinstance(model, SplineFlowModel) else "probability"


@dataclass(frozen=True)
class PitPipeline:
    """Corrected score plus its calibrated empirical quantile rule."""

    score: PitCorrectedScore
    calibrator: ConformalCalibrator
    corrected_calibration_scores: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.calibrator.n

    def threshold(self, alpha: float) -> Threshold:
        return self.calibrator.threshold(alpha)

    def region(self, alpha: float) -> PredictionRegion:
        return PredictionRegion(self.score, self.threshold(alpha), alpha)

    def base_threshold(self, x, alpha: float) -> float | None:
        """Map the corrected threshold back to base-score space at ``x``.

        Returns ``None`` for the +inf sentinel.  Requires an invertible
        conditional CDF (all built-in model variants provide one).
        """
        thr = self.threshold(alpha)
        if thr.is_infinite:
            return None
        q = thr.value
        model = self.score.model
        if self.score.latent_mode == "flow_latent":
            return float(model.inverse_many(np.atleast_2d(x), np.array([q]))[0])
        q = min(max(q, 1e-12), 1.0 - 1e-12)
        return model.inverse_cdf(x, q)

    def to_dict(self) -> dict:
        return {
            "latent_mode": self.score.latent_mode,
            "base_score_kind": self.score.base.kind,
            "model_variant": self.score.model.variant,
            "corrected_calibration_scores": self.corrected_calibration_scores.tolist(),
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)


def build_pipeline(
    base: ScoreFunction,
    model: ConditionalScoreModel,
    calibration: Dataset,
    latent_mode: str | None = None,
    tie_seed: int = 0,
) -> PitPipeline:
    """Run the calibration step of the correction procedure.

    The model must have been fitted on data disjoint from the
    calibration split; dataset role tags enforce this.
    """
    if calibration.role != "calibration":
        raise ValidationError(
            f"calibration dataset has role {calibration.role!r}; expected "
            "'calibration'"
        )
    if getattr(model, "trained_role", None) == "calibration":
        raise ValidationError("model was trained on the calibration split")
    if latent_mode is None:
        latent_mode = default_latent_mode(model)
    score = PitCorrectedScore(base, model, latent_mode)
    u = score.evaluate_batch(calibration)
    u = _dejitter_ties(u, tie_seed)
    u = np.sort(u)
    return PitPipeline(score, ConformalCalibrator(u), u)


def corrected_region(pipe: PitPipeline, x, alpha: float) -> PredictionRegion:
    """Prediction region in corrected-score space for features ``x``.

    The geometry equals a base-score sublevel set; ``x`` only matters
    for evaluating membership, so this simply validates alpha and
    attaches the threshold.
    """
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    return pipe.region(alpha)


def coverage_indicators(
    pipe: PitPipeline, test: Dataset, alpha: float
) -> np.ndarray:
    """Vector of region-membership indicators over a test dataset."""
    thr = pipe.threshold(alpha)
    if thr.is_infinite:
        return np.ones(len(test), dtype=bool)
    u = pipe.score.evaluate_batch(test)
    return u <= thr.value


@dataclass(frozen=True)
class BaselinePipeline:
    """Uncorrected split conformal calibration on the raw base score."""

    base: ScoreFunction
    calibrator: ConformalCalibrator

    @property
    def n(self) -> int:
        return self.calibrator.n

    def threshold(self, alpha: float) -> Threshold:
        return self.calibrator.threshold(alpha)

    def evaluate_batch(self, data: Dataset) -> np.ndarray:
        return evaluate_scores(self.base, data)


def build_baseline(
    base: ScoreFunction, calibration: Dataset, tie_seed: int = 0
) -> BaselinePipeline:
    if calibration.role != "calibration":
        raise ValidationError(
            f"calibration dataset has role {calibration.role!r}; expected "
            "'calibration'"
        )
    s = evaluate_scores(base, calibration)
    s = np.sort(_dejitter_ties(s, tie_seed))
    return BaselinePipeline(base, ConformalCalibrator(s))


def make_region_provider(pipe: "PitPipeline | BaselinePipeline"):
    """Region-provider callable ``(test, alpha) -> bool array``.

    Test scores are evaluated once per dataset and cached, so sweeping
    an alpha grid costs one threshold lookup per level.
    """
    cache: dict[int, np.ndarray] = {}

    def regions(test: Dataset, alpha: float) -> np.ndarray:
        key = id(test)
        if key not in cache:
            if isinstance(pipe, BaselinePipeline):
                cache[key] = pipe.evaluate_batch(test)
            else:
                cache[key] = pipe.score.evaluate_batch(test)
        thr = pipe.threshold(alpha)
        if thr.is_infinite:
            return np.ones(len(test), dtype=bool)
        return cache[key] <= thr.value

    return regions


def coverage_indicator_matrix(
    pipe: PitPipeline, test: Dataset, alphas: np.ndarray
) -> np.ndarray:
    """Membership indicators of shape ``(len(alphas), n_test)``.

    Evaluates the corrected test scores once; each row then only
    compares against that alpha's threshold.
    """
    u = pipe.score.evaluate_batch(test)
    out = np.empty((len(alphas), len(test)), dtype=bool)
    for i, alpha in enumerate(alphas):
        thr = pipe.threshold(float(alpha))
        out[i] = True if thr.is_infinite else (u <= thr.value)
    return out
