"""Split conformal prediction with a conditional-CDF score correction.

The library calibrates prediction regions from any base nonconformity
score, then composes the score with an estimated conditional CDF to
restore approximate conditional coverage while preserving region
geometry and marginal validity.
"""

from . import _kernels, conformal, density, diagnostics, pit, scores, synth
from .conformal import ConformalCalibrator, PredictionRegion, Threshold, calibrate
from .density import MdnModel, OracleModel, SplineFlowModel, fit_mle
from .pit import PitCorrectedScore, PitPipeline, build_baseline, build_pipeline
from .scores import Dataset, LabeledSample, ScoreFunction, split_dataset
from .synth import DgpSpec

__version__ = "0.1.0"

__all__ = [
    "ConformalCalibrator",
    "Dataset",
    "DgpSpec",
    "LabeledSample",
    "MdnModel",
    "OracleModel",
    "PitCorrectedScore",
    "PitPipeline",
    "PredictionRegion",
    "ScoreFunction",
    "SplineFlowModel",
    "Threshold",
    "build_baseline",
    "build_pipeline",
    "calibrate",
    "fit_mle",
    "split_dataset",
    "__version__",
]
