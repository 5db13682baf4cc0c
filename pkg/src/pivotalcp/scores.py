"""Core data types, dataset handling and the base nonconformity scores.

A :class:`Dataset` is a dense ``(n, p)`` feature matrix paired with an
``(n, d)`` outcome matrix and a split role tag.  A :class:`ScoreFunction`
is a deterministic map ``(x, y) -> float`` used as the base nonconformity
score of the conformal procedure.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import DimensionMismatchError, NumericalError, ValidationError

ROLES = ("train", "calibration", "test")

SCORE_KINDS = (
    "absolute_residual",
    "raw_response",
    "negative_density",
    "scaled_linf_residual",
)


@dataclass(frozen=True)
class LabeledSample:
    """A single feature vector paired with its outcome vector."""

    features: np.ndarray
    outcome: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float).reshape(-1)
        y = np.asarray(self.outcome, dtype=float).reshape(-1)
        if x.size < 1 or y.size < 1:
            raise ValidationError("features and outcome must be nonempty")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise NumericalError("sample contains non-finite entries")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "outcome", y)


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of samples sharing a split role.

    Stored densely: ``features`` has shape ``(n, p)`` and ``outcomes``
    shape ``(n, d)``.  Immutable after construction.
    """

    features: np.ndarray
    outcomes: np.ndarray
    role: str = "train"

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.features, dtype=float))
        Y = np.atleast_2d(np.asarray(self.outcomes, dtype=float))
        if self.role not in ROLES:
            raise ValidationError(f"unknown role {self.role!r}")
        if X.shape[0] != Y.shape[0]:
            raise DimensionMismatchError(
                f"feature rows {X.shape[0]} != outcome rows {Y.shape[0]}"
            )
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise NumericalError("dataset contains non-finite entries")
        X.setflags(write=False)
        Y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "outcomes", Y)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def d(self) -> int:
        return self.outcomes.shape[1]

    def __iter__(self) -> Iterator[LabeledSample]:
        for i in range(len(self)):
            yield LabeledSample(self.features[i], self.outcomes[i])

    def with_role(self, role: str) -> "Dataset":
        return Dataset(self.features, self.outcomes, role)

    def subset(self, idx: np.ndarray, role: str | None = None) -> "Dataset":
        return Dataset(self.features[idx], self.outcomes[idx], role or self.role)

    def save_csv(self, path) -> None:
        """Write as CSV with header ``x_0..x_{p-1}, y_0..y_{d-1}``."""
        header = [f"x_{j}" for j in range(self.p)] + [f"y_{j}" for j in range(self.d)]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(len(self)):
                writer.writerow(
                    [repr(float(v)) for v in self.features[i]]
                    + [repr(float(v)) for v in self.outcomes[i]]
                )

    @classmethod
    def load_csv(cls, path, role: str = "train") -> "Dataset":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            p = sum(1 for c in header if c.startswith("x_"))
            d = sum(1 for c in header if c.startswith("y_"))
            if p == 0 or d == 0 or p + d != len(header):
                raise ValidationError(f"unrecognized CSV header {header!r}")
            rows = [[float(v) for v in row] for row in reader if row]
        if not rows:
            raise ValidationError(f"empty dataset file {path}")
        arr = np.asarray(rows, dtype=float)
        return cls(arr[:, :p], arr[:, p:], role)


@dataclass(frozen=True)
class ScoreFunction:
    """A base nonconformity score ``s(x, y)``.

    ``predictor`` is a frozen black box ``x -> y_hat`` supplied by the
    caller; the library never trains it.  ``density`` is a conditional
    density evaluator ``(x, y) -> p(y | x)`` used by the
    ``negative_density`` kind.
    """

    kind: str
    predictor: Callable[[np.ndarray], np.ndarray] | None = None
    scale: np.ndarray | None = field(default=None)
    density: Callable[[np.ndarray, np.ndarray], float] | None = None

    def __post_init__(self):
        if self.kind not in SCORE_KINDS:
            raise ValidationError(f"unknown score kind {self.kind!r}")
        if self.kind == "scaled_linf_residual":
            if self.predictor is None or self.scale is None:
                raise ValidationError(
                    "scaled_linf_residual requires a predictor and a scale"
                )
            scale = np.asarray(self.scale, dtype=float).reshape(-1)
            if np.any(scale <= 0):
                raise ValidationError("scale entries must be positive")
            object.__setattr__(self, "scale", scale)
        if self.kind == "negative_density" and self.density is None:
            raise ValidationError("negative_density requires a density evaluator")

    def __call__(self, x, y) -> float:
        return evaluate_score(self, x, y)


def _point_prediction(f: ScoreFunction, x: np.ndarray, d: int) -> np.ndarray:
    if f.predictor is None:
        return np.zeros(d)
    pred = np.asarray(f.predictor(x), dtype=float).reshape(-1)
    if pred.size != d:
        raise DimensionMismatchError(
            f"predictor output has length {pred.size}, expected {d}"
        )
    return pred


def evaluate_score(f: ScoreFunction, x, y) -> float:
    """Evaluate the base nonconformity score at a single ``(x, y)`` pair."""
    x = np.asarray(x, dtype=float).reshape(-1)
    y = np.asarray(y, dtype=float).reshape(-1)
    d = y.size

    if f.kind in ("absolute_residual", "raw_response") and d != 1:
        raise DimensionMismatchError(f"{f.kind} requires d = 1, got d = {d}")

    if f.kind == "absolute_residual":
        value = abs(float(y[0]) - float(_point_prediction(f, x, 1)[0]))
    elif f.kind == "raw_response":
        value = float(y[0]) - float(_point_prediction(f, x, 1)[0])
    elif f.kind == "negative_density":
        value = -float(f.density(x, y))
    else:  # scaled_linf_residual
        if f.scale.size != d:
            raise DimensionMismatchError(
                f"scale has length {f.scale.size}, expected {d}"
            )
        resid = (y - _point_prediction(f, x, d)) / f.scale
        value = float(np.max(np.abs(resid)))

    if not np.isfinite(value):
        raise NumericalError(f"score {f.kind} produced non-finite value {value}")
    return value


def evaluate_scores(f: ScoreFunction, data: Dataset) -> np.ndarray:
    """Score every sample of a dataset, in order."""
    return np.array([evaluate_score(f, data.features[i], data.outcomes[i])
                     for i in range(len(data))])


def split_dataset(
    data: Dataset,
    fractions: Sequence[float],
    seed: int,
) -> tuple[Dataset, Dataset, Dataset]:
    """Partition a dataset into train/calibration/test after a seeded shuffle.

    Sizes follow the floor allocation of the calibration and test
    fractions, with the remainder assigned to train.
    """
    fracs = [float(v) for v in fractions]
    if len(fracs) != 3 or any(v <= 0 for v in fracs):
        raise ValidationError("fractions must be three positive values")
    if abs(sum(fracs) - 1.0) > 1e-9:
        raise ValidationError(f"fractions must sum to 1, got {sum(fracs)}")
    n = len(data)
    if n == 0:
        raise ValidationError("cannot split an empty dataset")

    n_cal = int(np.floor(fracs[1] * n))
    n_test = int(np.floor(fracs[2] * n))
    n_train = n - n_cal - n_test
    if min(n_train, n_cal, n_test) < 1:
        raise ValidationError(
            f"split of {n} samples with fractions {fracs} produces an empty part"
        )

    rng = np.random.Generator(np.random.Philox(seed))
    perm = rng.permutation(n)
    i1, i2 = n_train, n_train + n_cal
    return (
        data.subset(perm[:i1], "train"),
        data.subset(perm[i1:i2], "calibration"),
        data.subset(perm[i2:], "test"),
    )
