"""Conditional score-distribution estimators.

Three interchangeable variants expose ``cdf(x, s)``, ``log_density(x, s)``
and ``inverse_cdf(x, u)`` for the score given features:

* :class:`OracleModel` -- closed forms for the synthetic processes;
* :class:`MdnModel` -- Gaussian mixture with network-parameterized heads;
* :class:`SplineFlowModel` -- monotone rational-quadratic spline flow
  with a Unif(0, 1) base, so the flow output is the conditional CDF.

Both learned models are trained by maximum likelihood via
:func:`fit_mle` on top of the shared :class:`~pivotalcp.nn.Mlp` trunk.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import erfinv, expit, logsumexp, ndtr

from . import _kernels
from .errors import NumericalError, ValidationError
from .nn import AdamOptimizer, Mlp, clip_global_norm
from .scores import Dataset, ScoreFunction, evaluate_scores

log = logging.getLogger(__name__)

DENSITY_FLOOR = 1e-6
LOG_2PI = math.log(2.0 * math.pi)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _softmax(a):
    a = a - a.max(axis=-1, keepdims=True)
    e = np.exp(a)
    return e / e.sum(axis=-1, keepdims=True)


class ConditionalScoreModel:
    """Common interface of the conditional score-distribution estimators."""

    variant = "abstract"

    def cdf(self, x, s: float) -> float:
        raise NotImplementedError

    def log_density(self, x, s: float) -> float:
        raise NotImplementedError

    def inverse_cdf(self, x, u: float) -> float:
        raise NotImplementedError

    def latent(self, x, s: float) -> float:
        """Monotone latent value used for calibration; defaults to the CDF."""
        return self.cdf(x, s)

    # batched variants; subclasses override with vectorized code
    def cdf_many(self, X: np.ndarray, s: np.ndarray) -> np.ndarray:
        return np.array([self.cdf(X[i], s[i]) for i in range(len(s))])

    def latent_many(self, X: np.ndarray, s: np.ndarray) -> np.ndarray:
        return np.array([self.latent(X[i], s[i]) for i in range(len(s))])


# ---------------------------------------------------------------------------
# Oracle closed forms


@dataclass(frozen=True)
class OracleModel(ConditionalScoreModel):
    """Analytic conditional score distribution.

    ``family`` is one of ``exponential_rate`` (rate given by
    ``param_map(x)``), ``half_normal_scale`` (scale given by
    ``param_map(x)``) or ``custom`` (closed-form ``custom_cdf``,
    ``custom_density`` and ``custom_quantile`` callables of ``(x, t)``).
    """

    family: str
    param_map: Callable[[np.ndarray], float] | None = None
    custom_cdf: Callable[[np.ndarray, float], float] | None = None
    custom_density: Callable[[np.ndarray, float], float] | None = None
    custom_quantile: Callable[[np.ndarray, float], float] | None = None

    variant = "oracle"

    def __post_init__(self):
        if self.family in ("exponential_rate", "half_normal_scale"):
            if self.param_map is None:
                raise ValidationError(f"{self.family} requires a parameter map")
        elif self.family == "custom":
            if None in (self.custom_cdf, self.custom_density, self.custom_quantile):
                raise ValidationError("custom oracle requires cdf/density/quantile")
        else:
            raise ValidationError(f"unknown oracle family {self.family!r}")

    def cdf(self, x, s: float) -> float:
        x = np.asarray(x, dtype=float)
        if self.family == "exponential_rate":
            if s < 0.0:
                return 0.0
            return -math.expm1(-self.param_map(x) * s)
        if self.family == "half_normal_scale":
            if s < 0.0:
                return 0.0
            return float(2.0 * ndtr(s / self.param_map(x)) - 1.0)
        return float(self.custom_cdf(x, s))

    def log_density(self, x, s: float) -> float:
        x = np.asarray(x, dtype=float)
        if self.family == "exponential_rate":
            if s < 0.0:
                return math.log(DENSITY_FLOOR)
            rate = self.param_map(x)
            return math.log(rate) - rate * s
        if self.family == "half_normal_scale":
            if s < 0.0:
                return math.log(DENSITY_FLOOR)
            scale = self.param_map(x)
            return (
                0.5 * math.log(2.0 / math.pi)
                - math.log(scale)
                - 0.5 * (s / scale) ** 2
            )
        return math.log(max(float(self.custom_density(x, s)), DENSITY_FLOOR))

    def inverse_cdf(self, x, u: float) -> float:
        if not 0.0 < u < 1.0:
            raise ValidationError(f"u must lie in (0, 1), got {u}")
        x = np.asarray(x, dtype=float)
        if self.family == "exponential_rate":
            return -math.log1p(-u) / self.param_map(x)
        if self.family == "half_normal_scale":
            return float(self.param_map(x) * math.sqrt(2.0) * erfinv(u))
        return float(self.custom_quantile(x, u))


def oracle_cdf(model: OracleModel, x, t: float) -> float:
    return model.cdf(x, t)


def oracle_density(model: OracleModel, x, t: float) -> float:
    return math.exp(model.log_density(x, t))


def oracle_quantile(model: OracleModel, x, u: float) -> float:
    return model.inverse_cdf(x, u)


# ---------------------------------------------------------------------------
# Mixture density network


class MdnModel(ConditionalScoreModel):
    """Gaussian mixture with weights, means and scales given by a trunk MLP.

    The trunk maps features to ``3 m`` head values: ``m`` weight logits
    (softmax), ``m`` means (identity), ``m`` raw scales (softplus plus a
    floor).  The conditional CDF is a mixture of normal CDFs, available
    in closed form.
    """

    variant = "mdn"

    def __init__(self, p: int, m: int = 5, hidden=(32,), seed: int = 0,
                 sigma_floor: float = 1e-3):
        if m < 1:
            raise ValidationError("component count m must be >= 1")
        self.m = m
        self.sigma_floor = float(sigma_floor)
        self.trunk = Mlp([p, *hidden, 3 * m], seed=seed)
        self.trained_role: str | None = None

    def heads(self, X: np.ndarray):
        """Mixture parameters ``(pi, mu, sigma)`` for a feature batch."""
        T, cache = self.trunk.forward_batch(np.atleast_2d(X))
        m = self.m
        pi = _softmax(T[:, :m])
        mu = T[:, m : 2 * m]
        sigma = self.sigma_floor + _softplus(T[:, 2 * m :])
        return pi, mu, sigma, T, cache

    def cdf(self, x, s: float) -> float:
        return float(self.cdf_many(np.atleast_2d(x), np.array([s]))[0])

    def cdf_many(self, X: np.ndarray, s: np.ndarray) -> np.ndarray:
        pi, mu, sigma, _, _ = self.heads(X)
        z = (np.asarray(s, dtype=float)[:, None] - mu) / sigma
        return np.clip((pi * ndtr(z)).sum(axis=1), 0.0, 1.0)

    def log_density(self, x, s: float) -> float:
        return float(self.log_density_many(np.atleast_2d(x), np.array([s]))[0])

    def log_density_many(self, X: np.ndarray, s: np.ndarray) -> np.ndarray:
        pi, mu, sigma, _, _ = self.heads(X)
        z = (np.asarray(s, dtype=float)[:, None] - mu) / sigma
        comp = np.log(pi) - 0.5 * z**2 - np.log(sigma) - 0.5 * LOG_2PI
        return logsumexp(comp, axis=1)

    def inverse_cdf(self, x, u: float) -> float:
        """Numerical inversion of the mixture CDF by bisection to 1e-8."""
        if not 0.0 < u < 1.0:
            raise ValidationError(f"u must lie in (0, 1), got {u}")
        pi, mu, sigma, _, _ = self.heads(np.atleast_2d(x))
        pi, mu, sigma = pi[0], mu[0], sigma[0]
        lo = float(mu.min() - 10.0 * sigma.max())
        hi = float(mu.max() + 10.0 * sigma.max())

        def F(s):
            return float((pi * ndtr((s - mu) / sigma)).sum())

        while hi - lo > 1e-8:
            mid = 0.5 * (lo + hi)
            if F(mid) < u:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def nll_head_grad(self, X: np.ndarray, s: np.ndarray):
        """Per-sample NLL and its gradient w.r.t. the trunk outputs."""
        pi, mu, sigma, T, cache = self.heads(X)
        s = np.asarray(s, dtype=float)
        z = (s[:, None] - mu) / sigma
        comp = np.log(pi) - 0.5 * z**2 - np.log(sigma) - 0.5 * LOG_2PI
        ll = logsumexp(comp, axis=1)
        resp = np.exp(comp - ll[:, None])

        g_logits = pi - resp
        g_mu = -resp * z / sigma
        raw = T[:, 2 * self.m :]
        g_sigma = -resp * (z**2 - 1.0) / sigma
        g_raw = g_sigma * expit(raw)
        head_grad = np.concatenate([g_logits, g_mu, g_raw], axis=1)
        return -ll, head_grad, cache

    # --- persistence -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "m": self.m,
            "sigma_floor": self.sigma_floor,
            "trunk": self.trunk.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MdnModel":
        trunk = Mlp.from_dict(doc["trunk"])
        model = cls.__new__(cls)
        model.m = int(doc["m"])
        model.sigma_floor = float(doc["sigma_floor"])
        model.trunk = trunk
        model.trained_role = None
        return model


def mdn_cdf(model: MdnModel, x, s: float) -> float:
    return model.cdf(x, s)


def mdn_log_density(model: MdnModel, x, s: float) -> float:
    return model.log_density(x, s)


# ---------------------------------------------------------------------------
# Monotone rational-quadratic spline flow


MIN_BIN = 1e-3


class SplineFlowModel(ConditionalScoreModel):
    """1-D conditional monotone rational-quadratic spline flow.

    The trunk maps features to ``3 K - 1`` head values: ``K`` bin-width
    logits (softmax), ``K`` bin-height logits (softmax) and ``K - 1``
    interior knot derivatives (softplus, floored).  Boundary derivatives
    are fixed to 1 in normalized coordinates so an all-zero head gives
    the identity spline, and tails continue affinely with the boundary
    slope.  The base distribution is Unif(0, 1), hence the spline value
    is the conditional CDF on the fitted range.
    """

    variant = "spline_flow"

    def __init__(self, p: int, n_bins: int = 8, hidden=(32,), seed: int = 0,
                 deriv_floor: float = 1e-4):
        if n_bins < 2:
            raise ValidationError("n_bins must be >= 2")
        self.K = n_bins
        self.deriv_floor = float(deriv_floor)
        # softplus shift so a zero raw derivative maps exactly to slope 1
        self._shift = math.log(math.expm1(1.0 - self.deriv_floor))
        self.trunk = Mlp([p, *hidden, 3 * n_bins - 1], seed=seed)
        self.s_lo: float | None = None
        self.s_hi: float | None = None
        self.trained_role: str | None = None

    def set_range(self, s_min: float, s_max: float, expand: float = 0.05) -> None:
        """Fix the spline support from a fitted score range, expanded by 5%."""
        if not s_max > s_min:
            raise ValidationError("degenerate score range")
        pad = expand * (s_max - s_min)
        self.s_lo = float(s_min - pad)
        self.s_hi = float(s_max + pad)

    @property
    def range_width(self) -> float:
        if self.s_lo is None:
            raise ValidationError("spline range is unset; call set_range or fit")
        return self.s_hi - self.s_lo

    def heads(self, X: np.ndarray):
        """Spline bin parameters ``(w, h, d)`` for a feature batch."""
        T, cache = self.trunk.forward_batch(np.atleast_2d(X))
        K = self.K
        scale = 1.0 - K * MIN_BIN
        w = MIN_BIN + scale * _softmax(T[:, :K])
        h = MIN_BIN + scale * _softmax(T[:, K : 2 * K])
        d = np.empty((T.shape[0], K + 1))
        d[:, 0] = 1.0
        d[:, K] = 1.0
        d[:, 1:K] = self.deriv_floor + _softplus(T[:, 2 * K :] + self._shift)
        return w, h, d, T, cache

    def _normalize(self, s: np.ndarray) -> np.ndarray:
        width = self.range_width
        return (np.asarray(s, dtype=float) - self.s_lo) / width

    def forward_many(self, X: np.ndarray, s: np.ndarray):
        """Latent values and log-densities for paired ``(x, s)`` batches."""
        w, h, d, _, _ = self.heads(X)
        t = np.ascontiguousarray(self._normalize(s))
        u, ld = _kernels.rqs_forward(t, w, h, d)
        return u, ld - math.log(self.range_width)

    def latent(self, x, s: float) -> float:
        u, _ = self.forward_many(np.atleast_2d(x), np.array([s]))
        return float(u[0])

    def latent_many(self, X: np.ndarray, s: np.ndarray) -> np.ndarray:
        u, _ = self.forward_many(X, s)
        return u

    def cdf(self, x, s: float) -> float:
        return float(self.cdf_many(np.atleast_2d(x), np.array([s]))[0])

    def cdf_many(self, X: np.ndarray, s: np.ndarray) -> np.ndarray:
        u, _ = self.forward_many(X, s)
        return np.clip(u, 0.0, 1.0)

    def log_density(self, x, s: float) -> float:
        return float(self.log_density_many(np.atleast_2d(x), np.array([s]))[0])

    def log_density_many(self, X: np.ndarray, s: np.ndarray) -> np.ndarray:
        _, ld = self.forward_many(X, s)
        t = self._normalize(s)
        # outside the fitted range the affine tail is not integrable;
        # report the floor density instead
        out = (t < 0.0) | (t > 1.0)
        ld = np.where(out, math.log(DENSITY_FLOOR), ld)
        return ld

    def inverse_cdf(self, x, u: float) -> float:
        if not 0.0 < u < 1.0:
            raise ValidationError(f"u must lie in (0, 1), got {u}")
        return float(self.inverse_many(np.atleast_2d(x), np.array([u]))[0])

    def inverse_many(self, X: np.ndarray, u: np.ndarray) -> np.ndarray:
        w, h, d, _, _ = self.heads(X)
        u = np.ascontiguousarray(np.asarray(u, dtype=float))
        t = _kernels.rqs_inverse(u, w, h, d)
        return self.s_lo + t * self.range_width

    def nll_head_grad(self, X: np.ndarray, s: np.ndarray):
        """Per-sample NLL and its gradient w.r.t. the trunk outputs."""
        w, h, d, T, cache = self.heads(X)
        t = np.ascontiguousarray(self._normalize(s))
        _, ld = _kernels.rqs_forward(t, w, h, d)
        nll = -(ld - math.log(self.range_width))
        gw, gh, gd = _kernels.rqs_backward(t, w, h, d)

        K = self.K
        scale = 1.0 - K * MIN_BIN
        pa = _softmax(T[:, :K])
        pb = _softmax(T[:, K : 2 * K])
        # d(nll)/dw = -gw, chained through the floored softmax
        ga = -scale * pa * (gw - (gw * pa).sum(axis=1, keepdims=True))
        gb = -scale * pb * (gh - (gh * pb).sum(axis=1, keepdims=True))
        gc = -gd[:, 1:K] * expit(T[:, 2 * K :] + self._shift)
        head_grad = np.concatenate([ga, gb, gc], axis=1)
        return nll, head_grad, cache

    # --- persistence -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "n_bins": self.K,
            "deriv_floor": self.deriv_floor,
            "s_lo": self.s_lo,
            "s_hi": self.s_hi,
            "trunk": self.trunk.to_dict(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SplineFlowModel":
        model = cls.__new__(cls)
        model.K = int(doc["n_bins"])
        model.deriv_floor = float(doc["deriv_floor"])
        model._shift = math.log(math.expm1(1.0 - model.deriv_floor))
        model.trunk = Mlp.from_dict(doc["trunk"])
        model.s_lo = doc["s_lo"]
        model.s_hi = doc["s_hi"]
        model.trained_role = None
        return model


def spline_forward(model: SplineFlowModel, x, s: float) -> tuple[float, float]:
    """Latent value and log-derivative of the flow at a single point."""
    u, ld = model.forward_many(np.atleast_2d(x), np.array([s]))
    return float(u[0]), float(ld[0])


def spline_inverse(model: SplineFlowModel, x, u: float) -> float:
    return model.inverse_cdf(x, u)


# ---------------------------------------------------------------------------
# Persistence helpers and maximum likelihood fitting


def save_model(model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh)


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    variant = doc.get("variant")
    if variant == "mdn":
        return MdnModel.from_dict(doc)
    if variant == "spline_flow":
        return SplineFlowModel.from_dict(doc)
    raise ValidationError(f"unknown model variant {variant!r}")


def fit_mle(
    model: MdnModel | SplineFlowModel,
    train: Dataset,
    score: ScoreFunction,
    epochs: int,
    seed: int = 0,
    learning_rate: float = 1e-3,
    batch_size: int | None = None,
) -> list[float]:
    """Train a conditional estimator by maximum likelihood with Adam.

    Full-batch by default; ``batch_size`` enables seeded mini-batching.
    Returns the per-epoch mean negative log-likelihood trace.
    """
    if len(train) == 0:
        raise ValidationError("training dataset is empty")
    S = evaluate_scores(score, train)
    X = train.features
    if isinstance(model, SplineFlowModel):
        model.set_range(float(S.min()), float(S.max()))

    opt = AdamOptimizer(learning_rate=learning_rate)
    rng = np.random.Generator(np.random.Philox([seed, 0xB4C7]))
    trace: list[float] = []
    n = len(S)

    for epoch in range(epochs):
        if batch_size is None or batch_size >= n:
            batches = [np.arange(n)]
        else:
            perm = rng.permutation(n)
            batches = np.array_split(perm, math.ceil(n / batch_size))
        epoch_nll = 0.0
        for idx in batches:
            nll, head_grad, cache = model.nll_head_grad(X[idx], S[idx])
            total = float(nll.sum())
            if not np.isfinite(total):
                raise NumericalError(f"non-finite loss at epoch {epoch}")
            epoch_nll += total
            wg, bg, _ = model.trunk.backward(cache, head_grad / idx.size)
            grads = clip_global_norm(wg + bg)
            params = opt.step(model.trunk.parameters(), grads)
            model.trunk.set_parameters(params)
            for p in params:
                if not np.all(np.isfinite(p)):
                    raise NumericalError(f"non-finite parameter at epoch {epoch}")
        trace.append(epoch_nll / n)
        if len(trace) >= 11 and trace[-1] > trace[-11]:
            log.debug(
                "loss increased over the last 10 epochs (%.6f -> %.6f)",
                trace[-11], trace[-1],
            )
    model.trained_role = train.role
    return trace
