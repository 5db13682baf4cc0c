"""Synthetic data-generating processes with analytic oracles.

Two processes are provided:

* ``laplace_het`` -- X ~ Unif(0, 1), Y | X = x ~ Laplace(0, 1/(x+1)).
  With the absolute-residual score, S | X = x ~ Exp(x + 1) and the
  marginal score CDF has the closed form 1 - (e^{-t} - e^{-2t}) / t.
* ``candy_gaussian`` -- X ~ Unif(-1, 1), Y | X = x ~ N(0, sigma(x)^2)
  with sigma(x) = |1 - 2 x^2| + 1/10, a strongly heteroscedastic design.

Sampling is inverse-CDF based on a seeded counter-based generator, so
streams are deterministic and platform-stable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import ndtr, ndtri

from .density import OracleModel
from .errors import ValidationError
from .scores import Dataset, ScoreFunction

DGP_KINDS = ("laplace_het", "candy_gaussian")


@dataclass(frozen=True)
class DgpSpec:
    """A named synthetic data-generating process plus its seed."""

    kind: str
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DGP_KINDS:
            raise ValidationError(f"unknown DGP kind {self.kind!r}")


def candy_sigma(x: float) -> float:
    return abs(1.0 - 2.0 * x * x) + 0.1


def noise_scale(spec: DgpSpec, x: float) -> float:
    """Conditional noise scale: Laplace scale or normal standard deviation."""
    if spec.kind == "laplace_het":
        return 1.0 / (x + 1.0)
    return candy_sigma(x)


def conditional_density(spec: DgpSpec):
    """The true conditional density ``p(y | x)`` as a callable."""
    if spec.kind == "laplace_het":

        def pdf(x, y):
            b = 1.0 / (float(np.ravel(x)[0]) + 1.0)
            return math.exp(-abs(float(np.ravel(y)[0])) / b) / (2.0 * b)

    else:

        def pdf(x, y):
            s = candy_sigma(float(np.ravel(x)[0]))
            z = float(np.ravel(y)[0]) / s
            return math.exp(-0.5 * z * z) / (s * math.sqrt(2.0 * math.pi))

    return pdf


def sample(spec: DgpSpec, n: int, seed: int | None = None) -> Dataset:
    """Draw ``n`` i.i.d. pairs by inverse-CDF sampling."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    rng = np.random.Generator(
        np.random.Philox(spec.seed if seed is None else seed)
    )
    ux = rng.random(n)
    uy = rng.random(n)
    if spec.kind == "laplace_het":
        x = ux
        scale = 1.0 / (x + 1.0)
        # Laplace inverse CDF: sign(u - 1/2) * scale * log(1 - 2|u - 1/2|)
        v = uy - 0.5
        y = -np.sign(v) * scale * np.log1p(-2.0 * np.abs(v))
    else:
        x = 2.0 * ux - 1.0
        sigma = np.abs(1.0 - 2.0 * x * x) + 0.1
        y = sigma * ndtri(uy)
    return Dataset(x[:, None], y[:, None], "train")


def oracle_score_cdf(spec: DgpSpec, x: float, t: float) -> float:
    """Conditional CDF of the absolute-residual score at features ``x``."""
    if t < 0.0:
        return 0.0
    if spec.kind == "laplace_het":
        return -math.expm1(-(x + 1.0) * t)
    return float(2.0 * ndtr(t / candy_sigma(x)) - 1.0)


def oracle_marginal_cdf(spec: DgpSpec, t: float) -> float:
    """Marginal CDF of the absolute-residual score."""
    if t <= 0.0:
        return 0.0
    if spec.kind == "laplace_het":
        if t < 1e-4:
            # series of (e^{-t} - e^{-2t}) / t around 0
            return 1.0 - math.exp(-t) * (1.0 - t / 2.0 + t * t / 6.0)
        return 1.0 - (math.exp(-t) - math.exp(-2.0 * t)) / t
    value, _ = quad(lambda x: oracle_score_cdf(spec, x, t), -1.0, 1.0,
                    epsabs=1e-6)
    return 0.5 * value


def density_superlevel_radius(spec: DgpSpec, x: float,
                              level: float) -> float | None:
    """Radius ``r`` such that ``{y : p(y | x) >= level}`` equals ``[-r, r]``.

    Returns ``None`` when the superlevel set is empty and ``inf`` when it
    is the whole line (``level <= 0``).
    """
    if level <= 0.0:
        return math.inf
    if spec.kind == "laplace_het":
        b = 1.0 / (x + 1.0)
        peak = 1.0 / (2.0 * b)
        if level > peak:
            return None
        return -b * math.log(2.0 * b * level)
    sigma = candy_sigma(x)
    peak = 1.0 / (sigma * math.sqrt(2.0 * math.pi))
    if level > peak:
        return None
    return sigma * math.sqrt(-2.0 * math.log(level / peak))


def absolute_residual_score() -> ScoreFunction:
    return ScoreFunction("absolute_residual")


def raw_response_score() -> ScoreFunction:
    return ScoreFunction("raw_response")


def negative_density_score(spec: DgpSpec) -> ScoreFunction:
    return ScoreFunction("negative_density", density=conditional_density(spec))


def oracle_model(spec: DgpSpec, score_kind: str) -> OracleModel:
    """The exact conditional score-distribution model for a base score."""
    if score_kind == "absolute_residual":
        if spec.kind == "laplace_het":
            return OracleModel("exponential_rate",
                               param_map=lambda x: float(np.ravel(x)[0]) + 1.0)
        return OracleModel("half_normal_scale",
                           param_map=lambda x: candy_sigma(float(np.ravel(x)[0])))

    if score_kind == "raw_response":
        # S = Y itself; symmetric location-scale closed forms
        if spec.kind == "laplace_het":

            def cdf(x, t):
                b = 1.0 / (float(np.ravel(x)[0]) + 1.0)
                if t < 0.0:
                    return 0.5 * math.exp(t / b)
                return 1.0 - 0.5 * math.exp(-t / b)

            def pdf(x, t):
                b = 1.0 / (float(np.ravel(x)[0]) + 1.0)
                return math.exp(-abs(t) / b) / (2.0 * b)

            def ppf(x, u):
                b = 1.0 / (float(np.ravel(x)[0]) + 1.0)
                if u < 0.5:
                    return b * math.log(2.0 * u)
                return -b * math.log(2.0 * (1.0 - u))

        else:

            def cdf(x, t):
                return float(ndtr(t / candy_sigma(float(np.ravel(x)[0]))))

            def pdf(x, t):
                s = candy_sigma(float(np.ravel(x)[0]))
                return math.exp(-0.5 * (t / s) ** 2) / (s * math.sqrt(2 * math.pi))

            def ppf(x, u):
                return float(candy_sigma(float(np.ravel(x)[0])) * ndtri(u))

        return OracleModel("custom", custom_cdf=cdf, custom_density=pdf,
                           custom_quantile=ppf)

    if score_kind == "negative_density":
        if spec.kind != "candy_gaussian":
            raise ValidationError(
                "negative-density oracle is provided for candy_gaussian only"
            )

        # S = -phi(Y; 0, sigma(x)^2); support (-peak, 0) with
        # peak = 1 / (sigma sqrt(2 pi)).
        def _radius(sigma, c):
            # |y| such that the normal density equals c
            arg = -2.0 * math.log(c * sigma * math.sqrt(2.0 * math.pi))
            return sigma * math.sqrt(max(arg, 0.0))

        def cdf(x, t):
            sigma = candy_sigma(float(np.ravel(x)[0]))
            peak = 1.0 / (sigma * math.sqrt(2.0 * math.pi))
            if t >= 0.0:
                return 1.0
            if t <= -peak:
                return 0.0
            r = _radius(sigma, -t)
            return float(2.0 * ndtr(r / sigma) - 1.0)

        def pdf(x, t):
            # dF/dt simplifies to 2 sigma^2 / r for -peak < t < 0
            sigma = candy_sigma(float(np.ravel(x)[0]))
            peak = 1.0 / (sigma * math.sqrt(2.0 * math.pi))
            if t >= 0.0 or t <= -peak:
                return 0.0
            r = _radius(sigma, -t)
            if r == 0.0:
                return 0.0
            return 2.0 * sigma * sigma / r

        def ppf(x, u):
            sigma = candy_sigma(float(np.ravel(x)[0]))
            r = sigma * float(ndtri((1.0 + u) / 2.0))
            return -math.exp(-0.5 * (r / sigma) ** 2) / (
                sigma * math.sqrt(2.0 * math.pi)
            )

        return OracleModel("custom", custom_cdf=cdf, custom_density=pdf,
                           custom_quantile=ppf)

    raise ValidationError(f"no oracle model for score kind {score_kind!r}")
