"""Desk-scale experiment drivers behind the command-line interface.

Each driver consumes an :class:`ExperimentConfig`, runs a deterministic
seeded study, and writes plot-ready long-format CSV files plus a
``manifest.json`` capturing the configuration, the seed, the library
version and content hashes of every output.  Re-running with the same
configuration reproduces byte-identical files.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtr, ndtri

from . import __version__, density, diagnostics, pit, synth
from .conformal import quantile_index
from .errors import ValidationError
from .scores import SCORE_KINDS, Dataset, ScoreFunction
from .synth import DgpSpec

log = logging.getLogger(__name__)

EXPERIMENTS = ("toy", "convergence", "illustration_ks", "marginal_check")
MODELS = ("mdn", "spline_flow", "oracle")
DGPS = ("laplace_het", "candy_gaussian")

#: The three (score kind, miscoverage level) pairs of the toy study.
TOY_PAIRS = (
    ("absolute_residual", 0.3),
    ("negative_density", 0.2),
    ("raw_response", 0.1),
)

THREADS_ENV = "PIVOTALCP_THREADS"


@dataclass
class ExperimentConfig:
    """Configuration shared by all experiment drivers.

    Unused fields are ignored by drivers that do not need them; defaults
    reproduce the desk-scale studies.
    """

    experiment: str = "toy"
    N_train: int = 5000
    n_calibration: int = 1000
    n_test: int = 5000
    alphas: tuple = (0.1, 0.2, 0.3)
    model: str = "spline_flow"
    score: str = "absolute_residual"
    epochs: int = 600
    seed: int = 0
    out: str = "results"
    dgp: str = "candy_gaussian"
    n_runs: int = 5
    n_bins: int = 10
    repetitions: int = 2000
    trials: int = 10000
    N_ladder: tuple = (0, 1000, 2000, 3000, 4000, 5000)
    batch_size: int = 256
    hidden: tuple = (128, 128)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValidationError(
                f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}"
            )
        if self.model not in MODELS:
            raise ValidationError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.score not in SCORE_KINDS:
            raise ValidationError(f"score must be one of {SCORE_KINDS}")
        if self.dgp not in DGPS:
            raise ValidationError(f"dgp must be one of {DGPS}, got {self.dgp!r}")
        if self.N_train < 0:
            raise ValidationError(f"N_train must be >= 0, got {self.N_train}")
        for name in ("n_calibration", "n_test", "epochs", "n_runs", "n_bins",
                     "repetitions", "trials", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(
                    f"{name} must be >= 1, got {getattr(self, name)}"
                )
        self.alphas = tuple(float(a) for a in self.alphas)
        if any(not 0.0 < a < 1.0 for a in self.alphas):
            raise ValidationError(f"alphas must lie in (0, 1), got {self.alphas}")
        self.N_ladder = tuple(int(N) for N in self.N_ladder)
        if any(N < 0 for N in self.N_ladder):
            raise ValidationError(f"N_ladder entries must be >= 0")
        self.hidden = tuple(int(h) for h in self.hidden)
        if any(h < 1 for h in self.hidden):
            raise ValidationError("hidden layer widths must be >= 1")


_LIST_FIELDS = {"alphas", "N_ladder", "hidden"}
_STR_FIELDS = {"experiment", "model", "score", "out", "dgp"}


def parse_config_file(path) -> dict:
    """Read a flat ``key = value`` configuration file.

    Blank lines and ``#`` comments are ignored; list values are
    comma-separated.
    """
    raw: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(
                f"{path}:{lineno}: expected 'key = value', got {line!r}"
            )
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ValidationError(f"{path}:{lineno}: empty key or value")
        raw[key] = value
    return raw


def make_config(raw: dict, **overrides) -> ExperimentConfig:
    """Build a validated config from raw string values plus overrides."""
    known = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    values: dict = {}
    for key, value in raw.items():
        if key not in known:
            raise ValidationError(f"unknown config key {key!r}")
        if isinstance(value, str):
            if key in _LIST_FIELDS:
                parts = [p.strip() for p in value.split(",") if p.strip()]
                values[key] = tuple(float(p) if key == "alphas" else int(p)
                                    for p in parts)
            elif key in _STR_FIELDS:
                values[key] = value
            else:
                try:
                    values[key] = int(value)
                except ValueError as exc:
                    raise ValidationError(
                        f"config key {key!r}: expected an integer, got {value!r}"
                    ) from exc
        else:
            values[key] = value
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    return ExperimentConfig(**values)


# ---------------------------------------------------------------------------
# Shared helpers


def _thread_count() -> int:
    value = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(value)
    except ValueError:
        log.warning("ignoring non-integer %s=%r", THREADS_ENV, value)
        return 1
    return max(n, 1)


def _pool_map(fn, items):
    """Order-preserving map over a thread pool sized by the env var."""
    workers = _thread_count()
    if workers == 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _seeds(seed: int) -> dict:
    """Derived child seeds for the data splits and the model init."""
    base = 1000 * seed
    return {
        "train": base + 11,
        "calibration": base + 12,
        "test": base + 13,
        "model": base + 21,
        "bins": base + 5,
    }


def _fit_staged(model, train, score, config: ExperimentConfig, seed: int):
    """Minibatch training with a three-stage learning-rate ladder.

    Half the epoch budget runs at 1e-3, a third at 3e-4 and the rest at
    1e-4; the decay stabilizes the fit enough for per-bin coverage work.
    """
    e1 = config.epochs // 2
    e2 = config.epochs // 3
    stages = [(e1, 1e-3), (e2, 3e-4), (config.epochs - e1 - e2, 1e-4)]
    trace: list[float] = []
    for i, (epochs, lr) in enumerate(stages):
        if epochs > 0:
            trace += density.fit_mle(
                model, train, score, epochs=epochs, seed=seed + i,
                batch_size=min(config.batch_size, len(train)),
                learning_rate=lr,
            )
    return trace


def _make_model(config: ExperimentConfig, spec: DgpSpec, score_kind: str,
                train: Dataset | None, seed: int):
    """Build (and fit, if trainable) the conditional score model."""
    if config.model == "oracle":
        return synth.oracle_model(spec, score_kind)
    if train is None or len(train) == 0 or config.N_train == 0:
        raise ValidationError(
            f"N_train must be >= 1 to fit a {config.model} model"
        )
    if config.model == "mdn":
        model = density.MdnModel(p=train.p, m=5, hidden=config.hidden, seed=seed)
    else:
        # the bounded negative-density score concentrates near its
        # support edge and needs a finer spline resolution
        n_bins = 16 if score_kind == "negative_density" else 8
        model = density.SplineFlowModel(p=train.p, n_bins=n_bins,
                                        hidden=config.hidden, seed=seed)
    _fit_staged(model, train, _score_function(spec, score_kind), config, seed + 1)
    return model


def _score_function(spec: DgpSpec, kind: str) -> ScoreFunction:
    if kind == "absolute_residual":
        return synth.absolute_residual_score()
    if kind == "raw_response":
        return synth.raw_response_score()
    if kind == "negative_density":
        return synth.negative_density_score(spec)
    raise ValidationError(f"toy study does not support score kind {kind!r}")


def _fmt(value) -> str:
    """Deterministic CSV cell formatting."""
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, config: ExperimentConfig, files) -> Path:
    manifest = {
        "experiment": config.experiment,
        "config": dataclasses.asdict(config),
        "seed": config.seed,
        "version": __version__,
        "outputs": {Path(f).name: _sha256(f) for f in sorted(files)},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


def _out_dir(config: ExperimentConfig) -> Path:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Toy study: three score/level pairs on the bimodal-scale Gaussian DGP


def _region_halfwidth(spec: DgpSpec, kind: str, x: float,
                      t: float | None) -> tuple[float, float]:
    """Lower/upper region boundary in outcome space for a base threshold."""
    if t is None:
        return (-math.inf, math.inf)
    if kind == "absolute_residual":
        if t < 0:
            return (math.nan, math.nan)
        return (-t, t)
    if kind == "raw_response":
        return (-math.inf, t)
    # negative_density: {y : p(y | x) >= -t}
    if t >= 0.0:
        return (-math.inf, math.inf)
    r = synth.density_superlevel_radius(spec, x, -t)
    if r is None:
        return (math.nan, math.nan)
    return (-r, r)


def run_toy(config: ExperimentConfig) -> list[Path]:
    """Compare base and corrected pipelines on the three toy pairs."""
    out = _out_dir(config)
    spec = DgpSpec(config.dgp, seed=config.seed)
    seeds = _seeds(config.seed)
    cal = synth.sample(spec, config.n_calibration,
                       seeds["calibration"]).with_role("calibration")
    test = synth.sample(spec, config.n_test, seeds["test"]).with_role("test")
    train = (synth.sample(spec, config.N_train, seeds["train"])
             if config.N_train > 0 else None)
    bins = diagnostics.kmeans_fit(test.features, config.n_bins, seeds["bins"])

    x_grid = np.linspace(float(test.features.min()),
                         float(test.features.max()), 201)

    membership_rows: list[tuple] = []
    coverage_rows: list[tuple] = []
    mae_rows: list[tuple] = []
    boundary_rows: list[tuple] = []

    for kind, alpha in TOY_PAIRS:
        base = _score_function(spec, kind)
        model = _make_model(config, spec, kind, train, seeds["model"])
        pipe = pit.build_pipeline(base, model, cal)
        baseline = pit.build_baseline(base, cal)

        corr_in = pit.make_region_provider(pipe)(test, alpha)
        base_in = pit.make_region_provider(baseline)(test, alpha)
        for i in range(len(test)):
            membership_rows.append(
                (kind, alpha, i, float(test.features[i, 0]),
                 float(test.outcomes[i, 0]), int(base_in[i]), int(corr_in[i]))
            )

        for name, provider in (("base", pit.make_region_provider(baseline)),
                               ("corrected", pit.make_region_provider(pipe))):
            report = diagnostics.conditional_gap_mae(provider, test, bins, alpha)
            for b, count, cov in report.per_bin:
                coverage_rows.append((kind, alpha, name, int(b), int(count), cov))
            mae_rows.append((kind, alpha, name, report.mae, report.gap))

        base_thr = baseline.threshold(alpha)
        for x in x_grid:
            t0 = None if base_thr.is_infinite else base_thr.value
            lo0, hi0 = _region_halfwidth(spec, kind, float(x), t0)
            boundary_rows.append((kind, alpha, "base", float(x), lo0, hi0))
            t1 = pipe.base_threshold(np.array([x]), alpha)
            lo1, hi1 = _region_halfwidth(spec, kind, float(x), t1)
            boundary_rows.append((kind, alpha, "corrected", float(x), lo1, hi1))

    files = []
    for name, header, rows in (
        ("toy_membership.csv",
         ("score", "alpha", "index", "x", "y", "base_in", "corrected_in"),
         membership_rows),
        ("toy_coverage.csv",
         ("score", "alpha", "pipeline", "bin", "count", "coverage"),
         coverage_rows),
        ("toy_mae.csv", ("score", "alpha", "pipeline", "mae", "gap"), mae_rows),
        ("toy_boundary.csv",
         ("score", "alpha", "pipeline", "x", "lower", "upper"), boundary_rows),
    ):
        path = out / name
        write_csv(path, header, rows)
        files.append(path)
    files.append(write_manifest(out, config, files))
    return files


# ---------------------------------------------------------------------------
# Convergence study: L1 coverage gap versus training-set size


def _convergence_gap(config: ExperimentConfig, spec: DgpSpec, model_name: str,
                     N: int, run: int, alpha_grid) -> float:
    seeds = _seeds(config.seed + 7919 * (run + 1))
    cal = synth.sample(spec, config.n_calibration,
                       seeds["calibration"]).with_role("calibration")
    test = synth.sample(spec, config.n_test, seeds["test"]).with_role("test")
    bins = diagnostics.kmeans_fit(test.features, config.n_bins, seeds["bins"])
    base = _score_function(spec, config.score)
    if N == 0:
        pipeline = pit.build_baseline(base, cal)
    else:
        run_config = dataclasses.replace(config, model=model_name, N_train=N)
        train = synth.sample(spec, N, seeds["train"])
        model = _make_model(run_config, spec, config.score, train, seeds["model"])
        pipeline = pit.build_pipeline(base, model, cal)
    return diagnostics.l1_gap_over_grid(
        pit.make_region_provider(pipeline), test, bins, alpha_grid
    )


def run_convergence(config: ExperimentConfig) -> list[Path]:
    """L1 conditional coverage gap per training-set size and model."""
    out = _out_dir(config)
    spec = DgpSpec(config.dgp, seed=config.seed)
    alpha_grid = np.linspace(0.01, 0.98, 98)
    model_names = ("mdn", "spline_flow")

    tasks = [(model_name, N, run)
             for model_name in model_names
             for N in config.N_ladder
             for run in range(config.n_runs)]

    def task(item):
        model_name, N, run = item
        return _convergence_gap(config, spec, model_name, N, run, alpha_grid)

    gaps = _pool_map(task, tasks)

    run_rows = [(m, N, r, g) for (m, N, r), g in zip(tasks, gaps)]
    summary_rows = []
    for model_name in model_names:
        previous = None
        for N in config.N_ladder:
            values = np.array([g for (m, n, r, g) in run_rows
                               if m == model_name and n == N])
            mean, sd = float(values.mean()), float(values.std(ddof=1)
                                                   if values.size > 1 else 0.0)
            summary_rows.append((model_name, N, mean, sd))
            if previous is not None and mean > previous[0] + previous[1]:
                log.warning(
                    "gap not nonincreasing within 1 sd for %s at N=%d "
                    "(%.4f after %.4f +/- %.4f)",
                    model_name, N, mean, previous[0], previous[1],
                )
            previous = (mean, sd)

    files = []
    for name, header, rows in (
        ("convergence_runs.csv", ("model", "N", "run", "gap"), run_rows),
        ("convergence_summary.csv", ("model", "N", "mean", "sd"), summary_rows),
    ):
        path = out / name
        write_csv(path, header, rows)
        files.append(path)
    files.append(write_manifest(out, config, files))
    return files


# ---------------------------------------------------------------------------
# KS illustration: conditional coverage gap versus the KS bound


def _marginal_scores(spec: DgpSpec, rng: np.random.Generator,
                     m: int) -> np.ndarray:
    """Draw marginal absolute-residual scores under the DGP."""
    ux = rng.random(m)
    uy = rng.random(m)
    if spec.kind == "laplace_het":
        # S | X = x ~ Exp(x + 1)
        return -np.log1p(-uy) / (ux + 1.0)
    sigma = np.abs(1.0 - 2.0 * (2.0 * ux - 1.0) ** 2) + 0.1
    return sigma * np.abs(ndtri(0.5 + 0.5 * uy))


def conditional_gap_mc(spec: DgpSpec, x: float, alpha: float, n: int,
                       trials: int, seed: int) -> tuple[float, float]:
    """Monte-Carlo base-score conditional coverage gap at ``x``.

    Each trial calibrates on ``n`` fresh marginal scores and evaluates
    the exact conditional coverage of the resulting threshold.  Returns
    the absolute gap to the target and the standard error of the mean.
    """
    k = quantile_index(n, alpha)
    rng = np.random.Generator(np.random.Philox(seed))
    coverages = np.empty(trials)
    if k > n:
        coverages[:] = 1.0
    else:
        block = max(1, int(2e7) // max(n, 1))
        done = 0
        while done < trials:
            b = min(block, trials - done)
            draws = _marginal_scores(spec, rng, b * n).reshape(b, n)
            thresholds = np.partition(draws, k - 1, axis=1)[:, k - 1]
            coverages[done:done + b] = [
                synth.oracle_score_cdf(spec, x, float(t)) for t in thresholds
            ]
            done += b
    gap = abs(float(coverages.mean()) - (1.0 - alpha))
    stderr = float(coverages.std(ddof=1) / math.sqrt(trials))
    return gap, stderr


def run_illustration_ks(config: ExperimentConfig) -> list[Path]:
    """Conditional CDF curves, KS distances and the coverage-gap bound."""
    out = _out_dir(config)
    spec = DgpSpec("laplace_het", seed=config.seed)
    xs = np.linspace(0.0, 1.0, 5)
    t_grid = np.linspace(0.0, 6.0, 301)

    curve_rows = []
    marginal = [synth.oracle_marginal_cdf(spec, float(t)) for t in t_grid]
    for x in xs:
        for t, fm in zip(t_grid, marginal):
            curve_rows.append((float(x), float(t),
                               synth.oracle_score_cdf(spec, float(x), float(t)),
                               fm))

    ks_rows = []
    for x in xs:
        d_ks = diagnostics.ks_distance_functions(
            lambda t: synth.oracle_score_cdf(spec, float(x), t),
            lambda t: synth.oracle_marginal_cdf(spec, t),
            np.linspace(0.0, 40.0, 4097),
        )
        for alpha in config.alphas:
            gap, stderr = conditional_gap_mc(
                spec, float(x), alpha, config.n_calibration, config.trials,
                seed=config.seed * 100 + int(round(100 * x)) + int(1000 * alpha),
            )
            bound_ok = gap <= d_ks + 3.0 * stderr
            ks_rows.append((float(x), alpha, d_ks, gap, stderr, int(bound_ok)))

    files = []
    for name, header, rows in (
        ("illustration_curves.csv", ("x", "t", "conditional", "marginal"),
         curve_rows),
        ("illustration_ks.csv",
         ("x", "alpha", "d_ks", "gap", "stderr", "bound_ok"), ks_rows),
    ):
        path = out / name
        write_csv(path, header, rows)
        files.append(path)
    files.append(write_manifest(out, config, files))
    return files


# ---------------------------------------------------------------------------
# Marginal coverage check


def _corrected_uniforms(spec: DgpSpec, rng: np.random.Generator,
                        m: int) -> np.ndarray:
    """Oracle-corrected absolute-residual scores (exact PIT values)."""
    ux = rng.random(m)
    uy = rng.random(m)
    if spec.kind == "laplace_het":
        s = -np.log1p(-uy) / (ux + 1.0)
        return -np.expm1(-(ux + 1.0) * s)
    x = 2.0 * ux - 1.0
    sigma = np.abs(1.0 - 2.0 * x * x) + 0.1
    s = sigma * np.abs(ndtri(0.5 + 0.5 * uy))
    return 2.0 * ndtr(s / sigma) - 1.0


def marginal_coverage_table(config: ExperimentConfig) -> list[tuple]:
    """Rows ``(alpha, pipeline, coverage, lower, upper, stderr)``."""
    spec = DgpSpec(config.dgp, seed=config.seed)
    n = config.n_calibration
    reps = config.repetitions
    rows = []
    draws = {
        "base": lambda rng, m: _marginal_scores(spec, rng, m),
        "corrected": lambda rng, m: _corrected_uniforms(spec, rng, m),
    }
    for alpha in config.alphas:
        k = quantile_index(n, alpha)
        lower = 1.0 - alpha
        upper = min(1.0 - alpha + 1.0 / (n + 1), 1.0)
        for name, draw in draws.items():
            rng = np.random.Generator(
                np.random.Philox([config.seed, int(1000 * alpha),
                                  0 if name == "base" else 1])
            )
            samples = draw(rng, reps * (n + 1)).reshape(reps, n + 1)
            cal, tests = samples[:, :n], samples[:, n]
            if k > n:
                hits = np.ones(reps, dtype=bool)
            else:
                hits = tests <= np.partition(cal, k - 1, axis=1)[:, k - 1]
            coverage = float(hits.mean())
            stderr = math.sqrt(max(coverage * (1.0 - coverage), 1e-12) / reps)
            rows.append((float(alpha), name, coverage, lower, upper, stderr))
    return rows


def run_marginal_check(config: ExperimentConfig) -> list[Path]:
    """Empirical marginal coverage versus the finite-sample bracket."""
    out = _out_dir(config)
    rows = marginal_coverage_table(config)
    for alpha, name, coverage, lower, upper, stderr in rows:
        if not lower - 3 * stderr <= coverage <= upper + 3 * stderr:
            log.warning(
                "%s coverage %.4f at alpha=%.2f outside bracket "
                "[%.4f, %.4f] +/- 3 x %.4f",
                name, coverage, alpha, lower, upper, stderr,
            )
    path = out / "marginal_check.csv"
    write_csv(path, ("alpha", "pipeline", "coverage", "lower", "upper",
                     "stderr"), rows)
    files = [path, write_manifest(out, config, [path])]
    return files


RUNNERS = {
    "toy": run_toy,
    "convergence": run_convergence,
    "illustration_ks": run_illustration_ks,
    "marginal_check": run_marginal_check,
}


def run_experiment(config: ExperimentConfig) -> list[Path]:
    return RUNNERS[config.experiment](config)
