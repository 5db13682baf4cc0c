"""Acceptance suite: one test and one printed pass/fail line per criterion.

Each criterion is exercised end to end with independently derived targets
(closed forms, finite differences, quadrature or Monte-Carlo bands).
"""

import csv
import math
import time

import numpy as np
from scipy.special import ndtr, ndtri

from pivotalcp import diagnostics, synth
from pivotalcp.density import (
    OracleModel,
    SplineFlowModel,
    spline_forward,
    spline_inverse,
)
from pivotalcp.experiments import (
    ExperimentConfig,
    conditional_gap_mc,
    marginal_coverage_table,
    run_convergence,
    run_toy,
)
from pivotalcp.nn import Mlp
from pivotalcp.pit import build_pipeline, coverage_indicators
from pivotalcp.scores import Dataset, ScoreFunction


def _report(num, name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"[ACCEPTANCE {num:02d}] {name}: {status} {detail}".rstrip())
    assert ok, f"criterion {num} ({name}) failed: {detail}"


def _read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestAcceptance:
    def test_01_marginal_validity(self):
        # coverage of base and corrected pipelines inside the
        # [1 - alpha, 1 - alpha + 1/(n+1)] bracket +/- 3 binomial sigma
        start = time.monotonic()
        failures = []
        for dgp in ("candy_gaussian", "laplace_het"):
            for n in (99, 999):
                config = ExperimentConfig(
                    experiment="marginal_check", dgp=dgp, n_calibration=n,
                    repetitions=2000, alphas=(0.1, 0.2, 0.3), seed=0,
                )
                for alpha, name, cov, lo, hi, se in \
                        marginal_coverage_table(config):
                    if not lo - 3 * se <= cov <= hi + 3 * se:
                        failures.append((dgp, n, alpha, name, cov))
        elapsed = time.monotonic() - start
        ok = not failures and elapsed < 60.0
        _report(1, "marginal validity bracket", ok,
                f"violations={failures} elapsed={elapsed:.1f}s")

    def test_02_pit_uniformity(self):
        # oracle-corrected calibration scores are Unif(0, 1) at n = 2000
        results = {}
        for dgp in ("laplace_het", "candy_gaussian"):
            spec = synth.DgpSpec(dgp, seed=0)
            cal = synth.sample(spec, 2000, seed=12).with_role("calibration")
            model = synth.oracle_model(spec, "absolute_residual")
            pipe = build_pipeline(ScoreFunction("absolute_residual"), model,
                                  cal)
            results[dgp] = diagnostics.ks_uniform_test_passes(
                pipe.corrected_calibration_scores, level=0.01
            )
        ok = all(results.values())
        _report(2, "oracle PIT uniformity (KS, level 0.01)", ok,
                f"results={results}")

    def test_03_ks_coverage_bound(self):
        # base-score conditional coverage gap <= d_KS + 3 sigma at each x
        spec = synth.DgpSpec("laplace_het", seed=0)
        alpha, n, trials = 0.1, 1000, 10_000
        rows = []
        for x in (0.0, 0.5, 1.0):
            d_ks = diagnostics.ks_distance_functions(
                lambda t: synth.oracle_score_cdf(spec, x, t),
                lambda t: synth.oracle_marginal_cdf(spec, t),
                np.linspace(0.0, 40.0, 4097),
            )
            gap, stderr = conditional_gap_mc(
                spec, x, alpha, n, trials, seed=17 + int(10 * x)
            )
            rows.append((x, gap, d_ks, 3 * stderr))
        ok = all(gap <= d_ks + band for _, gap, d_ks, band in rows)
        detail = "; ".join(
            f"x={x:.1f} gap={gap:.4f} bound={d_ks:.4f}+{band:.4f}"
            for x, gap, d_ks, band in rows
        )
        _report(3, "conditional gap within KS bound", ok, detail)

    def test_04_toy_experiment(self, tmp_path):
        # spline flow at N=5000, n=1000: corrected MAE < base MAE on all
        # three (score, alpha) pairs; >= 9/10 bins within +/- 0.05
        start = time.monotonic()
        config = ExperimentConfig(experiment="toy", seed=0,
                                  out=str(tmp_path / "toy"))
        run_toy(config)
        elapsed = time.monotonic() - start

        mae = {}
        for r in _read_csv(tmp_path / "toy" / "toy_mae.csv"):
            mae[(r["score"], r["pipeline"])] = float(r["mae"])
        scores = sorted({k for k, _ in mae})
        mae_ok = all(mae[(s, "corrected")] < mae[(s, "base")] for s in scores)

        bins_ok = {}
        for r in _read_csv(tmp_path / "toy" / "toy_coverage.csv"):
            if r["pipeline"] != "corrected":
                continue
            target = 1.0 - float(r["alpha"])
            key = r["score"]
            bins_ok.setdefault(key, 0)
            if abs(float(r["coverage"]) - target) <= 0.05:
                bins_ok[key] += 1
        coverage_ok = all(v >= 9 for v in bins_ok.values())

        ok = mae_ok and coverage_ok and elapsed < 180.0
        pairs = ", ".join(
            "%s: %.4f<%.4f" % (s, mae[(s, "corrected")], mae[(s, "base")])
            for s in scores
        )
        detail = (f"mae={{{pairs}}} bins_within_band={bins_ok} "
                  f"elapsed={elapsed:.0f}s")
        _report(4, "toy study MAE reduction and per-bin coverage", ok, detail)

    def test_05_convergence(self, tmp_path):
        # L1 gap at N=5000 at most baseline/3 (spline) and baseline/2 (MDN)
        start = time.monotonic()
        config = ExperimentConfig(experiment="convergence", seed=0,
                                  N_ladder=(0, 5000), n_runs=5,
                                  out=str(tmp_path / "conv"))
        run_convergence(config)
        elapsed = time.monotonic() - start

        mean = {}
        for r in _read_csv(tmp_path / "conv" / "convergence_summary.csv"):
            mean[(r["model"], int(r["N"]))] = float(r["mean"])
        baseline = mean[("spline_flow", 0)]
        spline_ok = mean[("spline_flow", 5000)] <= baseline / 3.0
        mdn_ok = mean[("mdn", 5000)] <= baseline / 2.0
        ok = spline_ok and mdn_ok and elapsed < 600.0
        detail = (f"baseline={baseline:.4f} "
                  f"spline={mean[('spline_flow', 5000)]:.4f} "
                  f"mdn={mean[('mdn', 5000)]:.4f} elapsed={elapsed:.0f}s")
        _report(5, "convergence gap reduction", ok, detail)

    def test_06_gradient_correctness(self):
        # backward pass vs central finite differences, 50 random nets
        rng = np.random.Generator(np.random.Philox(23))
        worst = 0.0
        for case in range(50):
            depth = int(rng.integers(1, 4))
            sizes = [int(rng.integers(1, 5)) for _ in range(depth + 1)]
            net = Mlp(sizes, seed=100 + case)
            params = [np.asarray(rng.normal(0.0, 0.7, p.shape))
                      for p in net.parameters()]
            net.set_parameters(params)
            X = rng.normal(size=(int(rng.integers(1, 6)), sizes[0]))
            G = rng.normal(size=(X.shape[0], sizes[-1]))
            _, cache = net.forward_batch(X)
            wg, bg, _ = net.backward(cache, G)

            def loss():
                out, _ = net.forward_batch(X)
                return float((out * G).sum())

            step = 1e-5
            for analytic, p in zip(wg + bg, net.parameters()):
                it = np.nditer(p, flags=["multi_index"])
                for _ in it:
                    idx = it.multi_index
                    orig = p[idx]
                    p[idx] = orig + step
                    hi = loss()
                    p[idx] = orig - step
                    lo = loss()
                    p[idx] = orig
                    fd = (hi - lo) / (2 * step)
                    rel = abs(analytic[idx] - fd) / max(
                        abs(fd), abs(analytic[idx]), 1e-6
                    )
                    worst = max(worst, rel)
        ok = worst < 1e-4
        _report(6, "MLP gradients vs finite differences", ok,
                f"worst_rel={worst:.2e}")

    def test_07_composition_invariance(self):
        # region membership unchanged when the base score is composed
        # with an increasing map and the model CDF is composed with its
        # inverse; 1000 random (calibration set, test point) instances
        transforms = {
            "affine": (lambda s: 2.5 * s - 1.3, lambda t: (t + 1.3) / 2.5),
            "cubic": (lambda s: s ** 3, np.cbrt),
            "exp": (np.exp, np.log),
        }
        rng = np.random.Generator(np.random.Philox(31))
        base = ScoreFunction("raw_response",
                             predictor=lambda x: np.zeros(1))
        instances = 0
        mismatches = {name: 0 for name in transforms}
        for _ in range(200):
            sigma = float(rng.uniform(0.5, 2.0))
            alpha = float(rng.uniform(0.05, 0.5))
            n_cal, n_test = 30, 5
            x_cal = rng.uniform(0, 1, (n_cal, 1))
            y_cal = rng.normal(0.0, sigma, (n_cal, 1))
            x_test = rng.uniform(0, 1, (n_test, 1))
            y_test = rng.normal(0.0, sigma, (n_test, 1))

            model = OracleModel(
                "custom",
                custom_cdf=lambda x, t, s=sigma: float(ndtr(t / s)),
                custom_density=lambda x, t, s=sigma: float(
                    math.exp(-0.5 * (t / s) ** 2) / (s * math.sqrt(2 * math.pi))
                ),
                custom_quantile=lambda x, u, s=sigma: float(s * ndtri(u)),
            )
            pipe = build_pipeline(
                base, model, Dataset(x_cal, y_cal, "calibration")
            )
            reference = coverage_indicators(
                pipe, Dataset(x_test, y_test, "test"), alpha
            )
            for name, (g, g_inv) in transforms.items():
                model_g = OracleModel(
                    "custom",
                    custom_cdf=lambda x, t, s=sigma, gi=g_inv: float(
                        ndtr(gi(t) / s)
                    ),
                    custom_density=lambda x, t, s=sigma, gi=g_inv: float(
                        math.exp(-0.5 * (gi(t) / s) ** 2)
                        / (s * math.sqrt(2 * math.pi))
                    ),
                    custom_quantile=lambda x, u, s=sigma, gf=g: float(
                        gf(s * ndtri(u))
                    ),
                )
                pipe_g = build_pipeline(
                    base, model_g, Dataset(x_cal, g(y_cal), "calibration")
                )
                transformed = coverage_indicators(
                    pipe_g, Dataset(x_test, g(y_test), "test"), alpha
                )
                mismatches[name] += int(
                    not np.array_equal(reference, transformed)
                )
            instances += n_test
        ok = instances == 1000 and not any(mismatches.values())
        _report(7, "composition invariance of region membership", ok,
                f"instances={instances} mismatches={mismatches}")

    def test_08_hpd_volume(self):
        # standard normal, tau = phi(1.96): interval length 2 * 1.96
        tau = math.exp(-0.5 * 1.96 ** 2) / math.sqrt(2 * math.pi)
        vols, variances = [], []
        for seed in range(200):
            vol, se = diagnostics.hpd_volume_mc(
                sampler=lambda rng, x, B: rng.standard_normal(B),
                pdf=lambda x, Y: np.exp(-0.5 * Y ** 2) / math.sqrt(2 * math.pi),
                x=None, tau=tau, B=10_000, seed=seed,
            )
            vols.append(vol)
            variances.append(se ** 2)
        mean = float(np.mean(vols))
        combined_se = math.sqrt(sum(variances)) / len(vols)
        ok = abs(mean - 3.92) <= 3 * combined_se
        _report(8, "HPD volume Monte-Carlo", ok,
                f"mean={mean:.4f} target=3.92 3se={3 * combined_se:.4f}")

    def test_09_spline_round_trip(self):
        # |forward(inverse(u)) - u| < 1e-8 over 1000 random (x, u);
        # strict monotonicity over 10000 random score pairs
        rng = np.random.Generator(np.random.Philox(41))
        worst = 0.0
        monotone = True
        for seed in range(10):
            model = SplineFlowModel(p=1, n_bins=8, hidden=(16,),
                                    seed=seed)
            scaled = [p * 5.0 for p in model.trunk.parameters()]
            model.trunk.set_parameters(scaled)
            model.set_range(-2.0, 3.0)
            for _ in range(100):
                x = np.array([float(rng.uniform(0, 1))])
                u = float(rng.uniform(1e-3, 1 - 1e-3))
                s = spline_inverse(model, x, u)
                u2, _ = spline_forward(model, x, s)
                worst = max(worst, abs(u2 - u))
            X = rng.uniform(0, 1, (1000, 1))
            s1 = rng.uniform(-4.0, 5.0, 1000)
            s2 = s1 + rng.uniform(1e-9, 3.0, 1000)
            if not np.all(model.latent_many(X, s1) <
                          model.latent_many(X, s2)):
                monotone = False
        ok = worst < 1e-8 and monotone
        _report(9, "spline round trip and monotonicity", ok,
                f"worst_round_trip={worst:.2e} monotone={monotone}")

    def test_10_kl_quadrature(self):
        # closed forms: KL(N(0,1) || N(1,1)) = 1/2 and
        # KL(Exp(1) || Exp(2)) = 1 - log 2; nonnegativity on random pairs
        def normal_pdf(mu, sig):
            return lambda t: math.exp(-0.5 * ((t - mu) / sig) ** 2) / (
                sig * math.sqrt(2 * math.pi)
            )

        kl_norm = diagnostics.forward_kl_1d(
            normal_pdf(0.0, 1.0), normal_pdf(1.0, 1.0), (-12.0, 13.0)
        )
        kl_exp = diagnostics.forward_kl_1d(
            lambda t: math.exp(-t),
            lambda t: 2.0 * math.exp(-2.0 * t),
            (0.0, 40.0),
        )
        closed_ok = (abs(kl_norm - 0.5) < 1e-3
                     and abs(kl_exp - (1.0 - math.log(2.0))) < 1e-3)

        rng = np.random.Generator(np.random.Philox(47))
        nonneg_ok = True
        for _ in range(100):
            def mixture():
                w = float(rng.uniform(0.2, 0.8))
                m1, m2 = rng.uniform(-2, 2, 2)
                s1, s2 = rng.uniform(0.4, 1.5, 2)
                return lambda t: (w * normal_pdf(m1, s1)(t)
                                  + (1 - w) * normal_pdf(m2, s2)(t))

            kl = diagnostics.forward_kl_1d(mixture(), mixture(),
                                           (-14.0, 14.0), tol=1e-3)
            if not (np.isfinite(kl) and kl >= 0.0):
                nonneg_ok = False
        ok = closed_ok and nonneg_ok
        _report(10, "forward KL quadrature", ok,
                f"kl_normal={kl_norm:.6f} kl_exp={kl_exp:.6f} "
                f"nonneg_ok={nonneg_ok}")
