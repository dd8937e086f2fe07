"""Acceptance criteria, one test each. A PASS/FAIL line per criterion is printed
in the terminal summary.

Run only these with ``pytest tests/test_acceptance.py -v``. The slow ones (refit
LOO, parameter recovery, forecast and speedup) take several minutes each.
"""
import functools
import math
import os
import time

import numpy as np
import pytest
from scipy import stats

from stgp import diagnostics as dg
from stgp import evaluate as ev
from stgp import experiments as ex
from stgp import gp
from stgp import kernels as kn
from stgp import likelihood as lk
from stgp.model import ModelSpec, ModelTarget, make_cells, spatiotemporal_kernel
from stgp.sampler import GaussianTarget, SamplerConfig, sample

from conftest import ACCEPTANCE_RESULTS, random_tree, toy_dataset


def criterion(key, title):
    """Record PASS or FAIL for ``key``; the test body returns a detail string."""
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except BaseException as exc:
                msg = (str(exc).strip().splitlines() or [type(exc).__name__])[0]
                ACCEPTANCE_RESULTS[key] = ("FAIL", title, msg[:200])
                raise
            ACCEPTANCE_RESULTS[key] = ("PASS", title, detail or "")
        return wrapper
    return deco


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0


def random_smooth_kernel(rng):
    return (kn.matern32(float(rng.uniform(0.3, 2.0)), float(rng.uniform(0.5, 3.0)), dims=(0,))
            + kn.rbf(float(rng.uniform(0.3, 2.0)), float(rng.uniform(0.3, 1.5)), dims=(1, 2))
            + kn.bias(float(rng.uniform(0.05, 1.0))))


# ---------------------------------------------------------------- 1

@criterion("1", "kernel PSD suite")
def test_c01_kernel_psd():
    rng = np.random.default_rng(2024)
    worst = np.inf
    with Timer() as t:
        for _ in range(200):
            e = random_tree(rng, depth=3, D=3)
            n = int(rng.integers(1, 31))
            X = rng.normal(size=(n, 3)) * 3
            lam = np.linalg.eigvalsh(kn.eval_gram(e, X))
            worst = min(worst, lam.min() / max(1.0, lam.max()))
            assert lam.min() >= -1e-8 * max(1.0, lam.max())
    assert t.seconds < 30
    return f"worst scaled eigenvalue {worst:.2e}, {t.seconds:.1f} s"


# ---------------------------------------------------------------- 2

@criterion("2", "exact-conditioning oracle")
def test_c02_exact_conditioning():
    rng = np.random.default_rng(7)
    err = 0.0
    with Timer() as t:
        for _ in range(50):
            e = random_smooth_kernel(rng)
            X, Xs = rng.normal(size=(8, 3)) * 2, rng.normal(size=(4, 3)) * 2
            f, m = rng.normal(size=8), float(rng.normal())
            mom = gp.exact_condition(e, X, f, Xs, mean_const=m, jitter=0.0)
            K = kn.eval_gram(e, np.vstack([X, Xs]))
            Kinv = np.linalg.inv(K[:8, :8])
            mean = m + K[8:, :8] @ Kinv @ (f - m)
            cov = K[8:, 8:] - K[8:, :8] @ Kinv @ K[:8, 8:]
            err = max(err, np.max(np.abs(mom.mean - mean)), np.max(np.abs(mom.cov - cov)))
    assert err <= 1e-8
    assert t.seconds < 5
    return f"max abs error {err:.1e}, {t.seconds:.2f} s"


# ---------------------------------------------------------------- 3

@criterion("3", "SoR degeneracy")
def test_c03_sor_degeneracy():
    rng = np.random.default_rng(11)
    err, excess = 0.0, -np.inf
    for _ in range(20):
        e = random_smooth_kernel(rng)
        X = rng.normal(size=(10, 3)) * 2
        Q = gp.sor_covariance(X, X, e, jitter=0.0)
        err = max(err, np.max(np.abs(Q - kn.eval_gram(e, X))))
        Z = X[rng.choice(10, size=4, replace=False)] + 0.1 * rng.normal(size=(4, 3))
        Qm = gp.sor_covariance(Z, X, e, jitter=0.0)
        excess = max(excess, np.max(np.diag(Qm) - kn.eval_diag(e, X)))
    assert err <= 1e-8
    assert excess <= 1e-8
    return f"M = n error {err:.1e}; M < n max diag(Q) - diag(K) {excess:.1e}"


# ---------------------------------------------------------------- 4

@criterion("4", "gradient check")
def test_c04_gradient():
    with Timer() as t:
        spec = ModelSpec(spatiotemporal_kernel(), "negbin", stride=2)
        target = ModelTarget(spec, make_cells(toy_dataset(2, 4, seed=3), spec))
        rng = np.random.default_rng(17)
        worst, h = 0.0, 1e-5
        for _ in range(5):
            z = target.init_point() + rng.uniform(-0.5, 0.5, target.dim)
            _, g = target.value_and_grad(z)
            fd = np.empty_like(z)
            for k in range(z.size):
                d = np.zeros_like(z)
                d[k] = h
                fd[k] = (target.value_and_grad(z + d)[0] - target.value_and_grad(z - d)[0]) / (2 * h)
            worst = max(worst, np.max(np.abs(g - fd) / np.maximum(1.0, np.abs(fd))))
    assert worst <= 1e-4
    assert t.seconds < 10
    return f"max relative error {worst:.1e}, {t.seconds:.1f} s"


# ---------------------------------------------------------------- 5

@criterion("5", "likelihood normalization")
def test_c05_normalization():
    rng = np.random.default_rng(5)
    y = np.arange(2001.0)
    worst = 0.0
    for _ in range(10):
        mu, phi, pi = rng.uniform(0.1, 50), rng.uniform(0.05, 1.0), rng.uniform(0.01, 0.9)
        for logp in (lk.nb_logpmf(y, mu, phi), lk.zinb_logpmf(y, mu, phi, pi)):
            worst = max(worst, abs(math.fsum(np.exp(logp)) - 1.0))
    assert worst <= 1e-8
    yy = np.arange(21.0)
    lim = np.max(np.abs(np.exp(lk.nb_logpmf(yy, 3.0, 1e-8)) - stats.poisson(3.0).pmf(yy)))
    assert lim <= 1e-4
    return f"max |sum - 1| {worst:.1e}; Poisson limit gap {lim:.1e}"


# ---------------------------------------------------------------- 6

@criterion("6", "HMC correctness on a 2-D standard normal")
def test_c06_hmc():
    cfg = SamplerConfig(n_chains=4, warmup=500, n_samples=1000, seed=21)
    with Timer() as t:
        s = sample(GaussianTarget(np.zeros(2)), cfg)
    mean = s.flat().mean(axis=0)
    mcse = dg.mcse_mean(s.draws)
    rhat = dg.gelman_rubin(s.draws)
    assert s.draws.shape == (4, 1000, 2)
    assert s.n_leapfrog.min() >= 15 and s.n_leapfrog.max() <= 20
    assert np.all(np.abs(mean) <= 3 * mcse)
    assert np.all(rhat < 1.05)
    again = sample(GaussianTarget(np.zeros(2)), cfg)
    assert np.array_equal(s.draws, again.draws)
    assert t.seconds < 60
    return (f"|mean|/mcse {np.max(np.abs(mean) / mcse):.2f}, R-hat {rhat.max():.4f}, "
            f"{t.seconds:.1f} s")


# ---------------------------------------------------------------- 7

@criterion("7", "CRPS two-form equivalence")
def test_c07_crps_two_forms():
    # One 500/500 estimate has a 5-14% Monte Carlo sd on these cases, so the
    # comparison uses the mean of 400 independent estimates (sd about 0.7%).
    cases = [(3.0, 0.5, 2), (10.0, 0.25, 12), (0.8, 1.0, 0), (25.0, 0.1, 18), (6.0, 2.0, 9)]
    rng = np.random.default_rng(3)
    worst, worst_single = 0.0, 0.0
    with Timer() as t:
        for mu, phi, y in cases:
            r = 1 / phi
            exact = ev.crps_integral_discrete(stats.nbinom(r, r / (mu + r)).cdf, y, 5000)
            draws = lk.sample_counts("negbin", mu, rng, phi=phi, size=(400, 1000))
            est = np.array([ev.crps_empirical(d[:500], d[500:], y) for d in draws])
            worst = max(worst, abs(est.mean() - exact) / exact)
            worst_single = max(worst_single, abs(est[0] - exact) / exact)
    assert worst <= 0.02
    assert t.seconds < 10
    return (f"max relative gap {100 * worst:.2f}% (single estimate {100 * worst_single:.1f}%), "
            f"{t.seconds:.1f} s")


# ---------------------------------------------------------------- 8

@criterion("8a", "LOO oracle, conjugate Gaussian")
def test_c08a_loo_conjugate():
    with Timer() as t:
        rng = np.random.default_rng(4)
        N, sigma, m0, s0 = 20, 1.0, 0.0, 2.0
        y = rng.normal(0.5, sigma, N)
        v_post = 1 / (1 / s0**2 + N / sigma**2)
        m_post = v_post * (m0 / s0**2 + y.sum() / sigma**2)
        theta = rng.normal(m_post, math.sqrt(v_post), 2000)
        ll = stats.norm(theta[:, None], sigma).logpdf(y[None, :])
        v = 1 / (1 / s0**2 + (N - 1) / sigma**2)
        exact = sum(stats.norm(v * (m0 / s0**2 + np.delete(y, i).sum() / sigma**2),
                               math.sqrt(v + sigma**2)).logpdf(y[i]) for i in range(N))
        res = ev.loo_estimate(ev.LogLikMatrix(ll, np.repeat(np.arange(4), 500)))
    gap = abs(res.elpd - exact)
    assert gap <= 0.5
    assert t.seconds < 60
    return f"PSIS {res.elpd:.3f} vs analytic {exact:.3f}"


@pytest.mark.slow
@criterion("8b", "LOO oracle, brute-force refits")
def test_c08b_loo_refit():
    r = ex.refit_loo()
    gap = abs(r["psis_elpd"] - r["brute_elpd"])
    assert r["n_cells"] == 12
    assert gap <= 1.0
    assert r["seconds"] < 15 * 60
    return (f"PSIS {r['psis_elpd']:.3f} vs refit {r['brute_elpd']:.3f}, "
            f"max k {np.max(r['pareto_k']):.2f}, {r['seconds']:.0f} s")


# ---------------------------------------------------------------- 9 and 10

def _recovery(horizon):
    # flake policy: one retry with a new sampler seed
    fit = ex.recovery_fit(horizon=horizon, sampler_seed=1)
    ok = fit["max_rhat"] < 1.1 and all(fit["covered"].values())
    if not ok:
        fit = ex.recovery_fit(horizon=horizon, sampler_seed=2)
    return fit


@pytest.fixture(scope="module")
def recovery():
    return _recovery(0)


@pytest.fixture(scope="module")
def holdout_fit():
    return _recovery(4)


@pytest.mark.slow
@criterion("9", "parameter recovery")
def test_c09_recovery(recovery):
    chk = ex.recovery_check(recovery)
    cov = chk["covered"]
    assert chk["max_rhat"] < 1.1
    for name in ("len_space", "sigma_space", "phi"):
        assert cov[name], f"true {name} outside the 95% interval"
    assert 0.05 <= chk["bayes_p"] <= 0.95
    return (f"max R-hat {chk['max_rhat']:.3f}, bayes_p {chk['bayes_p']:.2f}, "
            f"covered {sum(cov.values())}/{len(cov)}, fit {recovery['seconds']:.0f} s")


@pytest.mark.slow
@criterion("10", "forecast pipeline end-to-end")
def test_c10_forecast(holdout_fit):
    with Timer() as t:
        chk = ex.forecast_check(holdout_fit, draws=1000)
    assert chk["n_cells"] == 40
    assert 0.85 <= chk["coverage"] <= 1.0
    assert np.isfinite(chk["crps"])
    assert chk["crps"] < chk["crps_baseline"]
    assert t.seconds < 5 * 60
    return (f"coverage {100 * chk['coverage']:.0f}%, CRPS {chk['crps']:.3f} vs baseline "
            f"{chk['crps_baseline']:.3f}, {t.seconds:.0f} s after the fit")


# ---------------------------------------------------------------- 11

@criterion("11", "Freeman-Tukey, R-hat and quantile unit examples")
def test_c11_units():
    with Timer() as t:
        assert ev.freeman_tukey([2.0, 5.0, 11.0], [2.0, 5.0, 11.0]) == 0.0
        assert ev.freeman_tukey([4], [1]) == 1.0
        assert ev.freeman_tukey([0, 9], [1, 4]) == 2.0
        x = np.random.default_rng(0).normal(size=1000)
        r = dg.gelman_rubin(np.stack([x, x, x, x]))[0]
        assert 1.0 <= r <= 1.01
        rng = np.random.default_rng(1)
        assert dg.gelman_rubin(np.stack([rng.normal(0, 1, 500), rng.normal(10, 1, 500)]))[0] > 3
        fails = sum(dg.gelman_rubin(np.random.default_rng(100 + k).normal(size=(4, 1000)))[0] >= 1.05
                    for k in range(20))
        assert fails <= 1
        assert dg.quantile_summary(np.full(100, 2.5)) == (2.5, 2.5, 2.5)
        assert dg.quantile_summary(np.arange(1, 1001))[1] == 500.5
    assert t.seconds < 5
    return f"{t.seconds:.2f} s"


# ---------------------------------------------------------------- 12

@pytest.mark.slow
@criterion("12", "chain-parallel speedup")
def test_c12_speedup():
    cpus = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count()
    if cpus >= 4:
        r = ex.speedup_benchmark(threads=4)
    else:
        # the full workload cannot show a speedup without 4 cores; a shortened
        # run still measures the ratio on this machine
        r = ex.speedup_benchmark(threads=4, warmup=150, samples=150)
    detail = f"{cpus} CPU(s), ratio {r['ratio']:.2f} ({r['parallel']:.0f} s / {r['serial']:.0f} s)"
    assert r["ratio"] < 0.6, f"parallel/serial wall time {detail}; needs >= 4 cores"
    return detail
