import numpy as np
import pytest

from stgp import diagnostics as dg


def test_identical_chains_rhat_near_one():
    x = np.random.default_rng(0).normal(size=1000)
    r = dg.gelman_rubin(np.stack([x, x, x, x]))[0]
    assert 1.0 <= r <= 1.01


def test_separated_chains_rhat_large():
    rng = np.random.default_rng(1)
    draws = np.stack([rng.normal(0, 1, 500), rng.normal(10, 1, 500)])
    assert dg.gelman_rubin(draws)[0] > 3


def test_rhat_hand_formula():
    # two chains, no split: B/n = var of chain means, W = mean within-chain variance
    a = np.array([1.0, 2.0, 3.0, 4.0])
    b = np.array([2.0, 3.0, 4.0, 7.0])
    n = 4
    W = (np.var(a, ddof=1) + np.var(b, ddof=1)) / 2
    B = n * np.var([a.mean(), b.mean()], ddof=1)
    expected = np.sqrt(((n - 1) / n * W + B / n) / W)
    assert expected > 1
    assert dg.gelman_rubin(np.stack([a, b]), split=False)[0] == pytest.approx(expected, rel=1e-14)


def test_rhat_iid_chains_property():
    failures = 0
    for rep in range(20):
        draws = np.random.default_rng(100 + rep).normal(size=(4, 1000))
        failures += dg.gelman_rubin(draws)[0] >= 1.05
    assert failures <= 1


def test_rhat_zero_variance_is_inf():
    assert dg.gelman_rubin(np.ones((4, 100)))[0] == np.inf


def test_rhat_never_below_one():
    rng = np.random.default_rng(2)
    for _ in range(50):
        assert dg.gelman_rubin(rng.normal(size=(3, 40)))[0] >= 1.0


def test_rhat_shape_errors():
    with pytest.raises(ValueError):
        dg.gelman_rubin(np.ones((4, 2)))


def test_quantiles_constant_and_linear():
    assert dg.quantile_summary(np.full(50, 3.25)) == (3.25, 3.25, 3.25)
    lo, med, hi = dg.quantile_summary(np.arange(1, 1001))
    assert med == 500.5
    # linear interpolation: position p*(n-1) into the sorted sample
    assert lo == pytest.approx(1 + 0.025 * 999)
    assert hi == pytest.approx(1 + 0.975 * 999)


def test_summarize_pools_chains():
    draws = np.arange(1, 1001, dtype=float).reshape(2, 500, 1)
    row = dg.summarize(draws)[0]
    assert row["median"] == 500.5 and row["parameter"] == "p0"


def test_ess_iid_close_to_n():
    draws = np.random.default_rng(3).normal(size=(4, 1000))
    e = dg.ess(draws)[0]
    assert 3000 < e < 5000


def test_ess_ar1_matches_theory():
    rng = np.random.default_rng(4)
    rho, n = 0.8, 20000
    x = np.empty((2, n))
    for c in range(2):
        eps = rng.normal(size=n)
        x[c, 0] = eps[0] / np.sqrt(1 - rho**2)
        for t in range(1, n):
            x[c, t] = rho * x[c, t - 1] + eps[t]
    theory = 2 * n * (1 - rho) / (1 + rho)
    assert dg.ess(x)[0] == pytest.approx(theory, rel=0.15)


def test_mcse_iid():
    draws = np.random.default_rng(5).normal(size=(4, 2500))
    assert dg.mcse_mean(draws)[0] == pytest.approx(1 / 100, rel=0.1)


def test_format_table():
    text = dg.format_table([{"a": 1.23456, "b": "x"}])
    assert "1.235" in text and "b" in text.splitlines()[0]
