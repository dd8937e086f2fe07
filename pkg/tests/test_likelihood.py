import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from stgp import likelihood as lk

Y = np.arange(0, 2001, dtype=float)


def test_crude_rate_ratio():
    y = np.array([[60.0, 40.0]])
    pop = np.array([[5e5, 5e5]])
    assert lk.crude_rate(y, pop) == pytest.approx(1e-4, rel=1e-15)


def test_crude_rate_two_by_two():
    assert lk.crude_rate([[1, 2], [3, 4]], [[10, 10], [10, 10]]) == 0.25


def test_crude_rate_zero_cases_warns():
    with pytest.warns(UserWarning):
        assert lk.crude_rate(np.zeros((2, 2)), np.ones((2, 2))) == 0.0


def test_crude_rate_errors():
    with pytest.raises(lk.LikelihoodError):
        lk.crude_rate(np.ones((2, 2)), np.zeros((2, 2)))
    with pytest.raises(lk.LikelihoodError):
        lk.crude_rate(np.ones((2, 2)), np.ones((2, 3)))


def test_crude_rate_respects_mask():
    y = np.array([[1.0, 100.0]])
    pop = np.array([[10.0, 10.0]])
    assert lk.crude_rate(y, pop, np.array([[True, False]])) == 0.1


def test_mean_counts():
    assert lk.mean_counts(3.0, 0.0) == 3.0
    assert lk.mean_counts(2.0, math.log(3.0)) == pytest.approx(6.0, rel=1e-15)


def test_mean_counts_clamped():
    with pytest.warns(lk.ClampWarning):
        mu = lk.mean_counts(1.0, np.array([-45.0]))
    assert mu[0] == pytest.approx(math.exp(-30), rel=1e-15)
    assert mu[0] == pytest.approx(9.36e-14, rel=1e-3)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        lk.mean_counts(1.0, np.array([-30.0, 30.0]))  # boundary is not clamped


def test_nb_hand_value():
    assert lk.nb_logpmf(0.0, 1.0, 1.0) == pytest.approx(math.log(0.5), abs=1e-15)
    assert lk.nb_logpmf(0.0, 1.0, 1.0) == pytest.approx(-0.693147, abs=1e-6)


def test_nb_matches_scipy_parameterisation():
    mu, phi = 4.2, 0.35
    r = 1 / phi
    ref = stats.nbinom(r, r / (mu + r)).logpmf(np.arange(50))
    np.testing.assert_allclose(lk.nb_logpmf(np.arange(50.0), mu, phi), ref, rtol=1e-12)


def test_nb_normalises():
    assert math.fsum(np.exp(lk.nb_logpmf(Y, 5.0, 0.5))) == pytest.approx(1.0, abs=1e-8)


def test_nb_moments():
    mu, phi = 5.0, 0.5
    p = np.exp(lk.nb_logpmf(Y, mu, phi))
    mean = np.sum(Y * p)
    assert mean == pytest.approx(mu, rel=1e-10)
    assert np.sum((Y - mean) ** 2 * p) == pytest.approx(mu + phi * mu**2, rel=1e-8)


def test_nb_poisson_limit():
    y = np.arange(21.0)
    diff = lk.nb_logpmf(y, 3.0, 1e-8) - stats.poisson(3.0).logpmf(y)
    assert np.max(np.abs(diff)) <= 1e-4
    np.testing.assert_allclose(lk.poisson_logpmf(y, 3.0), stats.poisson(3.0).logpmf(y), rtol=1e-13)


def test_zinb_hand_value():
    got = lk.zinb_logpmf(0.0, 1.0, 1.0, 0.5)
    assert got == pytest.approx(math.log(0.75), abs=1e-15)
    assert got == pytest.approx(-0.287682, abs=1e-6)


def test_zinb_logit_form_matches():
    y = np.arange(30.0)
    lam = -0.4
    pi = 1 / (1 + math.exp(-lam))
    np.testing.assert_allclose(lk.zinb_logpmf_logit(y, 2.5, 0.7, lam), lk.zinb_logpmf(y, 2.5, 0.7, pi),
                               rtol=1e-13)


def test_zinb_no_inflation_limit():
    y = np.arange(40.0)
    np.testing.assert_allclose(lk.zinb_logpmf(y, 3.3, 0.4, 1e-12), lk.nb_logpmf(y, 3.3, 0.4), atol=1e-9)


def test_zinb_normalises():
    assert math.fsum(np.exp(lk.zinb_logpmf(Y, 4.0, 0.7, 0.3))) == pytest.approx(1.0, abs=1e-8)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 50), st.floats(0.01, 5), st.floats(1e-6, 0.99), st.integers(0, 500))
def test_pmfs_bounded_by_one(mu, phi, pi, y):
    for val in (lk.nb_logpmf(float(y), mu, phi), lk.zinb_logpmf(float(y), mu, phi, pi),
                lk.poisson_logpmf(float(y), mu)):
        assert 0.0 <= math.exp(val) <= 1.0


def test_loglik_single_and_pair():
    y, f, e = np.array([3.0]), np.array([0.2]), np.array([2.0])
    one = lk.loglik_dataset("negbin", y, f, e, phi=0.4)
    assert one == pytest.approx(float(lk.nb_logpmf(3.0, 2.0 * math.exp(0.2), 0.4)), rel=1e-15)
    y2, f2, e2 = np.array([3.0, 0.0]), np.array([0.2, -1.0]), np.array([2.0, 5.0])
    two = lk.loglik_dataset("negbin", y2, f2, e2, phi=0.4)
    other = float(lk.nb_logpmf(0.0, 5.0 * math.exp(-1.0), 0.4))
    assert two == pytest.approx(one + other, rel=1e-14)


@pytest.mark.parametrize("family", lk.FAMILIES)
def test_loglik_vs_loop(family):
    rng = np.random.default_rng(4)
    y = rng.poisson(3, 10).astype(float)
    f, e = rng.normal(size=10), rng.uniform(0.5, 5, 10)
    phi, lam = 0.6, -0.8
    total = lk.loglik_dataset(family, y, f, e, phi=phi, lam=lam)
    pi = 1 / (1 + math.exp(-lam))
    loop = 0.0
    for yi, fi, ei in zip(y, f, e):
        mu = ei * math.exp(fi)
        r = 1 / phi
        nb = (math.lgamma(yi + r) - math.lgamma(r) - math.lgamma(yi + 1)
              + r * math.log(r / (mu + r)) + yi * math.log(mu / (mu + r)))
        if family == "negbin":
            loop += nb
        elif family == "poisson":
            loop += yi * math.log(mu) - mu - math.lgamma(yi + 1)
        elif yi == 0:
            loop += math.log(pi + (1 - pi) * (r / (mu + r)) ** r)
        else:
            loop += math.log(1 - pi) + nb
    assert total == pytest.approx(loop, abs=1e-12 * max(1, abs(loop)))


def test_loglik_order_invariant_and_masked():
    rng = np.random.default_rng(5)
    y = rng.poisson(4, 30).astype(float)
    f, e = rng.normal(size=30), rng.uniform(1, 3, 30)
    perm = rng.permutation(30)
    a = lk.loglik_dataset("negbin", y, f, e, phi=0.3)
    b = lk.loglik_dataset("negbin", y[perm], f[perm], e[perm], phi=0.3)
    assert a == b
    mask = np.ones(30, bool)
    mask[:5] = False
    masked = lk.loglik_dataset("negbin", y, f, e, phi=0.3, mask=mask)
    assert masked == pytest.approx(lk.loglik_dataset("negbin", y[5:], f[5:], e[5:], phi=0.3), rel=1e-15)


def test_loglik_misaligned():
    with pytest.raises(lk.LikelihoodError):
        lk.loglik_dataset("negbin", np.ones(3), np.ones(4), np.ones(3), phi=1.0)


def test_unknown_family():
    with pytest.raises(lk.LikelihoodError):
        lk.family_logpmf("binomial", 1.0, 1.0)


def test_sample_poisson_mean():
    y = lk.sample_counts("poisson", 2.0, np.random.default_rng(0), size=200_000)
    mcse = math.sqrt(2.0 / y.size)
    assert abs(y.mean() - 2.0) <= 3 * mcse


def test_sample_nb_variance():
    y = lk.sample_counts("negbin", 5.0, np.random.default_rng(1), phi=0.5, size=1_000_000)
    assert y.mean() == pytest.approx(5.0, rel=0.01)
    assert y.var() == pytest.approx(17.5, rel=0.05)


def test_sample_zinb_mean_and_boundary():
    y = lk.sample_counts("zinb", 5.0, np.random.default_rng(2), phi=0.5, pi=0.3, size=1_000_000)
    assert y.mean() == pytest.approx(5.0 * 0.7, rel=0.01)
    zeros = lk.sample_counts("zinb", 5.0, np.random.default_rng(3), phi=0.5, pi=1.0, size=1000)
    assert np.all(zeros == 0)
