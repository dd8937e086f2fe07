"""Count observation models: offsets, NB / ZINB / Poisson log-pmfs, sampling.

NB is in mean/dispersion form: ``r = 1/phi``, ``p = r / (mu + r)``, so the
variance is ``mu + phi * mu**2`` and Poisson is the ``phi -> 0`` limit.

The log-pmfs take an ``xp`` namespace (numpy or jax.numpy) so the sampler
can differentiate the same code.
"""
from __future__ import annotations

import math
import warnings

import numpy as np
from scipy import special as sp_special

FAMILIES = ("negbin", "zinb", "poisson")
F_CLAMP = 30.0


class LikelihoodError(ValueError):
    pass


class ClampWarning(RuntimeWarning):
    pass


def _special(xp):
    if xp is np:
        return sp_special
    import jax.scipy.special as jsp

    return jsp


def crude_rate(y, pop, mask=None) -> float:
    """Total cases over total person-weeks; ``mask`` drops unobserved count cells."""
    y = np.asarray(y, dtype=float)
    pop = np.asarray(pop, dtype=float)
    if y.shape != pop.shape:
        raise LikelihoodError(f"shape mismatch: counts {y.shape} vs population {pop.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        y, pop = y[mask], pop[mask]
    total_pop = pop.sum()
    if not total_pop > 0:
        raise LikelihoodError("total population is zero")
    total = y.sum()
    if total == 0:
        warnings.warn("no cases observed: crude rate is 0 and every offset vanishes")
    return float(total / total_pop)


def offsets(pop, rate):
    """Background effects ``e = pop * R``."""
    return np.asarray(pop, dtype=float) * rate


def mean_counts(e, f, xp=np):
    """``mu = e * exp(f)`` with ``f`` clamped to +-30.

    Under numpy, clamping raises a :class:`ClampWarning` with the number of
    clamped cells.
    """
    if xp is np:
        f = np.asarray(f, dtype=float)
        n = int(np.count_nonzero(np.abs(f) > F_CLAMP))
        if n:
            warnings.warn(f"{n} latent value(s) clamped to +-{F_CLAMP:g}", ClampWarning)
    return e * xp.exp(xp.clip(f, -F_CLAMP, F_CLAMP))


def nb_logpmf(y, mu, phi, xp=np):
    sp = _special(xp)
    r = 1.0 / phi
    return (
        sp.gammaln(y + r)
        - sp.gammaln(r)
        - sp.gammaln(y + 1.0)
        - r * xp.log1p(mu / r)
        + sp.xlogy(y, mu)
        - sp.xlogy(y, mu + r)
    )


def _nb_log_p0(mu, phi, xp):
    r = 1.0 / phi
    return -r * xp.log1p(mu / r)


def zinb_logpmf_logit(y, mu, phi, lam, xp=np):
    """ZINB log-pmf with zero-inflation given on the logit scale ``lam``."""
    log_pi = -_softplus(-lam, xp)
    log_1mpi = -_softplus(lam, xp)
    zero = xp.logaddexp(log_pi, log_1mpi + _nb_log_p0(mu, phi, xp))
    pos = log_1mpi + nb_logpmf(y, mu, phi, xp)
    return xp.where(y == 0, zero, pos)


def zinb_logpmf(y, mu, phi, pi, xp=np):
    """ZINB log-pmf with probability of structural zeros ``pi``."""
    log_pi = xp.log(pi)
    log_1mpi = xp.log1p(-pi)
    zero = xp.logaddexp(log_pi, log_1mpi + _nb_log_p0(mu, phi, xp))
    pos = log_1mpi + nb_logpmf(y, mu, phi, xp)
    return xp.where(y == 0, zero, pos)


def poisson_logpmf(y, mu, xp=np):
    sp = _special(xp)
    return sp.xlogy(y, mu) - mu - sp.gammaln(y + 1.0)


def _softplus(x, xp):
    return xp.logaddexp(0.0, x)


def logistic(lam):
    return 1.0 / (1.0 + np.exp(-lam))


def family_logpmf(family, y, mu, phi=None, lam=None, xp=np):
    if family == "negbin":
        return nb_logpmf(y, mu, phi, xp)
    if family == "zinb":
        return zinb_logpmf_logit(y, mu, phi, lam, xp)
    if family == "poisson":
        return poisson_logpmf(y, mu, xp)
    raise LikelihoodError(f"unknown family {family!r}; expected one of {FAMILIES}")


def family_mean(family, mu, lam=None):
    """Expected count: ``mu``, or ``(1 - pi) * mu`` under zero inflation."""
    if family == "zinb":
        return (1.0 - logistic(lam)) * mu
    return mu


def loglik_cells(family, y, f, e, phi=None, lam=None, mask=None, xp=np):
    """Per-cell log-likelihood; cells outside ``mask`` contribute zero."""
    mu = mean_counts(e, f, xp)
    ll = family_logpmf(family, y, mu, phi, lam, xp)
    if mask is not None:
        ll = xp.where(mask, ll, 0.0)
    return ll


def loglik_dataset(family, y, f, e, phi=None, lam=None, mask=None) -> float:
    """Summed log-likelihood over observed cells.

    Shapes of ``y``, ``f``, ``e`` (and ``mask``) must agree. Summation uses
    ``math.fsum`` so the result does not depend on cell order.
    """
    y = np.asarray(y, dtype=float)
    f = np.asarray(f, dtype=float)
    e = np.asarray(e, dtype=float)
    if not (y.shape == f.shape == e.shape):
        raise LikelihoodError(f"misaligned cells: y {y.shape}, f {f.shape}, e {e.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != y.shape:
            raise LikelihoodError(f"mask shape {mask.shape} does not match {y.shape}")
        y, f, e = y[mask], f[mask], e[mask]
    ll = family_logpmf(family, y, mean_counts(e, f), phi, lam)
    return math.fsum(np.ravel(ll))


def sample_counts(family, mu, rng, phi=None, pi=None, size=None):
    """Draw counts; NB as a Poisson-Gamma mixture, ZINB zeroes with prob ``pi``."""
    mu = np.asarray(mu, dtype=float)
    shape = mu.shape if size is None else size
    if family == "poisson":
        return rng.poisson(np.broadcast_to(mu, shape))
    if family not in ("negbin", "zinb"):
        raise LikelihoodError(f"unknown family {family!r}; expected one of {FAMILIES}")
    r = 1.0 / phi
    g = rng.gamma(shape=r, scale=1.0 / r, size=shape)
    y = rng.poisson(mu * g)
    if family == "zinb":
        y = np.where(rng.random(shape) < pi, 0, y)
    return y
