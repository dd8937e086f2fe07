"""Posterior-predictive count forecasts for future weeks."""
from __future__ import annotations

import numpy as np

from .data import Dataset, ForecastResult
from .evaluate import thin_indices
from .gp import predict_latent_samples
from .likelihood import logistic, mean_counts, sample_counts
from .model import make_cells


def forecast_inputs(train: Dataset, horizon: int):
    """Inputs and populations for the ``horizon`` weeks after the training window.

    Populations are carried forward from the last training week.
    """
    if horizon < 1:
        raise ValueError("forecast horizon must be >= 1")
    weeks = train.weeks[-1] + np.arange(1, horizon + 1)
    L = train.n_locations
    X = np.column_stack(
        [np.tile(weeks.astype(float), L), np.repeat(train.lon, horizon), np.repeat(train.lat, horizon)]
    )
    pop = np.repeat(train.population[:, -1], horizon)
    return weeks, X, pop


def forecast_counts(samples, spec, train: Dataset, horizon: int, n_draws=1000, seed=0,
                    perturb=True, full_cov=False, latent_override=None) -> ForecastResult:
    """Predictive count draws for every location over ``horizon`` future weeks.

    ``n_draws`` posterior draws are taken evenly across chains (one predictive
    count per draw and cell). ``latent_override`` replaces the whitened values
    of every draw (test hook).
    """
    cells = make_cells(train, spec)
    weeks, X_star, pop = forecast_inputs(train, horizon)
    e_star = pop * cells.rate
    if n_draws <= samples.n_draws:
        idx = thin_indices(samples.n_chains, samples.n_iter, n_draws)
    else:
        idx = np.resize(np.arange(samples.n_draws), n_draws)
    src = samples if latent_override is None else _Override(samples, latent_override)
    f = predict_latent_samples(src, X_star, spec, cells.grid, seed=seed, perturb=perturb,
                               full_cov=full_cov, draws=idx)
    mu = mean_counts(e_star[None, :], f)
    out = np.empty_like(mu)
    for row, k in enumerate(idx):
        rng = np.random.default_rng([int(seed), int(k), 1, row])
        phi = samples.value_at(k, "phi") if spec.family in ("negbin", "zinb") else None
        pi = logistic(samples.value_at(k, "lambda")) if spec.family == "zinb" else None
        out[row] = sample_counts(spec.family, mu[row], rng, phi=phi, pi=pi)
    L = train.n_locations
    shape = (len(idx), L, horizon)
    res = ForecastResult(list(train.location_ids), weeks, out.reshape(shape),
                         train.lon.copy(), train.lat.copy())
    res.mean_samples = mu.reshape(shape)
    return res


class _Override:
    def __init__(self, samples, v):
        self._s = samples
        self._v = np.asarray(v, dtype=float)
        self.n_draws = samples.n_draws

    def kernel_at(self, k, spec):
        return self._s.kernel_at(k, spec)

    def latent_at(self, k):
        return self._v


def baseline_forecast(train: Dataset, horizon: int, n_draws=1000, seed=0) -> ForecastResult:
    """Constant-rate reference: Poisson counts with mean ``pop * R``."""
    from .likelihood import crude_rate

    X, y, pop_flat, mask = train.flat()
    rate = crude_rate(y, pop_flat, mask)
    weeks, _, pop = forecast_inputs(train, horizon)
    rng = np.random.default_rng([int(seed), 7])
    mu = (pop * rate).reshape(train.n_locations, horizon)
    draws = rng.poisson(np.broadcast_to(mu, (n_draws,) + mu.shape))
    return ForecastResult(list(train.location_ids), weeks, draws, train.lon.copy(), train.lat.copy())
