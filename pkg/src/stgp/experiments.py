"""Synthetic experiments: parameter recovery, forecast scoring, refit LOO and chain speedup.

Each function returns plain dicts so that scripts can print them and tests can
assert on them.
"""
from __future__ import annotations

import time
from dataclasses import replace

import numpy as np
from scipy.special import logsumexp

from .data import SimConfig, simulate, train_test_split
from .diagnostics import summarize
from .evaluate import bayesian_pvalue, build_loglik_matrix, crps_by_week, loo_estimate
from .forecast import baseline_forecast, forecast_counts
from .likelihood import family_logpmf, mean_counts
from .model import ModelSpec, ModelTarget, make_cells, preset, spatiotemporal_kernel
from .sampler import SamplerConfig, hmc_run

# Model-2 hyperparameters used to generate the recovery panel
RECOVERY_TRUTH = {"len_time": 2.0, "sigma_time": 0.3, "len_space": 0.5, "sigma_space": 1.0,
                  "bias_var": 0.5}
RECOVERY_PHI = 0.25


def recovery_data(seed=3, n_locations=10, n_weeks=30):
    """Panel drawn from the Model-2 structure with :data:`RECOVERY_TRUTH`."""
    spec = preset("model2")
    values = np.array([RECOVERY_TRUTH[n] for n in spec.kernel_names])
    true_spec = replace(spec, kernel=spec.kernel_from_values(values))
    data, f, truth = simulate(SimConfig(true_spec, n_locations, n_weeks, phi=RECOVERY_PHI, seed=seed))
    return data, f, truth


def recovery_fit(seed=3, chains=4, warmup=1000, samples=1000, sampler_seed=1, threads=1,
                 horizon=0):
    """Fit Model 2 to the recovery panel (minus ``horizon`` held-out weeks)."""
    spec = preset("model2")
    data, _, truth = recovery_data(seed)
    train, test = train_test_split(data, horizon)
    cfg = SamplerConfig(n_chains=chains, warmup=warmup, n_samples=samples, seed=sampler_seed,
                        threads=threads)
    t0 = time.perf_counter()
    post = hmc_run(spec, train, cfg)
    elapsed = time.perf_counter() - t0
    rows = {r["parameter"]: r for r in summarize(post, post.hyper_names)}
    covered = {name: bool(rows[name]["lower95"] <= truth[name] <= rows[name]["upper95"])
               for name in truth}
    return {"spec": spec, "train": train, "test": test, "samples": post, "truth": truth,
            "summary": rows, "covered": covered, "max_rhat": float(np.max(post.rhat())),
            "seconds": elapsed}


def recovery_check(fit, pvalue_draws=1000, seed=0):
    """Criteria on a full-panel fit: R-hat, interval coverage of the truth, Bayesian p-value."""
    target = ModelTarget(fit["spec"], make_cells(fit["train"], fit["spec"]))
    pv = bayesian_pvalue(fit["samples"], target, pvalue_draws, seed)
    return {"max_rhat": fit["max_rhat"], "covered": fit["covered"], "bayes_p": pv.p}


def forecast_check(fit, draws=1000, seed=0):
    """Held-out coverage and CRPS against the constant-rate baseline."""
    train, test = fit["train"], fit["test"]
    res = forecast_counts(fit["samples"], fit["spec"], train, test.n_weeks, draws, seed)
    lo, hi = np.quantile(res.samples, [0.025, 0.975], axis=0)
    m = test.mask
    inside = (test.counts >= lo) & (test.counts <= hi)
    crps = crps_by_week(res.samples, test.counts, test.weeks, m)
    base = baseline_forecast(train, test.n_weeks, draws, seed)
    crps_base = crps_by_week(base.samples, test.counts, test.weeks, m)
    return {"coverage": float(inside[m].mean()), "crps": float(np.mean(list(crps.values()))),
            "crps_baseline": float(np.mean(list(crps_base.values()))), "n_cells": int(m.sum())}


# ------------------------------------------------------------------ refit LOO

def refit_loo_spec():
    """NB model with the kernel held at fixed values (only phi and v are sampled)."""
    vals = {"len_time": 2.0, "sigma_time": 0.4, "len_space": 1.0, "sigma_space": 0.4,
            "bias_var": 0.2}
    spec = ModelSpec(spatiotemporal_kernel(), "negbin", stride=1, fix_kernel=True)
    return replace(spec, kernel=spec.kernel_from_values(np.array([vals[n] for n in spec.kernel_names])))


def refit_loo(n_locations=3, n_weeks=4, seed=5, chains=4, warmup=500, samples=1000,
              loo_draws=4000):
    """PSIS-LOO against brute-force leave-one-out refits on a small NB panel.

    The offset rate is fixed from the full panel, so every refit sees the same
    exposure for the held-out cell and only its count is removed.
    """
    spec = refit_loo_spec()
    data, _, _ = simulate(SimConfig(spec, n_locations, n_weeks, phi=0.3, base_rate=2e-4,
                                    pop_range=(1e4, 5e4), seed=seed))
    cells = make_cells(data, spec)
    cfg = SamplerConfig(n_chains=chains, warmup=warmup, n_samples=samples, seed=seed)
    t0 = time.perf_counter()
    full = hmc_run(spec, data, cfg, cells=cells)
    target = ModelTarget(spec, cells)
    loo = loo_estimate(build_loglik_matrix(full, target, min(loo_draws, full.n_draws)))
    brute = np.empty(cells.n)
    for i in range(cells.n):
        mask = cells.mask.copy()
        mask[i] = False
        sub = replace(cells, mask=mask)
        post = hmc_run(spec, data, replace(cfg, seed=seed + 1 + i), cells=sub)
        t = ModelTarget(spec, sub)
        Z = t.unconstrain(post.flat())
        f = t.latent_draws(Z)[:, i]
        phi = post.column("phi").ravel()
        ll = family_logpmf("negbin", cells.y[i], mean_counts(cells.e[i], f), phi)
        brute[i] = logsumexp(ll) - np.log(ll.size)
    return {"psis_elpd": loo.elpd, "brute_elpd": float(brute.sum()), "psis_i": loo.elpd_i,
            "brute_i": brute, "pareto_k": loo.pareto_k, "n_cells": cells.n,
            "seconds": time.perf_counter() - t0}


# ------------------------------------------------------------------ speedup

def speedup_benchmark(threads=4, chains=4, warmup=1000, samples=1000, seed=3):
    """Wall time of the recovery workload on one thread and on ``threads`` workers."""
    spec = preset("model2")
    data, _, _ = recovery_data(seed)
    out = {}
    for n in (1, threads):
        cfg = SamplerConfig(n_chains=chains, warmup=warmup, n_samples=samples, seed=1, threads=n)
        t0 = time.perf_counter()
        hmc_run(spec, data, cfg)
        out[n] = time.perf_counter() - t0
    return {"serial": out[1], "parallel": out[threads], "ratio": out[threads] / out[1],
            "threads": threads}

