"""Hamiltonian Monte Carlo with a bounded, randomized leapfrog count.

Each iteration draws the number of leapfrog steps uniformly from
``[leapfrog_min, leapfrog_max]``. Warmup adapts the step size by dual
averaging and a diagonal inverse metric from the second half of warmup;
both are frozen afterwards.

A target is any object with ``dim``, ``names``, a jax-traceable
``logp(z)``, ``init_point()`` and ``constrain(Z)``.
"""
from __future__ import annotations

import concurrent.futures as cf
import logging
import math
import multiprocessing as mp
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import gelman_rubin

log = logging.getLogger(__name__)


class SamplerError(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or {}


@dataclass(frozen=True)
class SamplerConfig:
    n_chains: int = 4
    warmup: int = 1000
    n_samples: int = 1000
    leapfrog_min: int = 15
    leapfrog_max: int = 20
    target_accept: float = 0.8
    seed: int = 0
    threads: int = 1
    init_jitter: float = 0.5
    step_size: float | None = None  # fixed step size; disables adaptation
    adapt_metric: bool = True

    def __post_init__(self):
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if self.warmup < 1 and self.step_size is None:
            raise ValueError("warmup must be >= 1 unless a fixed step size is given")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not 1 <= self.leapfrog_min <= self.leapfrog_max:
            raise ValueError("need 1 <= leapfrog_min <= leapfrog_max")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must be in (0, 1)")


@dataclass
class PosteriorSamples:
    """Post-warmup draws on the reported (constrained) scale.

    ``draws`` has shape ``(chains, iterations, params)``; latent ``v`` columns
    follow the hyperparameters.
    """

    names: list
    draws: np.ndarray
    accept_rate: np.ndarray
    step_size: np.ndarray
    energy_error: np.ndarray = field(default=None)  # (chains, iterations)
    n_leapfrog: np.ndarray = field(default=None)
    n_hyper: int = 0

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_iter(self) -> int:
        return self.draws.shape[1]

    @property
    def n_draws(self) -> int:
        return self.n_chains * self.n_iter

    @property
    def hyper_names(self) -> list:
        return list(self.names[: self.n_hyper])

    def flat(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[-1])

    def chain_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_chains), self.n_iter)

    def column(self, name) -> np.ndarray:
        return self.draws[:, :, self.names.index(name)]

    def value_at(self, k, name):
        return float(self.flat()[k, self.names.index(name)])

    def kernel_at(self, k, spec):
        names = spec.kernel_names
        if spec.fix_kernel:
            return spec.kernel
        vals = [self.value_at(k, n) for n in names]
        return spec.kernel_from_values(vals)

    def latent_at(self, k) -> np.ndarray:
        return self.flat()[k, self.n_hyper:]

    def rhat(self) -> np.ndarray:
        return gelman_rubin(self.draws)


# ---------------------------------------------------------------- integrator

def _jax():
    import jax

    jax.config.update("jax_enable_x64", True)
    return jax


class _Kernel:
    """Jitted gradient and leapfrog trajectory for one target."""

    def __init__(self, target):
        jax = _jax()
        jnp = jax.numpy
        lax = jax.lax
        self.value_and_grad = jax.jit(jax.value_and_grad(target.logp))
        vg = jax.value_and_grad(target.logp)

        def trajectory(z, p, g, eps, n_steps, inv_metric):
            def body(_, state):
                z, p, g, lp = state
                p = p + 0.5 * eps * g
                z = z + eps * inv_metric * p
                lp, g = vg(z)
                p = p + 0.5 * eps * g
                return z, p, g, lp

            return lax.fori_loop(0, n_steps, body, (z, p, g, jnp.asarray(0.0)))

        self.trajectory = jax.jit(trajectory)

    def vg(self, z):
        val, grad = self.value_and_grad(z)
        return float(val), np.asarray(grad)

    def run(self, z, p, g, eps, n_steps, inv_metric):
        z1, p1, g1, lp1 = self.trajectory(z, p, g, eps, n_steps, inv_metric)
        return np.asarray(z1), np.asarray(p1), np.asarray(g1), float(lp1)


def leapfrog_energy_error(target, z, p, step_size, n_steps, inv_metric=None):
    """Hamiltonian change along one trajectory (testing aid)."""
    kern = _Kernel(target)
    inv_metric = np.ones_like(z) if inv_metric is None else inv_metric
    lp0, g0 = kern.vg(z)
    z1, p1, _, lp1 = kern.run(z, p, g0, step_size, n_steps, inv_metric)
    h0 = -lp0 + 0.5 * np.sum(inv_metric * p**2)
    h1 = -lp1 + 0.5 * np.sum(inv_metric * p1**2)
    return h1 - h0


class DualAveraging:
    """Step-size adaptation towards a target mean acceptance statistic."""

    def __init__(self, step_size, target=0.8, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10.0 * step_size)
        self.target = target
        self.gamma, self.t0, self.kappa = gamma, t0, kappa
        self.h_bar = 0.0
        self.log_eps = math.log(step_size)
        self.log_eps_bar = 0.0
        self.m = 0

    def update(self, accept_stat):
        self.m += 1
        m = self.m
        w = 1.0 / (m + self.t0)
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_stat)
        self.log_eps = self.mu - math.sqrt(m) / self.gamma * self.h_bar
        eta = m ** (-self.kappa)
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar
        return math.exp(self.log_eps)

    @property
    def final(self):
        return math.exp(self.log_eps_bar)


def _initial_step_size(kern, z, lp, g, inv_metric, rng):
    """Double or halve until one leapfrog step crosses acceptance 1/2."""
    eps = 1.0
    p = rng.standard_normal(z.shape) / np.sqrt(inv_metric)
    h0 = -lp + 0.5 * np.sum(inv_metric * p**2)

    def log_ratio(eps):
        _, p1, _, lp1 = kern.run(z, p, g, eps, 1, inv_metric)
        h1 = -lp1 + 0.5 * np.sum(inv_metric * p1**2)
        d = h0 - h1
        return d if np.isfinite(d) else -np.inf

    direction = 1.0 if log_ratio(eps) > math.log(0.5) else -1.0
    for _ in range(60):
        eps_new = eps * (2.0**direction)
        if direction > 0 and not log_ratio(eps_new) > math.log(0.5):
            break
        if direction < 0 and log_ratio(eps_new) > math.log(0.5):
            eps = eps_new
            break
        eps = eps_new
    return eps


def _warmup_windows(warmup):
    """(metric window start, metric window end) or None when warmup is too short."""
    if warmup < 20:
        return None
    term = max(1, min(50, warmup // 10))
    return warmup // 2, warmup - term


def run_chain(target, cfg: SamplerConfig, chain: int):
    """One chain; returns a dict of unconstrained draws and statistics."""
    rng = np.random.default_rng([int(cfg.seed), int(chain)])
    kern = _Kernel(target)
    base = np.asarray(target.init_point(), dtype=float)
    for _ in range(100):
        z = base + rng.uniform(-cfg.init_jitter, cfg.init_jitter, size=base.shape)
        lp, g = kern.vg(z)
        if np.isfinite(lp) and np.all(np.isfinite(g)):
            break
    else:
        raise SamplerError(f"chain {chain}: no finite starting point after 100 tries")

    inv_metric = np.ones(target.dim)
    adapt = cfg.step_size is None
    eps = cfg.step_size if not adapt else _initial_step_size(kern, z, lp, g, inv_metric, rng)
    da = DualAveraging(eps, cfg.target_accept) if adapt else None
    windows = _warmup_windows(cfg.warmup) if (adapt and cfg.adapt_metric) else None
    metric_draws = []
    n_total = cfg.warmup + cfg.n_samples
    Z = np.empty((cfg.n_samples, target.dim))
    accept = np.empty(cfg.n_samples)
    energy = np.empty(cfg.n_samples)
    steps = np.empty(cfg.n_samples, dtype=int)
    warm_accept = []
    trace = []

    for it in range(n_total):
        n_steps = int(rng.integers(cfg.leapfrog_min, cfg.leapfrog_max + 1))
        p = rng.standard_normal(target.dim) / np.sqrt(inv_metric)
        h0 = -lp + 0.5 * np.sum(inv_metric * p**2)
        z1, p1, g1, lp1 = kern.run(z, p, g, eps, n_steps, inv_metric)
        h1 = -lp1 + 0.5 * np.sum(inv_metric * p1**2)
        dh = h1 - h0
        ok = np.isfinite(dh) and np.isfinite(lp1) and np.all(np.isfinite(g1))
        a = min(1.0, math.exp(-dh)) if ok else 0.0
        if ok and rng.random() < a:
            z, lp, g = z1, lp1, g1
        if it < cfg.warmup:
            warm_accept.append(a)
            if adapt:
                eps = da.update(a)
                trace.append(eps)
                if windows is not None:
                    start, end = windows
                    if start <= it < end:
                        metric_draws.append(z.copy())
                    if it == end - 1 and len(metric_draws) > 2:
                        n = len(metric_draws)
                        var = np.var(np.array(metric_draws), axis=0, ddof=1)
                        inv_metric = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                        eps = _initial_step_size(kern, z, lp, g, inv_metric, rng)
                        da = DualAveraging(eps, cfg.target_accept)
            if it == cfg.warmup - 1 and adapt:
                eps = da.final
                if max(warm_accept) == 0.0 or not eps > 1e-12:
                    raise SamplerError(
                        f"chain {chain}: step size collapsed during warmup (final {eps:.3g})",
                        {"step_size": trace, "accept": warm_accept},
                    )
        else:
            k = it - cfg.warmup
            Z[k], accept[k], energy[k], steps[k] = z, a, dh if ok else np.inf, n_steps

    return {
        "Z": Z, "accept": accept, "energy": energy, "steps": steps,
        "step_size": eps, "inv_metric": inv_metric,
    }


def _chain_worker(args):
    target, cfg, chain = args
    return run_chain(target, cfg, chain)


def sample(target, cfg: SamplerConfig) -> PosteriorSamples:
    """Run ``cfg.n_chains`` chains, in parallel processes when ``cfg.threads > 1``."""
    jobs = [(target, cfg, c) for c in range(cfg.n_chains)]
    workers = min(cfg.threads, cfg.n_chains)
    if workers > 1:
        ctx = mp.get_context("spawn")
        with cf.ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            results = list(pool.map(_chain_worker, jobs))
    else:
        results = [_chain_worker(j) for j in jobs]
    Z = np.stack([r["Z"] for r in results])
    n_hyper = getattr(target, "n_kernel", 0) + getattr(target, "n_obs", 0)
    return PosteriorSamples(
        names=list(target.names),
        draws=target.constrain(Z),
        accept_rate=np.array([r["accept"].mean() for r in results]),
        step_size=np.array([r["step_size"] for r in results]),
        energy_error=np.stack([r["energy"] for r in results]),
        n_leapfrog=np.stack([r["steps"] for r in results]),
        n_hyper=n_hyper,
    )


def hmc_run(spec, data, cfg: SamplerConfig, cells=None) -> PosteriorSamples:
    """Sample the posterior of ``spec`` given a dataset (or prepared cells)."""
    from .model import ModelTarget, make_cells

    cells = cells if cells is not None else make_cells(data, spec)
    target = ModelTarget(spec, cells)
    log.info("sampling %s: %d parameters, %d chains", spec.describe(), target.dim, cfg.n_chains)
    return sample(target, cfg)


class GaussianTarget:
    """Independent normal target, for checking the sampler."""

    def __init__(self, mean, sd=1.0):
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.sd = np.broadcast_to(np.asarray(sd, dtype=float), self.mean.shape).copy()
        self.dim = self.mean.size
        self.names = [f"x[{k}]" for k in range(self.dim)]

    def logp(self, z):
        jnp = _jax().numpy
        return -0.5 * jnp.sum(((z - self.mean) / self.sd) ** 2)

    def init_point(self):
        return np.zeros(self.dim)

    def constrain(self, Z):
        return np.asarray(Z)
