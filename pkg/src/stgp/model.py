"""Model specification, priors and the differentiable log posterior.

The sampler works on one unconstrained vector laid out as

    [kernel hyperparameters | log(1/sqrt(phi)) | lambda | v_1..v_M]

Kernel entries are log lengthscales and log standard deviations (see
:func:`stgp.kernels.param_vector`); the dispersion block is absent for the
Poisson family and ``lambda`` only exists for ZINB. ``v`` are the whitened
inducing values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import stats

from . import kernels as kn
from .gp import JITTER_START, InducingGrid, select_inducing_grid
from .likelihood import FAMILIES, crude_rate, loglik_cells

LOG_2PI = math.log(2.0 * math.pi)


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class PriorConfig:
    lengthscale_shape: float = 5.0
    lengthscale_scale: float = 5.0
    kernel_sd: float = 1.0
    bias_sd: float = 1.0
    inv_sqrt_phi_sd: float = 1.0
    lambda_mean: float = -1.0
    lambda_sd: float = 5.0

    def lengthscale_median(self) -> float:
        return float(stats.invgamma(self.lengthscale_shape, scale=self.lengthscale_scale).median())


def invgamma_logpdf(x, a, b, xp=np):
    return a * math.log(b) - math.lgamma(a) - (a + 1.0) * xp.log(x) - b / x


def halfnormal_logpdf(x, sd, xp=np):
    return math.log(2.0) - 0.5 * LOG_2PI - math.log(sd) - 0.5 * (x / sd) ** 2


def normal_logpdf(x, mean, sd, xp=np):
    return -0.5 * LOG_2PI - math.log(sd) - 0.5 * ((x - mean) / sd) ** 2


@dataclass(frozen=True)
class ModelSpec:
    """Kernel structure, observation family, priors and inducing-grid policy."""

    kernel: kn.KernelExpr
    family: str = "negbin"
    priors: PriorConfig = field(default_factory=PriorConfig)
    stride: int = 5
    include_final: bool = True
    fix_kernel: bool = False
    jitter: float = JITTER_START
    name: str = ""

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ModelError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.stride < 1:
            raise ModelError("inducing stride must be >= 1")

    @property
    def kernel_names(self) -> list:
        return kn.param_names(self.kernel)

    @property
    def n_kernel(self) -> int:
        return 0 if self.fix_kernel else kn.n_params(self.kernel)

    @property
    def obs_names(self) -> list:
        return {"negbin": ["phi"], "zinb": ["phi", "lambda"], "poisson": []}[self.family]

    def hyper_names(self) -> list:
        return (list() if self.fix_kernel else self.kernel_names) + self.obs_names

    def kernel_from_values(self, values) -> kn.KernelExpr:
        """Kernel with hyperparameters set from reported (constrained) values."""
        if self.fix_kernel:
            return self.kernel
        values = np.asarray(values, dtype=float)
        w = np.log(values)
        w[kn.bias_mask(self.kernel)] *= 0.5
        return kn.param_unvector(self.kernel, w)

    def describe(self) -> str:
        return f"{self.name or 'custom'}: {kn.describe(self.kernel)} / {self.family}"


def spatiotemporal_kernel(time="matern32", space="matern32", interaction=True,
                          bias=True, period=52.0):
    k_time = kn.parse_terms(time, (0,), "time", period)
    k_space = kn.parse_terms(space, (1, 2), "space", period)
    if interaction:
        expr = kn.build_spatiotemporal(k_time, k_space)
    else:
        expr = kn.Sum(k_time, k_space)
    if bias:
        expr = kn.Sum(expr, kn.bias())
    return expr


PRESETS = {
    "model1": dict(time="rbf", space="matern32", family="negbin"),
    "model2": dict(time="matern32", space="matern32", family="negbin"),
    "model3": dict(time="matern32 + periodic", space="matern32", family="negbin"),
    "model4": dict(time="matern32 + periodic", space="rbf", family="negbin"),
    "model5": dict(time="matern32 + periodic", space="matern32", family="zinb"),
    "model6": dict(time="periodic", space="matern32", family="negbin"),
}


def preset(name: str, period=52.0, **overrides) -> ModelSpec:
    """One of the six kernel/family combinations ``model1`` .. ``model6``."""
    if name not in PRESETS:
        raise ModelError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}")
    cfg = PRESETS[name]
    expr = spatiotemporal_kernel(cfg["time"], cfg["space"], period=period)
    return ModelSpec(expr, cfg["family"], name=name, **overrides)


# ------------------------------------------------------------------ cells

@dataclass(frozen=True)
class Cells:
    """Flattened panel: inputs, counts, offsets and observation mask.

    ``grid`` is the inducing grid the latent field is projected from.
    """

    X: np.ndarray
    y: np.ndarray
    e: np.ndarray
    mask: np.ndarray
    grid: InducingGrid
    rate: float

    @property
    def n(self) -> int:
        return self.X.shape[0]


def make_cells(data, spec: ModelSpec, rate=None) -> Cells:
    """Cells of a dataset with offsets ``pop * R`` (``R`` from the data unless given)."""
    X, y, pop, mask = data.flat()
    if rate is None:
        rate = crude_rate(y, pop, mask)
    grid = select_inducing_grid(data.weeks, data.coords, spec.stride, spec.include_final)
    return Cells(X, y.astype(float), pop * rate, mask, grid, float(rate))


# -------------------------------------------------------------- log posterior

def _jax():
    import jax

    jax.config.update("jax_enable_x64", True)
    import jax.numpy as jnp

    return jax, jnp


class ModelTarget:
    """Log posterior of a :class:`ModelSpec` on given cells, over the unconstrained vector."""

    def __init__(self, spec: ModelSpec, cells: Cells):
        self.spec = spec
        self.cells = cells
        self.n_kernel = spec.n_kernel
        self.n_obs = len(spec.obs_names)
        self.M = cells.grid.M
        self.dim = self.n_kernel + self.n_obs + self.M
        self.names = spec.hyper_names() + [f"v[{m}]" for m in range(self.M)]

    def __getstate__(self):
        state = dict(self.__dict__)
        for key in ("_fns", "_latent_batch"):
            state.pop(key, None)
        return state

    # layout ------------------------------------------------------------
    def split(self, z):
        k, o = self.n_kernel, self.n_obs
        return z[:k], z[k:k + o], z[k + o:]

    def constrain(self, Z):
        """Unconstrained draws (``(..., dim)``) to reported values."""
        Z = np.array(Z, dtype=float, copy=True)
        out = Z.copy()
        if self.n_kernel:
            kz = Z[..., : self.n_kernel]
            vals = np.exp(kz)
            b = kn.bias_mask(self.spec.kernel)
            vals[..., b] = np.exp(2.0 * kz[..., b])
            out[..., : self.n_kernel] = vals
        if self.spec.family in ("negbin", "zinb"):
            j = self.n_kernel
            out[..., j] = np.exp(-2.0 * Z[..., j])
        return out

    def unconstrain(self, C):
        C = np.array(C, dtype=float, copy=True)
        out = C.copy()
        if self.n_kernel:
            vals = C[..., : self.n_kernel]
            w = np.log(vals)
            b = kn.bias_mask(self.spec.kernel)
            w[..., b] *= 0.5
            out[..., : self.n_kernel] = w
        if self.spec.family in ("negbin", "zinb"):
            j = self.n_kernel
            out[..., j] = -0.5 * np.log(C[..., j])
        return out

    def init_point(self) -> np.ndarray:
        """Hyperparameters at prior medians, latent at zero."""
        pr = self.spec.priors
        z = np.zeros(self.dim)
        if self.n_kernel:
            ls = kn.lengthscale_mask(self.spec.kernel)
            bm = kn.bias_mask(self.spec.kernel)
            z[: self.n_kernel][ls] = math.log(pr.lengthscale_median())
            sd_med = stats.halfnorm.median()
            z[: self.n_kernel][~ls & ~bm] = math.log(pr.kernel_sd * sd_med)
            z[: self.n_kernel][bm] = math.log(pr.bias_sd * sd_med)
        if self.spec.family in ("negbin", "zinb"):
            z[self.n_kernel] = math.log(pr.inv_sqrt_phi_sd * stats.halfnorm.median())
        if self.spec.family == "zinb":
            z[self.n_kernel + 1] = pr.lambda_mean
        return z

    # density -------------------------------------------------------------
    def _kernel_vector(self, kz, jnp):
        if self.spec.fix_kernel:
            return jnp.asarray(kn.param_vector(self.spec.kernel))
        return kz

    def log_prior(self, z, xp, jacobian=True):
        pr = self.spec.priors
        kz, oz, v = self.split(z)
        lp = 0.0
        if self.n_kernel:
            ls = kn.lengthscale_mask(self.spec.kernel)
            bm = kn.bias_mask(self.spec.kernel)
            x = xp.exp(kz)
            lp_ls = invgamma_logpdf(x, pr.lengthscale_shape, pr.lengthscale_scale, xp)
            lp_sd = halfnormal_logpdf(x, pr.kernel_sd, xp)
            lp_b = halfnormal_logpdf(x, pr.bias_sd, xp)
            terms = xp.where(ls, lp_ls, xp.where(bm, lp_b, lp_sd))
            if jacobian:
                terms = terms + kz
            lp = lp + xp.sum(terms)
        if self.spec.family in ("negbin", "zinb"):
            s = xp.exp(oz[0])
            lp = lp + halfnormal_logpdf(s, pr.inv_sqrt_phi_sd, xp)
            if jacobian:
                lp = lp + oz[0]
        if self.spec.family == "zinb":
            lp = lp + normal_logpdf(oz[1], pr.lambda_mean, pr.lambda_sd, xp)
        lp = lp - 0.5 * xp.sum(v**2) - 0.5 * self.M * LOG_2PI
        return lp

    def latent(self, z, xp):
        """SoR latent field at the cells for unconstrained ``z``."""
        kz, _, v = self.split(z)
        if xp is np:
            from scipy.linalg import solve_triangular as tri

            chol = np.linalg.cholesky
            kvec = kn.param_vector(self.spec.kernel) if self.spec.fix_kernel else kz
        else:
            from jax.scipy.linalg import solve_triangular as tri

            chol = xp.linalg.cholesky
            kvec = self._kernel_vector(kz, xp)
        expr = kn.param_unvector(self.spec.kernel, kvec, xp)
        Z = self.cells.grid.points
        Kmm = kn.eval_gram(expr, Z, xp=xp)
        scale = xp.mean(xp.diag(Kmm))
        Kmm = Kmm + self.spec.jitter * scale * xp.eye(self.M)
        L = chol(Kmm)
        A = tri(L, kn.eval_gram(expr, Z, self.cells.X, xp=xp), lower=True)
        return A.T @ v

    def loglik_terms(self, z, xp):
        _, oz, _ = self.split(z)
        f = self.latent(z, xp)
        phi = xp.exp(-2.0 * oz[0]) if self.spec.family in ("negbin", "zinb") else None
        lam = oz[1] if self.spec.family == "zinb" else None
        c = self.cells
        return loglik_cells(self.spec.family, c.y, f, c.e, phi, lam, c.mask, xp)

    def logp(self, z, jacobian=True):
        """Jax-traceable log joint density."""
        _, jnp = _jax()
        lp = self.log_prior(z, jnp, jacobian) + jnp.sum(self.loglik_terms(z, jnp))
        return jnp.where(jnp.isfinite(lp), lp, -jnp.inf)

    @cached_property
    def _fns(self):
        jax, _ = _jax()
        return {
            True: jax.jit(jax.value_and_grad(lambda z: self.logp(z, True))),
            False: jax.jit(jax.value_and_grad(lambda z: self.logp(z, False))),
        }

    def value_and_grad(self, z, jacobian=True):
        _, jnp = _jax()
        val, grad = self._fns[jacobian](jnp.asarray(z, dtype=jnp.float64))
        return float(val), np.asarray(grad)

    @cached_property
    def _latent_batch(self):
        jax, jnp = _jax()
        return jax.jit(jax.vmap(lambda z: self.latent(z, jnp)))

    def latent_draws(self, Z) -> np.ndarray:
        """Latent field at the cells for each row of unconstrained draws ``Z``."""
        _, jnp = _jax()
        return np.asarray(self._latent_batch(jnp.asarray(np.atleast_2d(Z), dtype=jnp.float64)))

    def loglik_split(self, z):
        """``(log prior, log likelihood)`` at ``z`` (numpy, for diagnostics)."""
        _, jnp = _jax()
        zj = jnp.asarray(z, dtype=jnp.float64)
        return float(self.log_prior(zj, jnp)), float(jnp.sum(self.loglik_terms(zj, jnp)))


def log_posterior_and_grad(z, spec: ModelSpec, data, jacobian=True):
    """Log joint density and its gradient at unconstrained ``z``.

    ``data`` is a :class:`stgp.data.Dataset` or prepared :class:`Cells`.
    With ``jacobian=False`` the log-transform Jacobians are left out, i.e.
    the density is that of the constrained parameters.
    """
    cells = data if isinstance(data, Cells) else make_cells(data, spec)
    return ModelTarget(spec, cells).value_and_grad(z, jacobian)
