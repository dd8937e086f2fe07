"""Latent GP machinery: inducing grids, SoR projection, exact conditioning."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .kernels import eval_diag, eval_gram

JITTER_START = 1e-6
JITTER_MAX = 1e-2


class GPError(ValueError):
    """Invalid GP inputs."""


class CholeskyError(np.linalg.LinAlgError):
    def __init__(self, jitter):
        self.jitter = jitter
        super().__init__(
            f"Cholesky failed after jitter escalation (last jitter {jitter:.3g} x mean diagonal)"
        )


@dataclass(frozen=True)
class InducingGrid:
    """All locations crossed with a strided subset of weeks.

    Points are ordered location-major, matching the cell order of a dataset.
    """

    points: np.ndarray
    weeks: np.ndarray
    stride_weeks: int
    include_final_week: bool

    @property
    def M(self) -> int:
        return self.points.shape[0]


def select_inducing_grid(weeks, locations, stride=5, include_final=True) -> InducingGrid:
    """Grid of inducing inputs: every ``stride``-th week (from the first) per location.

    ``locations`` is an ``(L, 2)`` array of (lon, lat).
    """
    weeks = np.asarray(weeks)
    locations = np.atleast_2d(np.asarray(locations, dtype=float))
    if stride < 1:
        raise GPError(f"stride must be >= 1, got {stride}")
    if weeks.size == 0:
        raise GPError("no weeks to select from")
    if locations.size == 0 or locations.shape[0] == 0:
        raise GPError("no locations for the inducing grid")
    weeks = np.sort(weeks)
    idx = list(range(0, len(weeks), stride))
    if include_final and idx[-1] != len(weeks) - 1:
        idx.append(len(weeks) - 1)
    chosen = weeks[idx].astype(float)
    L, W = locations.shape[0], len(chosen)
    points = np.column_stack(
        [np.tile(chosen, L), np.repeat(locations[:, 0], W), np.repeat(locations[:, 1], W)]
    )
    return InducingGrid(points, chosen, int(stride), bool(include_final))


def cholesky_jitter(K, jitter=JITTER_START, max_jitter=JITTER_MAX):
    """Lower Cholesky factor of ``K + j*mean(diag K)*I`` with escalating ``j``.

    ``jitter=0`` tries the bare matrix first, then escalates from
    :data:`JITTER_START`. Returns ``(L, j)``.
    """
    K = np.asarray(K, dtype=float)
    scale = float(np.mean(np.diag(K))) if K.size else 1.0
    if not np.isfinite(scale) or scale <= 0:
        scale = 1.0
    j = float(jitter)
    eye = np.eye(K.shape[0])
    while True:
        try:
            return np.linalg.cholesky(K + j * scale * eye), j
        except np.linalg.LinAlgError:
            pass
        if j >= max_jitter:
            raise CholeskyError(j)
        j = JITTER_START if j == 0 else j * 10.0


def sor_project(v, grid, X_train, expr, jitter=JITTER_START):
    """Latent values at ``X_train`` from whitened inducing values ``v``.

    ``u = L v`` with ``L L^T = K_mm``; ``f = K_nm K_mm^{-1} u``. With
    ``v ~ N(0, I)`` the covariance of ``f`` is ``K_nm K_mm^{-1} K_mn``.
    """
    Z = grid.points if isinstance(grid, InducingGrid) else np.asarray(grid, dtype=float)
    v = np.asarray(v, dtype=float)
    if v.shape[0] != Z.shape[0]:
        raise GPError(f"v has length {v.shape[0]}, grid has {Z.shape[0]} points")
    L, _ = cholesky_jitter(eval_gram(expr, Z), jitter)
    A = solve_triangular(L, eval_gram(expr, Z, X_train), lower=True)
    # A^T v == K_nm K_mm^{-1} (L v)
    return A.T @ v


def sor_covariance(grid, X_train, expr, jitter=JITTER_START):
    """``Q_nn = K_nm K_mm^{-1} K_mn``, the implied covariance of the SoR latent."""
    Z = grid.points if isinstance(grid, InducingGrid) else np.asarray(grid, dtype=float)
    L, _ = cholesky_jitter(eval_gram(expr, Z), jitter)
    A = solve_triangular(L, eval_gram(expr, Z, X_train), lower=True)
    return A.T @ A


@dataclass
class PredictiveMoments:
    mean: np.ndarray
    cov: np.ndarray  # full matrix, or a variance vector when diagonal-only


def exact_condition(expr, X, f, X_star, mean_const=0.0, jitter=JITTER_START, diag_only=False):
    """Conditional moments of ``f(X_star)`` given ``f(X) = f`` under a constant mean."""
    X_star = np.atleast_2d(np.asarray(X_star, dtype=float))
    f = np.asarray(f, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    m_star = np.full(X_star.shape[0], float(mean_const))
    if X.size == 0:
        cov = eval_diag(expr, X_star) if diag_only else eval_gram(expr, X_star)
        return PredictiveMoments(m_star, cov)
    X = np.atleast_2d(X)
    if f.shape[0] != X.shape[0]:
        raise GPError(f"f has length {f.shape[0]}, X has {X.shape[0]} rows")
    L, _ = cholesky_jitter(eval_gram(expr, X), jitter)
    K_s = eval_gram(expr, X, X_star)
    alpha = cho_solve((L, True), f - mean_const)
    mean = m_star + K_s.T @ alpha
    V = solve_triangular(L, K_s, lower=True)
    if diag_only:
        cov = np.maximum(eval_diag(expr, X_star) - np.sum(V**2, axis=0), 0.0)
    else:
        cov = eval_gram(expr, X_star) - V.T @ V
        cov = 0.5 * (cov + cov.T)
    return PredictiveMoments(mean, cov)


def sor_predict(expr, v, grid, X_star, jitter=JITTER_START, full_cov=False):
    """SoR mean map at ``X_star`` plus the residual covariance ``K_** - Q_**``.

    The residual is the prior covariance of ``f(X_star)`` left unexplained
    by the inducing values; diagonal (clamped at zero) unless ``full_cov``.
    """
    Z = grid.points if isinstance(grid, InducingGrid) else np.asarray(grid, dtype=float)
    X_star = np.atleast_2d(np.asarray(X_star, dtype=float))
    L, _ = cholesky_jitter(eval_gram(expr, Z), jitter)
    A = solve_triangular(L, eval_gram(expr, Z, X_star), lower=True)
    mean = A.T @ np.asarray(v, dtype=float)
    if full_cov:
        cov = eval_gram(expr, X_star) - A.T @ A
        return PredictiveMoments(mean, 0.5 * (cov + cov.T))
    var = np.maximum(eval_diag(expr, X_star) - np.sum(A**2, axis=0), 0.0)
    return PredictiveMoments(mean, var)


def predict_latent_samples(samples, X_star, spec, grid, seed=0, perturb=True,
                           full_cov=False, draws=None):
    """Latent field draws at ``X_star``, one row per posterior draw.

    ``samples`` supplies per-draw kernels and whitened values through
    ``kernel_at(k)`` and ``latent_at(k)``; ``draws`` selects flat draw
    indices (default all). Row ``k`` uses the RNG stream ``(seed, k)``.
    """
    X_star = np.atleast_2d(np.asarray(X_star, dtype=float))
    idx = np.arange(samples.n_draws) if draws is None else np.asarray(draws)
    out = np.empty((len(idx), X_star.shape[0]))
    for row, k in enumerate(idx):
        expr = samples.kernel_at(k, spec)
        mom = sor_predict(expr, samples.latent_at(k), grid, X_star, spec.jitter, full_cov)
        f = mom.mean
        if perturb:
            rng = np.random.default_rng([int(seed), int(k)])
            if full_cov:
                Lc, _ = cholesky_jitter(mom.cov, 0.0)
                f = f + Lc @ rng.standard_normal(len(f))
            else:
                f = f + np.sqrt(mom.cov) * rng.standard_normal(len(f))
        out[row] = f
    return out
