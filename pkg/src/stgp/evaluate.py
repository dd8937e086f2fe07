"""Model checking and comparison.

* Freeman-Tukey discrepancy and the posterior-predictive p-value built on it
* two-sample (energy form) CRPS for predictive count draws
* PSIS-LOO from an S x N pointwise log-likelihood matrix
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .diagnostics import ess, format_table
from .likelihood import family_logpmf, family_mean, logistic, mean_counts, sample_counts


class EvalError(ValueError):
    pass


# ------------------------------------------------------------- Freeman-Tukey

def freeman_tukey(y, expected) -> float:
    """``sum (sqrt(y) - sqrt(E))**2``."""
    y = np.asarray(y, dtype=float)
    expected = np.asarray(expected, dtype=float)
    if y.shape != expected.shape:
        raise EvalError(f"shape mismatch: {y.shape} vs {expected.shape}")
    if np.any(y < 0) or np.any(expected < 0):
        raise EvalError("Freeman-Tukey needs non-negative counts and expectations")
    return float(np.sum((np.sqrt(y) - np.sqrt(expected)) ** 2))


# --------------------------------------------------------- posterior draws

def thin_indices(n_chains, n_iter, S):
    """Flat indices of ``S`` draws spread evenly within each chain."""
    per = [S // n_chains + (1 if c < S % n_chains else 0) for c in range(n_chains)]
    out = []
    for c, k in enumerate(per):
        if k == 0:
            continue
        if k > n_iter:
            raise EvalError(f"requested {S} draws but only {n_chains * n_iter} available")
        pos = np.floor(np.linspace(0, n_iter, k, endpoint=False)).astype(int)
        out.extend(c * n_iter + pos)
    return np.array(out, dtype=int)


@dataclass
class DrawSet:
    """Per-draw latent fields and observation parameters for a subset of draws."""

    index: np.ndarray  # flat draw indices
    chain: np.ndarray
    f: np.ndarray  # (S, n_cells)
    phi: np.ndarray  # (S,) or None
    lam: np.ndarray  # (S,) or None


def posterior_draws(samples, target, S=None) -> DrawSet:
    """Latent field at the target's cells for ``S`` thinned draws (all when None)."""
    if S is None:
        idx = np.arange(samples.n_draws)
    else:
        idx = thin_indices(samples.n_chains, samples.n_iter, S)
    C = samples.flat()[idx]
    Z = target.unconstrain(C)
    f = target.latent_draws(Z)
    spec = target.spec
    phi = C[:, samples.names.index("phi")] if spec.family in ("negbin", "zinb") else None
    lam = C[:, samples.names.index("lambda")] if spec.family == "zinb" else None
    return DrawSet(idx, samples.chain_ids()[idx], f, phi, lam)


# ------------------------------------------------------------ Bayesian p-value

@dataclass
class PValueResult:
    p: float
    tukey_obs: np.ndarray
    tukey_sim: np.ndarray


def bayesian_pvalue(samples, target, n_draws=1000, seed=0, y_rep=None) -> PValueResult:
    """Posterior-predictive p-value ``mean(T(y, E) > T(y_rep, E))`` with Freeman-Tukey T.

    ``y_rep`` overrides the replicated data (array ``(S, n_obs)``), a test hook.
    """
    S = min(n_draws, samples.n_draws)
    if S < 100:
        raise EvalError(f"need at least 100 posterior draws, got {samples.n_draws}")
    ds = posterior_draws(samples, target, S)
    cells = target.cells
    m = cells.mask
    y = cells.y[m]
    family = target.spec.family
    obs = np.empty(S)
    sim = np.empty(S)
    for s in range(S):
        mu = mean_counts(cells.e[m], ds.f[s, m])
        lam = None if ds.lam is None else ds.lam[s]
        phi = None if ds.phi is None else ds.phi[s]
        E = family_mean(family, mu, lam)
        if y_rep is None:
            rng = np.random.default_rng([int(seed), int(ds.index[s])])
            pi = None if lam is None else logistic(lam)
            rep = sample_counts(family, mu, rng, phi=phi, pi=pi)
        else:
            rep = np.asarray(y_rep[s])
        obs[s] = freeman_tukey(y, E)
        sim[s] = freeman_tukey(rep, E)
    return PValueResult(float(np.mean(obs > sim)), obs, sim)


# ------------------------------------------------------------------- CRPS

def crps_empirical(X, X2, y) -> float:
    """``mean|X - y| - 0.5 * mean|X - X2|`` over two independent predictive samples."""
    X = np.asarray(X, dtype=float).ravel()
    X2 = np.asarray(X2, dtype=float).ravel()
    if X.size == 0 or X2.size == 0:
        raise EvalError("CRPS needs non-empty predictive samples")
    return float(np.mean(np.abs(X - y)) - 0.5 * np.mean(np.abs(X[:, None] - X2[None, :])))


def crps_cells(pred, y, split=None):
    """CRPS per cell; ``pred`` is ``(S, ...)`` and ``y`` the matching observations.

    The first ``split`` draws (default half) form one sample, the rest the other.
    """
    pred = np.asarray(pred, dtype=float)
    y = np.asarray(y, dtype=float)
    S = pred.shape[0]
    split = S // 2 if split is None else split
    if not 0 < split < S:
        raise EvalError(f"invalid split {split} for {S} draws")
    X = pred[:split].reshape(split, -1)
    X2 = pred[split:].reshape(S - split, -1)
    yy = y.ravel()
    out = np.empty(yy.size)
    for n in range(yy.size):
        out[n] = crps_empirical(X[:, n], X2[:, n], yy[n])
    return out.reshape(y.shape)


def crps_by_week(pred, y, weeks, mask=None, split=None) -> dict:
    """Average CRPS over locations for each week; ``pred`` is ``(S, L, W)``."""
    scores = crps_cells(pred, y, split)
    mask = np.ones_like(scores, dtype=bool) if mask is None else np.asarray(mask, bool)
    out = {}
    for j, week in enumerate(weeks):
        col = scores[:, j][mask[:, j]]
        if col.size:
            out[int(week)] = float(col.mean())
    return out


def crps_integral_discrete(cdf, y, upper) -> float:
    """``sum_k (F(k) - 1[k >= y])**2`` over ``k = 0..upper`` for integer-valued F."""
    k = np.arange(upper + 1)
    F = cdf(k)
    return float(np.sum((F - (k >= y)) ** 2))


# -------------------------------------------------------------- log-lik / LOO

@dataclass
class LogLikMatrix:
    values: np.ndarray  # (S, N)
    chain_ids: np.ndarray  # (S,)


def build_loglik_matrix(samples, target, S=200) -> LogLikMatrix:
    """Pointwise log-likelihood of the observed cells for ``S`` thinned draws."""
    ds = posterior_draws(samples, target, S)
    cells = target.cells
    m = cells.mask
    y, e = cells.y[m], cells.e[m]
    family = target.spec.family
    vals = np.empty((len(ds.index), int(m.sum())))
    for s in range(len(ds.index)):
        mu = mean_counts(e, ds.f[s, m])
        phi = None if ds.phi is None else ds.phi[s]
        lam = None if ds.lam is None else ds.lam[s]
        vals[s] = family_logpmf(family, y, mu, phi, lam)
    if not np.all(np.isfinite(vals)):
        raise EvalError("non-finite pointwise log-likelihood")
    return LogLikMatrix(vals, ds.chain)


def relative_eff(llm: LogLikMatrix) -> np.ndarray:
    """ESS of ``exp(ll)`` per cell over the number of draws, using chain labels."""
    chains = np.unique(llm.chain_ids)
    lengths = [np.sum(llm.chain_ids == c) for c in chains]
    n = min(lengths)
    lik = np.exp(llm.values - llm.values.max(axis=0, keepdims=True))
    arr = np.stack([lik[llm.chain_ids == c][:n] for c in chains])  # (C, n, N)
    return np.clip(ess(arr) / (len(chains) * n), 1e-3, None)


def gpd_fit(x):
    """Generalized Pareto shape ``k`` and scale ``sigma`` for exceedances ``x > 0``.

    Empirical-Bayes estimate over a grid of ``b = -k/sigma`` values, followed by
    shrinkage of ``k`` towards 0.5 with a weight of 10 pseudo-observations.
    """
    x = np.sort(np.asarray(x, dtype=float))
    n = x.size
    m = 30 + int(math.sqrt(n))
    j = np.arange(1, m + 1)
    b = 1.0 - np.sqrt(m / (j - 0.5))
    quart = x[int(n / 4 + 0.5) - 1]
    if quart <= 0:  # ties at the cutoff leave zero exceedances in the lower quartile
        quart = x[x > 0][0]
    b = b / (3.0 * quart) + 1.0 / x[-1]
    k_b = np.log1p(-b[:, None] * x[None, :]).mean(axis=1)
    log_lik = n * (np.log(-b / k_b) - k_b - 1.0)
    w = np.exp(log_lik - logsumexp(log_lik))
    b_hat = np.sum(b * w)
    k = np.mean(np.log1p(-b_hat * x))
    sigma = -k / b_hat
    k = (n * k + 10 * 0.5) / (n + 10)
    return float(k), float(sigma)


def gpd_quantile(p, k, sigma):
    if k == 0:
        return -sigma * np.log1p(-p)
    return sigma * np.expm1(-k * np.log1p(-p)) / k


def psis(log_ratios, r_eff=1.0):
    """Pareto-smoothed log weights (normalized) and the tail shape estimate ``k``."""
    lw = np.asarray(log_ratios, dtype=float).copy()
    S = lw.size
    lw = lw - lw.max()
    M = int(math.ceil(min(0.2 * S, 3.0 * math.sqrt(S / r_eff))))
    k = np.inf
    if M < 5 or M >= S:
        warnings.warn("too few draws for a Pareto tail fit; using truncated importance sampling")
        lw = np.minimum(lw, logsumexp(lw) - 0.5 * math.log(S))
        return lw - logsumexp(lw), k
    order = np.argsort(lw, kind="stable")
    tail = order[-M:]
    cutoff = lw[order[-M - 1]]
    exc = np.exp(lw[tail]) - math.exp(cutoff)
    if np.all(exc <= 0):
        k = -np.inf
    else:
        k, sigma = gpd_fit(exc)
        if np.isfinite(k):
            p = (np.arange(1, M + 1) - 0.5) / M
            smoothed = np.log(gpd_quantile(p, k, sigma) + math.exp(cutoff))
            lw[tail] = smoothed  # tail is sorted ascending, as are the quantiles
        lw = np.minimum(lw, 0.0)
    return lw - logsumexp(lw), k


@dataclass
class LooResult:
    elpd: float
    looic: float
    elpd_i: np.ndarray
    pareto_k: np.ndarray
    r_eff: np.ndarray
    se: float  # standard error of elpd; looic's is twice this


def loo_estimate(llm: LogLikMatrix, r_eff=None) -> LooResult:
    """PSIS leave-one-out expected log predictive density."""
    ll = np.asarray(llm.values, dtype=float)
    S, N = ll.shape
    if S < 100:
        warnings.warn(f"only {S} draws for PSIS-LOO; estimates will be noisy")
    r_eff = relative_eff(llm) if r_eff is None else np.broadcast_to(r_eff, (N,))
    elpd_i = np.empty(N)
    ks = np.empty(N)
    for n in range(N):
        lw, ks[n] = psis(-ll[:, n], r_eff[n])
        elpd_i[n] = logsumexp(lw + ll[:, n])
    elpd = float(np.sum(elpd_i))
    se = float(np.sqrt(N * np.var(elpd_i))) if N > 1 else 0.0
    return LooResult(elpd, -2.0 * elpd, elpd_i, ks, np.asarray(r_eff), se)


# ------------------------------------------------------------- reporting

@dataclass
class ScoreReport:
    model: str
    data_hash: str
    looic: float
    elpd: float
    pareto_k: np.ndarray
    crps_by_week: dict
    bayes_p: float
    tukey_obs: np.ndarray = field(default=None)
    tukey_sim: np.ndarray = field(default=None)

    @property
    def crps(self) -> float:
        vals = list(self.crps_by_week.values())
        return float(np.mean(vals)) if vals else float("nan")

    def row(self) -> dict:
        k = np.asarray(self.pareto_k, dtype=float)
        finite = k[np.isfinite(k)]
        return {
            "model": self.model,
            "looic": float(self.looic),
            "elpd": float(self.elpd),
            "crps": self.crps,
            "bayes_p": float(self.bayes_p),
            "max_pareto_k": float(finite.max()) if finite.size else float("nan"),
            "n_bad_k": int(np.sum(k > 0.7)),
            "data_hash": self.data_hash,
        }


REPORT_COLUMNS = ["model", "looic", "elpd", "crps", "bayes_p", "max_pareto_k", "n_bad_k", "data_hash"]


def write_report(report: ScoreReport, directory):
    directory = Path(directory)
    row = report.row()
    with open(directory / "score_report.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        w.writerow([_cell(row[c]) for c in REPORT_COLUMNS])
    with open(directory / "crps_by_week.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["week", "crps"])
        for week, v in sorted(report.crps_by_week.items()):
            w.writerow([week, repr(float(v))])
    text = format_table([{**row, "bayes_p (Freeman-Tukey)": row["bayes_p"]}],
                        ["model", "looic", "elpd", "crps", "bayes_p (Freeman-Tukey)", "max_pareto_k"])
    (directory / "score_report.txt").write_text(text, encoding="utf-8")


def _cell(v):
    return repr(v) if isinstance(v, float) else str(v)


def read_report_row(path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != 1:
        raise EvalError(f"{path}: expected a single report row")
    row = rows[0]
    for c in ("looic", "elpd", "crps", "bayes_p", "max_pareto_k"):
        row[c] = float(row[c])
    row["n_bad_k"] = int(row["n_bad_k"])
    return row


def compare_models(reports) -> list:
    """Rows sorted by looic (ascending, stable); all reports must share a dataset."""
    rows = [r.row() if isinstance(r, ScoreReport) else dict(r) for r in reports]
    if len(rows) < 2:
        raise EvalError("need at least two reports to compare")
    hashes = {r["data_hash"] for r in rows}
    if len(hashes) > 1:
        raise EvalError("reports were computed on different datasets")
    return sorted(rows, key=lambda r: r["looic"])
