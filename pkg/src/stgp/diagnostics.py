"""MCMC diagnostics and posterior summaries."""
from __future__ import annotations

import numpy as np

QUANTILES = (0.025, 0.5, 0.975)


def quantile_summary(x, q=QUANTILES):
    """Empirical quantiles with linear interpolation between order statistics."""
    x = np.asarray(x, dtype=float).ravel()
    return tuple(float(v) for v in np.quantile(x, q, method="linear"))


def _as_chains(draws):
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 2:
        draws = draws[:, :, None]
    if draws.ndim != 3:
        raise ValueError(f"expected (chains, iterations[, params]), got shape {draws.shape}")
    return draws


def split_chains(draws):
    """Halve each chain (dropping the middle draw when odd): (2C, n//2, P)."""
    draws = _as_chains(draws)
    n = draws.shape[1]
    h = n // 2
    return np.concatenate([draws[:, :h], draws[:, n - h:]], axis=0)


def gelman_rubin(draws, split=True):
    """Potential scale reduction factor per parameter.

    ``draws`` is ``(chains, iterations)`` or ``(chains, iterations, params)``.
    Zero within-chain variance gives ``inf``. Values are floored at 1: the
    ratio dips just below 1 when the split halves agree better than chance,
    which carries no convergence information.
    """
    draws = _as_chains(draws)
    if split:
        if draws.shape[0] < 1 or draws.shape[1] < 4:
            raise ValueError("need at least 4 iterations per chain")
        draws = split_chains(draws)
    m, n, _ = draws.shape
    if m < 2:
        raise ValueError("need at least 2 chains (or split halves)")
    means = draws.mean(axis=1)
    W = draws.var(axis=1, ddof=1).mean(axis=0)
    B = n * means.var(axis=0, ddof=1)
    var_hat = (n - 1) / n * W + B / n
    with np.errstate(divide="ignore", invalid="ignore"):
        rhat = np.sqrt(var_hat / W)
    rhat = np.where(W > 0, np.maximum(rhat, 1.0), np.inf)
    return rhat


def _autocov(x):
    """Autocovariance of each row via FFT (biased, normalized by n)."""
    n = x.shape[-1]
    size = 1 << int(np.ceil(np.log2(2 * n)))
    xc = x - x.mean(axis=-1, keepdims=True)
    spec = np.fft.rfft(xc, n=size, axis=-1)
    acov = np.fft.irfft(spec * np.conj(spec), n=size, axis=-1)[..., :n]
    return acov / n


def ess(draws, split=False):
    """Effective sample size per parameter (Geyer initial monotone sequence).

    Multi-chain estimator: autocorrelations are combined through the
    between/within variance decomposition.
    """
    draws = _as_chains(draws)
    if split:
        draws = split_chains(draws)
    m, n, P = draws.shape
    out = np.empty(P)
    for k in range(P):
        x = draws[:, :, k]
        acov = _autocov(x)
        chain_var = acov[:, 0] * n / (n - 1.0)
        W = chain_var.mean()
        var_plus = W * (n - 1.0) / n
        if m > 1:
            var_plus += x.mean(axis=1).var(ddof=1)
        if not var_plus > 0:
            out[k] = float(m * n)
            continue
        rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
        rho[0] = 1.0
        # pair sums Gamma_t = rho_{2t} + rho_{2t+1}; stop at first negative
        pairs = []
        t = 0
        while t + 1 < n:
            g = rho[t] + rho[t + 1]
            if g < 0:
                break
            pairs.append(g)
            t += 2
        pairs = np.minimum.accumulate(np.array(pairs)) if pairs else np.array([1.0])
        tau = -1.0 + 2.0 * pairs.sum()
        tau = max(tau, 1.0 / np.log10(m * n))
        out[k] = m * n / tau
    return out


def mcse_mean(draws):
    draws = _as_chains(draws)
    flat = draws.reshape(-1, draws.shape[-1])
    return flat.std(axis=0, ddof=1) / np.sqrt(ess(draws))


def summarize(samples, names=None):
    """Median and central 95% interval per parameter, pooled over chains.

    ``samples`` is a :class:`stgp.sampler.PosteriorSamples` or a draws array
    ``(chains, iterations, params)``; ``names`` restricts the output.
    """
    if hasattr(samples, "draws"):
        draws, all_names = samples.draws, list(samples.names)
    else:
        draws = _as_chains(samples)
        all_names = [f"p{k}" for k in range(draws.shape[-1])]
    names = all_names if names is None else list(names)
    rows = []
    for name in names:
        k = all_names.index(name)
        x = draws[:, :, k]
        lo, med, hi = quantile_summary(x)
        row = {"parameter": name, "median": med, "lower95": lo, "upper95": hi,
               "mean": float(x.mean())}
        if x.shape[0] >= 2 and x.shape[1] >= 4:
            row["rhat"] = float(gelman_rubin(x)[0])
        rows.append(row)
    return rows


def format_table(rows, columns=None, floatfmt="{:.4g}"):
    if not rows:
        return ""
    columns = columns or list(rows[0])
    cells = [[c for c in columns]]
    for r in rows:
        cells.append([floatfmt.format(r[c]) if isinstance(r.get(c), float) else str(r.get(c, ""))
                      for c in columns])
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    lines = ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
