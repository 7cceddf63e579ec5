"""Convergence diagnostics: split R-hat and bulk effective sample size.

Both operate on a (chains, iterations) array for one parameter. R-hat is
the classic split potential scale reduction factor. Bulk ESS follows the
rank-normalization recipe: draws are replaced by normal scores of their
pooled ranks, chains are split in half, and the autocorrelation series
is truncated by Geyer's initial monotone positive sequence.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.fft import next_fast_len
from scipy.stats import norm, rankdata

from .errors import ValidationError


def _split_chains(chains: np.ndarray) -> np.ndarray:
    """Halve each chain (middle draw dropped when odd)."""
    chains = np.atleast_2d(np.asarray(chains, dtype=float))
    n = chains.shape[1]
    half = n // 2
    return np.vstack([chains[:, :half], chains[:, n - half:]])


def split_rhat(chains: np.ndarray) -> float:
    """Split potential scale reduction factor.

    Returns NaN for degenerate input (any constant half-chain pool with
    zero within variance).
    """
    halves = _split_chains(chains)
    m, n = halves.shape
    if n < 2:
        raise ValidationError("split R-hat needs at least 4 draws per chain")
    within = halves.var(axis=1, ddof=1).mean()
    between = halves.mean(axis=1).var(ddof=1)
    if within == 0.0:
        return math.nan
    var_plus = (n - 1) / n * within + between
    return float(math.sqrt(var_plus / within))


def rank_normalize(values: np.ndarray) -> np.ndarray:
    """Normal scores of pooled ranks (average ranks for ties)."""
    values = np.asarray(values, dtype=float)
    ranks = rankdata(values.reshape(-1), method="average")
    z = norm.ppf((ranks - 0.375) / (values.size + 0.25))
    return z.reshape(values.shape)


def _autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased (1/n) autocovariance of one chain via FFT."""
    n = x.size
    m = next_fast_len(2 * n)
    f = np.fft.rfft(x - x.mean(), m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n].real
    return acov / n


def ess_bulk(chains: np.ndarray) -> float:
    """Bulk effective sample size of rank-normalized split chains."""
    halves = _split_chains(rank_normalize(np.atleast_2d(np.asarray(chains, dtype=float))))
    m, n = halves.shape
    if n < 4:
        return math.nan
    acov = np.vstack([_autocovariance(halves[k]) for k in range(m)])
    chain_var = acov[:, 0] * n / (n - 1)
    mean_var = float(chain_var.mean())
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += float(halves.mean(axis=1).var(ddof=1))
    if var_plus <= 0.0 or not math.isfinite(var_plus):
        return math.nan

    mean_acov = acov.mean(axis=0)
    rho = np.zeros(n)
    rho[0] = 1.0
    rho[1] = 1.0 - (mean_var - mean_acov[1]) / var_plus
    # initial positive sequence: keep pairs while their sum stays positive
    t = 1
    rho_even = 1.0
    rho_odd = rho[1]
    while t < n - 2 and rho_even + rho_odd > 0.0:
        rho_even = 1.0 - (mean_var - mean_acov[t + 1]) / var_plus
        rho_odd = 1.0 - (mean_var - mean_acov[t + 2]) / var_plus
        if rho_even + rho_odd >= 0.0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t - 2
    if rho_even > 0.0:
        rho[max_t + 1] = rho_even
    # initial monotone sequence: enforce non-increasing pair sums
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2
    tau = -1.0 + 2.0 * float(rho[: max_t + 1].sum()) + float(rho[max_t + 1])
    total = m * n
    tau = max(tau, 1.0 / math.log10(total)) if total > 10 else max(tau, 1e-8)
    return float(total / tau)
