"""Log-posteriors for the three prevalence models, priors, and
prevalence reconstruction.

All models share the latent structure ``logit(p_l) = beta0 + u_l`` with a
BYM2 random effect::

    u_l = sigma_u * (sqrt(1 - phi) * u1_l + sqrt(phi) * u2_l / alpha)

where ``u1`` is iid standard normal, ``u2`` follows the ICAR kernel on
the adjacency graph, and ``alpha`` standardises ``u2`` per connected
component (see :mod:`nutrimap.spatial`). Sampling happens on an
unconstrained scale (log sigma_u, logit phi, log sigma_tau, logit rho)
with log-Jacobian terms included, so the posteriors plug straight into
gradient-based samplers.

Models expose ``logpost(x) -> (value, gradient)`` on the unconstrained
vector plus ``constrain(x)`` mapping to the named, constrained
parameters (including the composed ``u_l``). ``terms(x)`` reports the
named pieces of the value; it is computed along an independent, slower
path and is used to identify the offending term when an evaluation
produces NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from scipy import stats
from scipy.special import digamma, expit, gammaln

from .data import AreaTable
from .design import DirectEstimate, estimates_table
from .errors import NumericalError, SchemaError, ValidationError
from .spatial import AdjacencyGraph, Bym2Scaling, bym2_scaling, icar_quadratic

LOG_2PI = math.log(2.0 * math.pi)

# posterior treated as zero beyond this log-variance: the chi-square and
# Gaussian variance terms overflow past exp(+-400)
_ETA_LIMIT = 400.0

# math.exp raises OverflowError instead of returning inf
_EXP_LIMIT = 700.0


def _expit1(t: float) -> float:
    """Scalar expit without ufunc dispatch overhead."""
    if t >= 0.0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


def _log_expit1(t: float) -> float:
    """Scalar log(expit(t)), finite for any finite t."""
    if t < -_EXP_LIMIT:
        return t
    return -math.log1p(math.exp(-t))


@dataclass(frozen=True)
class PriorConfig:
    """Hyperparameters of the shared priors.

    ``coef_variance`` is the variance (not sd) of the Normal prior on
    regression coefficients. ``gamma_priors`` are (mean, sd) pairs for
    the variance-regression coefficients. ``pc_sigma`` fixes the PC prior
    through P(sigma > threshold) = tail. ``sum_to_zero_scale`` is the sd
    per unit component size of the soft constraint on the mean of u2.
    """

    coef_variance: float = 5.0
    gamma_priors: tuple[tuple[float, float], ...] = ((0.0, 1.0), (1.0, 0.5), (-1.0, 0.5))
    pc_sigma: tuple[float, float] = (1.0, 0.01)
    phi_beta: tuple[float, float] = (1.0, 1.0)
    sum_to_zero_scale: float = 0.001

    def __post_init__(self) -> None:
        if self.coef_variance <= 0:
            raise ValidationError("coef_variance must be positive")
        if any(sd <= 0 for _, sd in self.gamma_priors):
            raise ValidationError("gamma prior sds must be positive")
        thr, tail = self.pc_sigma
        if thr <= 0 or not 0.0 < tail < 1.0:
            raise ValidationError("pc_sigma needs threshold > 0 and tail in (0, 1)")
        if self.phi_beta[0] <= 0 or self.phi_beta[1] <= 0:
            raise ValidationError("phi_beta shapes must be positive")


def pc_prior_rate(config: PriorConfig) -> float:
    """Exponential rate lambda with P(sigma > threshold) = tail."""
    threshold, tail = config.pc_sigma
    return -math.log(tail) / threshold


def pc_prior_logdensity(sigma: float, config: PriorConfig | None = None) -> float:
    """PC prior log-density for a random-effect scale: log lam - lam*sigma."""
    if sigma <= 0:
        raise ValidationError(f"PC prior is defined for sigma > 0, got {sigma}")
    lam = pc_prior_rate(config or PriorConfig())
    return math.log(lam) - lam * sigma


def normal_logpdf(x, mean, sd):
    x = np.asarray(x, dtype=float)
    return -0.5 * LOG_2PI - np.log(sd) - 0.5 * ((x - mean) / sd) ** 2


def chisq_logpdf(x, dof):
    """Log-density of the chi-square distribution with ``dof`` degrees."""
    x = np.asarray(x, dtype=float)
    h = dof / 2.0
    return (h - 1.0) * np.log(x) - x / 2.0 - h * math.log(2.0) - gammaln(h)


def betabinomial_logpmf(y, n, r, rho):
    """Beta-binomial log-pmf with mean ``r`` and intra-cluster correlation ``rho``.

    Shapes are ``a = r*(1-rho)/rho`` and ``b = (1-r)*(1-rho)/rho``; as
    ``rho -> 0`` the pmf approaches Binomial(n, r).
    """
    y = np.asarray(y, dtype=float)
    n = np.asarray(n, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(y < 0) or np.any(y > n):
        raise ValidationError("beta-binomial counts need 0 <= y <= n")
    if not 0.0 < rho < 1.0:
        raise ValidationError(f"rho must lie in (0, 1), got {rho}")
    kappa = (1.0 - rho) / rho
    a = r * kappa
    b = (1.0 - r) * kappa
    coef = gammaln(n + 1) - gammaln(y + 1) - gammaln(n - y + 1)
    # rising factorials; y == 0 (or y == n) contribute exactly 0, guarded
    # so that a == 0 does not produce inf - inf
    a_safe = np.where(y > 0, a, 1.0)
    b_safe = np.where(n - y > 0, b, 1.0)
    t_a = np.where(y > 0, gammaln(y + a_safe) - gammaln(a_safe), 0.0)
    t_b = np.where(n - y > 0, gammaln(n - y + b_safe) - gammaln(b_safe), 0.0)
    return coef + t_a + t_b + gammaln(kappa) - gammaln(n + kappa)


# ---------------------------------------------------------------------------
# shared BYM2 machinery


class _Bym2Block:
    """Composition, priors, and gradients of the BYM2 effect.

    Handles the unconstrained (log sigma_u, logit phi) scales, the ICAR
    kernel, the per-component soft sum-to-zero penalty, and singleton
    components (u2 pinned to 0, node not sampled).
    """

    def __init__(self, graph: AdjacencyGraph, scaling: Bym2Scaling, priors: PriorConfig):
        self.graph = graph
        self.n_nodes = graph.n_nodes
        free = sorted(i for comp in graph.components if len(comp) >= 2 for i in comp)
        self.free = np.array(free, dtype=np.int64)
        self.n_free = len(free)
        node_to_free = np.full(graph.n_nodes, -1, dtype=np.int64)
        node_to_free[self.free] = np.arange(self.n_free)
        self.alpha_free = scaling.alpha_by_node[self.free]
        self.edge_i = node_to_free[graph.edge_i]
        self.edge_j = node_to_free[graph.edge_j]
        self.comps = [node_to_free[np.array(c)] for c in graph.components if len(c) >= 2]
        self.soft_sd = [priors.sum_to_zero_scale * len(c) for c in self.comps]
        self.lam = pc_prior_rate(priors)
        self.phi_a, self.phi_b = priors.phi_beta
        # constants folded out of the per-evaluation path
        self._dense = self.n_free == self.n_nodes
        self._inv_alpha = 1.0 / self.alpha_free
        self._comp_terms = [
            (comp, 1.0 / len(comp), 1.0 / (sd * sd)) for comp, sd in zip(self.comps, self.soft_sd)
        ]
        self._log_lam = math.log(self.lam)
        self._const = (
            -0.5 * self.n_nodes * LOG_2PI
            + sum(-0.5 * LOG_2PI - math.log(sd) for sd in self.soft_sd)
            - (math.lgamma(self.phi_a) + math.lgamma(self.phi_b)
               - math.lgamma(self.phi_a + self.phi_b))
        )

    def _spread(self, u2f: np.ndarray) -> np.ndarray:
        """u2 / alpha scattered onto all nodes (singletons stay 0)."""
        if self._dense:
            return u2f * self._inv_alpha
        w = np.zeros(self.n_nodes)
        w[self.free] = u2f * self._inv_alpha
        return w

    def compose(self, sigma: float, phi: float, u1: np.ndarray, u2f: np.ndarray) -> np.ndarray:
        return sigma * (math.sqrt(1.0 - phi) * u1 + math.sqrt(phi) * self._spread(u2f))

    def value(self, s: float, lphi: float, u1: np.ndarray, u2f: np.ndarray) -> float:
        if s > _EXP_LIMIT:
            return -math.inf
        sigma = math.exp(s)
        # stable log phi + log(1-phi), finite for any finite logit
        log_phi = _log_expit1(lphi)
        log_1mphi = _log_expit1(-lphi)
        val = self._const - 0.5 * float(np.dot(u1, u1))
        diff = u2f[self.edge_i] - u2f[self.edge_j]
        val -= 0.5 * float(np.dot(diff, diff))
        for comp, inv_m, inv_var in self._comp_terms:
            mean_c = float(u2f[comp].sum()) * inv_m
            val -= 0.5 * mean_c * mean_c * inv_var
        # PC prior on sigma plus the log-sigma Jacobian
        val += self._log_lam - self.lam * sigma + s
        # Beta prior on phi plus the logit Jacobian
        val += self.phi_a * log_phi + self.phi_b * log_1mphi
        return val

    def grads(
        self, s: float, lphi: float, u1: np.ndarray, u2f: np.ndarray, g_u: np.ndarray
    ) -> tuple[float, float, np.ndarray, np.ndarray]:
        """Gradients of (value + likelihood-through-u) given g_u = d logpost / d u."""
        sigma = math.exp(s)
        phi = _expit1(lphi)
        sq_1mphi = math.sqrt(1.0 - phi)
        sq_phi = math.sqrt(phi)
        w = self._spread(u2f)
        u = sigma * (sq_1mphi * u1 + sq_phi * w)

        d_s = float(np.dot(g_u, u)) - self.lam * sigma + 1.0
        # d u / d phi times the logit Jacobian phi(1-phi), written in a
        # form that stays finite as phi -> 0 or 1
        du_dlphi = (0.5 * sigma) * (w * (sq_phi * (1.0 - phi)) - u1 * (phi * sq_1mphi))
        d_lphi = float(np.dot(g_u, du_dlphi))
        d_lphi += (self.phi_a - 1.0) * (1.0 - phi) - (self.phi_b - 1.0) * phi
        d_lphi += 1.0 - 2.0 * phi

        d_u1 = g_u * (sigma * sq_1mphi) - u1

        g_f = g_u if self._dense else g_u[self.free]
        d_u2f = g_f * ((sigma * sq_phi) * self._inv_alpha)
        diff = u2f[self.edge_i] - u2f[self.edge_j]
        d_u2f += np.bincount(self.edge_i, weights=-diff, minlength=self.n_free)
        d_u2f += np.bincount(self.edge_j, weights=diff, minlength=self.n_free)
        for comp, inv_m, inv_var in self._comp_terms:
            mean_c = float(u2f[comp].sum()) * inv_m
            d_u2f[comp] -= mean_c * inv_var * inv_m
        return d_s, d_lphi, d_u1, d_u2f

    def terms(self, s: float, lphi: float, u1: np.ndarray, u2f: np.ndarray) -> dict[str, float]:
        sigma = math.exp(s)
        phi = expit(lphi)
        out = {
            "u1_prior": float(stats.norm.logpdf(u1).sum()),
            "icar_kernel": -0.5 * self._quadratic(u2f),
            "pc_sigma_u": math.log(self.lam) - self.lam * sigma if sigma > 0 else -math.inf,
            "jacobian_sigma_u": s,
            "phi_prior": float(stats.beta.logpdf(phi, self.phi_a, self.phi_b)),
            "jacobian_phi": float(np.log(phi) + np.log1p(-phi)),
        }
        soft = 0.0
        for comp, sd in zip(self.comps, self.soft_sd):
            soft += float(stats.norm.logpdf(u2f[comp].mean(), 0.0, sd))
        out["soft_sum_to_zero"] = soft
        return out

    def _quadratic(self, u2f: np.ndarray) -> float:
        u2 = np.zeros(self.n_nodes)
        u2[self.free] = u2f
        return icar_quadratic(u2, self.graph)


# ---------------------------------------------------------------------------
# estimate alignment


def _align_estimates(estimates, graph: AdjacencyGraph, need: Sequence[str]) -> pd.DataFrame:
    """Reindex a direct-estimates table to graph node order.

    Areas in the table but not in the graph are an error; graph nodes
    without usable estimates become prior-only (all-NaN) rows.
    """
    if isinstance(estimates, (list, tuple)):
        estimates = estimates_table(list(estimates))
    missing_cols = [c for c in ("area_id", *need) if c not in estimates.columns]
    if missing_cols:
        raise SchemaError(f"direct-estimates table is missing column(s): {', '.join(missing_cols)}")
    ids = estimates["area_id"].astype(str)
    if ids.duplicated().any():
        raise ValidationError(f"duplicate area_id {ids[ids.duplicated()].iloc[0]!r} in estimates")
    extra = sorted(set(ids) - set(graph.nodes))
    if extra:
        raise ValidationError(f"estimates name area(s) absent from the graph: {', '.join(extra)}")
    return estimates.set_index(ids).reindex(graph.nodes)


@dataclass(frozen=True)
class AreaPrevalenceDraws:
    """Per-draw prevalences for every area; overall plus urban/rural
    splits when the model distinguishes them."""

    area_ids: tuple[str, ...]
    p: np.ndarray
    p_urban: np.ndarray | None = None
    p_rural: np.ndarray | None = None


# ---------------------------------------------------------------------------
# models


class MeanSmoothingModel:
    """Area-level model with the sampling variances held fixed.

    The direct estimate of each observed area is Gaussian around the
    latent prevalence with its estimated variance v_hat; areas without a
    usable estimate (absent, or v_hat <= 0 at a boundary p_hat) are
    retained through the spatial prior only and listed in
    ``excluded_areas``.
    """

    kind = "mean"

    def __init__(self, estimates, graph: AdjacencyGraph, scaling: Bym2Scaling | None = None,
                 priors: PriorConfig | None = None):
        self.graph = graph
        self.priors = priors or PriorConfig()
        scaling = scaling if scaling is not None else bym2_scaling(graph)
        self.block = _Bym2Block(graph, scaling, self.priors)
        table = _align_estimates(estimates, graph, need=("p_hat", "v_hat"))
        p_hat = table["p_hat"].to_numpy(dtype=float)
        v_hat = table["v_hat"].to_numpy(dtype=float)
        usable = np.isfinite(p_hat) & np.isfinite(v_hat) & (v_hat > 0)
        self.obs = np.flatnonzero(usable)
        self.excluded_areas = tuple(
            graph.nodes[i] for i in np.flatnonzero(np.isfinite(p_hat) & ~usable)
        )
        self.p_hat = p_hat[self.obs]
        self.v_hat = v_hat[self.obs]
        self._inv_v = 1.0 / self.v_hat
        cv = self.priors.coef_variance
        self._inv_cv = 1.0 / cv
        self._lik_const = (
            float(np.sum(-0.5 * (LOG_2PI + np.log(self.v_hat))))
            - 0.5 * (LOG_2PI + math.log(cv))
        )
        self._layout()

    def _layout(self) -> None:
        L, F = self.graph.n_nodes, self.block.n_free
        self.n_scalars = 3
        self.dim = self.n_scalars + L + F
        self.names = ("beta0", "sigma_u", "phi") + tuple(f"u[{a}]" for a in self.graph.nodes)

    def _unpack(self, x: np.ndarray):
        L = self.graph.n_nodes
        k = self.n_scalars
        return x[0], x[1], x[2], x[k:k + L], x[k + L:]

    def logpost(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        beta0, s, lphi, u1, u2f = self._unpack(x)
        val = self.block.value(s, lphi, u1, u2f)
        if val == -math.inf:
            return -math.inf, np.zeros_like(x)
        sigma, phi = math.exp(s), _expit1(lphi)
        u = self.block.compose(sigma, phi, u1, u2f)
        p_obs = expit(beta0 + u[self.obs])
        resid = self.p_hat - p_obs
        wres = resid * self._inv_v
        val += self._lik_const - 0.5 * float(np.dot(wres, resid))
        val -= 0.5 * beta0 * beta0 * self._inv_cv
        if math.isnan(val):
            raise NumericalError(f"log-posterior is NaN; offending term(s): {self._nan_terms(x)}")
        if val == -math.inf:
            return val, np.zeros_like(x)

        g_t = np.zeros(self.graph.n_nodes)
        g_t[self.obs] = wres * (p_obs * (1.0 - p_obs))
        d_beta0 = float(g_t.sum()) - beta0 * self._inv_cv
        d_s, d_lphi, d_u1, d_u2f = self.block.grads(s, lphi, u1, u2f, g_t)
        return val, np.concatenate([[d_beta0, d_s, d_lphi], d_u1, d_u2f])

    def constrain(self, x: np.ndarray) -> np.ndarray:
        beta0, s, lphi, u1, u2f = self._unpack(x)
        sigma, phi = math.exp(s), float(expit(lphi))
        u = self.block.compose(sigma, phi, u1, u2f)
        return np.concatenate([[beta0, sigma, phi], u])

    def terms(self, x: np.ndarray) -> dict[str, float]:
        beta0, s, lphi, u1, u2f = self._unpack(x)
        out = self.block.terms(s, lphi, u1, u2f)
        u = self.block.compose(math.exp(s), expit(lphi), u1, u2f)
        p = expit(beta0 + u)
        out["likelihood_mean"] = float(
            stats.norm.logpdf(self.p_hat, p[self.obs], np.sqrt(self.v_hat)).sum()
        )
        out["coef_prior"] = float(stats.norm.logpdf(beta0, 0.0, math.sqrt(self.priors.coef_variance)))
        return out

    def _nan_terms(self, x: np.ndarray) -> str:
        bad = [k for k, v in self.terms(x).items() if math.isnan(v)]
        return ", ".join(bad) if bad else "unidentified"


class JointSmoothingModel:
    """Area-level model smoothing prevalences and sampling variances jointly.

    Adds to the mean-smoothing structure a chi-square likelihood for the
    estimated variances, ``d * v_hat / V ~ chi2(d)``, with
    ``log V = gamma0 + gamma1*log(p(1-p)) + gamma2*log(n) + tau`` and
    ``tau ~ Normal(0, sigma_tau^2)`` per observed area. The Gaussian
    likelihood for p_hat then uses the modeled variance V.

    tau is sampled non-centered (tau = sigma_tau * tau_std with standard
    normal tau_std) to avoid the funnel between tau and sigma_tau; the
    constrained output reports tau itself.
    """

    kind = "joint"

    def __init__(self, estimates, graph: AdjacencyGraph, scaling: Bym2Scaling | None = None,
                 priors: PriorConfig | None = None):
        self.graph = graph
        self.priors = priors or PriorConfig()
        scaling = scaling if scaling is not None else bym2_scaling(graph)
        self.block = _Bym2Block(graph, scaling, self.priors)
        table = _align_estimates(estimates, graph, need=("p_hat", "v_hat", "dof", "n_households"))
        p_hat = table["p_hat"].to_numpy(dtype=float)
        v_hat = table["v_hat"].to_numpy(dtype=float)
        dof = table["dof"].to_numpy(dtype=float)
        n = table["n_households"].to_numpy(dtype=float)
        usable = (
            np.isfinite(p_hat) & np.isfinite(v_hat) & (v_hat > 0)
            & np.isfinite(dof) & (dof > 0) & np.isfinite(n) & (n >= 1)
        )
        self.obs = np.flatnonzero(usable)
        self.excluded_areas = tuple(
            graph.nodes[i] for i in np.flatnonzero(np.isfinite(p_hat) & ~usable)
        )
        self.p_hat = p_hat[self.obs]
        self.v_hat = v_hat[self.obs]
        self.dof = dof[self.obs]
        self.log_n = np.log(n[self.obs])
        # fold every eta-independent piece of the likelihood into one constant
        h = self.dof / 2.0
        self._dv = self.dof * self.v_hat
        self._eta_coef = -(h + 0.5)
        cv = self.priors.coef_variance
        self._inv_cv = 1.0 / cv
        self._gamma_mean = np.array([m for m, _ in self.priors.gamma_priors], dtype=float)
        self._gamma_prec = np.array([1.0 / (sd * sd) for _, sd in self.priors.gamma_priors])
        self._lik_const = (
            -LOG_2PI * len(self.obs)
            + float(np.sum((h - 1.0) * np.log(self._dv)))
            + float(np.sum(-h * math.log(2.0) - gammaln(h) + np.log(self.dof)))
            - 0.5 * (LOG_2PI + math.log(cv))
            + float(sum(-0.5 * LOG_2PI - math.log(sd) for _, sd in self.priors.gamma_priors))
        )
        self._layout()

    def _layout(self) -> None:
        L, F, O = self.graph.n_nodes, self.block.n_free, len(self.obs)
        self.n_scalars = 7
        self.dim = self.n_scalars + L + F + O
        self.names = (
            ("beta0", "sigma_u", "phi", "gamma0", "gamma1", "gamma2", "sigma_tau")
            + tuple(f"u[{a}]" for a in self.graph.nodes)
            + tuple(f"tau[{self.graph.nodes[i]}]" for i in self.obs)
        )

    def _unpack(self, x: np.ndarray):
        L, F = self.graph.n_nodes, self.block.n_free
        k = self.n_scalars
        return (
            x[0], x[1], x[2], x[3:6], x[6],
            x[k:k + L], x[k + L:k + L + F], x[k + L + F:],
        )

    def _eta(self, gamma: np.ndarray, tau: np.ndarray, lpv: np.ndarray) -> np.ndarray:
        return gamma[0] + gamma[1] * lpv + gamma[2] * self.log_n + tau

    def logpost(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        beta0, s, lphi, gamma, s_tau, u1, u2f, tau_std = self._unpack(x)
        val = self.block.value(s, lphi, u1, u2f)
        if val == -math.inf or s_tau > _EXP_LIMIT:
            return -math.inf, np.zeros_like(x)
        sigma, phi = math.exp(s), _expit1(lphi)
        sigma_tau = math.exp(s_tau)
        tau = sigma_tau * tau_std
        u = self.block.compose(sigma, phi, u1, u2f)
        t = beta0 + u[self.obs]
        p = expit(t)
        # log(p(1-p)) via softplus keeps eta finite for any finite t
        lpv = -(np.logaddexp(0.0, t) + np.logaddexp(0.0, -t))
        eta = gamma[0] + gamma[1] * lpv + gamma[2] * self.log_n + tau
        if np.any(np.abs(eta) > _ETA_LIMIT):
            return -math.inf, np.zeros_like(x)
        inv_v = np.exp(-eta)
        resid = self.p_hat - p
        wres = resid * inv_v
        # Gaussian for p_hat with modeled variance V = exp(eta), and
        # chi-square for v_hat: d*v_hat/V ~ chi2(d) with d/dv_hat Jacobian;
        # everything eta-free lives in _lik_const
        xq = self._dv * inv_v
        val += (
            self._lik_const
            + float(np.dot(self._eta_coef, eta))
            - 0.5 * float(np.dot(wres, resid))
            - 0.5 * float(xq.sum())
        )
        val += -0.5 * float(np.dot(tau_std, tau_std))
        val += self.block._log_lam - self.block.lam * sigma_tau + s_tau
        gd = gamma - self._gamma_mean
        val += -0.5 * beta0 * beta0 * self._inv_cv - 0.5 * float(np.dot(gd * gd, self._gamma_prec))
        if math.isnan(val):
            raise NumericalError(f"log-posterior is NaN; offending term(s): {self._nan_terms(x)}")
        if val == -math.inf:
            return val, np.zeros_like(x)

        # d/d eta of the Gaussian and chi-square terms per observed area
        s_eta = self._eta_coef + 0.5 * (wres * resid + xq)
        g_t = np.zeros(self.graph.n_nodes)
        g_t[self.obs] = wres * (p * (1.0 - p)) + s_eta * (gamma[1] * (1.0 - 2.0 * p))
        d_beta0 = float(g_t.sum()) - beta0 * self._inv_cv
        d_gamma = (
            np.array([float(s_eta.sum()), float(np.dot(s_eta, lpv)), float(np.dot(s_eta, self.log_n))])
            - gd * self._gamma_prec
        )
        d_tau_std = s_eta * sigma_tau - tau_std
        d_s_tau = float(np.dot(s_eta, tau)) - self.block.lam * sigma_tau + 1.0
        d_s, d_lphi, d_u1, d_u2f = self.block.grads(s, lphi, u1, u2f, g_t)
        return val, np.concatenate([[d_beta0, d_s, d_lphi], d_gamma, [d_s_tau], d_u1, d_u2f, d_tau_std])

    def constrain(self, x: np.ndarray) -> np.ndarray:
        beta0, s, lphi, gamma, s_tau, u1, u2f, tau_std = self._unpack(x)
        sigma, phi = math.exp(s), float(expit(lphi))
        sigma_tau = math.exp(s_tau)
        u = self.block.compose(sigma, phi, u1, u2f)
        return np.concatenate([[beta0, sigma, phi], gamma, [sigma_tau], u, sigma_tau * tau_std])

    def terms(self, x: np.ndarray) -> dict[str, float]:
        beta0, s, lphi, gamma, s_tau, u1, u2f, tau_std = self._unpack(x)
        out = self.block.terms(s, lphi, u1, u2f)
        sigma_tau = math.exp(s_tau)
        u = self.block.compose(math.exp(s), expit(lphi), u1, u2f)
        t = (beta0 + u)[self.obs]
        p = expit(t)
        lpv = -(np.logaddexp(0.0, t) + np.logaddexp(0.0, -t))
        eta = self._eta(gamma, sigma_tau * tau_std, lpv)
        v = np.exp(eta)
        out["likelihood_mean"] = float(stats.norm.logpdf(self.p_hat, p, np.sqrt(v)).sum())
        out["likelihood_variance"] = float(
            (stats.chi2.logpdf(self.dof * self.v_hat / v, self.dof) + np.log(self.dof / v)).sum()
        )
        out["tau_prior"] = float(stats.norm.logpdf(tau_std).sum())
        out["pc_sigma_tau"] = pc_prior_logdensity(sigma_tau)
        out["jacobian_sigma_tau"] = s_tau
        out["coef_prior"] = float(stats.norm.logpdf(beta0, 0.0, math.sqrt(self.priors.coef_variance)))
        out["gamma_prior"] = float(
            sum(stats.norm.logpdf(g, m, sd) for g, (m, sd) in zip(gamma, self.priors.gamma_priors))
        )
        return out

    def _nan_terms(self, x: np.ndarray) -> str:
        bad = [k for k, v in self.terms(x).items() if math.isnan(v)]
        return ", ".join(bad) if bad else "unidentified"


class BetaBinomialModel:
    """Cluster-level Beta-binomial model with an urban fixed effect.

    Each cluster contributes ``y_c`` inadequate households out of ``n_c``
    with mean ``r_c = invlogit(beta0 + beta_urban*z_c + u_l[c])`` and
    intra-cluster correlation ``rho`` (uniform prior, sampled as logit).
    """

    kind = "betabinomial"

    def __init__(self, clusters: pd.DataFrame, graph: AdjacencyGraph,
                 scaling: Bym2Scaling | None = None, priors: PriorConfig | None = None):
        """``clusters`` needs columns area_id, y, n, urban."""
        self.graph = graph
        self.priors = priors or PriorConfig()
        scaling = scaling if scaling is not None else bym2_scaling(graph)
        self.block = _Bym2Block(graph, scaling, self.priors)
        missing = [c for c in ("area_id", "y", "n", "urban") if c not in clusters.columns]
        if missing:
            raise SchemaError(f"cluster table is missing column(s): {', '.join(missing)}")
        ids = clusters["area_id"].astype(str).to_numpy()
        extra = sorted(set(ids) - set(graph.nodes))
        if extra:
            raise ValidationError(f"cluster table names area(s) absent from the graph: {', '.join(extra)}")
        index = {a: i for i, a in enumerate(graph.nodes)}
        self.area = np.array([index[a] for a in ids], dtype=np.int64)
        self.y = clusters["y"].to_numpy(dtype=float)
        self.n = clusters["n"].to_numpy(dtype=float)
        if np.any(self.y < 0) or np.any(self.y > self.n):
            bad = int(np.flatnonzero((self.y < 0) | (self.y > self.n))[0])
            raise ValidationError(f"cluster row {bad}: y={self.y[bad]} outside [0, n={self.n[bad]}]")
        self.z = clusters["urban"].to_numpy(dtype=float)
        # binomial coefficients and every count-only quantity are fixed data
        self._coef_sum = float(
            np.sum(gammaln(self.n + 1) - gammaln(self.y + 1) - gammaln(self.n - self.y + 1))
        )
        ny = self.n - self.y
        self._pos_a = np.flatnonzero(self.y > 0)
        self._pos_b = np.flatnonzero(ny > 0)
        self._y_pos = self.y[self._pos_a]
        self._ny_pos = ny[self._pos_b]
        self._n_unique, inverse = np.unique(self.n, return_inverse=True)
        self._n_counts = np.bincount(inverse).astype(float)
        self._n_clusters = len(self.y)
        self._inv_cv = 1.0 / self.priors.coef_variance
        self._coef_const = -(LOG_2PI + math.log(self.priors.coef_variance))
        self._layout()

    def _layout(self) -> None:
        L, F = self.graph.n_nodes, self.block.n_free
        self.n_scalars = 5
        self.dim = self.n_scalars + L + F
        self.names = ("beta0", "beta_urban", "sigma_u", "phi", "rho") + tuple(
            f"u[{a}]" for a in self.graph.nodes
        )

    def _unpack(self, x: np.ndarray):
        L = self.graph.n_nodes
        k = self.n_scalars
        return x[0], x[1], x[2], x[3], x[4], x[k:k + L], x[k + L:]

    def logpost(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        beta0, beta_u, s, lphi, lrho, u1, u2f = self._unpack(x)
        val = self.block.value(s, lphi, u1, u2f)
        # |lrho| past the exp limit would overflow kappa or hit lgamma(0)
        if val == -math.inf or abs(lrho) > _EXP_LIMIT:
            return -math.inf, np.zeros_like(x)
        sigma, phi, rho = math.exp(s), _expit1(lphi), _expit1(lrho)
        kappa = math.exp(-lrho)  # (1 - rho) / rho
        u = self.block.compose(sigma, phi, u1, u2f)
        t = beta0 + beta_u * self.z + u[self.area]
        r = expit(t)
        # rising factorials; clusters with y == 0 (or y == n) contribute
        # exactly 0 and are left out of the positive index sets
        a_pos = r[self._pos_a] * kappa
        b_pos = (1.0 - r[self._pos_b]) * kappa
        t_a = gammaln(self._y_pos + a_pos) - gammaln(a_pos)
        t_b = gammaln(self._ny_pos + b_pos) - gammaln(b_pos)
        val += (
            self._coef_sum + float(t_a.sum()) + float(t_b.sum())
            + self._n_clusters * math.lgamma(kappa)
            - float(np.dot(self._n_counts, gammaln(self._n_unique + kappa)))
        )
        val += -0.5 * (beta0 * beta0 + beta_u * beta_u) * self._inv_cv + self._coef_const
        # uniform prior on rho; only its logit Jacobian contributes
        val += _log_expit1(lrho) + _log_expit1(-lrho)
        if math.isnan(val):
            raise NumericalError(f"log-posterior is NaN; offending term(s): {self._nan_terms(x)}")
        if val == -math.inf:
            return val, np.zeros_like(x)

        d_a = np.zeros(self._n_clusters)
        d_a[self._pos_a] = digamma(self._y_pos + a_pos) - digamma(a_pos)
        d_b = np.zeros(self._n_clusters)
        d_b[self._pos_b] = digamma(self._ny_pos + b_pos) - digamma(b_pos)
        g_t = (d_a - d_b) * (kappa * r * (1.0 - r))
        d_beta0 = float(g_t.sum()) - beta0 * self._inv_cv
        d_beta_u = float(np.dot(g_t, self.z)) - beta_u * self._inv_cv
        dl_dkappa = (
            float(np.dot(r, d_a)) + float(np.dot(1.0 - r, d_b))
            + self._n_clusters * float(digamma(kappa))
            - float(np.dot(self._n_counts, digamma(self._n_unique + kappa)))
        )
        # d kappa / d logit(rho) = -kappa
        d_lrho = dl_dkappa * (-kappa) + (1.0 - 2.0 * rho)
        g_u = np.bincount(self.area, weights=g_t, minlength=self.graph.n_nodes)
        d_s, d_lphi, d_u1, d_u2f = self.block.grads(s, lphi, u1, u2f, g_u)
        return val, np.concatenate([[d_beta0, d_beta_u, d_s, d_lphi, d_lrho], d_u1, d_u2f])

    def constrain(self, x: np.ndarray) -> np.ndarray:
        beta0, beta_u, s, lphi, lrho, u1, u2f = self._unpack(x)
        sigma, phi = math.exp(s), float(expit(lphi))
        u = self.block.compose(sigma, phi, u1, u2f)
        return np.concatenate([[beta0, beta_u, sigma, phi, float(expit(lrho))], u])

    def terms(self, x: np.ndarray) -> dict[str, float]:
        beta0, beta_u, s, lphi, lrho, u1, u2f = self._unpack(x)
        out = self.block.terms(s, lphi, u1, u2f)
        rho = float(expit(lrho))
        u = self.block.compose(math.exp(s), expit(lphi), u1, u2f)
        r = expit(beta0 + beta_u * self.z + u[self.area])
        out["likelihood"] = float(betabinomial_logpmf(self.y, self.n, r, rho).sum())
        sd = math.sqrt(self.priors.coef_variance)
        out["coef_prior"] = float(stats.norm.logpdf([beta0, beta_u], 0.0, sd).sum())
        out["jacobian_rho"] = float(np.log(rho) + np.log1p(-rho))
        return out

    def _nan_terms(self, x: np.ndarray) -> str:
        bad = [k for k, v in self.terms(x).items() if math.isnan(v)]
        return ", ".join(bad) if bad else "unidentified"


# ---------------------------------------------------------------------------
# prevalence reconstruction and aggregation


def prevalence_from_draws(draws, kind: str, urban_shares: Mapping[str, float] | None = None) -> AreaPrevalenceDraws:
    """Turn posterior draws into per-area prevalence draws.

    Parameters
    ----------
    draws : PosteriorDraws
        Named draws containing ``beta0`` and ``u[<area>]`` columns, plus
        ``beta_urban`` for the Beta-binomial model.
    kind : {"mean", "joint", "betabinomial"}
        Area-level kinds read prevalence directly; the cluster-level kind
        mixes urban and rural prevalences with the shares ``q_l``.
    urban_shares : mapping, optional
        ``q_l`` per area id; required for ``betabinomial``.
    """
    names = list(draws.names)
    mat = draws.stacked()
    area_ids = tuple(n[2:-1] for n in names if n.startswith("u[") and n.endswith("]"))
    if not area_ids:
        raise ValidationError("draws contain no u[<area>] columns")
    beta0 = mat[:, names.index("beta0")]
    u = np.column_stack([mat[:, names.index(f"u[{a}]")] for a in area_ids])
    eta = beta0[:, None] + u
    if kind in ("mean", "joint"):
        return AreaPrevalenceDraws(area_ids=area_ids, p=expit(eta))
    if kind != "betabinomial":
        raise ValueError(f"unknown model kind {kind!r}")
    if urban_shares is None:
        raise ValidationError("betabinomial prevalence needs urban shares q_l")
    missing = [a for a in area_ids if a not in urban_shares]
    if missing:
        raise ValidationError(f"missing urban share q_l for area(s): {', '.join(missing)}")
    q = np.array([float(urban_shares[a]) for a in area_ids])
    if np.any(q < 0) or np.any(q > 1):
        raise ValidationError("urban shares must lie in [0, 1]")
    beta_u = mat[:, names.index("beta_urban")]
    p_urban = expit(eta + beta_u[:, None])
    p_rural = expit(eta)
    return AreaPrevalenceDraws(
        area_ids=area_ids,
        p=q[None, :] * p_urban + (1.0 - q[None, :]) * p_rural,
        p_urban=p_urban,
        p_rural=p_rural,
    )


def aggregate_to_adm1(
    prevalence: AreaPrevalenceDraws, areas: AreaTable
) -> tuple[tuple[str, ...], np.ndarray]:
    """Population-weighted ADM1 prevalence draws.

    Returns ``(adm1_ids, draws)`` with one column per ADM1, each draw the
    population-weighted mean over member ADM2s present in ``prevalence``.
    """
    groups: dict[str, list[int]] = {}
    for j, adm2 in enumerate(prevalence.area_ids):
        if adm2 not in areas.areas:
            raise ValidationError(f"area {adm2!r} missing from the area table")
        groups.setdefault(areas.adm1_of(adm2), []).append(j)
    adm1_ids = tuple(sorted(groups))
    out = np.empty((prevalence.p.shape[0], len(adm1_ids)))
    for k, adm1 in enumerate(adm1_ids):
        idx = groups[adm1]
        pops = np.array([areas.population(prevalence.area_ids[j]) for j in idx])
        total = pops.sum()
        if total <= 0:
            raise ValidationError(f"ADM1 {adm1!r} has zero total population")
        out[:, k] = prevalence.p[:, idx] @ (pops / total)
    return adm1_ids, out
