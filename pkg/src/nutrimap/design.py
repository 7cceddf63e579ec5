"""Design-based direct estimation of area prevalences.

Implements the weighted (Hájek) prevalence estimator plus the sampling
variance machinery needed to feed the area-level models: Taylor
linearization over clusters, the phantom-cluster fallback for areas with
a single sampled cluster, the effective-sample-size variance, the delta
method for logit-scale variances, and coefficient-of-variation
reliability bands.

The linearization uses the single-stratum, with-replacement first-stage
approximation with ``dof = clusters - 1`` per area.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .data import HouseholdFrame
from .errors import BoundaryError, NoDataError, SingleClusterError

#: reliability-band cutpoints on the coefficient of variation
CV_CAUTION = 0.166
CV_UNRELIABLE = 0.333


@dataclass(frozen=True)
class PhantomClusterPolicy:
    """Fallback for single-cluster areas: borrow an ADM1-level phantom."""

    enabled: bool = True
    source: str = "adm1_prevalence"

    def __post_init__(self) -> None:
        if self.source != "adm1_prevalence":
            raise ValueError(f"unknown phantom source {self.source!r}")


@dataclass(frozen=True)
class DirectEstimate:
    area_id: str
    p_hat: float
    v_hat: float
    dof: float
    n_households: int
    n_clusters: int
    n_effective: float | None = None
    cv: float | None = None
    reliability_band: str = "undefined"
    phantom_used: bool = False


def hajek(y, w) -> float:
    """Weighted prevalence Σ w_h y_h / Σ w_h."""
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if y.size == 0:
        raise NoDataError("cannot estimate prevalence from an empty household set")
    return float(np.sum(w * y) / np.sum(w))


def linearized_variance(y, w, cluster) -> tuple[float, float]:
    """Taylor-linearized sampling variance of the Hájek estimator.

    With cluster totals ``z_c = Σ_{h in c} w_h (y_h - p_hat)`` and ``m``
    clusters::

        v_hat = [m / (m - 1)] * Σ_c (z_c - z_bar)^2 / (Σ_h w_h)^2

    Returns ``(v_hat, dof)`` with ``dof = m - 1``.

    Raises
    ------
    SingleClusterError
        If the area has one cluster; use :func:`phantom_augment` first.
    """
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    cluster = np.asarray(cluster)
    labels, inverse = np.unique(cluster, return_inverse=True)
    m = len(labels)
    if m < 2:
        raise SingleClusterError(
            "variance is undefined for a single sampled cluster; "
            "augment the area with a phantom cluster (see phantom_augment)"
        )
    p = hajek(y, w)
    z = np.bincount(inverse, weights=w * (y - p), minlength=m)
    zbar = z.mean()
    v = m / (m - 1) * float(np.sum((z - zbar) ** 2)) / float(np.sum(w)) ** 2
    return v, float(m - 1)


def phantom_augment(y, w, cluster, adm1_prevalence, adm1_mean_cluster_weight):
    """Add a synthetic cluster to a single-cluster area.

    The phantom cluster's prevalence is the containing ADM1's direct
    prevalence and its total weight is the ADM1 average cluster weight,
    making the two-cluster variance formula applicable (dof = 1). It is
    appended as one pseudo-household with a fractional outcome.

    Returns ``(y, w, cluster)`` arrays with the phantom row appended.
    """
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    # string labels so the phantom sorts alongside integer cluster codes
    cluster = np.asarray(cluster).astype(str)
    if len(np.unique(cluster)) != 1:
        raise ValueError("phantom_augment applies only to areas with exactly one cluster")
    if not 0.0 <= adm1_prevalence <= 1.0:
        raise ValueError(f"adm1_prevalence {adm1_prevalence} outside [0, 1]")
    if not adm1_mean_cluster_weight > 0:
        raise ValueError("adm1_mean_cluster_weight must be positive")
    label = "__phantom__"
    while label in cluster:
        label += "_"
    return (
        np.append(y, adm1_prevalence),
        np.append(w, adm1_mean_cluster_weight),
        np.append(cluster, label),
    )


def effective_sample_size(w) -> float:
    """Kish effective sample size n* = 1 / Σ w̃_h² with normalized weights."""
    w = np.asarray(w, dtype=float)
    if w.size == 0:
        raise NoDataError("cannot compute effective sample size of an empty set")
    wt = w / w.sum()
    return float(1.0 / np.sum(wt**2))


def effective_sample_variance(y, w) -> tuple[float, float, float, bool]:
    """Binomial-style variance at the effective sample size.

    Returns ``(v_hat, dof, n_effective, degenerate)`` where
    ``v_hat = p_hat (1 - p_hat) / n*`` and ``dof = n* - 1``. ``degenerate``
    is True when ``n* <= 1`` (dof non-positive); the value is still
    returned so callers can flag rather than fail.
    """
    p = hajek(y, w)
    n_eff = effective_sample_size(w)
    v = p * (1.0 - p) / n_eff
    return v, n_eff - 1.0, n_eff, n_eff <= 1.0


def logit_scale(p_hat: float, v_hat: float) -> tuple[float, float]:
    """Delta-method transform of (p_hat, v_hat) to the logit scale."""
    if not 0.0 < p_hat < 1.0:
        raise BoundaryError(
            f"logit scale undefined at p_hat = {p_hat}; apply boundary handling first"
        )
    return math.log(p_hat / (1.0 - p_hat)), v_hat / (p_hat**2 * (1.0 - p_hat) ** 2)


def boundary_adjusted_prevalence(y, w) -> tuple[float, bool]:
    """Continuity-adjusted prevalence for boundary sense checks.

    When the weighted prevalence is exactly 0 or 1, returns
    ``(Σ w y + 0.5 vbar) / (Σ w + vbar)`` with ``vbar`` one average
    household weight, so logits stay finite. The flag reports whether the
    adjustment was applied.
    """
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    p = hajek(y, w)
    if 0.0 < p < 1.0:
        return p, False
    vbar = float(w.mean())
    return float((np.sum(w * y) + 0.5 * vbar) / (np.sum(w) + vbar)), True


def cv_classify(p_hat: float, v_hat: float) -> tuple[float | None, str]:
    """Coefficient of variation and its reliability band.

    Bands: ``unrestricted`` below 16.6%, ``caution`` in [16.6%, 33.3%]
    (closed lower bound), ``unreliable`` above 33.3%. A zero estimate has
    no CV and the band is ``undefined``.
    """
    if p_hat == 0.0:
        return None, "undefined"
    cv = math.sqrt(v_hat) / p_hat
    if cv < CV_CAUTION:
        return cv, "unrestricted"
    if cv <= CV_UNRELIABLE:
        return cv, "caution"
    return cv, "unreliable"


def direct_estimates(
    frame: HouseholdFrame,
    method: str = "linearized",
    phantom: PhantomClusterPolicy = PhantomClusterPolicy(),
    level: str = "adm2",
) -> list[DirectEstimate]:
    """Direct prevalence estimates for every area present in the frame.

    Parameters
    ----------
    frame : HouseholdFrame
        Scored households.
    method : {"linearized", "effective"}
        Variance estimator. ``linearized`` clusters by EA and applies the
        phantom policy to single-cluster areas; ``effective`` uses the
        effective-sample-size binomial form.
    phantom : PhantomClusterPolicy
        Only consulted for ``linearized`` at ``adm2`` level. When
        disabled, single-cluster areas raise ``SingleClusterError``.
    level : {"adm2", "adm1"}
        Aggregation level of the estimates.
    """
    if method not in ("linearized", "effective"):
        raise ValueError(f"unknown variance method {method!r}")
    if level not in ("adm2", "adm1"):
        raise ValueError(f"unknown level {level!r}")
    area_codes = frame.adm2 if level == "adm2" else frame.adm1
    area_ids = frame.adm2_ids if level == "adm2" else frame.adm1_ids
    ct = frame.cluster_table()

    # ADM1 inputs for the phantom policy
    adm1_p: dict[int, float] = {}
    adm1_wbar: dict[int, float] = {}
    if method == "linearized" and level == "adm2" and phantom.enabled:
        for a1 in np.unique(frame.adm1):
            rows = frame.adm1 == a1
            adm1_p[int(a1)] = hajek(frame.y[rows], frame.weight[rows])
            adm1_wbar[int(a1)] = float(ct.w_sum[ct.adm1 == a1].mean())

    out = []
    for code in np.unique(area_codes):
        rows = area_codes == code
        y, w, cl = frame.y[rows], frame.weight[rows], frame.cluster[rows]
        p = hajek(y, w)
        n_clusters = len(np.unique(cl))
        phantom_used = False
        if method == "linearized":
            if n_clusters == 1 and level == "adm2" and phantom.enabled:
                a1 = int(frame.adm1[rows][0])
                y2, w2, cl2 = phantom_augment(y, w, cl, adm1_p[a1], adm1_wbar[a1])
                v, dof = linearized_variance(y2, w2, cl2)
                phantom_used = True
            else:
                v, dof = linearized_variance(y, w, cl)
            n_eff = None
        else:
            v, dof, n_eff, _degenerate = effective_sample_variance(y, w)
        cv, band = cv_classify(p, v)
        out.append(
            DirectEstimate(
                area_id=area_ids[code],
                p_hat=p,
                v_hat=v,
                dof=dof,
                n_households=int(rows.sum()),
                n_clusters=n_clusters,
                n_effective=n_eff,
                cv=cv,
                reliability_band=band,
                phantom_used=phantom_used,
            )
        )
    return out


def estimates_table(estimates: list[DirectEstimate]) -> pd.DataFrame:
    """Direct estimates as the canonical output table."""
    return pd.DataFrame(
        {
            "area_id": [e.area_id for e in estimates],
            "p_hat": [e.p_hat for e in estimates],
            "v_hat": [e.v_hat for e in estimates],
            "dof": [e.dof for e in estimates],
            "n_clusters": [e.n_clusters for e in estimates],
            "n_households": [e.n_households for e in estimates],
            "n_effective": [math.nan if e.n_effective is None else e.n_effective for e in estimates],
            "cv": [math.nan if e.cv is None else e.cv for e in estimates],
            "reliability_band": [e.reliability_band for e in estimates],
            "phantom_used": [e.phantom_used for e in estimates],
        }
    )
