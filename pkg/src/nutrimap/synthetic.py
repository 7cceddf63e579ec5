"""Synthetic surveys drawn from the cluster-level Beta-binomial process.

The generator follows the model's own structure exactly: a BYM2 spatial
effect on a path graph (structured part drawn from the ICAR kernel via
the component Laplacian's eigendecomposition), an urban fixed effect,
cluster prevalences from the Beta mixing distribution, and Bernoulli
households with lognormal design weights. The returned truth table holds
the generative area prevalences, so calibration experiments can score
against the estimand itself rather than a noisy realisation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import expit

from .data import AreaInfo, AreaTable, HouseholdFrame
from .errors import ValidationError
from .spatial import AdjacencyGraph, build_graph, bym2_scaling

__all__ = ["SyntheticSurvey", "icar_draw", "synthetic_survey"]


@dataclass(frozen=True)
class SyntheticSurvey:
    """A generated survey plus everything needed to fit and score it."""

    frame: HouseholdFrame
    areas: AreaTable
    graph: AdjacencyGraph
    urban_shares: dict[str, float]
    truth: pd.DataFrame  # area_id, p, p_urban, p_rural
    params: dict[str, float]

    def truth_map(self) -> dict[str, float]:
        return dict(zip(self.truth["area_id"], self.truth["p"]))


def icar_draw(graph: AdjacencyGraph, rng: np.random.Generator) -> np.ndarray:
    """One draw of the (unscaled) structured effect from the ICAR kernel.

    Per connected component, the kernel's covariance is the generalized
    inverse of the component Laplacian; the draw lives in the zero-sum
    subspace (constant mode excluded). Singleton components get 0.
    """
    u2 = np.zeros(graph.n_nodes)
    lap = graph.laplacian().toarray()
    for comp in graph.components:
        if len(comp) < 2:
            continue
        idx = np.array(comp)
        eigval, eigvec = np.linalg.eigh(lap[np.ix_(idx, idx)])
        z = rng.standard_normal(len(comp) - 1)
        u2[idx] = eigvec[:, 1:] @ (z / np.sqrt(eigval[1:]))
    return u2


def synthetic_survey(
    n_areas: int = 10,
    clusters_per_area: int = 20,
    households_per_cluster: int = 10,
    n_adm1: int = 2,
    beta0: float = -1.0,
    beta_urban: float = 0.5,
    sigma_u: float = 0.5,
    phi: float = 0.5,
    rho: float = 0.05,
    urban_fraction: float = 0.3,
    weight_sd: float = 0.3,
    seed: int = 0,
) -> SyntheticSurvey:
    """Generate a two-stage survey with known area prevalences.

    Areas form a path graph split evenly into ``n_adm1`` ADM1 groups.
    Each area has ``clusters_per_area`` EAs, of which
    ``round(urban_fraction * clusters_per_area)`` are urban. Cluster
    prevalences are Beta with mean ``expit(beta0 + beta_urban*z + u_l)``
    and intra-cluster correlation ``rho``; households are Bernoulli with
    ``Lognormal(0, weight_sd)`` design weights. The per-area truth is the
    weight-share mixture ``q_l * p_urban + (1 - q_l) * p_rural`` with
    ``q_l`` the realised urban weight share, which is what the
    design-weighted direct estimator targets.
    """
    if n_areas < 2:
        raise ValidationError("need at least two areas for a non-trivial graph")
    if not 1 <= n_adm1 <= n_areas:
        raise ValidationError("n_adm1 must lie in [1, n_areas]")
    if not 0.0 < rho < 1.0:
        raise ValidationError("rho must lie strictly inside (0, 1)")
    if not 0.0 <= phi <= 1.0:
        raise ValidationError("phi must lie in [0, 1]")
    if not 0.0 <= urban_fraction <= 1.0:
        raise ValidationError("urban_fraction must lie in [0, 1]")

    width = max(2, len(str(n_areas)))
    area_ids = [f"D{i + 1:0{width}d}" for i in range(n_areas)]
    adjacency = {
        area_ids[i]: [area_ids[j] for j in (i - 1, i + 1) if 0 <= j < n_areas]
        for i in range(n_areas)
    }
    graph = build_graph(adjacency, known_ids=area_ids)
    scaling = bym2_scaling(graph)

    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 0], dtype=np.uint64)))
    u1 = rng.standard_normal(n_areas)
    u2 = icar_draw(graph, rng)
    with np.errstate(invalid="ignore"):
        scaled = np.where(np.isnan(scaling.alpha_by_node), 0.0, u2 / scaling.alpha_by_node)
    u = sigma_u * (math.sqrt(1.0 - phi) * u1 + math.sqrt(phi) * scaled)

    r_rural = expit(beta0 + u)
    r_urban = expit(beta0 + beta_urban + u)
    kappa = (1.0 - rho) / rho

    n_urban = int(round(urban_fraction * clusters_per_area))
    per_adm1 = n_areas / n_adm1
    rows = []
    urban_shares: dict[str, float] = {}
    infos: dict[str, AreaInfo] = {}
    truth_rows = []
    hh_counter = 0
    for li, area in enumerate(area_ids):
        adm1 = f"R{int(li // per_adm1) + 1:02d}"
        w_urban = w_total = 0.0
        for c in range(clusters_per_area):
            urban = c < n_urban
            r = r_urban[li] if urban else r_rural[li]
            p_c = rng.beta(r * kappa, (1.0 - r) * kappa)
            cluster_id = f"{area}_C{c + 1:03d}"
            for _ in range(households_per_cluster):
                hh_counter += 1
                w = float(rng.lognormal(0.0, weight_sd))
                y = float(rng.random() < p_c)
                rows.append(
                    (
                        f"H{hh_counter:06d}",
                        cluster_id,
                        adm1,
                        area,
                        "urban" if urban else "rural",
                        w,
                        y,
                    )
                )
                w_total += w
                if urban:
                    w_urban += w
        q = w_urban / w_total
        urban_shares[area] = q
        infos[area] = AreaInfo(adm1_id=adm1, population=w_total, urban_share=q)
        truth_rows.append((area, q * r_urban[li] + (1.0 - q) * r_rural[li], r_urban[li], r_rural[li]))

    frame = HouseholdFrame.from_dataframe(
        pd.DataFrame(
            rows,
            columns=("household_id", "cluster_id", "adm1_id", "adm2_id", "stratum", "weight", "y"),
        )
    )
    return SyntheticSurvey(
        frame=frame,
        areas=AreaTable(areas=infos),
        graph=graph,
        urban_shares=urban_shares,
        truth=pd.DataFrame(truth_rows, columns=("area_id", "p", "p_urban", "p_rural")),
        params={
            "beta0": beta0,
            "beta_urban": beta_urban,
            "sigma_u": sigma_u,
            "phi": phi,
            "rho": rho,
            "seed": float(seed),
        },
    )
