"""Compare the three smoothing models on one synthetic survey.

A synthetic population with known district prevalences is generated,
direct design-based estimates are computed, and each of the three
models is fitted by NUTS:

  mean          area-level model for the direct estimates, treating
                their sampling variances as fixed and known
  joint         the same mean model plus a chi-square likelihood for
                the sampling variances with a log-linear variance
                regression, for surveys where variances are noisy
  betabinomial  cluster-level counts with urban/rural strata mixed by
                census urban shares

The printout shows per-district posterior summaries next to the truth
and mean absolute errors against the known prevalences.

Run from the repository root (about a minute):

    python3 demos/smoothing_models.py
"""

import numpy as np
import pandas as pd

from nutrimap.design import direct_estimates, estimates_table
from nutrimap.models import (
    BetaBinomialModel,
    JointSmoothingModel,
    MeanSmoothingModel,
    PriorConfig,
    prevalence_from_draws,
)
from nutrimap.sampler import SamplerConfig, sample
from nutrimap.simulation import summarize_prevalence
from nutrimap.synthetic import synthetic_survey

# ---------------------------------------------------------------------
# 1. A synthetic survey with known truth: 8 districts on a path graph,
#    6 clusters each, 8 households per cluster. Few clusters per
#    district keep the direct estimates noisy, which is the regime
#    smoothing is for.
# ---------------------------------------------------------------------

survey = synthetic_survey(
    n_areas=8, clusters_per_area=6, households_per_cluster=8,
    sigma_u=0.5, weight_sd=0.3, seed=21,
)
truth = survey.truth_map()
print("true prevalence by district:")
print("  " + "  ".join(f"{a}={p:.3f}" for a, p in sorted(truth.items())))
print()

# ---------------------------------------------------------------------
# 2. Direct estimates and their design-based sampling variances.
# ---------------------------------------------------------------------

direct = estimates_table(direct_estimates(survey.frame))
print("direct estimates:")
print(direct[["area_id", "p_hat", "v_hat", "dof", "cv"]].to_string(index=False))
print()

# ---------------------------------------------------------------------
# 3. Fit each model. The posterior of district prevalence is summarised
#    from the same draws object each model produces.
# ---------------------------------------------------------------------

priors = PriorConfig(sum_to_zero_scale=0.1)
config = SamplerConfig(chains=2, warmup=300, samples=400, seed=2)

ct = survey.frame.cluster_table()
clusters = pd.DataFrame(
    {
        "area_id": [survey.frame.adm2_ids[a] for a in ct.adm2],
        "y": np.rint(ct.y_sum),
        "n": ct.n,
        "urban": ct.urban.astype(float),
    }
)

models = {
    "mean": MeanSmoothingModel(direct, survey.graph, priors=priors),
    "joint": JointSmoothingModel(direct, survey.graph, priors=priors),
    "betabinomial": BetaBinomialModel(clusters, survey.graph, priors=priors),
}

summaries = {}
for name, model in models.items():
    draws, diag = sample(
        model.logpost, model.dim, config, constrain=model.constrain, names=model.names
    )
    prev = prevalence_from_draws(draws, model.kind, survey.urban_shares)
    summaries[name] = summarize_prevalence(prev).set_index("area_id")
    rhat = diag.summary["rhat"].max()
    print(f"{name:13s} fitted: max rhat {rhat:.3f}, divergence rate {diag.divergence_rate:.3f}")
print()

# ---------------------------------------------------------------------
# 4. Side-by-side comparison and error against the truth.
# ---------------------------------------------------------------------

table = pd.DataFrame({"truth": pd.Series(truth)})
table["direct"] = direct.set_index("area_id")["p_hat"]
for name, summary in summaries.items():
    table[name] = summary["estimate"]
print(table.round(3).to_string())
print()

gold = table["truth"]
for column in ("direct", "mean", "joint", "betabinomial"):
    mae = (table[column] - gold).abs().mean()
    print(f"mae vs truth  {column:13s} {mae:.4f}")
