"""Validation harness: stratified PPS subsampling and the metric battery.

A ``SubsampleDesign`` draws EA-level pseudo-surveys from a full survey
(without replacement, probability proportional to EA weight, stratified
urban/rural within ADM1). ``run_validation`` repeats subsample -> direct
estimates -> model fits over many replicates and scores every estimator
against a gold standard: by default the full survey's own direct
estimates, or a supplied truth mapping for calibration experiments.
"""

from __future__ import annotations

import dataclasses
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import stats

from .data import AreaTable, HouseholdFrame
from .design import (
    DirectEstimate,
    PhantomClusterPolicy,
    boundary_adjusted_prevalence,
    cv_classify,
    direct_estimates,
    estimates_table,
)
from .errors import AllocationError, NutrimapError, SchemaError, ValidationError
from .models import (
    AreaPrevalenceDraws,
    BetaBinomialModel,
    JointSmoothingModel,
    MeanSmoothingModel,
    PriorConfig,
    aggregate_to_adm1,
    prevalence_from_draws,
)
from .sampler import SamplerConfig, sample
from .spatial import AdjacencyGraph, bym2_scaling

__all__ = [
    "MODEL_KINDS",
    "SubsampleDesign",
    "MetricReport",
    "allocate_strata",
    "subsample",
    "winkler_score",
    "evaluate",
    "summarize_prevalence",
    "direct_interval_table",
    "adm1_comparison",
    "run_validation",
]

MODEL_KINDS = ("mean", "joint", "betabinomial")
BANDS = ("unrestricted", "caution", "unreliable", "undefined")
_METRICS = ("mae", "spearman", "coverage", "mil", "mis")


@dataclass(frozen=True)
class SubsampleDesign:
    """Stratified PPS subsampling plan: EAs per ADM1, replicate count, seed."""

    eas_per_adm1: int
    replicates: int = 500
    seed: int = 0

    def __post_init__(self) -> None:
        if self.eas_per_adm1 < 1:
            raise ValidationError("eas_per_adm1 must be a positive integer")
        if self.replicates < 1:
            raise ValidationError("replicates must be a positive integer")


def allocate_strata(available: Mapping[str, int], total: int) -> dict[str, int]:
    """Largest-remainder proportional allocation of ``total`` EAs.

    Shares ``total * available_s / sum(available)`` are floored and the
    leftover units go to the largest fractional remainders, ties broken
    by stratum name order. Remainders are compared in exact integer
    arithmetic so equal shares really tie.
    """
    names = sorted(available)
    counts = [int(available[s]) for s in names]
    pool = sum(counts)
    if any(c < 0 for c in counts) or pool <= 0:
        raise ValidationError("stratum EA counts must be non-negative with a positive total")
    base = [(total * c) // pool for c in counts]
    remainder = [total * c - b * pool for c, b in zip(counts, base)]
    alloc = dict(zip(names, base))
    order = sorted(range(len(names)), key=lambda i: (-remainder[i], names[i]))
    for i in order[: total - sum(base)]:
        alloc[names[i]] += 1
    return alloc


def _replicate_stream(seed: int, replicate: int) -> np.random.Generator:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, replicate], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _pps_without_replacement(weights: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Sequential PPS draws with renormalized weights; returns positions."""
    remaining = list(range(len(weights)))
    w = np.asarray(weights, dtype=float).copy()
    picked = []
    for _ in range(k):
        j = int(rng.choice(len(remaining), p=w / w.sum()))
        picked.append(remaining.pop(j))
        w = np.delete(w, j)
    return np.asarray(picked, dtype=np.int64)


def subsample(frame: HouseholdFrame, design: SubsampleDesign, replicate: int) -> HouseholdFrame:
    """Draw one pseudo-survey from the full survey.

    Within each ADM1, ``eas_per_adm1`` EAs are split between urban and
    rural in proportion to the available EA counts (largest remainder)
    and drawn without replacement with probability proportional to EA
    weight (the summed household weights). All households of a selected
    EA are retained. Deterministic given ``(design.seed, replicate)``.
    """
    if not 0 <= replicate < design.replicates:
        raise ValidationError(f"replicate index {replicate} outside [0, {design.replicates})")
    rng = _replicate_stream(design.seed, replicate)
    ct = frame.cluster_table()
    stratum = np.where(ct.urban, "urban", "rural")
    selected: list[int] = []
    for a1 in np.unique(ct.adm1):  # integer codes sort like the sorted id table
        in_adm1 = ct.adm1 == a1
        counts = {s: int(np.sum(in_adm1 & (stratum == s))) for s in ("rural", "urban")}
        alloc = allocate_strata({s: c for s, c in counts.items() if c > 0}, design.eas_per_adm1)
        for s in sorted(alloc):
            rows = np.flatnonzero(in_adm1 & (stratum == s))
            k = alloc[s]
            if k > len(rows):
                raise AllocationError(
                    f"ADM1 {frame.adm1_ids[a1]!r}, stratum {s!r}: "
                    f"allocation {k} exceeds the {len(rows)} available EAs"
                )
            if k:
                pick = rows[_pps_without_replacement(ct.w_sum[rows], k, rng)]
                selected.extend(int(ct.code[i]) for i in pick)
    mask = np.isin(frame.cluster, np.asarray(selected, dtype=np.int64))
    return frame.subset(np.flatnonzero(mask))


# ---------------------------------------------------------------------------
# scoring


def winkler_score(lower, upper, y, alpha: float = 0.1):
    """Interval score: width plus ``2/alpha`` times the miss distance.

    Vectorized over equal-shaped inputs; scalar inputs give a float.
    Shifting interval and truth by the same constant leaves it unchanged.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha {alpha} outside (0, 1)")
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(lower > upper):
        raise ValueError("interval has lower > upper")
    score = (
        (upper - lower)
        + (2.0 / alpha) * np.maximum(lower - y, 0.0)
        + (2.0 / alpha) * np.maximum(y - upper, 0.0)
    )
    return float(score) if score.ndim == 0 else score


def _spearman(a: np.ndarray, b: np.ndarray) -> float:
    # average ranks for ties; undefined when either side is constant
    if len(a) < 2:
        return math.nan
    ra, rb = stats.rankdata(a), stats.rankdata(b)
    if ra.std() == 0.0 or rb.std() == 0.0:
        return math.nan
    return float(np.corrcoef(ra, rb)[0, 1])


def evaluate(estimates: pd.DataFrame, gold: Mapping[str, float] | pd.Series, alpha: float = 0.1) -> dict[str, float]:
    """Score interval estimates against gold values on the same areas.

    ``estimates`` needs columns area_id, estimate, lower, upper; ``gold``
    maps area_id -> value and must cover exactly the estimates' areas.
    Returns MAE, Spearman rank correlation (average-rank ties), 90%
    coverage (interval endpoints inclusive), mean interval length, and
    mean interval score.
    """
    missing = [c for c in ("area_id", "estimate", "lower", "upper") if c not in estimates.columns]
    if missing:
        raise SchemaError(f"estimates table is missing column(s): {', '.join(missing)}")
    ids = estimates["area_id"].astype(str).tolist()
    if not ids:
        raise ValidationError("no areas to score")
    if len(set(ids)) != len(ids):
        dupes = sorted({a for a in ids if ids.count(a) > 1})
        raise ValidationError(f"duplicate area id(s) in estimates: {', '.join(dupes)}")
    gold_map = {str(k): float(v) for k, v in dict(gold).items()}
    extra = sorted(set(ids) - gold_map.keys())
    absent = sorted(gold_map.keys() - set(ids))
    if extra or absent:
        raise ValidationError(
            "estimates and gold values are misaligned; "
            f"estimates without gold: {extra or 'none'}; gold without estimates: {absent or 'none'}"
        )
    est = estimates["estimate"].to_numpy(dtype=float)
    lo = estimates["lower"].to_numpy(dtype=float)
    up = estimates["upper"].to_numpy(dtype=float)
    g = np.array([gold_map[a] for a in ids])
    return {
        "n_areas": float(len(ids)),
        "mae": float(np.mean(np.abs(est - g))),
        "spearman": _spearman(est, g),
        "coverage": float(np.mean((lo <= g) & (g <= up))),
        "mil": float(np.mean(up - lo)),
        "mis": float(np.mean(winkler_score(lo, up, g, alpha))),
    }


def summarize_prevalence(prevalence: AreaPrevalenceDraws, alpha: float = 0.1) -> pd.DataFrame:
    """Posterior mean/median, equal-tailed interval, sd, and CV band per area."""
    p = prevalence.p
    mean = p.mean(axis=0)
    sd = p.std(axis=0, ddof=1)
    cv, band = zip(*(cv_classify(float(m), float(s) ** 2) for m, s in zip(mean, sd)))
    return pd.DataFrame(
        {
            "area_id": list(prevalence.area_ids),
            "estimate": mean,
            "median": np.quantile(p, 0.5, axis=0),
            "lower": np.quantile(p, alpha / 2.0, axis=0),
            "upper": np.quantile(p, 1.0 - alpha / 2.0, axis=0),
            "sd": sd,
            "cv": [math.nan if c is None else c for c in cv],
            "reliability_band": list(band),
        }
    )


def direct_interval_table(estimates: Sequence[DirectEstimate], alpha: float = 0.1) -> tuple[pd.DataFrame, int]:
    """Student-t intervals for direct estimates, clipped to [0, 1].

    Estimates whose degrees of freedom are non-positive cannot support an
    interval; they are dropped and counted in the second return value.
    """
    rows = []
    dropped = 0
    for e in estimates:
        if e.dof <= 0:
            dropped += 1
            continue
        half = float(stats.t.ppf(1.0 - alpha / 2.0, e.dof)) * math.sqrt(max(e.v_hat, 0.0))
        rows.append(
            (
                e.area_id,
                e.p_hat,
                max(e.p_hat - half, 0.0),
                min(e.p_hat + half, 1.0),
                math.nan if e.cv is None else e.cv,
                e.reliability_band,
            )
        )
    table = pd.DataFrame(
        rows, columns=("area_id", "estimate", "lower", "upper", "cv", "reliability_band")
    )
    return table, dropped


def adm1_comparison(
    prevalence: AreaPrevalenceDraws,
    areas: AreaTable,
    frame: HouseholdFrame,
    alpha: float = 0.1,
    variance_method: str = "linearized",
) -> tuple[pd.DataFrame, dict[str, float]]:
    """Sense check: modelled ADM1 aggregates against ADM1 direct estimates.

    ADM2 prevalence draws are population-weighted up to ADM1 and
    summarised on the natural and logit scales next to the ADM1 direct
    estimates (Student-t intervals clipped to [0, 1]; a boundary-adjusted
    prevalence keeps the direct logit finite). The stats compare modelled
    means to direct estimates: MAE, Spearman, and interval length plus
    the fraction of direct estimates inside the modelled intervals.
    """
    adm1_ids, draws = aggregate_to_adm1(prevalence, areas)
    mean = draws.mean(axis=0)
    lo = np.quantile(draws, alpha / 2.0, axis=0)
    up = np.quantile(draws, 1.0 - alpha / 2.0, axis=0)
    logit_draws = np.log(draws) - np.log1p(-draws)
    lmean = logit_draws.mean(axis=0)
    llo = np.quantile(logit_draws, alpha / 2.0, axis=0)
    lup = np.quantile(logit_draws, 1.0 - alpha / 2.0, axis=0)

    direct = {e.area_id: e for e in direct_estimates(frame, method=variance_method, level="adm1")}
    missing = sorted(set(adm1_ids) - direct.keys())
    if missing:
        raise ValidationError(f"survey has no households in ADM1(s): {', '.join(missing)}")

    rows = []
    for k, adm1 in enumerate(adm1_ids):
        e = direct[adm1]
        sel = np.array([frame.adm1_ids[c] for c in frame.adm1]) == adm1
        p_adj, adjusted = boundary_adjusted_prevalence(frame.y[sel], frame.weight[sel])
        half = float(stats.t.ppf(1.0 - alpha / 2.0, e.dof)) * math.sqrt(max(e.v_hat, 0.0))
        rows.append(
            {
                "adm1_id": adm1,
                "mean": mean[k],
                "median": float(np.quantile(draws[:, k], 0.5)),
                "lower": lo[k],
                "upper": up[k],
                "logit_mean": lmean[k],
                "logit_lower": llo[k],
                "logit_upper": lup[k],
                "direct_p": e.p_hat,
                "direct_v": e.v_hat,
                "direct_lower": max(e.p_hat - half, 0.0),
                "direct_upper": min(e.p_hat + half, 1.0),
                "direct_logit": math.log(p_adj / (1.0 - p_adj)),
                "direct_logit_v": e.v_hat / (p_adj * (1.0 - p_adj)) ** 2,
                "boundary_adjusted": adjusted,
                "covered": bool(lo[k] <= e.p_hat <= up[k]),
            }
        )
    table = pd.DataFrame(rows)
    g = table["direct_p"].to_numpy(dtype=float)
    comparison = {
        "n_adm1": float(len(table)),
        "mae": float(np.mean(np.abs(mean - g))),
        "spearman": _spearman(mean, g),
        "coverage": float(table["covered"].mean()),
        "mil": float(np.mean(up - lo)),
        "logit_mae": float(np.mean(np.abs(lmean - table["direct_logit"].to_numpy(dtype=float)))),
        "logit_spearman": _spearman(lmean, table["direct_logit"].to_numpy(dtype=float)),
    }
    return table, comparison


# ---------------------------------------------------------------------------
# replicate orchestration


@dataclass(frozen=True)
class MetricReport:
    """Per-replicate metric rows plus per-model averages.

    ``per_replicate`` has one row per (replicate, model); failed fits are
    flagged and carry NaN metrics. ``aggregate`` averages the non-failed
    rows per model, reports used/failed replicate counts, and totals the
    per-area CV reliability-band counts.
    """

    per_replicate: pd.DataFrame
    aggregate: pd.DataFrame

    def to_delimited(self, sep: str = "\t") -> str:
        """The aggregate table (model x metric) as delimited text."""
        return self.aggregate.to_csv(sep=sep, index=False)


def _metric_row(replicate, label, metrics, n_excluded, table, failed=False, error=""):
    row = {
        "replicate": replicate,
        "model": label,
        "failed": failed,
        "error": error,
        "n_areas": math.nan,
        "n_excluded": n_excluded,
    }
    row.update({m: math.nan for m in _METRICS})
    row["cv_mean"] = math.nan
    row.update({f"band_{b}": 0 for b in BANDS})
    if not failed:
        row.update(metrics)
        cvs = table["cv"].to_numpy(dtype=float)
        row["cv_mean"] = float(np.mean(cvs[np.isfinite(cvs)])) if np.isfinite(cvs).any() else math.nan
        seen = table["reliability_band"].value_counts()
        row.update({f"band_{b}": int(seen.get(b, 0)) for b in BANDS})
    return row


def _build_model(kind, sub, graph, scaling, priors, variance_method, phantom):
    if kind in ("mean", "joint"):
        table = estimates_table(direct_estimates(sub, method=variance_method, phantom=phantom))
        cls = MeanSmoothingModel if kind == "mean" else JointSmoothingModel
        return cls(table, graph, scaling=scaling, priors=priors)
    ct = sub.cluster_table()
    clusters = pd.DataFrame(
        {
            "area_id": [sub.adm2_ids[a] for a in ct.adm2],
            "y": np.rint(ct.y_sum),
            "n": ct.n,
            "urban": ct.urban.astype(float),
        }
    )
    return BetaBinomialModel(clusters, graph, scaling=scaling, priors=priors)


def run_validation(
    frame: HouseholdFrame,
    design: SubsampleDesign,
    models: Sequence[str] = (),
    graph: AdjacencyGraph | None = None,
    urban_shares: Mapping[str, float] | None = None,
    sampler_config: SamplerConfig | None = None,
    priors: PriorConfig | None = None,
    gold: str | Mapping[str, float] = "full_survey",
    alpha: float = 0.1,
    variance_method: str = "linearized",
    phantom: PhantomClusterPolicy = PhantomClusterPolicy(),
) -> MetricReport:
    """Replicate subsample -> estimate -> score for each model.

    Every replicate draws a pseudo-survey, computes the direct baseline
    (Student-t intervals), fits each requested model kind, and scores all
    of them against the gold standard: ``"full_survey"`` uses the full
    survey's direct estimates; a mapping supplies a simulated truth.

    Areas without a scoreable direct estimate in a replicate (no sampled
    EAs, or degenerate degrees of freedom) are excluded from that row and
    counted in ``n_excluded``; model-based estimates still cover every
    graph area with a gold value. A model fit that raises a package error
    flags its row as failed; failed rows are excluded from the aggregate
    averages and counted.

    Per-fit sampler seeds are spawned from ``design.seed`` and the
    (replicate, model) position, so reports are reproducible and
    replicates are independent of one another.
    """
    bad = [k for k in models if k not in MODEL_KINDS]
    if bad:
        raise ValueError(f"unknown model kind(s): {', '.join(bad)}; expected {MODEL_KINDS}")
    if len(set(models)) != len(models):
        raise ValidationError("duplicate model kinds in the model list")
    if models and graph is None:
        raise ValidationError("model-based validation needs an adjacency graph")
    if "betabinomial" in models and urban_shares is None:
        raise ValidationError("betabinomial validation needs urban shares")

    if isinstance(gold, str):
        if gold != "full_survey":
            raise ValueError(f"unknown gold standard {gold!r}")
        full = direct_estimates(frame, method=variance_method, phantom=phantom)
        gold_map = {e.area_id: e.p_hat for e in full}
    else:
        gold_map = {str(k): float(v) for k, v in dict(gold).items()}

    scaling = bym2_scaling(graph) if models else None
    base_config = sampler_config or SamplerConfig(chains=2, warmup=500, samples=500)

    rows = []
    for r in range(design.replicates):
        sub = subsample(frame, design, r)
        table, _dropped = direct_interval_table(
            direct_estimates(sub, method=variance_method, phantom=phantom), alpha
        )
        scored = table[table["area_id"].isin(gold_map)]
        metrics = evaluate(scored, {a: gold_map[a] for a in scored["area_id"]}, alpha)
        rows.append(_metric_row(r, "direct", metrics, len(gold_map) - len(scored), scored))

        for mi, kind in enumerate(models):
            try:
                model = _build_model(kind, sub, graph, scaling, priors, variance_method, phantom)
                seed = int(
                    np.random.SeedSequence(design.seed, spawn_key=(r, mi)).generate_state(
                        1, dtype=np.uint64
                    )[0]
                )
                config = dataclasses.replace(base_config, seed=seed)
                draws, _diag = sample(
                    model.logpost, model.dim, config, constrain=model.constrain, names=model.names
                )
                prev = prevalence_from_draws(draws, model.kind, urban_shares)
                summary = summarize_prevalence(prev, alpha)
                scored = summary[summary["area_id"].isin(gold_map)]
                metrics = evaluate(scored, {a: gold_map[a] for a in scored["area_id"]}, alpha)
                rows.append(_metric_row(r, kind, metrics, len(gold_map) - len(scored), scored))
            except NutrimapError as exc:
                rows.append(_metric_row(r, kind, None, 0, None, failed=True, error=str(exc)))

    per_replicate = pd.DataFrame(rows)
    agg_rows = []
    for label in ("direct", *models):
        block = per_replicate[per_replicate["model"] == label]
        ok = block[~block["failed"]]
        row = {
            "model": label,
            "replicates_used": int(len(ok)),
            "replicates_failed": int(block["failed"].sum()),
        }
        for m in _METRICS:
            row[m] = float(ok[m].mean()) if len(ok) else math.nan
        row["cv_mean"] = float(ok["cv_mean"].mean()) if len(ok) else math.nan
        row["mean_n_excluded"] = float(ok["n_excluded"].mean()) if len(ok) else math.nan
        for b in BANDS:
            row[f"band_{b}"] = int(ok[f"band_{b}"].sum()) if len(ok) else 0
        agg_rows.append(row)
    return MetricReport(per_replicate=per_replicate, aggregate=pd.DataFrame(agg_rows))
