"""Batch command-line front end.

Subcommands wire the pipeline stages together::

    ingest -> indicators -> direct -> fit -> aggregate
                        \\-> simulate, evaluate

Each command reads delimited inputs, writes delimited outputs into
``--out``, and drops a ``manifest.json`` beside them capturing the
resolved configuration, the seed, SHA-256 hashes of every input, and the
artifact version: enough to reproduce the run byte for byte. All
randomness flows from the single ``--seed``. Environment variables:
``NUTRIMAP_OUT`` (default output directory) and ``NUTRIMAP_THREADS``
(BLAS thread cap).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .data import (
    HouseholdFrame,
    dataset_to_frames,
    derive_urban_shares,
    load_areas,
    load_cells,
    load_composition,
    load_conversions,
    load_requirements,
    load_survey,
    validate_cluster_consistency,
)
from .design import PhantomClusterPolicy, direct_estimates, estimates_table
from .errors import NutrimapError, ValidationError
from .indicators import household_indicators, load_rules
from .models import (
    BetaBinomialModel,
    JointSmoothingModel,
    MeanSmoothingModel,
    PriorConfig,
    prevalence_from_draws,
)
from .sampler import SamplerConfig, sample
from .simulation import (
    MODEL_KINDS,
    SubsampleDesign,
    adm1_comparison,
    evaluate,
    run_validation,
    summarize_prevalence,
)
from .spatial import build_graph

__all__ = ["RunConfig", "main"]

_PRIOR_FIELDS = ("coef_variance", "gamma_priors", "pc_sigma", "phi_beta", "sum_to_zero_scale")


@dataclass(frozen=True)
class RunConfig:
    """Everything one command run depends on, as written to the manifest."""

    command: str
    inputs: dict[str, str]
    parameters: dict
    out_dir: str
    seed: int | None = None


# ---------------------------------------------------------------------------
# manifest plumbing


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _json_ready(value):
    if isinstance(value, dict):
        return {str(k): _json_ready(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_ready(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


def _emit(config: RunConfig, tables: dict[str, pd.DataFrame], stats: dict | None = None) -> int:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, df in tables.items():
        df.to_csv(out / name, index=False, lineterminator="\n")
    manifest = {
        "artifact": {"name": "nutrimap", "version": __version__},
        "command": config.command,
        "parameters": _json_ready(config.parameters),
        "seed": config.seed,
        "inputs": {
            name: {"path": str(path), "sha256": _sha256(path)}
            for name, path in sorted(config.inputs.items())
        },
        "outputs": sorted([*tables, "manifest.json"]),
    }
    if stats is not None:
        manifest["stats"] = _json_ready(stats)
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return 0


def _inputs(args, names) -> dict[str, str]:
    return {n: str(getattr(args, n)) for n in names if getattr(args, n, None) is not None}


# ---------------------------------------------------------------------------
# shared loaders


def _load_schema(path):
    if path is None:
        return None
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _load_priors(path) -> PriorConfig | None:
    if path is None:
        return None
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    unknown = sorted(set(raw) - set(_PRIOR_FIELDS))
    if unknown:
        raise ValidationError(f"unknown prior field(s): {', '.join(unknown)}")
    kwargs = {}
    if "coef_variance" in raw:
        kwargs["coef_variance"] = float(raw["coef_variance"])
    if "gamma_priors" in raw:
        kwargs["gamma_priors"] = tuple(tuple(float(v) for v in pair) for pair in raw["gamma_priors"])
    if "pc_sigma" in raw:
        kwargs["pc_sigma"] = tuple(float(v) for v in raw["pc_sigma"])
    if "phi_beta" in raw:
        kwargs["phi_beta"] = tuple(float(v) for v in raw["phi_beta"])
    if "sum_to_zero_scale" in raw:
        kwargs["sum_to_zero_scale"] = float(raw["sum_to_zero_scale"])
    return PriorConfig(**kwargs)


def _read_frame(path) -> HouseholdFrame:
    return HouseholdFrame.from_dataframe(pd.read_csv(path))


def _urban_shares(areas) -> dict[str, float]:
    if areas is None:
        return {}
    return {
        a: areas.urban_share(a) for a in areas.adm2_ids() if areas.urban_share(a) is not None
    }


def _cluster_frame(frame: HouseholdFrame) -> pd.DataFrame:
    ct = frame.cluster_table()
    return pd.DataFrame(
        {
            "area_id": [frame.adm2_ids[a] for a in ct.adm2],
            "y": np.rint(ct.y_sum),
            "n": ct.n,
            "urban": ct.urban.astype(float),
        }
    )


@dataclass(frozen=True)
class _StoredDraws:
    """Duck-typed stand-in for PosteriorDraws read back from draws.csv."""

    names: tuple[str, ...]
    values: np.ndarray

    def stacked(self) -> np.ndarray:
        return self.values


def _read_draws(path) -> _StoredDraws:
    df = pd.read_csv(path)
    names = tuple(c for c in df.columns if c not in ("chain", "iteration", "divergent"))
    if not names:
        raise ValidationError("draws file has no parameter columns")
    return _StoredDraws(names=names, values=df[list(names)].to_numpy(dtype=float))


def _sampler_config(args) -> SamplerConfig:
    return SamplerConfig(
        chains=args.chains,
        warmup=args.warmup,
        samples=args.samples,
        target_accept=args.target_accept,
        max_tree_depth=args.max_tree_depth,
        seed=args.seed,
    )


def _sampler_parameters(args) -> dict:
    return {
        "chains": args.chains,
        "warmup": args.warmup,
        "samples": args.samples,
        "target_accept": args.target_accept,
        "max_tree_depth": args.max_tree_depth,
    }


# ---------------------------------------------------------------------------
# commands


def command_ingest(args) -> int:
    schema = _load_schema(args.schema)
    dataset = load_survey(args.households, args.roster, args.consumption, schema=schema)
    validate_cluster_consistency(dataset.households)
    tables = {f"{name}.csv": df for name, df in dataset_to_frames(dataset).items()}
    if (args.cells is None) != (args.urban_fractions is None):
        raise ValidationError("--cells and --urban-fractions must be given together")
    if args.cells is not None:
        cells = load_cells(args.cells, schema=schema)
        with open(args.urban_fractions, encoding="utf-8") as fh:
            fractions = {str(k): float(v) for k, v in json.load(fh).items()}
        shares = derive_urban_shares(cells, fractions)
        tables["urban_shares.csv"] = pd.DataFrame(
            {"adm2_id": list(shares), "urban_share": list(shares.values())}
        )
    config = RunConfig(
        command="ingest",
        inputs=_inputs(args, ("households", "roster", "consumption", "schema", "cells", "urban_fractions")),
        parameters={"n_households": len(dataset.households)},
        out_dir=args.out,
    )
    return _emit(config, tables)


def command_indicators(args) -> int:
    schema = _load_schema(args.schema)
    dataset = load_survey(args.households, args.roster, args.consumption, schema=schema)
    validate_cluster_consistency(dataset.households)
    composition = load_composition(args.composition, schema=schema)
    requirements = load_requirements(args.requirements, schema=schema)
    rules = load_rules(args.rules)
    conversions = load_conversions(args.conversions, schema=schema) if args.conversions else None
    nutrients = sorted(rules) if args.nutrients is None else args.nutrients.split(",")
    missing = sorted(set(nutrients) - set(rules))
    if missing:
        raise ValidationError(f"no classification rule for nutrient(s): {', '.join(missing)}")
    rules = {n: rules[n] for n in nutrients}
    table = household_indicators(dataset, composition, requirements, rules, conversions)
    tables = {"indicators.csv": table}
    for nutrient in nutrients:
        frame = HouseholdFrame.from_survey(dataset, table, nutrient)
        tables[f"frame_{nutrient}.csv"] = frame.to_dataframe()
    config = RunConfig(
        command="indicators",
        inputs=_inputs(
            args,
            ("households", "roster", "consumption", "composition", "requirements", "rules", "conversions", "schema"),
        ),
        parameters={"nutrients": nutrients},
        out_dir=args.out,
    )
    return _emit(config, tables)


def command_direct(args) -> int:
    frame = _read_frame(args.frame)
    policy = PhantomClusterPolicy(enabled=not args.no_phantom)
    estimates = direct_estimates(frame, method=args.method, phantom=policy, level=args.level)
    config = RunConfig(
        command="direct",
        inputs=_inputs(args, ("frame",)),
        parameters={"method": args.method, "level": args.level, "phantom": not args.no_phantom},
        out_dir=args.out,
    )
    return _emit(config, {"direct_estimates.csv": estimates_table(estimates)})


def command_fit(args) -> int:
    areas = load_areas(args.areas) if args.areas else None
    known = areas.adm2_ids() if areas is not None else None
    graph = build_graph(args.adjacency, known_ids=known)
    priors = _load_priors(args.priors)

    if args.model in ("mean", "joint"):
        if args.estimates is None:
            raise ValidationError(f"--model {args.model} needs --estimates (output of `direct`)")
        table = pd.read_csv(args.estimates)
        cls = MeanSmoothingModel if args.model == "mean" else JointSmoothingModel
        model = cls(table, graph, priors=priors)
    else:
        if args.frame is None:
            raise ValidationError("--model betabinomial needs --frame (a scored household frame)")
        model = BetaBinomialModel(_cluster_frame(_read_frame(args.frame)), graph, priors=priors)

    config_s = _sampler_config(args)
    draws, diag = sample(model.logpost, model.dim, config_s, constrain=model.constrain, names=model.names)
    prev = prevalence_from_draws(draws, model.kind, _urban_shares(areas) or None)
    summary = summarize_prevalence(prev, alpha=0.1).rename(
        columns={"estimate": "mean", "lower": "q05", "upper": "q95"}
    )
    tables = {
        "estimates.csv": summary,
        "draws.csv": draws.to_frame(),
        "diagnostics.csv": diag.summary,
    }
    stats = {
        "divergences": diag.divergences,
        "divergence_rate": diag.divergence_rate,
        "mean_tree_depth": diag.mean_tree_depth,
        "max_depth_hits": diag.max_depth_hits,
        "step_size": list(draws.step_size),
        "warnings": list(diag.warnings),
    }
    config = RunConfig(
        command="fit",
        inputs=_inputs(args, ("adjacency", "estimates", "frame", "areas", "priors")),
        parameters={"model": args.model, **_sampler_parameters(args)},
        out_dir=args.out,
        seed=args.seed,
    )
    return _emit(config, tables, stats)


def command_aggregate(args) -> int:
    areas = load_areas(args.areas)
    frame = _read_frame(args.frame)
    stored = _read_draws(args.draws)
    prev = prevalence_from_draws(stored, args.model, _urban_shares(areas) or None)
    table, comparison = adm1_comparison(prev, areas, frame, alpha=args.alpha, variance_method=args.method)
    config = RunConfig(
        command="aggregate",
        inputs=_inputs(args, ("draws", "frame", "areas")),
        parameters={"model": args.model, "alpha": args.alpha, "method": args.method},
        out_dir=args.out,
    )
    return _emit(
        config,
        {
            "adm1_estimates.csv": table,
            "adm1_metrics.csv": pd.DataFrame([comparison]),
        },
    )


def command_simulate(args) -> int:
    frame = _read_frame(args.frame)
    models = tuple(m for m in (args.models.split(",") if args.models else ()) if m)
    graph = None
    areas = load_areas(args.areas) if args.areas else None
    if models:
        if args.adjacency is None:
            raise ValidationError("--models needs --adjacency")
        known = areas.adm2_ids() if areas is not None else None
        graph = build_graph(args.adjacency, known_ids=known)
    if args.truth is not None:
        truth = pd.read_csv(args.truth)
        missing = [c for c in ("area_id", "p") if c not in truth.columns]
        if missing:
            raise ValidationError(f"truth table is missing column(s): {', '.join(missing)}")
        gold = dict(zip(truth["area_id"].astype(str), truth["p"].astype(float)))
    else:
        gold = "full_survey"
    design = SubsampleDesign(
        eas_per_adm1=args.eas_per_adm1, replicates=args.replicates, seed=args.seed
    )
    report = run_validation(
        frame,
        design,
        models=models,
        graph=graph,
        urban_shares=_urban_shares(areas) or None,
        sampler_config=_sampler_config(args),
        priors=_load_priors(args.priors),
        gold=gold,
        alpha=args.alpha,
        variance_method=args.method,
    )
    config = RunConfig(
        command="simulate",
        inputs=_inputs(args, ("frame", "adjacency", "areas", "truth", "priors")),
        parameters={
            "eas_per_adm1": args.eas_per_adm1,
            "replicates": args.replicates,
            "models": list(models),
            "gold": "truth" if args.truth else "full_survey",
            "alpha": args.alpha,
            "method": args.method,
            **_sampler_parameters(args),
        },
        out_dir=args.out,
        seed=args.seed,
    )
    return _emit(
        config,
        {"per_replicate.csv": report.per_replicate, "aggregate.csv": report.aggregate},
    )


def command_evaluate(args) -> int:
    estimates = pd.read_csv(args.estimates)
    gold_df = pd.read_csv(args.gold)
    if "area_id" not in gold_df.columns:
        raise ValidationError("gold table needs an area_id column")
    value_cols = [c for c in gold_df.columns if c != "area_id"]
    col = "value" if "value" in value_cols else (value_cols[0] if len(value_cols) == 1 else None)
    if col is None:
        raise ValidationError("gold table needs a single value column (or one named 'value')")
    gold = dict(zip(gold_df["area_id"].astype(str), gold_df[col].astype(float)))
    metrics = evaluate(estimates, gold, alpha=args.alpha)
    config = RunConfig(
        command="evaluate",
        inputs=_inputs(args, ("estimates", "gold")),
        parameters={"alpha": args.alpha, "gold_column": col},
        out_dir=args.out,
    )
    return _emit(config, {"metrics.csv": pd.DataFrame([metrics])})


# ---------------------------------------------------------------------------
# parser


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _add_out(p: argparse.ArgumentParser) -> None:
    default = os.environ.get("NUTRIMAP_OUT")
    p.add_argument("--out", default=default, required=default is None,
                   help="output directory (default: $NUTRIMAP_OUT)")


def _add_sampler(p: argparse.ArgumentParser, chains=4, warmup=1000, samples=1000) -> None:
    p.add_argument("--chains", type=_positive_int, default=chains)
    p.add_argument("--warmup", type=_positive_int, default=warmup)
    p.add_argument("--samples", type=_positive_int, default=samples)
    p.add_argument("--target-accept", type=float, default=0.8)
    p.add_argument("--max-tree-depth", type=_positive_int, default=10)
    p.add_argument("--priors", help="JSON file overriding prior hyperparameters")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nutrimap",
        description="Small-area estimation of micronutrient inadequacy prevalence.",
    )
    parser.add_argument("--version", action="version", version=f"nutrimap {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a survey and write canonical tables")
    p.add_argument("--households", required=True)
    p.add_argument("--roster", required=True)
    p.add_argument("--consumption")
    p.add_argument("--schema", help="JSON column remapping")
    p.add_argument("--cells", help="gridded population table (derives urban shares)")
    p.add_argument("--urban-fractions", help="JSON {adm1_id: fraction} for the cells option")
    _add_out(p)
    p.set_defaults(func=command_ingest)

    p = sub.add_parser("indicators", help="score household inadequacy indicators")
    p.add_argument("--households", required=True)
    p.add_argument("--roster", required=True)
    p.add_argument("--consumption", required=True)
    p.add_argument("--composition", required=True)
    p.add_argument("--requirements", required=True)
    p.add_argument("--rules", required=True)
    p.add_argument("--conversions")
    p.add_argument("--schema")
    p.add_argument("--nutrients", help="comma-separated subset of the rules file")
    _add_out(p)
    p.set_defaults(func=command_indicators)

    p = sub.add_parser("direct", help="design-based direct estimates per area")
    p.add_argument("--frame", required=True, help="scored household frame (from `indicators`)")
    p.add_argument("--method", choices=("linearized", "effective"), default="linearized")
    p.add_argument("--level", choices=("adm2", "adm1"), default="adm2")
    p.add_argument("--no-phantom", action="store_true",
                   help="fail on single-cluster areas instead of augmenting them")
    _add_out(p)
    p.set_defaults(func=command_direct)

    p = sub.add_parser("fit", help="fit a smoothing model and summarise prevalence")
    p.add_argument("--model", choices=MODEL_KINDS, required=True)
    p.add_argument("--adjacency", required=True, help="area adjacency list file")
    p.add_argument("--estimates", help="direct estimates (mean/joint models)")
    p.add_argument("--frame", help="scored household frame (betabinomial model)")
    p.add_argument("--areas", help="areas table; fixes the graph's area universe "
                                   "and supplies urban shares")
    _add_sampler(p)
    _add_out(p)
    p.set_defaults(func=command_fit)

    p = sub.add_parser("aggregate", help="aggregate ADM2 draws to ADM1 and compare to direct")
    p.add_argument("--draws", required=True, help="draws.csv from `fit`")
    p.add_argument("--model", choices=MODEL_KINDS, required=True)
    p.add_argument("--frame", required=True)
    p.add_argument("--areas", required=True)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--method", choices=("linearized", "effective"), default="linearized")
    _add_out(p)
    p.set_defaults(func=command_aggregate)

    p = sub.add_parser("simulate", help="replicate subsample -> fit -> score validation")
    p.add_argument("--frame", required=True)
    p.add_argument("--eas-per-adm1", type=_positive_int, required=True)
    p.add_argument("--replicates", type=_positive_int, required=True)
    p.add_argument("--models", help=f"comma-separated kinds from {MODEL_KINDS}")
    p.add_argument("--adjacency")
    p.add_argument("--areas")
    p.add_argument("--truth", help="simulated-truth table (area_id, p); default full-survey gold")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--method", choices=("linearized", "effective"), default="linearized")
    _add_sampler(p, chains=2, warmup=500, samples=500)
    _add_out(p)
    p.set_defaults(func=command_simulate)

    p = sub.add_parser("evaluate", help="score an estimates table against gold values")
    p.add_argument("--estimates", required=True, help="table with area_id, estimate, lower, upper")
    p.add_argument("--gold", required=True, help="table with area_id and a value column")
    p.add_argument("--alpha", type=float, default=0.1)
    _add_out(p)
    p.set_defaults(func=command_evaluate)

    return parser


def main(argv=None) -> int:
    threads = os.environ.get("NUTRIMAP_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, threads)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NutrimapError as exc:
        print(f"nutrimap {args.command}: error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"nutrimap {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
