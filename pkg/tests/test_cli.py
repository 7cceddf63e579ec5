"""Command-line pipeline: ingest -> indicators -> direct -> fit -> aggregate,
plus simulate and evaluate, exercised end to end on a small survey.

Each command must exit 0, write its tables plus a manifest capturing the
configuration, seed, and input hashes, and report failures on stderr with
exit code 1 (argparse argument errors keep their conventional exit 2).
"""

import json
import math
import re

import pandas as pd
import pytest

from nutrimap import __version__
from nutrimap.cli import main

HOUSEHOLDS = """\
household_id,cluster_id,adm1_id,adm2_id,stratum,weight
h1,c1,r1,d1,rural,1.5
h2,c1,r1,d1,rural,2.0
h3,c2,r1,d1,urban,1.0
h4,c2,r1,d1,urban,0.8
h5,c3,r1,d2,rural,1.2
h6,c3,r1,d2,rural,0.9
h7,c4,r1,d2,urban,1.1
h8,c4,r1,d2,urban,0.7
"""

ROSTER = """\
household_id,age_years,sex
h1,30,female
h2,34,female
h2,36,male
h3,28,female
h4,45,female
h5,52,female
h6,61,female
h7,25,female
h8,33,female
"""

CONSUMPTION = """\
household_id,food_item_id,quantity,unit,recall_days
h1,maize,700,g,7
h2,maize,700,g,7
h3,maize,350,g,7
h4,maize,1.4,kg,7
h5,maize,280,g,7
h6,maize,2100,g,7
h7,maize,0,g,7
"""

COMPOSITION = """\
food_item_id,nutrient,per_100g,edible_portion
maize,zinc,10,1.0
"""

REQUIREMENTS = """\
sex,age_low,age_high,kcal_per_day,reference
female,0,18,1050,0
female,18,60,2100,1
female,60,inf,1800,0
male,0,18,1300,0
male,18,60,2600,0
male,60,inf,2200,0
"""

RULES = '{"zinc": {"kind": "threshold", "cutoff": 8}}\n'

AREAS = """\
adm2_id,adm1_id,population,urban_share
d1,r1,1000,0.4
d2,r1,1500,0.5
"""

ADJACENCY = "d1: d2\nd2: d1\n"

CELLS = """\
cell_id,adm1_id,adm2_id,pop_census,pop_survey
g1,r1,d1,60,50
g2,r1,d1,40,30
g3,r1,d2,100,90
"""

URBAN_FRACTIONS = '{"r1": 0.6}\n'

PRIORS = '{"sum_to_zero_scale": 0.2}\n'

SAMPLER_ARGS = ["--chains", "1", "--warmup", "150", "--samples", "100", "--seed", "7"]


@pytest.fixture(scope="module")
def inputs(tmp_path_factory):
    root = tmp_path_factory.mktemp("inputs")
    files = {
        "households": HOUSEHOLDS,
        "roster": ROSTER,
        "consumption": CONSUMPTION,
        "composition": COMPOSITION,
        "requirements": REQUIREMENTS,
        "areas": AREAS,
        "cells": CELLS,
    }
    paths = {}
    for name, text in files.items():
        path = root / f"{name}.csv"
        path.write_text(text, encoding="utf-8")
        paths[name] = str(path)
    for name, text, suffix in (
        ("rules", RULES, "json"),
        ("urban_fractions", URBAN_FRACTIONS, "json"),
        ("priors", PRIORS, "json"),
        ("adjacency", ADJACENCY, "txt"),
    ):
        path = root / f"{name}.{suffix}"
        path.write_text(text, encoding="utf-8")
        paths[name] = str(path)
    return paths


@pytest.fixture(scope="module")
def frame_csv(inputs, tmp_path_factory):
    """The scored household frame produced by the indicators command."""
    out = tmp_path_factory.mktemp("indicators_out")
    code = main(
        [
            "indicators",
            "--households", inputs["households"],
            "--roster", inputs["roster"],
            "--consumption", inputs["consumption"],
            "--composition", inputs["composition"],
            "--requirements", inputs["requirements"],
            "--rules", inputs["rules"],
            "--out", str(out),
        ]
    )
    assert code == 0
    return str(out / "frame_zinc.csv")


@pytest.fixture(scope="module")
def estimates_csv(frame_csv, tmp_path_factory):
    out = tmp_path_factory.mktemp("direct_out")
    code = main(["direct", "--frame", frame_csv, "--out", str(out)])
    assert code == 0
    return str(out / "direct_estimates.csv")


class TestIngest:
    def test_writes_canonical_tables(self, inputs, tmp_path):
        code = main(
            [
                "ingest",
                "--households", inputs["households"],
                "--roster", inputs["roster"],
                "--consumption", inputs["consumption"],
                "--out", str(tmp_path),
            ]
        )
        assert code == 0
        for name in ("households.csv", "roster.csv", "consumption.csv", "manifest.json"):
            assert (tmp_path / name).exists()
        households = pd.read_csv(tmp_path / "households.csv")
        assert len(households) == 8

    def test_urban_shares_from_cells(self, inputs, tmp_path):
        code = main(
            [
                "ingest",
                "--households", inputs["households"],
                "--roster", inputs["roster"],
                "--cells", inputs["cells"],
                "--urban-fractions", inputs["urban_fractions"],
                "--out", str(tmp_path),
            ]
        )
        assert code == 0
        shares = pd.read_csv(tmp_path / "urban_shares.csv").set_index("adm2_id")
        # greedy labelling by census population marks g3 and g1 urban;
        # survey-population shares are then 50/80 and 90/90
        assert shares.loc["d1", "urban_share"] == pytest.approx(0.625)
        assert shares.loc["d2", "urban_share"] == pytest.approx(1.0)

    def test_cells_without_fractions_fails(self, inputs, tmp_path, capsys):
        code = main(
            [
                "ingest",
                "--households", inputs["households"],
                "--roster", inputs["roster"],
                "--cells", inputs["cells"],
                "--out", str(tmp_path),
            ]
        )
        assert code == 1
        assert "--urban-fractions" in capsys.readouterr().err

    def test_invalid_survey_reports_error(self, inputs, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text(HOUSEHOLDS.replace("h2,c1,r1,d1,rural,2.0", "h2,c1,r1,d1,rural,-1"))
        code = main(
            [
                "ingest",
                "--households", str(bad),
                "--roster", inputs["roster"],
                "--out", str(tmp_path / "out"),
            ]
        )
        assert code == 1
        err = capsys.readouterr().err
        assert "nutrimap ingest: error [ValidationError]" in err
        assert "h2" in err


class TestIndicators:
    def test_outputs(self, inputs, frame_csv):
        frame = pd.read_csv(frame_csv)
        assert sorted(frame.columns) == sorted(
            ["household_id", "cluster_id", "adm1_id", "adm2_id", "stratum", "weight", "y"]
        )
        assert len(frame) == 8
        assert set(frame["y"]).issubset({0.0, 1.0})

    def test_indicator_table(self, inputs, tmp_path):
        code = main(
            [
                "indicators",
                "--households", inputs["households"],
                "--roster", inputs["roster"],
                "--consumption", inputs["consumption"],
                "--composition", inputs["composition"],
                "--requirements", inputs["requirements"],
                "--rules", inputs["rules"],
                "--out", str(tmp_path),
            ]
        )
        assert code == 0
        table = pd.read_csv(tmp_path / "indicators.csv")
        assert table["nutrient"].unique().tolist() == ["zinc"]
        scored = table.set_index("household_id")
        # h1: 700 g over 7 days for one adult female is 10 mg/day
        assert scored.loc["h1", "intake"] == pytest.approx(10.0)
        assert scored.loc["h1", "inadequate"] == 0
        # h7 reported zero quantities, h8 no consumption at all
        assert bool(scored.loc["h7", "zero_consumption"])
        assert bool(scored.loc["h8", "zero_consumption"])

    def test_unknown_nutrient_rejected(self, inputs, tmp_path, capsys):
        code = main(
            [
                "indicators",
                "--households", inputs["households"],
                "--roster", inputs["roster"],
                "--consumption", inputs["consumption"],
                "--composition", inputs["composition"],
                "--requirements", inputs["requirements"],
                "--rules", inputs["rules"],
                "--nutrients", "iron",
                "--out", str(tmp_path),
            ]
        )
        assert code == 1
        assert "iron" in capsys.readouterr().err


class TestDirect:
    def test_estimates_table(self, estimates_csv):
        table = pd.read_csv(estimates_csv)
        assert table["area_id"].tolist() == ["d1", "d2"]
        assert ((table["p_hat"] >= 0) & (table["p_hat"] <= 1)).all()
        assert (table["v_hat"] > 0).all()
        assert (table["n_households"] == 4).all()
        assert set(table.columns) >= {"dof", "cv", "reliability_band", "phantom_used"}

    def test_adm1_level(self, frame_csv, tmp_path):
        code = main(
            ["direct", "--frame", frame_csv, "--level", "adm1", "--out", str(tmp_path)]
        )
        assert code == 0
        table = pd.read_csv(tmp_path / "direct_estimates.csv")
        assert table["area_id"].tolist() == ["r1"]


class TestFit:
    def test_mean_model(self, inputs, estimates_csv, tmp_path):
        code = main(
            [
                "fit", "--model", "mean",
                "--adjacency", inputs["adjacency"],
                "--estimates", estimates_csv,
                "--priors", inputs["priors"],
                "--out", str(tmp_path),
                *SAMPLER_ARGS,
            ]
        )
        assert code == 0
        estimates = pd.read_csv(tmp_path / "estimates.csv")
        assert estimates["area_id"].tolist() == ["d1", "d2"]
        assert set(estimates.columns) >= {"mean", "median", "q05", "q95", "sd", "cv"}
        assert ((estimates["q05"] <= estimates["mean"]) & (estimates["mean"] <= estimates["q95"])).all()
        draws = pd.read_csv(tmp_path / "draws.csv")
        assert len(draws) == 100
        assert {"chain", "iteration", "divergent", "beta0", "sigma_u", "phi", "u[d1]", "u[d2]"} <= set(
            draws.columns
        )
        diagnostics = pd.read_csv(tmp_path / "diagnostics.csv")
        assert set(diagnostics["parameter"]) == {"beta0", "sigma_u", "phi", "u[d1]", "u[d2]"}
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["stats"]["divergence_rate"] <= 1.0

    def test_betabinomial_model(self, inputs, frame_csv, tmp_path):
        code = main(
            [
                "fit", "--model", "betabinomial",
                "--adjacency", inputs["adjacency"],
                "--frame", frame_csv,
                "--areas", inputs["areas"],
                "--priors", inputs["priors"],
                "--out", str(tmp_path),
                *SAMPLER_ARGS,
            ]
        )
        assert code == 0
        draws = pd.read_csv(tmp_path / "draws.csv")
        assert "beta_urban" in draws.columns and "rho" in draws.columns

    def test_mean_without_estimates_fails(self, inputs, tmp_path, capsys):
        code = main(
            [
                "fit", "--model", "mean",
                "--adjacency", inputs["adjacency"],
                "--out", str(tmp_path),
            ]
        )
        assert code == 1
        assert "--estimates" in capsys.readouterr().err


@pytest.fixture(scope="module")
def fit_out(inputs, estimates_csv, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit_for_aggregate")
    code = main(
        [
            "fit", "--model", "mean",
            "--adjacency", inputs["adjacency"],
            "--estimates", estimates_csv,
            "--priors", inputs["priors"],
            "--out", str(out),
            *SAMPLER_ARGS,
        ]
    )
    assert code == 0
    return out


class TestAggregate:
    def test_adm1_rollup(self, inputs, frame_csv, fit_out, tmp_path):
        code = main(
            [
                "aggregate", "--model", "mean",
                "--draws", str(fit_out / "draws.csv"),
                "--frame", frame_csv,
                "--areas", inputs["areas"],
                "--out", str(tmp_path),
            ]
        )
        assert code == 0
        table = pd.read_csv(tmp_path / "adm1_estimates.csv")
        assert table["adm1_id"].tolist() == ["r1"]
        row = table.iloc[0]
        assert row["lower"] <= row["mean"] <= row["upper"]
        assert {"direct_p", "direct_logit", "covered"} <= set(table.columns)
        metrics = pd.read_csv(tmp_path / "adm1_metrics.csv")
        assert metrics["n_adm1"].iloc[0] == 1.0
        assert math.isfinite(metrics["mae"].iloc[0])

    def test_population_weighted_mean(self, inputs, frame_csv, fit_out, tmp_path):
        code = main(
            [
                "aggregate", "--model", "mean",
                "--draws", str(fit_out / "draws.csv"),
                "--frame", frame_csv,
                "--areas", inputs["areas"],
                "--out", str(tmp_path),
            ]
        )
        assert code == 0
        draws = pd.read_csv(fit_out / "draws.csv")
        from scipy.special import expit

        p = expit(
            pd.concat(
                [draws["beta0"] + draws["u[d1]"], draws["beta0"] + draws["u[d2]"]], axis=1
            ).to_numpy()
        )
        want = (1000 * p[:, 0] + 1500 * p[:, 1]) / 2500
        table = pd.read_csv(tmp_path / "adm1_estimates.csv")
        assert table["mean"].iloc[0] == pytest.approx(want.mean(), abs=1e-9)


class TestSimulate:
    def test_direct_only_smoke(self, frame_csv, tmp_path):
        code = main(
            [
                "simulate",
                "--frame", frame_csv,
                "--eas-per-adm1", "2",
                "--replicates", "2",
                "--seed", "5",
                "--out", str(tmp_path),
            ]
        )
        assert code == 0
        per_rep = pd.read_csv(tmp_path / "per_replicate.csv")
        assert len(per_rep) == 2
        assert per_rep["model"].tolist() == ["direct", "direct"]
        agg = pd.read_csv(tmp_path / "aggregate.csv")
        assert agg["model"].tolist() == ["direct"]
        assert agg["replicates_used"].iloc[0] == 2

    def test_zero_replicates_is_usage_error(self, frame_csv, tmp_path):
        with pytest.raises(SystemExit) as excinfo:
            main(
                [
                    "simulate",
                    "--frame", frame_csv,
                    "--eas-per-adm1", "2",
                    "--replicates", "0",
                    "--out", str(tmp_path),
                ]
            )
        assert excinfo.value.code == 2

    def test_oversized_allocation_reports_stratum(self, frame_csv, tmp_path, capsys):
        code = main(
            [
                "simulate",
                "--frame", frame_csv,
                "--eas-per-adm1", "500",
                "--replicates", "1",
                "--out", str(tmp_path),
            ]
        )
        assert code == 1
        err = capsys.readouterr().err
        assert "AllocationError" in err
        assert "available EAs" in err

    def test_models_need_adjacency(self, frame_csv, tmp_path, capsys):
        code = main(
            [
                "simulate",
                "--frame", frame_csv,
                "--eas-per-adm1", "2",
                "--replicates", "1",
                "--models", "mean",
                "--out", str(tmp_path),
            ]
        )
        assert code == 1
        assert "--adjacency" in capsys.readouterr().err


class TestEvaluate:
    def test_metrics(self, tmp_path):
        estimates = tmp_path / "estimates.csv"
        estimates.write_text(
            "area_id,estimate,lower,upper\nd1,0.5,0.3,0.7\nd2,0.75,0.5,0.9\n"
        )
        gold = tmp_path / "gold.csv"
        gold.write_text("area_id,value\nd1,0.5\nd2,0.8\n")
        code = main(
            ["evaluate", "--estimates", str(estimates), "--gold", str(gold), "--out", str(tmp_path / "out")]
        )
        assert code == 0
        metrics = pd.read_csv(tmp_path / "out" / "metrics.csv")
        assert metrics["mae"].iloc[0] == pytest.approx(0.025)
        assert metrics["coverage"].iloc[0] == 1.0
        assert metrics["n_areas"].iloc[0] == 2.0

    def test_ambiguous_gold_column_rejected(self, tmp_path, capsys):
        estimates = tmp_path / "estimates.csv"
        estimates.write_text("area_id,estimate,lower,upper\nd1,0.5,0.3,0.7\n")
        gold = tmp_path / "gold.csv"
        gold.write_text("area_id,a,b\nd1,0.5,0.6\n")
        code = main(
            ["evaluate", "--estimates", str(estimates), "--gold", str(gold), "--out", str(tmp_path / "out")]
        )
        assert code == 1
        assert "value column" in capsys.readouterr().err


class TestManifest:
    def test_structure(self, frame_csv, tmp_path):
        code = main(["direct", "--frame", frame_csv, "--out", str(tmp_path)])
        assert code == 0
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["artifact"] == {"name": "nutrimap", "version": __version__}
        assert manifest["command"] == "direct"
        assert manifest["parameters"]["method"] == "linearized"
        assert manifest["outputs"] == ["direct_estimates.csv", "manifest.json"]
        entry = manifest["inputs"]["frame"]
        assert entry["path"] == frame_csv
        assert re.fullmatch(r"[0-9a-f]{64}", entry["sha256"])

    def test_fit_manifest_records_seed_and_hashes(self, inputs, estimates_csv, tmp_path):
        code = main(
            [
                "fit", "--model", "mean",
                "--adjacency", inputs["adjacency"],
                "--estimates", estimates_csv,
                "--priors", inputs["priors"],
                "--out", str(tmp_path),
                *SAMPLER_ARGS,
            ]
        )
        assert code == 0
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["seed"] == 7
        assert manifest["parameters"]["chains"] == 1
        assert set(manifest["inputs"]) == {"adjacency", "estimates", "priors"}


class TestDeterminismAndUx:
    def test_fit_rerun_is_byte_identical(self, inputs, estimates_csv, tmp_path):
        outs = []
        for sub in ("a", "b"):
            out = tmp_path / sub
            code = main(
                [
                    "fit", "--model", "mean",
                    "--adjacency", inputs["adjacency"],
                    "--estimates", estimates_csv,
                    "--priors", inputs["priors"],
                    "--out", str(out),
                    *SAMPLER_ARGS,
                ]
            )
            assert code == 0
            outs.append(out)
        for name in ("estimates.csv", "draws.csv", "diagnostics.csv", "manifest.json"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["--version"])
        assert excinfo.value.code == 0
        assert __version__ in capsys.readouterr().out

    def test_out_env_default(self, frame_csv, tmp_path, monkeypatch):
        monkeypatch.setenv("NUTRIMAP_OUT", str(tmp_path / "env_out"))
        code = main(["direct", "--frame", frame_csv])
        assert code == 0
        assert (tmp_path / "env_out" / "direct_estimates.csv").exists()

    def test_missing_required_argument(self):
        with pytest.raises(SystemExit) as excinfo:
            main(["direct"])
        assert excinfo.value.code == 2
