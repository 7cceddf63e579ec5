"""End-to-end command walkthrough on a tiny handmade survey.

This script writes a minimal raw survey (8 households, 4 clusters, 2
districts) to a scratch directory and then drives the command-line
pipeline exactly as a shell user would:

    ingest -> indicators -> direct -> fit -> aggregate

Every command writes delimited tables plus a manifest.json recording the
inputs (with hashes), parameters, and seed, so each step can be rerun
and audited independently.

Run from the repository root:

    python3 demos/survey_to_prevalence.py
"""

import json
from pathlib import Path

import pandas as pd

from nutrimap.cli import main

OUT = Path(__file__).resolve().parent / "output" / "survey_to_prevalence"
RAW = OUT / "raw"

# ---------------------------------------------------------------------
# 1. Raw survey tables. Households carry cluster, stratum, and design
#    weight; the roster gives ages and sexes for adult-female-equivalent
#    scaling; consumption is 7-day recall of food quantities.
# ---------------------------------------------------------------------

FILES = {
    "households.csv": """\
household_id,cluster_id,adm1_id,adm2_id,stratum,weight
h1,c1,r1,d1,rural,1.5
h2,c1,r1,d1,rural,2.0
h3,c2,r1,d1,urban,1.0
h4,c2,r1,d1,urban,0.8
h5,c3,r1,d2,rural,1.2
h6,c3,r1,d2,rural,0.9
h7,c4,r1,d2,urban,1.1
h8,c4,r1,d2,urban,0.7
""",
    "roster.csv": """\
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
""",
    "consumption.csv": """\
household_id,food_item_id,quantity,unit,recall_days
h1,maize,700,g,7
h2,maize,700,g,7
h3,maize,350,g,7
h4,maize,1.4,kg,7
h5,maize,280,g,7
h6,maize,2100,g,7
h7,maize,0,g,7
""",
    "composition.csv": """\
food_item_id,nutrient,per_100g,edible_portion
maize,zinc,10,1.0
""",
    "requirements.csv": """\
sex,age_low,age_high,kcal_per_day,reference
female,0,18,1050,0
female,18,60,2100,1
female,60,inf,1800,0
male,0,18,1300,0
male,18,60,2600,0
male,60,inf,2200,0
""",
    "areas.csv": """\
adm2_id,adm1_id,population,urban_share
d1,r1,1000,0.4
d2,r1,1500,0.5
""",
    "rules.json": '{"zinc": {"kind": "threshold", "cutoff": 8}}\n',
    "adjacency.txt": "d1: d2\nd2: d1\n",
}


def run(argv):
    print("$ nutrimap " + " ".join(argv))
    code = main(argv)
    if code != 0:
        raise SystemExit(code)


def show(path, n=6):
    print(pd.read_csv(path).head(n).to_string(index=False))
    print()


RAW.mkdir(parents=True, exist_ok=True)
for name, text in FILES.items():
    (RAW / name).write_text(text, encoding="utf-8")
p = {name.split(".")[0]: str(RAW / name) for name in FILES}

# ---------------------------------------------------------------------
# 2. Ingest: validate and normalise the raw tables.
# ---------------------------------------------------------------------

run([
    "ingest",
    "--households", p["households"], "--roster", p["roster"],
    "--consumption", p["consumption"], "--out", str(OUT / "ingest"),
])

# ---------------------------------------------------------------------
# 3. Indicators: apparent zinc intake per adult female equivalent and
#    the household inadequacy flag, plus the modelling frame.
# ---------------------------------------------------------------------

run([
    "indicators",
    "--households", p["households"], "--roster", p["roster"],
    "--consumption", p["consumption"], "--composition", p["composition"],
    "--requirements", p["requirements"], "--rules", p["rules"],
    "--out", str(OUT / "indicators"),
])
show(OUT / "indicators" / "indicators.csv", n=8)
frame = str(OUT / "indicators" / "frame_zinc.csv")

# ---------------------------------------------------------------------
# 4. Direct design-based estimates per district.
# ---------------------------------------------------------------------

run(["direct", "--frame", frame, "--out", str(OUT / "direct")])
show(OUT / "direct" / "direct_estimates.csv")

# ---------------------------------------------------------------------
# 5. Smooth the direct estimates with the area-level mean model. Two
#    districts make a toy spatial graph; real runs use dozens of areas.
# ---------------------------------------------------------------------

run([
    "fit", "--model", "mean",
    "--adjacency", p["adjacency"],
    "--estimates", str(OUT / "direct" / "direct_estimates.csv"),
    "--chains", "2", "--warmup", "300", "--samples", "300", "--seed", "1",
    "--out", str(OUT / "fit"),
])
show(OUT / "fit" / "estimates.csv")

# ---------------------------------------------------------------------
# 6. Aggregate the modelled districts to the region and compare with
#    the region-level direct estimate.
# ---------------------------------------------------------------------

run([
    "aggregate", "--model", "mean",
    "--draws", str(OUT / "fit" / "draws.csv"),
    "--frame", frame, "--areas", p["areas"],
    "--out", str(OUT / "aggregate"),
])
show(OUT / "aggregate" / "adm1_estimates.csv")

manifest = json.loads((OUT / "fit" / "manifest.json").read_text())
print("fit manifest records", len(manifest["inputs"]), "inputs, seed", manifest["seed"])
print("all outputs under", OUT)
