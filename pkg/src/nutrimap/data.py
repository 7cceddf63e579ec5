"""Survey data model: types, ingestion, validation, auxiliary tables.

All input files are delimited text (CSV) with a header row. Identifiers
are treated as opaque strings; numeric columns are parsed as floats.
Column names below are canonical defaults; callers can remap them by
passing ``schema={"<table>": {"<canonical>": "<actual>", ...}}``.

Canonical columns per table::

    households   household_id, cluster_id, adm1_id, adm2_id, stratum, weight
    roster       household_id, age_years, sex
    consumption  household_id, food_item_id, quantity, unit, recall_days
    composition  food_item_id, nutrient, per_100g, edible_portion
    requirements sex, age_low, age_high, kcal_per_day, reference
    areas        adm2_id, adm1_id, population[, urban_share]
    cells        cell_id, adm1_id, adm2_id, pop_census, pop_survey
    conversions  unit, grams

``stratum`` takes the values ``urban`` or ``rural``. Sampling weights are
household-level design weights and must be strictly positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    ConsistencyError,
    RequirementLookupError,
    SchemaError,
    ValidationError,
)

STRATA = ("urban", "rural")
SEXES = ("male", "female")

DEFAULT_COLUMNS = {
    "households": ("household_id", "cluster_id", "adm1_id", "adm2_id", "stratum", "weight"),
    "roster": ("household_id", "age_years", "sex"),
    "consumption": ("household_id", "food_item_id", "quantity", "unit", "recall_days"),
    "composition": ("food_item_id", "nutrient", "per_100g", "edible_portion"),
    "requirements": ("sex", "age_low", "age_high", "kcal_per_day", "reference"),
    "areas": ("adm2_id", "adm1_id", "population"),
    "cells": ("cell_id", "adm1_id", "adm2_id", "pop_census", "pop_survey"),
    "conversions": ("unit", "grams"),
}

#: Units convertible to grams without an external conversion table.
GRAM_UNITS = {"g": 1.0, "gram": 1.0, "grams": 1.0, "kg": 1000.0, "kilogram": 1000.0}


# ---------------------------------------------------------------------------
# record types


@dataclass(frozen=True)
class ConsumptionLine:
    """One reported food acquisition for a household over the recall window."""

    food_item_id: str
    quantity: float
    unit: str = "g"
    recall_days: float = 7.0


@dataclass(frozen=True)
class HouseholdRecord:
    household_id: str
    cluster_id: str
    adm1_id: str
    adm2_id: str
    stratum: str
    weight: float
    members: tuple[tuple[float, str], ...]
    consumption: tuple[ConsumptionLine, ...] = ()


@dataclass(frozen=True)
class FoodCompositionEntry:
    food_item_id: str
    nutrient_per_100g: Mapping[str, float]
    edible_portion: float = 1.0


@dataclass(frozen=True)
class EnergyRequirementTable:
    """Daily energy requirements by sex and age band.

    ``rows`` holds ``(sex, age_low, age_high, kcal_per_day)`` with bands
    interpreted as ``[age_low, age_high)``. For each sex present, the bands
    must partition ``[0, inf)``. ``reference_requirement`` is the
    requirement of the reference adult used to normalise household size
    into adult-female equivalents.
    """

    rows: tuple[tuple[str, float, float, float], ...]
    reference_requirement: float

    def __post_init__(self) -> None:
        if not self.reference_requirement > 0:
            raise ValidationError("reference requirement must be positive")
        by_sex: dict[str, list[tuple[float, float, float]]] = {}
        for sex, low, high, kcal in self.rows:
            if sex not in SEXES:
                raise ValidationError(f"unknown sex {sex!r} in requirement table")
            if not kcal > 0:
                raise ValidationError(f"non-positive requirement for {sex} [{low}, {high})")
            if not low < high:
                raise ValidationError(f"empty age band [{low}, {high}) for {sex}")
            by_sex.setdefault(sex, []).append((low, high, kcal))
        for sex, bands in by_sex.items():
            bands.sort()
            if bands[0][0] != 0.0:
                raise ValidationError(f"{sex} bands do not start at age 0")
            for (_, high_prev, _), (low, _, _) in zip(bands, bands[1:]):
                if low != high_prev:
                    raise ValidationError(f"{sex} bands have a gap or overlap at age {low}")
            if not math.isinf(bands[-1][1]):
                raise ValidationError(f"{sex} bands do not cover all ages (end at {bands[-1][1]})")

    def requirement(self, age_years: float, sex: str) -> float:
        """Daily kcal requirement for one person; raises if no band matches."""
        if not (isinstance(age_years, (int, float)) and age_years >= 0):
            raise RequirementLookupError(f"invalid age {age_years!r}")
        for row_sex, low, high, kcal in self.rows:
            if row_sex == sex and low <= age_years < high:
                return kcal
        raise RequirementLookupError(f"no requirement band for sex={sex!r}, age={age_years}")


@dataclass(frozen=True)
class AreaInfo:
    adm1_id: str
    population: float
    urban_share: float | None = None


@dataclass(frozen=True)
class AreaTable:
    """ADM2 lookup: parent ADM1, population, and optional urban share."""

    areas: Mapping[str, AreaInfo]

    def __post_init__(self) -> None:
        for adm2, info in self.areas.items():
            if not (math.isfinite(info.population) and info.population >= 0):
                raise ValidationError(f"area {adm2}: bad population {info.population}")
            if info.urban_share is not None and not 0.0 <= info.urban_share <= 1.0:
                raise ValidationError(f"area {adm2}: urban share {info.urban_share} outside [0, 1]")

    def adm2_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.areas))

    def adm1_of(self, adm2_id: str) -> str:
        return self.areas[adm2_id].adm1_id

    def population(self, adm2_id: str) -> float:
        return self.areas[adm2_id].population

    def urban_share(self, adm2_id: str) -> float | None:
        return self.areas[adm2_id].urban_share

    def by_adm1(self) -> dict[str, tuple[str, ...]]:
        groups: dict[str, list[str]] = {}
        for adm2 in self.adm2_ids():
            groups.setdefault(self.areas[adm2].adm1_id, []).append(adm2)
        return {k: tuple(v) for k, v in sorted(groups.items())}


@dataclass(frozen=True)
class GriddedPopulationCell:
    cell_id: str
    adm1_id: str
    adm2_id: str
    pop_census: float
    pop_survey: float


@dataclass(frozen=True)
class SurveyDataset:
    """Validated household records plus derived bookkeeping."""

    households: tuple[HouseholdRecord, ...]
    #: households whose reported food quantities sum to zero (retained, flagged)
    zero_consumption: frozenset[str] = field(default_factory=frozenset)

    def household_ids(self) -> tuple[str, ...]:
        return tuple(h.household_id for h in self.households)

    def cluster_ids(self) -> tuple[str, ...]:
        return tuple(sorted({h.cluster_id for h in self.households}))

    def __len__(self) -> int:
        return len(self.households)


# ---------------------------------------------------------------------------
# table reading helpers


def _read_table(path, table: str, required: Sequence[str], schema=None, optional: Sequence[str] = ()):
    df = pd.read_csv(path)
    mapping = (schema or {}).get(table, {})
    rename = {actual: canon for canon, actual in mapping.items() if actual in df.columns}
    df = df.rename(columns=rename)
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise SchemaError(f"{table} table is missing column(s): {', '.join(missing)}")
    keep = [c for c in (*required, *optional) if c in df.columns]
    return df[keep].copy()


def _as_float(df: pd.DataFrame, table: str, col: str) -> np.ndarray:
    try:
        return df[col].astype(float).to_numpy()
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{table}.{col} contains non-numeric values") from exc


def _as_str(df: pd.DataFrame, col: str) -> np.ndarray:
    return df[col].astype(str).str.strip().to_numpy()


# ---------------------------------------------------------------------------
# loaders


def load_survey(household_file, roster_file, consumption_file=None, schema=None) -> SurveyDataset:
    """Load and validate a household survey.

    Parameters
    ----------
    household_file : path
        Household table (one row per household).
    roster_file : path
        Member roster (one row per person). Every household needs at
        least one member.
    consumption_file : path, optional
        Food acquisition lines. Households absent from this table are
        retained and flagged as zero-consumption.
    schema : dict, optional
        Column remapping, ``{"households": {"weight": "hh_wt"}, ...}``.

    Returns
    -------
    SurveyDataset
    """
    hh = _read_table(household_file, "households", DEFAULT_COLUMNS["households"], schema)
    hh_ids = _as_str(hh, "household_id")
    dupes = pd.Series(hh_ids).duplicated()
    if dupes.any():
        raise ValidationError(f"duplicate household_id {hh_ids[dupes.to_numpy()][0]!r}")
    weights = _as_float(hh, "households", "weight")
    strata = _as_str(hh, "stratum")
    for i, hid in enumerate(hh_ids):
        if not (math.isfinite(weights[i]) and weights[i] > 0):
            raise ValidationError(f"household {hid!r}: weight {weights[i]} is not strictly positive")
        if strata[i] not in STRATA:
            raise ValidationError(f"household {hid!r}: stratum {strata[i]!r} not in {STRATA}")

    roster = _read_table(roster_file, "roster", DEFAULT_COLUMNS["roster"], schema)
    ages = _as_float(roster, "roster", "age_years")
    sexes = _as_str(roster, "sex")
    members: dict[str, list[tuple[float, str]]] = {}
    for hid, age, sex in zip(_as_str(roster, "household_id"), ages, sexes):
        if not (math.isfinite(age) and age >= 0):
            raise ValidationError(f"household {hid!r}: member age {age} is invalid")
        if sex not in SEXES:
            raise ValidationError(f"household {hid!r}: member sex {sex!r} not in {SEXES}")
        members.setdefault(hid, []).append((float(age), sex))

    lines: dict[str, list[ConsumptionLine]] = {}
    if consumption_file is not None:
        cons = _read_table(consumption_file, "consumption", DEFAULT_COLUMNS["consumption"], schema)
        qty = _as_float(cons, "consumption", "quantity")
        days = _as_float(cons, "consumption", "recall_days")
        units = _as_str(cons, "unit")
        items = _as_str(cons, "food_item_id")
        for i, hid in enumerate(_as_str(cons, "household_id")):
            if not (math.isfinite(qty[i]) and qty[i] >= 0):
                raise ValidationError(
                    f"household {hid!r}, item {items[i]!r}: quantity {qty[i]} is negative or non-finite"
                )
            if not (math.isfinite(days[i]) and days[i] > 0):
                raise ValidationError(
                    f"household {hid!r}, item {items[i]!r}: recall_days {days[i]} must be positive"
                )
            lines.setdefault(hid, []).append(ConsumptionLine(items[i], float(qty[i]), units[i], float(days[i])))

    records = []
    zero = []
    for i, hid in enumerate(hh_ids):
        mem = tuple(members.get(hid, ()))
        if not mem:
            raise ValidationError(f"household {hid!r} has no roster members")
        hh_lines = tuple(lines.get(hid, ()))
        if sum(line.quantity for line in hh_lines) == 0.0:
            zero.append(hid)
        records.append(
            HouseholdRecord(
                household_id=hid,
                cluster_id=str(hh["cluster_id"].iloc[i]),
                adm1_id=str(hh["adm1_id"].iloc[i]),
                adm2_id=str(hh["adm2_id"].iloc[i]),
                stratum=strata[i],
                weight=float(weights[i]),
                members=mem,
                consumption=hh_lines,
            )
        )
    validate_cluster_consistency(records)
    return SurveyDataset(households=tuple(records), zero_consumption=frozenset(zero))


def validate_cluster_consistency(records: Sequence[HouseholdRecord]) -> None:
    """Each cluster must sit inside exactly one (adm1, adm2, stratum)."""
    seen: dict[str, tuple[str, str, str]] = {}
    adm2_parent: dict[str, str] = {}
    for rec in records:
        key = (rec.adm1_id, rec.adm2_id, rec.stratum)
        prev = seen.setdefault(rec.cluster_id, key)
        if prev != key:
            raise ConsistencyError(
                f"cluster {rec.cluster_id!r} spans {prev} and {key}; "
                "clusters must lie inside a single area and stratum"
            )
        parent = adm2_parent.setdefault(rec.adm2_id, rec.adm1_id)
        if parent != rec.adm1_id:
            raise ConsistencyError(
                f"area {rec.adm2_id!r} is claimed by both {parent!r} and {rec.adm1_id!r}"
            )


def load_composition(path, schema=None) -> dict[str, FoodCompositionEntry]:
    """Food composition table in long form (one row per item-nutrient pair)."""
    df = _read_table(path, "composition", DEFAULT_COLUMNS["composition"], schema)
    per100 = _as_float(df, "composition", "per_100g")
    portion = _as_float(df, "composition", "edible_portion")
    items = _as_str(df, "food_item_id")
    nutrients = _as_str(df, "nutrient")
    values: dict[str, dict[str, float]] = {}
    portions: dict[str, float] = {}
    for i, item in enumerate(items):
        if not (math.isfinite(per100[i]) and per100[i] >= 0):
            raise ValidationError(f"item {item!r}: per_100g {per100[i]} is negative or non-finite")
        if not 0.0 < portion[i] <= 1.0:
            raise ValidationError(f"item {item!r}: edible_portion {portion[i]} outside (0, 1]")
        prev = portions.setdefault(item, portion[i])
        if prev != portion[i]:
            raise ConsistencyError(f"item {item!r} has conflicting edible portions {prev} and {portion[i]}")
        values.setdefault(item, {})[nutrients[i]] = float(per100[i])
    return {
        item: FoodCompositionEntry(item, values[item], portions[item])
        for item in sorted(values)
    }


def load_requirements(path, schema=None) -> EnergyRequirementTable:
    """Energy requirement bands; exactly one row must be flagged ``reference``."""
    df = _read_table(path, "requirements", DEFAULT_COLUMNS["requirements"], schema)
    high = df["age_high"].replace({"inf": math.inf, "": math.inf}).astype(float).to_numpy()
    low = _as_float(df, "requirements", "age_low")
    kcal = _as_float(df, "requirements", "kcal_per_day")
    ref = _as_float(df, "requirements", "reference")
    sexes = _as_str(df, "sex")
    flagged = np.flatnonzero(ref == 1.0)
    if len(flagged) != 1:
        raise ValidationError(f"requirement table must flag exactly one reference row, found {len(flagged)}")
    rows = tuple((sexes[i], float(low[i]), float(high[i]), float(kcal[i])) for i in range(len(df)))
    return EnergyRequirementTable(rows=rows, reference_requirement=float(kcal[flagged[0]]))


def load_areas(path, schema=None) -> AreaTable:
    df = _read_table(path, "areas", DEFAULT_COLUMNS["areas"], schema, optional=("urban_share",))
    pops = _as_float(df, "areas", "population")
    adm2 = _as_str(df, "adm2_id")
    adm1 = _as_str(df, "adm1_id")
    if pd.Series(adm2).duplicated().any():
        raise ValidationError("duplicate adm2_id in areas table")
    shares = None
    if "urban_share" in df.columns:
        shares = df["urban_share"].astype(float).to_numpy()
    areas = {}
    for i in range(len(df)):
        share = None
        if shares is not None and math.isfinite(shares[i]):
            share = float(shares[i])
        areas[adm2[i]] = AreaInfo(adm1_id=adm1[i], population=float(pops[i]), urban_share=share)
    return AreaTable(areas=areas)


def load_cells(path, schema=None) -> tuple[GriddedPopulationCell, ...]:
    df = _read_table(path, "cells", DEFAULT_COLUMNS["cells"], schema)
    ids = _as_str(df, "cell_id")
    if pd.Series(ids).duplicated().any():
        raise ValidationError("duplicate cell_id in cells table")
    census = _as_float(df, "cells", "pop_census")
    survey = _as_float(df, "cells", "pop_survey")
    cells = []
    for i in range(len(df)):
        if census[i] < 0 or survey[i] < 0:
            raise ValidationError(f"cell {ids[i]!r}: negative population")
        cells.append(
            GriddedPopulationCell(ids[i], _as_str(df, "adm1_id")[i], _as_str(df, "adm2_id")[i],
                                  float(census[i]), float(survey[i]))
        )
    return tuple(cells)


def load_conversions(path, schema=None) -> dict[str, float]:
    """Unit-to-gram conversion factors, merged over the builtin gram units."""
    df = _read_table(path, "conversions", DEFAULT_COLUMNS["conversions"], schema)
    grams = _as_float(df, "conversions", "grams")
    out = dict(GRAM_UNITS)
    for unit, g in zip(_as_str(df, "unit"), grams):
        if not (math.isfinite(g) and g > 0):
            raise ValidationError(f"unit {unit!r}: conversion factor {g} must be positive")
        out[unit] = float(g)
    return out


# ---------------------------------------------------------------------------
# serialization (lossless for valid inputs)


def dataset_to_frames(dataset: SurveyDataset) -> dict[str, pd.DataFrame]:
    """Canonical tables for a dataset; ``load_survey`` on the written CSVs
    reproduces the numeric fields bit for bit."""
    hh_rows, roster_rows, cons_rows = [], [], []
    for rec in dataset.households:
        hh_rows.append((rec.household_id, rec.cluster_id, rec.adm1_id, rec.adm2_id, rec.stratum, rec.weight))
        for age, sex in rec.members:
            roster_rows.append((rec.household_id, age, sex))
        for line in rec.consumption:
            cons_rows.append((rec.household_id, line.food_item_id, line.quantity, line.unit, line.recall_days))
    return {
        "households": pd.DataFrame(hh_rows, columns=DEFAULT_COLUMNS["households"]),
        "roster": pd.DataFrame(roster_rows, columns=DEFAULT_COLUMNS["roster"]),
        "consumption": pd.DataFrame(cons_rows, columns=DEFAULT_COLUMNS["consumption"]),
    }


# ---------------------------------------------------------------------------
# household frame: the numeric view used by estimators and models


@dataclass(frozen=True)
class ClusterTable:
    """Per-cluster aggregates of a household frame."""

    code: np.ndarray      # global cluster codes, one row per cluster
    adm2: np.ndarray      # adm2 code per cluster
    adm1: np.ndarray      # adm1 code per cluster
    urban: np.ndarray     # bool per cluster
    n: np.ndarray         # households per cluster
    y_sum: np.ndarray     # count of scored-positive households
    w_sum: np.ndarray     # total design weight (the EA size measure)

    def __len__(self) -> int:
        return len(self.code)


@dataclass(frozen=True)
class HouseholdFrame:
    """Column-oriented households with integer-coded identifiers.

    ``y`` is the binary outcome being estimated (1 = inadequate intake).
    Identifier code tables are sorted, so frames built from the same ids
    are comparable and deterministic.
    """

    household_id: np.ndarray
    cluster: np.ndarray
    cluster_ids: tuple[str, ...]
    adm2: np.ndarray
    adm2_ids: tuple[str, ...]
    adm1: np.ndarray
    adm1_ids: tuple[str, ...]
    urban: np.ndarray
    weight: np.ndarray
    y: np.ndarray

    @classmethod
    def from_dataframe(cls, df: pd.DataFrame) -> "HouseholdFrame":
        required = ("household_id", "cluster_id", "adm1_id", "adm2_id", "stratum", "weight", "y")
        missing = [c for c in required if c not in df.columns]
        if missing:
            raise SchemaError(f"household frame is missing column(s): {', '.join(missing)}")
        hid = df["household_id"].astype(str).to_numpy()
        strata = df["stratum"].astype(str).to_numpy()
        bad = [s for s in np.unique(strata) if s not in STRATA]
        if bad:
            raise ValidationError(f"unknown stratum value(s): {bad}")
        weight = df["weight"].astype(float).to_numpy()
        if not ((weight > 0) & np.isfinite(weight)).all():
            i = int(np.flatnonzero(~((weight > 0) & np.isfinite(weight)))[0])
            raise ValidationError(f"household {hid[i]!r}: weight {weight[i]} is not strictly positive")
        y = df["y"].astype(float).to_numpy()
        if not ((y >= 0) & (y <= 1)).all():
            i = int(np.flatnonzero(~((y >= 0) & (y <= 1)))[0])
            raise ValidationError(f"household {hid[i]!r}: outcome {y[i]} outside [0, 1]")
        cluster_ids, cluster = np.unique(df["cluster_id"].astype(str).to_numpy(), return_inverse=True)
        adm2_ids, adm2 = np.unique(df["adm2_id"].astype(str).to_numpy(), return_inverse=True)
        adm1_ids, adm1 = np.unique(df["adm1_id"].astype(str).to_numpy(), return_inverse=True)
        frame = cls(
            household_id=hid,
            cluster=cluster.astype(np.int64),
            cluster_ids=tuple(cluster_ids),
            adm2=adm2.astype(np.int64),
            adm2_ids=tuple(adm2_ids),
            adm1=adm1.astype(np.int64),
            adm1_ids=tuple(adm1_ids),
            urban=(strata == "urban"),
            weight=weight,
            y=y,
        )
        frame._check_nesting()
        return frame

    @classmethod
    def from_survey(cls, dataset: SurveyDataset, indicator_table: pd.DataFrame, nutrient: str) -> "HouseholdFrame":
        """Join households with a scored indicator table for one nutrient."""
        sub = indicator_table[indicator_table["nutrient"] == nutrient]
        if sub.empty:
            raise ValidationError(f"indicator table has no rows for nutrient {nutrient!r}")
        scores = dict(zip(sub["household_id"].astype(str), sub["inadequate"].astype(float)))
        rows = []
        for rec in dataset.households:
            if rec.household_id not in scores:
                raise ValidationError(f"household {rec.household_id!r} has no indicator value")
            rows.append((rec.household_id, rec.cluster_id, rec.adm1_id, rec.adm2_id,
                         rec.stratum, rec.weight, scores[rec.household_id]))
        df = pd.DataFrame(rows, columns=("household_id", "cluster_id", "adm1_id", "adm2_id",
                                         "stratum", "weight", "y"))
        return cls.from_dataframe(df)

    def _check_nesting(self) -> None:
        # one cluster -> one (adm1, adm2, stratum); one adm2 -> one adm1
        key = self.adm1 * (2 * len(self.adm2_ids)) + self.adm2 * 2 + self.urban
        for c in np.unique(self.cluster):
            keys = np.unique(key[self.cluster == c])
            if len(keys) > 1:
                raise ConsistencyError(
                    f"cluster {self.cluster_ids[c]!r} spans multiple areas or strata"
                )
        for a in np.unique(self.adm2):
            parents = np.unique(self.adm1[self.adm2 == a])
            if len(parents) > 1:
                names = [self.adm1_ids[p] for p in parents]
                raise ConsistencyError(f"area {self.adm2_ids[a]!r} is claimed by {names}")

    def __len__(self) -> int:
        return len(self.weight)

    def subset(self, index: np.ndarray) -> "HouseholdFrame":
        """Row subset; identifier code tables are shared with the parent."""
        index = np.asarray(index)
        return HouseholdFrame(
            household_id=self.household_id[index],
            cluster=self.cluster[index],
            cluster_ids=self.cluster_ids,
            adm2=self.adm2[index],
            adm2_ids=self.adm2_ids,
            adm1=self.adm1[index],
            adm1_ids=self.adm1_ids,
            urban=self.urban[index],
            weight=self.weight[index],
            y=self.y[index],
        )

    def cluster_table(self) -> ClusterTable:
        codes, first, inverse = np.unique(self.cluster, return_index=True, return_inverse=True)
        k = len(codes)
        return ClusterTable(
            code=codes,
            adm2=self.adm2[first],
            adm1=self.adm1[first],
            urban=self.urban[first],
            n=np.bincount(inverse, minlength=k).astype(np.int64),
            y_sum=np.bincount(inverse, weights=self.y, minlength=k),
            w_sum=np.bincount(inverse, weights=self.weight, minlength=k),
        )

    def to_dataframe(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "household_id": self.household_id,
                "cluster_id": [self.cluster_ids[c] for c in self.cluster],
                "adm1_id": [self.adm1_ids[a] for a in self.adm1],
                "adm2_id": [self.adm2_ids[a] for a in self.adm2],
                "stratum": np.where(self.urban, "urban", "rural"),
                "weight": self.weight,
                "y": self.y,
            }
        )


# ---------------------------------------------------------------------------
# urban share derivation from gridded population


def label_urban_cells(
    cells: Sequence[GriddedPopulationCell], adm1_urban_fraction: Mapping[str, float]
) -> frozenset[str]:
    """Label cells urban by the census-population threshold rule.

    Within each ADM1, cells are ranked by descending census population
    (ties broken by cell id) and the smallest prefix whose cumulative
    population reaches ``fraction * total`` is labelled urban. The
    comparison uses a relative tolerance of 1e-9 so that a prefix that
    hits the target exactly is not extended by floating-point noise.
    """
    by_adm1: dict[str, list[GriddedPopulationCell]] = {}
    for cell in cells:
        by_adm1.setdefault(cell.adm1_id, []).append(cell)
    urban: set[str] = set()
    for adm1_id, group in sorted(by_adm1.items()):
        if adm1_id not in adm1_urban_fraction:
            raise ValidationError(f"no urban fraction for ADM1 {adm1_id!r}")
        frac = float(adm1_urban_fraction[adm1_id])
        if not 0.0 <= frac <= 1.0:
            raise ValidationError(f"ADM1 {adm1_id!r}: urban fraction {frac} outside [0, 1]")
        total = sum(c.pop_census for c in group)
        if total <= 0:
            raise ValidationError(f"ADM1 {adm1_id!r} has zero total census population")
        target = frac * total - 1e-9 * total
        group.sort(key=lambda c: (-c.pop_census, c.cell_id))
        cum = 0.0
        for cell in group:
            if cum >= target:
                break
            urban.add(cell.cell_id)
            cum += cell.pop_census
    return frozenset(urban)


def derive_urban_shares(
    cells: Sequence[GriddedPopulationCell], adm1_urban_fraction: Mapping[str, float]
) -> dict[str, float]:
    """ADM2 urban population shares for the survey year.

    Cells are labelled urban or rural with :func:`label_urban_cells`
    (census-year populations), then each ADM2's share is the survey-year
    population in urban cells over its survey-year total. An ADM2 with
    zero survey-year population gets share 0.0.
    """
    seen = set()
    for cell in cells:
        if cell.cell_id in seen:
            raise ValidationError(f"duplicate cell id {cell.cell_id!r}")
        seen.add(cell.cell_id)
    urban = label_urban_cells(cells, adm1_urban_fraction)
    tot: dict[str, float] = {}
    urb: dict[str, float] = {}
    for cell in cells:
        tot[cell.adm2_id] = tot.get(cell.adm2_id, 0.0) + cell.pop_survey
        if cell.cell_id in urban:
            urb[cell.adm2_id] = urb.get(cell.adm2_id, 0.0) + cell.pop_survey
    return {
        adm2: (urb.get(adm2, 0.0) / total if total > 0 else 0.0)
        for adm2, total in sorted(tot.items())
    }
