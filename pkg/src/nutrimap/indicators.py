"""Household micronutrient indicators.

The pipeline turns food acquisition lines into a binary inadequacy
indicator per household and nutrient:

1. grams consumed per day per item (unit conversion, recall window),
2. apparent nutrient intake per adult-female equivalent (AFE),
3. classification against an average-requirement cutoff, or against a
   probability-of-inadequacy curve for nutrients like iron whose
   requirement distribution is skewed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .data import (
    ConsumptionLine,
    EnergyRequirementTable,
    FoodCompositionEntry,
    GRAM_UNITS,
    SurveyDataset,
)
from .errors import ConversionError, ValidationError


def adult_female_equivalents(
    members: Sequence[tuple[float, str]], table: EnergyRequirementTable
) -> float:
    """Household size in adult-female equivalents.

    Each member contributes the ratio of their energy requirement to the
    reference requirement, so a household of one reference adult is
    exactly 1.0 AFE.
    """
    if not members:
        raise ValidationError("cannot compute AFE for an empty household")
    return sum(table.requirement(age, sex) for age, sex in members) / table.reference_requirement


def daily_quantities(
    lines: Sequence[ConsumptionLine],
    composition: Mapping[str, FoodCompositionEntry],
    conversions: Mapping[str, float] | None = None,
) -> dict[str, float]:
    """Edible grams consumed per day, keyed by food item.

    Raises
    ------
    ConversionError
        If a line's unit has no gram conversion factor.
    ValidationError
        If a line references a food item missing from the composition table.
    """
    factors = dict(GRAM_UNITS)
    if conversions:
        factors.update(conversions)
    missing = sorted({ln.food_item_id for ln in lines if ln.food_item_id not in composition})
    if missing:
        raise ValidationError(f"food item(s) missing from composition table: {', '.join(missing)}")
    out: dict[str, float] = {}
    for ln in lines:
        if ln.unit not in factors:
            raise ConversionError(f"no gram conversion for unit {ln.unit!r} (item {ln.food_item_id!r})")
        grams = ln.quantity * factors[ln.unit] * composition[ln.food_item_id].edible_portion
        out[ln.food_item_id] = out.get(ln.food_item_id, 0.0) + grams / ln.recall_days
    return out


def apparent_intake(
    quantities: Mapping[str, float],
    composition: Mapping[str, FoodCompositionEntry],
    nutrient: str,
    afe: float,
) -> float:
    """Apparent daily intake of ``nutrient`` per AFE.

    Items without a value for the nutrient contribute zero. A household
    with no quantities has intake 0.0 by definition.
    """
    if not afe > 0:
        raise ValidationError(f"AFE must be positive, got {afe}")
    total = 0.0
    for item, grams_per_day in quantities.items():
        per100 = composition[item].nutrient_per_100g.get(nutrient, 0.0)
        total += grams_per_day * per100 / 100.0
    return total / afe


@dataclass(frozen=True)
class InadequacyRule:
    """Classification rule for one nutrient.

    ``kind`` is ``"threshold"`` (inadequate iff intake < ``cutoff``, the
    average requirement; an intake exactly at the cutoff is adequate) or
    ``"probability"`` (inadequate iff a monotone non-increasing
    piecewise-linear curve mapping intake to probability of inadequacy
    exceeds ``cutoff``, default 0.5). The probability form is used for
    nutrients such as iron where requirements are heavily skewed.
    """

    nutrient: str
    kind: str
    cutoff: float
    curve: tuple[tuple[float, float], ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in ("threshold", "probability"):
            raise ValidationError(f"unknown rule kind {self.kind!r}")
        if self.kind == "threshold":
            if not (math.isfinite(self.cutoff) and self.cutoff > 0):
                raise ValidationError(f"{self.nutrient}: cutoff must be positive, got {self.cutoff}")
        else:
            if len(self.curve) < 2:
                raise ValidationError(f"{self.nutrient}: probability curve needs >= 2 points")
            xs = [x for x, _ in self.curve]
            ps = [p for _, p in self.curve]
            if sorted(xs) != xs or len(set(xs)) != len(xs):
                raise ValidationError(f"{self.nutrient}: curve intakes must be strictly increasing")
            if any(b > a for a, b in zip(ps, ps[1:])):
                raise ValidationError(f"{self.nutrient}: curve probabilities must be non-increasing")
            if any(not 0.0 <= p <= 1.0 for p in ps):
                raise ValidationError(f"{self.nutrient}: curve probabilities must lie in [0, 1]")
            if not 0.0 < self.cutoff < 1.0:
                raise ValidationError(f"{self.nutrient}: probability cutoff must lie in (0, 1)")

    def probability(self, intake: float) -> float:
        """Interpolated probability of inadequacy (probability rules only).

        Intakes outside the curve's range take the nearest endpoint value.
        """
        if self.kind != "probability":
            raise ValidationError(f"{self.nutrient}: rule has no probability curve")
        xs = np.array([x for x, _ in self.curve])
        ps = np.array([p for _, p in self.curve])
        return float(np.interp(intake, xs, ps))

    def classify(self, intake: float) -> int:
        """1 if the intake is inadequate, 0 otherwise."""
        if not (math.isfinite(intake) and intake >= 0):
            raise ValidationError(f"{self.nutrient}: invalid intake {intake}")
        if self.kind == "threshold":
            return int(intake < self.cutoff)
        return int(self.probability(intake) > self.cutoff)


def load_rules(path) -> dict[str, InadequacyRule]:
    """Read classification rules from a JSON file.

    The file maps nutrient name to either ``{"kind": "threshold",
    "cutoff": <average requirement>}`` or ``{"kind": "probability",
    "curve": [[intake, prob], ...], "cutoff": 0.5}``.
    """
    with open(path) as fh:
        raw = json.load(fh)
    rules = {}
    for nutrient, cfg in raw.items():
        rules[nutrient] = InadequacyRule(
            nutrient=nutrient,
            kind=cfg.get("kind", "threshold"),
            cutoff=float(cfg.get("cutoff", 0.5 if cfg.get("kind") == "probability" else 0.0)),
            curve=tuple((float(x), float(p)) for x, p in cfg.get("curve", ())),
        )
    return rules


def household_indicators(
    dataset: SurveyDataset,
    composition: Mapping[str, FoodCompositionEntry],
    requirements: EnergyRequirementTable,
    rules: Mapping[str, InadequacyRule],
    conversions: Mapping[str, float] | None = None,
) -> pd.DataFrame:
    """Score every household against every rule.

    Returns a long table with columns ``household_id``, ``nutrient``,
    ``afe``, ``intake``, ``inadequate``, ``zero_consumption``. Households
    with zero reported consumption are scored (their intake is 0, which a
    threshold rule classifies as inadequate) and flagged rather than
    dropped, so downstream estimators can filter if needed.
    """
    rows = []
    for rec in dataset.households:
        afe = adult_female_equivalents(rec.members, requirements)
        quantities = daily_quantities(rec.consumption, composition, conversions)
        flagged = rec.household_id in dataset.zero_consumption
        for nutrient in sorted(rules):
            rule = rules[nutrient]
            intake = apparent_intake(quantities, composition, nutrient, afe)
            rows.append((rec.household_id, nutrient, afe, intake, rule.classify(intake), flagged))
    return pd.DataFrame(
        rows,
        columns=("household_id", "nutrient", "afe", "intake", "inadequate", "zero_consumption"),
    )
