"""AFE normalisation, daily quantities, apparent intake, classification."""

import json
import math

import pytest

from nutrimap.data import (
    ConsumptionLine,
    EnergyRequirementTable,
    FoodCompositionEntry,
    HouseholdRecord,
    SurveyDataset,
)
from nutrimap.errors import ConversionError, ValidationError
from nutrimap.indicators import (
    InadequacyRule,
    adult_female_equivalents,
    apparent_intake,
    daily_quantities,
    household_indicators,
    load_rules,
)


@pytest.fixture(scope="module")
def requirements():
    # reference adult female at 2100 kcal; children at exactly half
    return EnergyRequirementTable(
        rows=(
            ("female", 0.0, 18.0, 1050.0),
            ("female", 18.0, math.inf, 2100.0),
            ("male", 0.0, 18.0, 1050.0),
            ("male", 18.0, math.inf, 2100.0),
        ),
        reference_requirement=2100.0,
    )


@pytest.fixture(scope="module")
def composition():
    return {
        "maize": FoodCompositionEntry("maize", {"zinc": 10.0, "iron": 5.0}),
        "beans": FoodCompositionEntry("beans", {"zinc": 15.0}),
        "cassava": FoodCompositionEntry("cassava", {"zinc": 4.0}, edible_portion=0.5),
    }


class TestAfe:
    def test_single_reference_adult(self, requirements):
        assert adult_female_equivalents([(30.0, "female")], requirements) == 1.0

    def test_two_reference_adults(self, requirements):
        members = [(30.0, "female"), (25.0, "male")]
        assert adult_female_equivalents(members, requirements) == 2.0

    def test_adult_plus_child(self, requirements):
        # child requirement is half the reference: 1 + 0.5
        members = [(30.0, "female"), (10.0, "male")]
        assert adult_female_equivalents(members, requirements) == 1.5

    def test_empty_household(self, requirements):
        with pytest.raises(ValidationError):
            adult_female_equivalents([], requirements)


class TestDailyQuantities:
    def test_weekly_recall(self, composition):
        # 700 g over 7 days
        q = daily_quantities([ConsumptionLine("maize", 700.0)], composition)
        assert q == {"maize": 100.0}

    def test_edible_portion(self, composition):
        q = daily_quantities([ConsumptionLine("cassava", 700.0)], composition)
        assert q["cassava"] == pytest.approx(50.0)

    def test_zero_quantity_kept(self, composition):
        q = daily_quantities([ConsumptionLine("maize", 0.0)], composition)
        assert q == {"maize": 0.0}

    def test_kilograms(self, composition):
        q = daily_quantities([ConsumptionLine("maize", 0.7, unit="kg")], composition)
        assert q["maize"] == pytest.approx(100.0)

    def test_lines_for_same_item_sum(self, composition):
        lines = [ConsumptionLine("maize", 350.0), ConsumptionLine("maize", 350.0)]
        assert daily_quantities(lines, composition)["maize"] == pytest.approx(100.0)

    def test_custom_conversion(self, composition):
        lines = [ConsumptionLine("maize", 2.0, unit="cup", recall_days=1.0)]
        q = daily_quantities(lines, composition, conversions={"cup": 240.0})
        assert q["maize"] == pytest.approx(480.0)

    def test_unknown_unit(self, composition):
        with pytest.raises(ConversionError, match="cup"):
            daily_quantities([ConsumptionLine("maize", 1.0, unit="cup")], composition)

    def test_missing_item(self, composition):
        with pytest.raises(ValidationError, match="teff"):
            daily_quantities([ConsumptionLine("teff", 1.0)], composition)


class TestApparentIntake:
    def test_oracle(self, composition):
        # 200 g/day at 10 mg per 100 g = 20 mg/day; per 2 AFE = 10
        assert apparent_intake({"maize": 200.0}, composition, "zinc", 2.0) == pytest.approx(10.0)

    def test_empty_quantities(self, composition):
        assert apparent_intake({}, composition, "zinc", 1.3) == 0.0

    def test_multiple_items_sum(self, composition):
        q = {"maize": 100.0, "beans": 100.0}
        # 10 + 15 per 100 g at 100 g/day each
        assert apparent_intake(q, composition, "zinc", 1.0) == pytest.approx(25.0)

    def test_nutrient_absent_from_item(self, composition):
        # beans carry no iron value: contributes zero
        q = {"maize": 100.0, "beans": 400.0}
        assert apparent_intake(q, composition, "iron", 1.0) == pytest.approx(5.0)

    def test_linearity_in_quantity(self, composition, rng):
        q = {"maize": float(rng.uniform(10, 500)), "beans": float(rng.uniform(10, 500))}
        one = apparent_intake(q, composition, "zinc", 1.7)
        two = apparent_intake({k: 2 * v for k, v in q.items()}, composition, "zinc", 1.7)
        assert two == pytest.approx(2 * one, rel=1e-12)

    def test_nonpositive_afe(self, composition):
        with pytest.raises(ValidationError):
            apparent_intake({}, composition, "zinc", 0.0)


class TestInadequacyRule:
    def test_threshold_below(self):
        rule = InadequacyRule("zinc", "threshold", 10.0)
        assert rule.classify(5.0) == 1

    def test_threshold_boundary_is_adequate(self):
        rule = InadequacyRule("zinc", "threshold", 10.0)
        assert rule.classify(10.0) == 0
        assert rule.classify(15.0) == 0

    def test_probability_rule(self):
        # linear from (0, 1) to (10, 0.5): probability(8) = 0.6 > 0.5
        rule = InadequacyRule("iron", "probability", 0.5, curve=((0.0, 1.0), (10.0, 0.5)))
        assert rule.probability(8.0) == pytest.approx(0.6)
        assert rule.classify(8.0) == 1

    def test_probability_endpoint_clamping(self):
        rule = InadequacyRule("iron", "probability", 0.5, curve=((1.0, 0.9), (2.0, 0.1)))
        assert rule.probability(0.0) == 0.9
        assert rule.probability(5.0) == pytest.approx(0.1)
        assert rule.classify(5.0) == 0

    def test_probability_monotone_non_increasing(self, rng):
        xs = sorted(rng.uniform(0, 50, size=6))
        ps = sorted(rng.uniform(0, 1, size=6), reverse=True)
        rule = InadequacyRule("iron", "probability", 0.5, curve=tuple(zip(xs, ps)))
        probs = [rule.probability(float(v)) for v in sorted(rng.uniform(-5, 60, size=40))]
        assert all(a >= b - 1e-12 for a, b in zip(probs, probs[1:]))

    def test_invalid_intake(self):
        rule = InadequacyRule("zinc", "threshold", 10.0)
        with pytest.raises(ValidationError):
            rule.classify(-1.0)
        with pytest.raises(ValidationError):
            rule.classify(math.nan)

    def test_threshold_rule_has_no_curve(self):
        rule = InadequacyRule("zinc", "threshold", 10.0)
        with pytest.raises(ValidationError):
            rule.probability(5.0)

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(kind="quantile", cutoff=0.5),
            dict(kind="threshold", cutoff=0.0),
            dict(kind="threshold", cutoff=math.inf),
            dict(kind="probability", cutoff=0.5, curve=((0.0, 1.0),)),
            dict(kind="probability", cutoff=0.5, curve=((1.0, 0.5), (1.0, 0.4))),
            dict(kind="probability", cutoff=0.5, curve=((0.0, 0.2), (1.0, 0.9))),
            dict(kind="probability", cutoff=0.5, curve=((0.0, 1.4), (1.0, 0.2))),
            dict(kind="probability", cutoff=1.5, curve=((0.0, 1.0), (1.0, 0.0))),
        ],
    )
    def test_rule_validation(self, kwargs):
        with pytest.raises(ValidationError):
            InadequacyRule("x", **kwargs)


class TestLoadRules:
    def test_json_round_trip(self, tmp_path):
        path = tmp_path / "rules.json"
        path.write_text(
            json.dumps(
                {
                    "zinc": {"kind": "threshold", "cutoff": 10.1},
                    "iron": {"kind": "probability", "curve": [[0, 1.0], [22.4, 0.0]]},
                }
            ),
            encoding="utf-8",
        )
        rules = load_rules(path)
        assert rules["zinc"].kind == "threshold" and rules["zinc"].cutoff == 10.1
        assert rules["iron"].cutoff == 0.5  # probability default
        assert rules["iron"].curve == ((0.0, 1.0), (22.4, 0.0))

    def test_default_kind_is_threshold(self, tmp_path):
        path = tmp_path / "rules.json"
        path.write_text(json.dumps({"zinc": {"cutoff": 8.0}}), encoding="utf-8")
        assert load_rules(path)["zinc"].kind == "threshold"


class TestHouseholdIndicators:
    def test_long_table(self, requirements, composition):
        dataset = SurveyDataset(
            households=(
                HouseholdRecord(
                    "h1", "c1", "r1", "d1", "rural", 1.0,
                    members=((30.0, "female"),),
                    consumption=(ConsumptionLine("maize", 700.0),),
                ),
                HouseholdRecord(
                    "h2", "c1", "r1", "d1", "rural", 1.0,
                    members=((30.0, "female"), (32.0, "male")),
                    consumption=(),
                ),
            ),
            zero_consumption=frozenset({"h2"}),
        )
        rules = {
            "zinc": InadequacyRule("zinc", "threshold", 10.5),
            "iron": InadequacyRule("iron", "probability", 0.5, curve=((0.0, 1.0), (10.0, 0.0))),
        }
        table = household_indicators(dataset, composition, requirements, rules)
        assert list(table.columns) == [
            "household_id", "nutrient", "afe", "intake", "inadequate", "zero_consumption",
        ]
        assert len(table) == 4
        h1 = table[table["household_id"] == "h1"].set_index("nutrient")
        # 100 g/day maize: zinc 10/AFE 1 -> inadequate (10 < 10.5)
        assert h1.loc["zinc", "intake"] == pytest.approx(10.0)
        assert h1.loc["zinc", "inadequate"] == 1
        # iron 5 -> curve probability 0.5, not > 0.5 -> adequate
        assert h1.loc["iron", "inadequate"] == 0
        assert not h1["zero_consumption"].any()
        h2 = table[table["household_id"] == "h2"].set_index("nutrient")
        assert h2["zero_consumption"].all()
        assert h2.loc["zinc", "intake"] == 0.0
        assert h2.loc["zinc", "inadequate"] == 1  # zero intake is inadequate
        assert h2.loc["zinc", "afe"] == 2.0
