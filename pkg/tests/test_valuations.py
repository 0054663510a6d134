"""Tests for valuation classes, class checks, and JSON round-trips."""

import json
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ospclock.valuations import (
    AdditiveValuation,
    CombinatorialSetting,
    ExplicitValuation,
    Instance,
    MultiUnitSetting,
    MultiUnitValuation,
    UnitDemandValuation,
    all_bundles,
    as_single_minded,
    check_class,
    check_decreasing_marginals,
    instance_from_json,
    instance_to_json,
    make_single_minded,
)

F = Fraction


# ---------------------------------------------------------------------------
# multi-unit


def test_single_minded_unit_demand_shape():
    assert make_single_minded(1, 1, 2).values == (F(1), F(1))


def test_single_minded_all_or_nothing():
    k = 7
    v = make_single_minded(k * k, 4, 4)
    assert v.values == (F(0), F(0), F(0), F(k * k))


def test_single_minded_zero_value():
    assert make_single_minded(0, 1, 3).values == (F(0), F(0), F(0))


def test_single_minded_rejects_bad_demand():
    with pytest.raises(ValueError):
        make_single_minded(1, 0, 3)
    with pytest.raises(ValueError):
        make_single_minded(1, 4, 3)
    with pytest.raises(ValueError):
        make_single_minded(-1, 1, 3)


def test_multiunit_rejects_decrease_and_negative():
    with pytest.raises(ValueError):
        MultiUnitValuation((F(2), F(1)))
    with pytest.raises(ValueError):
        MultiUnitValuation((F(-1), F(0)))


def test_value_and_marginal():
    v = MultiUnitValuation((F(2), F(3), F(3)))
    assert v.value(0) == 0
    assert v.value(2) == 3
    assert [v.marginal(q) for q in (1, 2, 3)] == [F(2), F(1), F(0)]
    with pytest.raises(ValueError):
        v.value(4)


def test_decreasing_marginals_examples():
    k2 = F(100)
    assert check_decreasing_marginals(MultiUnitValuation((k2, 2 * k2)))
    assert not check_decreasing_marginals(MultiUnitValuation((F(1), F(3))))
    assert check_decreasing_marginals(MultiUnitValuation((F(2), F(3), F(3))))


@given(
    x=st.integers(min_value=1, max_value=50),
    d=st.integers(min_value=1, max_value=6),
    m=st.integers(min_value=1, max_value=6),
)
def test_single_minded_decreasing_marginals_iff_unit_demand(x, d, m):
    """A positive step function has decreasing marginals exactly when d=1."""
    if d > m:
        d = m
    v = make_single_minded(x, d, m)
    assert check_decreasing_marginals(v) == (d == 1)


@given(
    x=st.integers(min_value=0, max_value=9),
    d=st.integers(min_value=1, max_value=5),
    m=st.integers(min_value=5, max_value=5),
)
def test_as_single_minded_round_trip(x, d, m):
    got = as_single_minded(make_single_minded(x, d, m))
    assert got is not None
    if x == 0:
        assert got.x == 0
    else:
        assert (got.x, got.d) == (F(x), d)


def test_as_single_minded_rejects_two_steps():
    assert as_single_minded(MultiUnitValuation((F(1), F(2)))) is None


# ---------------------------------------------------------------------------
# combinatorial


ITEMS = ("a", "b")


def _explicit(table, **kw):
    return ExplicitValuation(ITEMS, {frozenset(k): v for k, v in table.items()}, **kw)


def test_eval_additive_and_unit_demand():
    add = AdditiveValuation(ITEMS, {"a": 3, "b": 4})
    ud = UnitDemandValuation(ITEMS, {"a": 3, "b": 4})
    assert add.value({"a", "b"}) == 7
    assert ud.value({"a", "b"}) == 4
    assert add.value(set()) == 0 and ud.value(set()) == 0


def test_eval_below_single_minded_demand():
    assert make_single_minded(5, 2, 3).value(1) == 0


def test_eval_rejects_unknown_items():
    add = AdditiveValuation(ITEMS, {"a": 1, "b": 1})
    with pytest.raises(ValueError):
        add.value({"z"})


def test_explicit_requires_full_monotone_table():
    with pytest.raises(ValueError):
        _explicit({"": 0, "a": 1})  # incomplete
    with pytest.raises(ValueError):
        _explicit({"": 1, "a": 1, "b": 1, "ab": 1})  # empty bundle worth 1
    with pytest.raises(ValueError):
        _explicit({"": 0, "a": 1, "b": 0, "ab": 0})  # not monotone
    # the same table is constructible for class-sweep purposes
    v = _explicit({"": 0, "a": 1, "b": 0, "ab": 0}, require_monotone=False)
    assert not check_class(v, "monotone")


def test_check_class_subadditive_example():
    v = _explicit({"": 0, "a": 2, "b": 2, "ab": 3})
    assert check_class(v, "subadditive")
    assert check_class(v, "monotone")
    assert not check_class(v, "additive")


def test_check_class_unit_demand_per_item_table():
    k = 10
    v = UnitDemandValuation(ITEMS, {"a": 2 * k + 3, "b": 2 * k + 1})
    assert check_class(v, "unit_demand")
    assert not check_class(v, "additive")


def test_check_class_unknown_name():
    with pytest.raises(ValueError):
        check_class(AdditiveValuation(ITEMS, {"a": 1, "b": 1}), "supermodular")


@given(
    values=st.lists(st.integers(min_value=0, max_value=9), min_size=1, max_size=5)
)
def test_additive_matches_explicit_table(values):
    """Summing per-item values and tabulating them agree on every bundle."""
    items = tuple(f"i{k}" for k in range(len(values)))
    per_item = dict(zip(items, map(F, values)))
    add = AdditiveValuation(items, per_item)
    table = {b: add.value(b) for b in all_bundles(items)}
    exp = ExplicitValuation(items, table)
    for b in all_bundles(items):
        assert exp.value(b) == add.value(b)
    assert check_class(exp, "additive")


@given(
    values=st.lists(st.integers(min_value=0, max_value=9), min_size=1, max_size=5)
)
def test_unit_demand_is_monotone_and_subadditive(values):
    items = tuple(f"i{k}" for k in range(len(values)))
    ud = UnitDemandValuation(items, dict(zip(items, map(F, values))))
    assert check_class(ud, "monotone")
    assert check_class(ud, "subadditive")


# ---------------------------------------------------------------------------
# instances and JSON


def test_instance_checks_setting_compatibility():
    with pytest.raises(ValueError):
        Instance(MultiUnitSetting(2), (AdditiveValuation(ITEMS, {"a": 1, "b": 1}),))
    with pytest.raises(ValueError):
        Instance(CombinatorialSetting(ITEMS), (make_single_minded(1, 1, 2),))
    with pytest.raises(ValueError):
        Instance(MultiUnitSetting(2), (make_single_minded(1, 1, 3),))
    with pytest.raises(ValueError):
        Instance(MultiUnitSetting(2), ())


def test_instance_grand_bundle_value():
    inst = Instance(
        CombinatorialSetting(ITEMS),
        (UnitDemandValuation(ITEMS, {"a": 3, "b": 5}),),
    )
    assert inst.grand_bundle_value(0) == 5


def test_json_round_trip_multiunit():
    inst = Instance(
        MultiUnitSetting(3),
        (
            make_single_minded(F(5, 2), 2, 3),
            MultiUnitValuation((F(1), F(2), F(2))),
        ),
    )
    data = instance_to_json(inst)
    assert data["bidders"][0] == {"kind": "single_minded", "x": "5/2", "d": 2}
    assert data["bidders"][1]["values"] == ["1/1", "2/1", "2/1"]
    assert instance_from_json(json.loads(json.dumps(data))) == inst


def test_json_round_trip_combinatorial():
    inst = Instance(
        CombinatorialSetting(ITEMS),
        (
            AdditiveValuation(ITEMS, {"a": F(1, 3), "b": 2}),
            UnitDemandValuation(ITEMS, {"a": 0, "b": 4}),
            _explicit({"": 0, "a": 1, "b": 1, "ab": 2}),
        ),
    )
    data = instance_to_json(inst)
    assert data["setting"] == {"items": ["a", "b"]}
    assert data["bidders"][0]["values"]["a"] == "1/3"
    assert set(data["bidders"][2]["values"]) == {"", "a", "b", "a,b"}
    assert instance_from_json(json.loads(json.dumps(data))) == inst


def test_json_rejects_unknown_kind():
    with pytest.raises(ValueError):
        instance_from_json(
            {"setting": {"multiunit": 2}, "bidders": [{"kind": "mystery"}]}
        )


def test_json_serialization_is_deterministic():
    inst = Instance(MultiUnitSetting(2), (make_single_minded(1, 1, 2),) * 2)
    a = json.dumps(instance_to_json(inst), sort_keys=True)
    b = json.dumps(instance_to_json(inst), sort_keys=True)
    assert a == b
