"""Unit tests for the randomized mechanisms and their branch games."""

from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ospclock.mechanisms import (
    ArrivalPricingGame,
    MaxPricePartitionGame,
    PartitionSaleGame,
    _mech3_fast_outcome,
    _naive_constant_rows_exact,
    arrivals_discarded,
    grand_bundle_auction,
    m1_2x2,
    m2_2x2,
    m3_2x2,
    mech1_decreasing_marginals,
    mech1_single_minded,
    mech2_additive,
    mech3_unit_demand,
    mechanism_for_instance,
    naive_max_price_ud,
    preferred_quantity,
    random_bundles,
    sample_run,
    three_item_dm,
    three_item_dm_mechanism,
)
from ospclock.osp import verify_ir_nnt, verify_osp
from ospclock.protocols import materialize, play, run_game, truthful_strategies
from ospclock.rng import CounterRng
from ospclock.valuations import (
    AdditiveValuation,
    CombinatorialSetting,
    ExplicitValuation,
    Instance,
    MultiUnitSetting,
    MultiUnitValuation,
    UnitDemandValuation,
    make_single_minded,
)
from ospclock.welfare import SizeCapError, opt, welfare_of

ITEMS = ("a", "b")


def sm_instance(*params, m):
    vals = tuple(make_single_minded(x, d, m) for x, d in params)
    return Instance(MultiUnitSetting(m), vals)


def additive(a, b):
    return AdditiveValuation(ITEMS, {"a": F(a), "b": F(b)})


def unit_demand(a, b):
    return UnitDemandValuation(ITEMS, {"a": F(a), "b": F(b)})


def flat_unit_demand(items, c):
    return UnitDemandValuation(items, {j: F(c) for j in items})


# ---------------------------------------------------------------------------
# expected welfare on frozen instances


def test_random_bundles_demo():
    inst = sm_instance((9, 4), (5, 1), (4, 1), m=4)
    mech = random_bundles(3, 4)
    assert [b.label for b in mech.branches()] == [
        "bundle-size=1",
        "bundle-size=2",
        "bundle-size=4",
    ]
    welfares = [welfare_of(inst, b.outcome(inst).allocation) for b in mech.branches()]
    assert welfares == [F(9), F(9), F(9)]
    assert mech.exact_expected_welfare(inst) == F(9)
    assert opt(inst).value == F(9)


def test_random_bundles_grand_branch_charges_clock_price():
    inst = sm_instance((9, 4), (5, 1), (4, 1), m=4)
    branch = random_bundles(3, 4).branches()[-1]
    out = branch.outcome(inst)
    # the whole supply goes to the big bidder at the last rival's exit
    assert out.allocation.bundles == (4, 0, 0)
    assert out.payments == (F(5), F(0), F(0))


def test_random_bundles_bucket_ladder():
    assert [b.label for b in random_bundles(2, 1).branches()] == ["bundle-size=1"]
    assert len(random_bundles(2, 8).branches()) == 4  # 1, 2, 4, 8
    assert [b.label for b in random_bundles(2, 6).branches()] == [
        "bundle-size=1",
        "bundle-size=2",
        "bundle-size=4",
        "bundle-size=6",
    ]


def test_mech1_uniform_unit_demanders():
    # four bidders each wanting one unit for 10, four units on sale
    inst = sm_instance(*[(10, 1)] * 4, m=4)
    mech = mech1_single_minded(4, 4)
    assert mech.branch_count == 1 + 16
    assert mech.exact_expected_welfare(inst) == F(15)
    assert opt(inst).value == F(40)


def test_mech1_sale_prices_at_sample_opt_over_10m():
    inst = sm_instance((10, 1), (3, 1), m=2)
    mech = mech1_single_minded(2, 2)
    by_label = {b.label: b for b in mech.branches()}
    out = by_label["sample=0"].outcome(inst)
    # O = 10, so each unit costs 10 / 20
    assert out.allocation.bundles == (0, 1)
    assert out.payments == (F(0), F(1, 2))
    out = by_label["sample=0,1"].outcome(inst)
    assert out.allocation.bundles == (0, 0)


def test_mech1_buyers_never_buy_zero_utility():
    # price exactly exhausts the buyer's value: O = 10 -> unit price 1/2
    inst = sm_instance((10, 1), (F(1, 2), 1), m=2)
    branch = {b.label: b for b in mech1_single_minded(2, 2).branches()}["sample=0"]
    out = branch.outcome(inst)
    assert out.allocation.bundles == (0, 0)


def test_preferred_quantity_breaks_ties_down():
    flat = MultiUnitValuation((F(5), F(5), F(5)))
    assert preferred_quantity(flat, 3, F(0)) == 1
    assert preferred_quantity(flat, 3, F(5)) == 0
    climb = MultiUnitValuation((F(2), F(4), F(6)))
    # every quantity yields zero surplus at price 2; ties go down to 0
    assert preferred_quantity(climb, 3, F(2)) == 0
    assert preferred_quantity(climb, 3, F(1)) == 3
    assert preferred_quantity(climb, 2, F(1)) == 2


@given(
    marginals=st.lists(
        st.integers(min_value=0, max_value=6), min_size=1, max_size=5
    ).map(lambda xs: sorted(xs, reverse=True)),
    price=st.integers(min_value=0, max_value=7),
)
def test_preferred_quantity_is_greedy_for_decreasing_marginals(marginals, price):
    values = []
    total = F(0)
    for step in marginals:
        total += step
        values.append(total)
    v = MultiUnitValuation(tuple(values))
    greedy = sum(1 for step in marginals if step > price)
    assert preferred_quantity(v, v.m, F(price)) == greedy


def test_mech2_crossed_interests():
    inst = Instance(CombinatorialSetting(ITEMS), (additive(3, 0), additive(0, 3)))
    mech = mech2_additive(2, ITEMS)
    welfares = {
        b.label: welfare_of(inst, b.outcome(inst).allocation) for b in mech.branches()
    }
    assert welfares == {
        "sample=-": F(6),
        "sample=0": F(3),
        "sample=1": F(3),
        "sample=0,1": F(0),
    }
    assert mech.exact_expected_welfare(inst) == F(3)


def test_mech2_equal_value_goes_to_lower_index():
    # bidder 1 sets price a=2; buyer 0 matches it and has the lower index
    inst = Instance(
        CombinatorialSetting(ITEMS),
        (additive(2, 2), additive(2, 0), additive(0, 2)),
    )
    branch = {b.label: b for b in mech2_additive(3, ITEMS).branches()}["sample=1"]
    out = branch.outcome(inst)
    assert out.allocation.bundles[0] == frozenset(ITEMS)
    assert out.payments[0] == F(2)
    assert out.allocation.bundles[2] == frozenset()


def test_mech2_empty_sample_sells_everything_free():
    inst = Instance(
        CombinatorialSetting(ITEMS), (additive(2, 2), additive(2, 0), additive(0, 2))
    )
    branch = {b.label: b for b in mech2_additive(3, ITEMS).branches()}["sample=-"]
    out = branch.outcome(inst)
    assert out.allocation.bundles[0] == frozenset(ITEMS)
    assert out.payments == (F(0), F(0), F(0))


# ---------------------------------------------------------------------------
# the 2x2 mixtures


def test_m1_2x2_two_unit_demanders():
    inst = sm_instance((4, 1), (3, 1), m=2)
    mech = m1_2x2()
    welfares = [welfare_of(inst, b.outcome(inst).allocation) for b in mech.branches()]
    assert welfares == [F(4), F(7), F(7)]
    assert mech.exact_expected_welfare(inst) == F(11, 2)


def test_m1_2x2_probability_knob():
    inst = sm_instance((4, 1), (3, 1), m=2)
    assert m1_2x2(F(1)).exact_expected_welfare(inst) == F(4)
    assert m1_2x2(F(0)).exact_expected_welfare(inst) == F(7)
    with pytest.raises(ValueError):
        m1_2x2(F(3, 2))


def test_m2_2x2_symmetric_unit_demand():
    inst = Instance(CombinatorialSetting(ITEMS), (unit_demand(1, 1), unit_demand(1, 1)))
    mech = m2_2x2()
    for branch in mech.branches():
        assert welfare_of(inst, branch.outcome(inst).allocation) == F(2)
    assert mech.exact_expected_welfare(inst) == F(2) == opt(inst).value


SPLIT = (
    ExplicitValuation(
        ITEMS,
        {frozenset(): F(0), frozenset("a"): F(1), frozenset("b"): F(0),
         frozenset(ITEMS): F(1)},
    ),
    ExplicitValuation(
        ITEMS,
        {frozenset(): F(0), frozenset("a"): F(0), frozenset("b"): F(1),
         frozenset(ITEMS): F(1)},
    ),
)


def test_m3_2x2_split_interests_is_tight():
    # one bidder per item; the grand branch wastes half the value and
    # half of the fixed awards land on the wrong item
    inst = Instance(CombinatorialSetting(ITEMS), SPLIT)
    mech = m3_2x2()
    welfares = {
        b.label: welfare_of(inst, b.outcome(inst).allocation) for b in mech.branches()
    }
    assert welfares == {
        "grand-bundle": F(1),
        "fixed-award-0-a": F(2),
        "fixed-award-0-b": F(1),
        "fixed-award-1-a": F(1),
        "fixed-award-1-b": F(2),
    }
    assert mech.exact_expected_welfare(inst) == F(4, 3)
    assert opt(inst).value == F(2)


def test_m2_2x2_split_interests_is_tight():
    inst = Instance(CombinatorialSetting(ITEMS), SPLIT)
    assert m2_2x2().exact_expected_welfare(inst) == F(3, 2)


def test_three_item_dm_trace():
    v0 = MultiUnitValuation((F(3), F(5), F(6)))
    v1 = MultiUnitValuation((F(2), F(3), F(3)))
    inst = Instance(MultiUnitSetting(3), (v0, v1))
    protocol, strategies = three_item_dm()
    behaviors = [
        {
            node: strategies[i](inst.valuations[i], node)
            for node in protocol.bidder_nodes(i)
        }
        for i in range(2)
    ]
    outcome, _ = play(protocol, behaviors)
    assert outcome.allocation.bundles == (2, 1)
    assert outcome.payments == (F(1), F(0))
    assert welfare_of(inst, outcome.allocation) == F(7) == opt(inst).value
    mech = three_item_dm_mechanism()
    assert mech.exact_expected_welfare(inst) == F(7)


# ---------------------------------------------------------------------------
# arrival pricing (unit-demand)


def test_arrivals_discarded():
    assert [arrivals_discarded(n) for n in (1, 2, 3, 4, 8, 16)] == [0, 0, 1, 1, 2, 5]


def test_mech3_identical_anonymous_values():
    items = ("x", "y", "z")
    vals = tuple(flat_unit_demand(items, c) for c in (3, 2, 1))
    inst = Instance(CombinatorialSetting(items), vals)
    mech = mech3_unit_demand(3, items)
    welfares = {
        b.label: welfare_of(inst, b.outcome(inst).allocation) for b in mech.branches()
    }
    assert welfares == {
        "arrival-order=0,1,2": F(2),
        "arrival-order=0,2,1": F(3),
        "arrival-order=1,0,2": F(3),
        "arrival-order=1,2,0": F(4),
        "arrival-order=2,0,1": F(5),
        "arrival-order=2,1,0": F(5),
    }
    assert mech.exact_expected_welfare(inst) == F(11, 3)


def test_mech3_fast_path_matches_game():
    items = ("x", "y", "z")
    vals = tuple(flat_unit_demand(items, c) for c in (3, 2, 2))
    inst = Instance(CombinatorialSetting(items), vals)
    for branch in mech3_unit_demand(3, items).branches():
        order = tuple(
            int(t) for t in branch.label.split("=")[1].split(",")
        )
        fast = _mech3_fast_outcome(inst, order)
        game = ArrivalPricingGame(order, items, [[v] for v in vals])
        slow, _ = run_game(game, vals)
        assert fast.allocation.bundles == slow.allocation.bundles
        assert fast.payments == slow.payments


def test_mech3_two_bidders_nobody_observed():
    # floor(2/e) = 0: the first arrival shops at zero prices, the
    # second pays the first's reported opportunity cost
    vals = (unit_demand(5, 2), unit_demand(4, 4))
    inst = Instance(CombinatorialSetting(ITEMS), vals)
    branches = {b.label: b for b in mech3_unit_demand(2, ITEMS).branches()}
    out = branches["arrival-order=0,1"].outcome(inst)
    assert out.allocation.bundles == (frozenset("a"), frozenset("b"))
    assert out.payments == (F(0), F(2))
    out = branches["arrival-order=1,0"].outcome(inst)
    # ties prefer the earlier item, so bidder 1 grabs "a" and prices
    # bidder 0 out of "b"
    assert out.allocation.bundles == (frozenset(), frozenset("a"))


def test_mech3_zero_surplus_follows_canonical_optimum():
    # the second arrival always has zero surplus on the leftover item;
    # she takes it only when the canonical optimum would seat her,
    # i.e. only when her index beats the equal-value first arrival
    items = ("x", "y")
    vals = (flat_unit_demand(items, 2), flat_unit_demand(items, 2))
    inst = Instance(CombinatorialSetting(items), vals)
    branches = {b.label: b for b in mech3_unit_demand(2, items).branches()}
    out = branches["arrival-order=0,1"].outcome(inst)
    assert out.allocation.bundles == (frozenset("x"), frozenset())
    assert welfare_of(inst, out.allocation) == F(2)
    out = branches["arrival-order=1,0"].outcome(inst)
    assert out.allocation.bundles == (frozenset("y"), frozenset("x"))
    assert out.payments == (F(2), F(0))
    assert welfare_of(inst, out.allocation) == F(4)


def test_mech3_branches_cap():
    mech = mech3_unit_demand(16, tuple(f"i{k}" for k in range(16)))
    assert mech.branch_count == 20922789888000
    with pytest.raises(SizeCapError):
        mech.branches()


def test_naive_fast_expectation_matches_branches():
    items = ("x", "y", "z")
    vals = tuple(flat_unit_demand(items, c) for c in (3, 2, 1))
    inst = Instance(CombinatorialSetting(items), vals)
    mech = naive_max_price_ud(3, items)
    generic = sum(
        (
            b.probability * welfare_of(inst, b.outcome(inst).allocation)
            for b in mech.branches()
        ),
        F(0),
    )
    assert _naive_constant_rows_exact(inst) == generic == mech.exact_expected_welfare(inst)


def test_naive_fast_declines_varied_rows():
    inst = Instance(CombinatorialSetting(ITEMS), (unit_demand(2, 1), unit_demand(1, 1)))
    assert _naive_constant_rows_exact(inst) is None


# ---------------------------------------------------------------------------
# every branch of every mechanism is an OSP protocol


def small_sm_domain(values, m):
    out = []
    for x in values:
        for d in range(1, m + 1):
            v = make_single_minded(x, d, m)
            if v not in out:
                out.append(v)
    return out


MECHS_WITH_DOMAINS = [
    (random_bundles(2, 2), [small_sm_domain((0, 1, 2), 2)] * 2),
    (mech1_single_minded(2, 2), [small_sm_domain((0, 1, 2), 2)] * 2),
    (mech1_decreasing_marginals(2, 2), [small_sm_domain((0, 1, 2), 2)] * 2),
    (m1_2x2(), [small_sm_domain((0, 1, 2), 2)] * 2),
    (
        mech2_additive(2, ITEMS),
        [[additive(x, y) for x in range(3) for y in range(3)]] * 2,
    ),
    (
        naive_max_price_ud(2, ITEMS),
        [[unit_demand(x, y) for x in range(3) for y in range(3)]] * 2,
    ),
    (
        mech3_unit_demand(2, ITEMS),
        [[unit_demand(x, y) for x in range(3) for y in range(3)]] * 2,
    ),
    (
        m2_2x2(),
        [[unit_demand(x, y) for x in range(3) for y in range(3)]] * 2,
    ),
    (
        m3_2x2(),
        [[unit_demand(x, y) for x in range(3) for y in range(3)]] * 2,
    ),
]


@pytest.mark.parametrize(
    "mech,domains", MECHS_WITH_DOMAINS, ids=lambda x: getattr(x, "name", "")
)
def test_every_branch_is_osp_and_ir(mech, domains):
    for branch in mech.branches():
        game = branch.game(domains)
        protocol = materialize(game)
        strategies = truthful_strategies(game, protocol)
        assert verify_osp(protocol, strategies, domains).passed, branch.label
        assert verify_ir_nnt(protocol, strategies, domains).passed, branch.label


def test_tree_play_matches_direct_outcome():
    # the materialized branch game and the singleton-domain simulation
    # must tell the same story
    inst = Instance(
        CombinatorialSetting(ITEMS), (additive(2, 1), additive(1, 2))
    )
    domains = [[additive(x, y) for x in range(3) for y in range(3)]] * 2
    for branch in mech2_additive(2, ITEMS).branches():
        game = branch.game(domains)
        outcome, _ = run_game(game, inst.valuations)
        assert outcome == branch.outcome(inst)


# ---------------------------------------------------------------------------
# sampling


def test_probabilities_sum_to_one():
    for mech, _ in MECHS_WITH_DOMAINS:
        total = sum((b.probability for b in mech.branches()), F(0))
        assert total == F(1)


def test_sample_run_goldens_mech1():
    inst = sm_instance((4, 2), (3, 1), m=2)
    mech = mech1_single_minded(2, 2)
    got = [sample_run(mech, inst, seed) for seed in (0, 1, 2)]
    assert [o.allocation.bundles for o in got] == [(0, 1), (2, 0), (2, 0)]
    assert [o.payments for o in got] == [
        (F(0), F(1, 5)),
        (F(3, 10), F(0)),
        (F(3), F(0)),
    ]


def test_sample_run_goldens_mech2():
    inst = Instance(CombinatorialSetting(ITEMS), (additive(3, 1), additive(1, 2)))
    mech = mech2_additive(2, ITEMS)
    got = [sample_run(mech, inst, seed) for seed in (0, 1, 2)]
    assert [o.allocation.bundles[0] for o in got] == [
        frozenset("a"),
        frozenset(ITEMS),
        frozenset(),
    ]
    assert [o.payments[0] for o in got] == [F(1), F(0), F(0)]


def test_sample_run_goldens_mech3():
    items = ("a", "b", "c")
    vals = tuple(flat_unit_demand(items, c) for c in (3, 2, 1))
    inst = Instance(CombinatorialSetting(items), vals)
    mech = mech3_unit_demand(3, items)
    got = [sample_run(mech, inst, seed) for seed in (0, 1, 2)]
    assert [o.allocation.bundles for o in got] == [
        (frozenset("a"), frozenset("b"), frozenset()),
        (frozenset(), frozenset("a"), frozenset()),
        (frozenset("a"), frozenset("b"), frozenset()),
    ]
    assert got[0].payments == (F(0), F(1), F(0))


def test_sampling_frequencies_track_probabilities():
    from collections import Counter

    mech = m3_2x2()
    counts = Counter(
        mech.sample_branch(CounterRng(seed)).label for seed in range(3000)
    )
    assert abs(counts["grand-bundle"] / 3000 - 1 / 3) < 0.03
    for label in counts:
        if label != "grand-bundle":
            assert abs(counts[label] / 3000 - 1 / 6) < 0.03


def test_sample_run_rejects_type_mismatch():
    inst = sm_instance((4, 1), (3, 1), m=2)
    with pytest.raises(ValueError, match="incompatible"):
        sample_run(mech1_single_minded(2, 3), inst, 0)


# ---------------------------------------------------------------------------
# registry


def test_mechanism_for_instance_round_trip():
    inst = sm_instance((4, 1), (3, 1), m=2)
    assert mechanism_for_instance("m1-2x2", inst).name == "m1-2x2"
    assert mechanism_for_instance("grand-bundle", inst).name == "grand-bundle"
    assert mechanism_for_instance("random-bundles", inst).name == "random-bundles"
    comb = Instance(CombinatorialSetting(ITEMS), (unit_demand(1, 1), unit_demand(1, 1)))
    assert mechanism_for_instance("mech3-unit-demand", comb).name == "mech3-unit-demand"
    with pytest.raises(ValueError, match="multi-unit"):
        mechanism_for_instance("random-bundles", comb)
    with pytest.raises(ValueError, match="unknown mechanism"):
        mechanism_for_instance("mystery", inst)


def test_grand_bundle_combinatorial():
    inst = Instance(CombinatorialSetting(ITEMS), SPLIT)
    mech = grand_bundle_auction(2, inst.setting)
    out = mech.branches()[0].outcome(inst)
    assert out.allocation.bundles[0] == frozenset(ITEMS)
    assert mech.exact_expected_welfare(inst) == F(1)
