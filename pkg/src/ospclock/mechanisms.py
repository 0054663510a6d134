"""Randomized auction mechanisms as explicit protocol distributions.

Every mechanism here is "universally" obviously strategy-proof: a
probability distribution over deterministic protocols, each of which
is OSP on its own.  A :class:`RandomizedMechanism` therefore exposes

* ``branches()`` — the exact support as labelled
  :class:`SupportElement`s with rational probabilities, when the coin
  space is enumerable;
* ``sample_branch(rng)`` — a seeded draw with a documented coin order,
  for Monte Carlo at scales where enumeration is hopeless (there are
  16! arrival orders);
* per-branch ``outcome(instance)`` — direct truthful simulation, and
  ``game(domains)`` — the extensive-form game for the verifier.

Simulation and verification share each branch's transition code: the
simulated branch is the same game run with singleton report domains
(forced reports are contracted away), so the tree and the play-out
cannot disagree.

The mechanisms: bundle-size clocks for single-minded bidders, the
sample-and-price mechanisms for single-minded/decreasing-marginal,
additive, and unit-demand bidders, a naive max-sampled-price variant
kept as a cautionary baseline, and the small two-bidder/two-item
mixtures used in lower-bound studies.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from fractions import Fraction
from itertools import permutations
from typing import Callable, Optional, Sequence

from .protocols import (
    GaaGame,
    GaaSpec,
    Game,
    Outcome,
    build_gaa,
    gaa_grid_for_domains,
    game_strategy,
    run_game,
)
from .rng import CounterRng
from .valuations import (
    CombinatorialSetting,
    Instance,
    MultiUnitSetting,
    MultiUnitValuation,
    Setting,
    Valuation,
    all_bundles,
)
from .welfare import (
    Allocation,
    SizeCapError,
    _cap,
    opt_restricted,
    opt_value_restricted,
    welfare_of,
)

ZERO = Fraction(0)
ONE = Fraction(1)


# ---------------------------------------------------------------------------
# randomized-mechanism carrier


@dataclass
class SupportElement:
    """One deterministic branch of a randomized mechanism."""

    label: str
    probability: Fraction
    outcome_fn: Callable[[Instance], Outcome]
    game_fn: Callable[[Sequence[Sequence[Valuation]]], Game]

    def outcome(self, instance: Instance) -> Outcome:
        return self.outcome_fn(instance)

    def game(self, domains: Sequence[Sequence[Valuation]]) -> Game:
        return self.game_fn(domains)


class RandomizedMechanism:
    def __init__(
        self,
        name: str,
        setting: Setting,
        n: int,
        branch_count: int,
        branches_fn: Callable[[], list],
        sample_fn: Callable[[CounterRng], SupportElement],
        value_grid: Optional[tuple] = None,
        exact_fast: Optional[Callable[[Instance], Optional[Fraction]]] = None,
    ) -> None:
        self.name = name
        self.setting = setting
        self.n = n
        self.branch_count = branch_count
        self._branches_fn = branches_fn
        self._sample_fn = sample_fn
        self.value_grid = value_grid
        self._exact_fast = exact_fast
        self._cache: Optional[list] = None

    def branches(self) -> list:
        """The exact support; raises SizeCapError if too large."""
        cap = _cap("OSPCLOCK_SUPPORT_CAP", 50_000)
        if self.branch_count > cap:
            raise SizeCapError(
                f"{self.name} has {self.branch_count} branches; cap {cap} "
                "(override with OSPCLOCK_SUPPORT_CAP)"
            )
        if self._cache is None:
            self._cache = self._branches_fn()
            total = sum((b.probability for b in self._cache), ZERO)
            assert total == ONE, f"{self.name}: probabilities sum to {total}"
        return self._cache

    def sample_branch(self, rng: CounterRng) -> SupportElement:
        return self._sample_fn(rng)

    def _check_instance(self, instance: Instance) -> None:
        if instance.setting != self.setting or instance.n != self.n:
            raise ValueError(
                f"{self.name} is bound to n={self.n}, {self.setting}; "
                "got an incompatible instance"
            )

    def exact_expected_welfare(self, instance: Instance) -> Fraction:
        """Probability-weighted welfare over the full support, exact."""
        self._check_instance(instance)
        if self._exact_fast is not None:
            fast = self._exact_fast(instance)
            if fast is not None:
                return fast
        total = ZERO
        for branch in self.branches():
            outcome = branch.outcome(instance)
            total += branch.probability * welfare_of(instance, outcome.allocation)
        return total


def sample_run(mech: RandomizedMechanism, instance: Instance, seed: int) -> Outcome:
    """Seeded draw of one branch, played truthfully on the instance."""
    mech._check_instance(instance)
    branch = mech.sample_branch(CounterRng(seed))
    return branch.outcome(instance)


# ---------------------------------------------------------------------------
# clock-auction branches


def _gaa_element(
    label: str,
    probability: Fraction,
    setting: Setting,
    base: tuple,
    potential: tuple,
) -> SupportElement:
    """A clock-auction branch; the grid adapts to instance or domains."""

    def outcome_fn(instance: Instance) -> Outcome:
        domains = [[v] for v in instance.valuations]
        grid = gaa_grid_for_domains(base, potential, setting, domains)
        spec = GaaSpec(setting, base, potential, grid)
        out, _ = run_game(GaaGame(spec), instance.valuations)
        return out

    def game_fn(domains: Sequence[Sequence[Valuation]]) -> Game:
        grid = gaa_grid_for_domains(base, potential, setting, domains)
        return GaaGame(GaaSpec(setting, base, potential, grid))

    return SupportElement(label, probability, outcome_fn, game_fn)


def _single_branch_mechanism(name, setting, n, element) -> RandomizedMechanism:
    return RandomizedMechanism(
        name,
        setting,
        n,
        branch_count=1,
        branches_fn=lambda: [element],
        sample_fn=lambda rng: element,
    )


def grand_bundle_auction(n: int, setting: Setting) -> RandomizedMechanism:
    """Degenerate mechanism: always the grand-bundle ascending auction."""
    if isinstance(setting, MultiUnitSetting):
        base = (0,) * n
        potential = (setting.m,) * n
    else:
        base = (frozenset(),) * n
        potential = (frozenset(setting.items),) * n
    element = _gaa_element("grand-bundle", ONE, setting, base, potential)
    return _single_branch_mechanism("grand-bundle", setting, n, element)


def random_bundles(n: int, m: int) -> RandomizedMechanism:
    """Uniformly random bundle size, then a clock for that bundle.

    Bundle sizes are the powers of two below ``m`` plus ``m`` itself,
    preserving the usual ceil(log2 m) + 1 bucket count when ``m`` is
    not a power of two.  At size L the default feasibility rule lets at
    most floor(m / L) bidders win L units each.

    Sampling draws ``below(#sizes)`` once.
    """
    setting = MultiUnitSetting(m)
    sizes = sorted({2 ** j for j in range(max(0, (m - 1).bit_length()))} | {m})
    prob = Fraction(1, len(sizes))

    def element(size: int) -> SupportElement:
        return _gaa_element(
            f"bundle-size={size}", prob, setting, (0,) * n, (size,) * n
        )

    def branches_fn() -> list:
        return [element(size) for size in sizes]

    def sample_fn(rng: CounterRng) -> SupportElement:
        return element(sizes[rng.below(len(sizes))])

    return RandomizedMechanism(
        "random-bundles", setting, n, len(sizes), branches_fn, sample_fn
    )


def m1_2x2(p: Fraction = Fraction(1, 2)) -> RandomizedMechanism:
    """Two bidders, two units: grand auction or one fixed single award.

    With probability ``p`` the grand-bundle clock runs; otherwise a
    uniformly chosen bidder is handed one unit outright and the two
    compete in a clock where the fixed bidder's upgrade is the second
    unit.  Sampling draws one ``weighted_index`` over the common
    denominator of (p, (1-p)/2, (1-p)/2).
    """
    p = Fraction(p)
    if not 0 <= p <= 1:
        raise ValueError("probability out of range")
    setting = MultiUnitSetting(2)
    half = (ONE - p) / 2

    def elements() -> list:
        out = [_gaa_element("grand-bundle", p, setting, (0, 0), (2, 2))]
        out.append(_gaa_element("fixed-award-0", half, setting, (1, 0), (2, 1)))
        out.append(_gaa_element("fixed-award-1", half, setting, (0, 1), (1, 2)))
        return [b for b in out if b.probability > 0]

    def sample_fn(rng: CounterRng) -> SupportElement:
        branches = elements()
        denom = 1
        for b in branches:
            denom = denom * b.probability.denominator // math.gcd(
                denom, b.probability.denominator
            )
        weights = [int(b.probability * denom) for b in branches]
        return branches[rng.weighted_index(weights)]

    return RandomizedMechanism(
        "m1-2x2", setting, 2, len(elements()), elements, sample_fn
    )


def _fixed_award_elements(items: tuple, probability: Fraction) -> list:
    """The four (bidder, item) fixed-award clock branches for 2 items."""
    setting = CombinatorialSetting(items)
    a, b = items
    out = []
    for bidder, award in ((0, a), (0, b), (1, a), (1, b)):
        other = b if award == a else a
        if bidder == 0:
            base = (frozenset({award}), frozenset())
            potential = (frozenset(items), frozenset({other}))
        else:
            base = (frozenset(), frozenset({award}))
            potential = (frozenset({other}), frozenset(items))
        out.append(
            _gaa_element(
                f"fixed-award-{bidder}-{award}", probability, setting, base, potential
            )
        )
    return out


def m2_2x2(items: tuple = ("a", "b")) -> RandomizedMechanism:
    """Uniform fixed award of one item, clock for the remaining item.

    Four equiprobable branches (bidder x item); the awarded bidder's
    clock upgrade is the second item, the other bidder clocks for the
    free item.  Sampling draws ``below(4)``.
    """
    setting = CombinatorialSetting(tuple(items))

    def elements() -> list:
        return _fixed_award_elements(setting.items, Fraction(1, 4))

    def sample_fn(rng: CounterRng) -> SupportElement:
        return elements()[rng.below(4)]

    return RandomizedMechanism("m2-2x2", setting, 2, 4, elements, sample_fn)


def m3_2x2(p: Fraction = Fraction(1, 3), items: tuple = ("a", "b")) -> RandomizedMechanism:
    """Grand-bundle clock with probability ``p``, else a random fixed award.

    Sampling draws one ``weighted_index`` over the common denominator
    of (p, (1-p)/4 x4).
    """
    p = Fraction(p)
    if not 0 <= p <= 1:
        raise ValueError("probability out of range")
    setting = CombinatorialSetting(tuple(items))
    quarter = (ONE - p) / 4

    def elements() -> list:
        grand = _gaa_element(
            "grand-bundle",
            p,
            setting,
            (frozenset(), frozenset()),
            (frozenset(setting.items), frozenset(setting.items)),
        )
        out = [grand] + _fixed_award_elements(setting.items, quarter)
        return [b for b in out if b.probability > 0]

    def sample_fn(rng: CounterRng) -> SupportElement:
        branches = elements()
        denom = 1
        for b in branches:
            denom = denom * b.probability.denominator // math.gcd(
                denom, b.probability.denominator
            )
        weights = [int(b.probability * denom) for b in branches]
        return branches[rng.weighted_index(weights)]

    return RandomizedMechanism(
        "m3-2x2", setting, 2, len(elements()), elements, sample_fn
    )


DEFAULT_THREE_ITEM_GRID = (ONE, Fraction(2), Fraction(3), Fraction(4), Fraction(5))


def three_item_dm_spec(grid: tuple = DEFAULT_THREE_ITEM_GRID) -> GaaSpec:
    return GaaSpec(MultiUnitSetting(3), (1, 1), (2, 2), tuple(grid))


def three_item_dm(grid: tuple = DEFAULT_THREE_ITEM_GRID):
    """Two bidders, three units: one unit each, clock for the third.

    Deterministic (a single protocol): each bidder starts with one
    guaranteed unit and the clock sells the upgrade to two units; ties
    go to bidder 1 as everywhere else.  The default grid covers
    marginal values 0..4.  Returns (protocol, strategies).
    """
    spec = three_item_dm_spec(grid)
    protocol = build_gaa(spec)
    strategy = game_strategy(GaaGame(spec), protocol)
    return protocol, [strategy, strategy]


def three_item_dm_mechanism() -> RandomizedMechanism:
    setting = MultiUnitSetting(3)
    element = _gaa_element("fixed-pair-clock", ONE, setting, (1, 1), (2, 2))
    return _single_branch_mechanism("three-item-dm", setting, 2, element)


# ---------------------------------------------------------------------------
# sample-and-price for multi-unit bidders (Mechanism 1 shape)


def preferred_quantity(v: MultiUnitValuation, remaining: int, price: Fraction) -> int:
    """Utility-maximizing quantity at a linear per-unit price.

    Ties break to the smaller quantity, so a bidder never buys into
    exactly zero utility.  For decreasing-marginal valuations this
    equals the greedy rule "keep adding units while the marginal beats
    the price".
    """
    best_q = 0
    best_u = ZERO
    for q in range(1, remaining + 1):
        u = v.value(q) - price * q
        if u > best_u:
            best_q, best_u = q, u
    return best_q


@dataclass(frozen=True)
class SaleState:
    pos: int
    reports: tuple
    purchases: tuple
    remaining: int
    price: Optional[Fraction]


@dataclass(frozen=True)
class SaleLeaf:
    purchases: tuple
    price: Fraction


class PartitionSaleGame(Game):
    """Discard-and-learn sale for one fair-coin partition.

    The sampled bidders (ascending index) each report a valuation and
    are excluded from trade; the optimum welfare O of the sample alone
    then prices every unit at O / (10 m), and the remaining bidders
    (ascending) buy their preferred quantities while supply lasts.
    """

    def __init__(
        self,
        sample: Sequence[int],
        n: int,
        m: int,
        domains: Sequence[Sequence[Valuation]],
    ) -> None:
        self.n = n
        self.m = m
        self.setting = MultiUnitSetting(m)
        self.sample = tuple(sorted(sample))
        self.buyers = tuple(i for i in range(n) if i not in set(self.sample))
        self.domains = [list(d) for d in domains]

    def _price_from_reports(self, reports: tuple) -> Fraction:
        vals = tuple(
            self.domains[actor][msg] for actor, msg in zip(self.sample, reports)
        )
        if not vals:
            return ZERO
        sample_opt = opt_value_restricted(Instance(self.setting, vals))
        return sample_opt / (10 * self.m)

    def _actor(self, pos: int) -> int:
        if pos < len(self.sample):
            return self.sample[pos]
        return self.buyers[pos - len(self.sample)]

    def _normalize(self, state):
        while True:
            if state.pos == len(self.sample) + len(self.buyers):
                price = ZERO if state.price is None else state.price
                return SaleLeaf(state.purchases, price)
            if state.pos >= len(self.sample) and state.price is None:
                state = SaleState(
                    state.pos,
                    state.reports,
                    state.purchases,
                    state.remaining,
                    self._price_from_reports(state.reports),
                )
            actor = self._actor(state.pos)
            if state.pos < len(self.sample):
                if len(self.domains[actor]) > 1:
                    return state
                state = self._apply(state, 0)
            else:
                if state.remaining > 0:
                    return state
                state = self._apply(state, 0)

    def _apply(self, state: SaleState, message: int) -> SaleState:
        if state.pos < len(self.sample):
            return SaleState(
                state.pos + 1,
                state.reports + (message,),
                state.purchases,
                state.remaining,
                state.price,
            )
        return SaleState(
            state.pos + 1,
            state.reports,
            state.purchases + (message,),
            state.remaining - message,
            state.price,
        )

    def root_state(self):
        return self._normalize(SaleState(0, (), (), self.m, None))

    def is_leaf(self, state) -> bool:
        return isinstance(state, SaleLeaf)

    def outcome(self, state) -> Outcome:
        bundles = [0] * self.n
        payments = [ZERO] * self.n
        for buyer, q in zip(self.buyers, state.purchases):
            bundles[buyer] = q
            payments[buyer] = state.price * q
        return Outcome(Allocation(tuple(bundles)), tuple(payments))

    def bidder(self, state) -> int:
        return self._actor(state.pos)

    def messages(self, state) -> tuple:
        if state.pos < len(self.sample):
            actor = self._actor(state.pos)
            return tuple(f"report:{k}" for k in range(len(self.domains[actor])))
        return tuple(f"take:{q}" for q in range(state.remaining + 1))

    def child(self, state, message: int):
        return self._normalize(self._apply(state, message))

    def truthful_message(self, state, valuation: Valuation) -> int:
        if state.pos < len(self.sample):
            actor = self._actor(state.pos)
            try:
                return self.domains[actor].index(valuation)
            except ValueError:
                raise ValueError(
                    f"bidder {actor}'s valuation is outside the declared domain"
                ) from None
        return preferred_quantity(valuation, state.remaining, state.price)


def _partition_sale_mechanism(name: str, n: int, m: int) -> RandomizedMechanism:
    setting = MultiUnitSetting(m)
    half = Fraction(1, 2)
    part_prob = half * Fraction(1, 2 ** n)

    def sale_element(sample: tuple) -> SupportElement:
        label = "sample=" + (",".join(map(str, sample)) if sample else "-")

        def outcome_fn(instance: Instance) -> Outcome:
            domains = [[v] for v in instance.valuations]
            game = PartitionSaleGame(sample, n, m, domains)
            out, _ = run_game(game, instance.valuations)
            return out

        def game_fn(domains) -> Game:
            return PartitionSaleGame(sample, n, m, domains)

        return SupportElement(label, part_prob, outcome_fn, game_fn)

    def grand_element() -> SupportElement:
        return _gaa_element("grand-bundle", half, setting, (0,) * n, (m,) * n)

    def branches_fn() -> list:
        out = [grand_element()]
        for mask in range(2 ** n):
            sample = tuple(i for i in range(n) if mask >> i & 1)
            out.append(sale_element(sample))
        return out

    def sample_fn(rng: CounterRng) -> SupportElement:
        # one coin for the arm, then one coin per bidder (ascending);
        # 0 sends the bidder into the discarded sample
        if rng.below(2) == 0:
            return grand_element()
        sample = tuple(i for i in range(n) if rng.below(2) == 0)
        return sale_element(sample)

    return RandomizedMechanism(name, setting, n, 1 + 2 ** n, branches_fn, sample_fn)


def mech1_single_minded(n: int, m: int) -> RandomizedMechanism:
    """Half grand-bundle clock, half discard-and-learn unit pricing.

    Designed for single-minded bidders; the canonical buyer behavior
    (preferred quantity, ties down) is well-defined for any monotone
    multi-unit valuation.
    """
    return _partition_sale_mechanism("mech1-single-minded", n, m)


def mech1_decreasing_marginals(n: int, m: int) -> RandomizedMechanism:
    """The same mixture, stated for decreasing-marginal bidders."""
    return _partition_sale_mechanism("mech1-decreasing-marginals", n, m)


# ---------------------------------------------------------------------------
# sample-and-max-price for combinatorial bidders (Mechanism 2 shape)


@dataclass(frozen=True)
class PriceState:
    pos: int
    reports: tuple
    taken: tuple
    unsold: tuple
    prices: Optional[tuple]
    priority: Optional[tuple]


@dataclass(frozen=True)
class PriceLeaf:
    taken: tuple
    unsold: tuple
    prices: tuple


class MaxPricePartitionGame(Game):
    """Per-item prices set to the sampled bidders' maxima.

    Sampled bidders (ascending) report and are excluded; item j is
    priced at the highest sampled value, remembering the smallest
    sampled index attaining it.  The remaining bidders (ascending)
    then shop: in ``bundle`` mode each takes every unsold item whose
    price they beat (or meet, when their index precedes the
    price-setter's); in ``single`` mode each takes at most one item by
    the same test, preferring higher surplus then earlier items.
    """

    def __init__(
        self,
        sample: Sequence[int],
        items: tuple,
        n: int,
        domains: Sequence[Sequence[Valuation]],
        mode: str = "bundle",
    ) -> None:
        if mode not in ("bundle", "single"):
            raise ValueError(f"unknown mode {mode!r}")
        self.n = n
        self.items = tuple(items)
        self.setting = CombinatorialSetting(self.items)
        self.sample = tuple(sorted(sample))
        self.buyers = tuple(i for i in range(n) if i not in set(self.sample))
        self.domains = [list(d) for d in domains]
        self.mode = mode

    def _pricing(self, reports: tuple) -> tuple:
        vals = [
            self.domains[actor][msg] for actor, msg in zip(self.sample, reports)
        ]
        prices = []
        priority = []
        for j in self.items:
            if not vals:
                prices.append(ZERO)
                priority.append(-1)
                continue
            per = [v.value({j}) for v in vals]
            top = max(per)
            prices.append(top)
            priority.append(self.sample[per.index(top)])
        return tuple(prices), tuple(priority)

    def _actor(self, pos: int) -> int:
        if pos < len(self.sample):
            return self.sample[pos]
        return self.buyers[pos - len(self.sample)]

    def _menu(self, state: PriceState) -> list:
        if self.mode == "bundle":
            return all_bundles(state.unsold)
        return [frozenset()] + [frozenset({j}) for j in state.unsold]

    def _apply(self, state: PriceState, message: int):
        if state.pos < len(self.sample):
            return PriceState(
                state.pos + 1,
                state.reports + (message,),
                state.taken,
                state.unsold,
                state.prices,
                state.priority,
            )
        bundle = self._menu(state)[message]
        return PriceState(
            state.pos + 1,
            state.reports,
            state.taken + (bundle,),
            tuple(j for j in state.unsold if j not in bundle),
            state.prices,
            state.priority,
        )

    def _normalize(self, state):
        while True:
            if state.pos == len(self.sample) + len(self.buyers):
                return PriceLeaf(state.taken, state.unsold, state.prices or ())
            if state.pos >= len(self.sample) and state.prices is None:
                prices, priority = self._pricing(state.reports)
                state = PriceState(
                    state.pos, state.reports, state.taken, state.unsold,
                    prices, priority,
                )
            actor = self._actor(state.pos)
            if state.pos < len(self.sample):
                if len(self.domains[actor]) > 1:
                    return state
                state = self._apply(state, 0)
            else:
                if state.unsold:
                    return state
                state = self._apply(state, 0)

    def root_state(self):
        return self._normalize(PriceState(0, (), (), self.items, None, None))

    def is_leaf(self, state) -> bool:
        return isinstance(state, PriceLeaf)

    def outcome(self, state) -> Outcome:
        idx = {j: k for k, j in enumerate(self.items)}
        bundles = [frozenset()] * self.n
        payments = [ZERO] * self.n
        for buyer, bundle in zip(self.buyers, state.taken):
            bundles[buyer] = bundle
            payments[buyer] = sum((state.prices[idx[j]] for j in bundle), ZERO)
        return Outcome(Allocation(tuple(bundles)), tuple(payments))

    def bidder(self, state) -> int:
        return self._actor(state.pos)

    def messages(self, state) -> tuple:
        if state.pos < len(self.sample):
            actor = self._actor(state.pos)
            return tuple(f"report:{k}" for k in range(len(self.domains[actor])))
        labels = []
        for bundle in self._menu(state):
            labels.append("+".join(sorted(bundle)) if bundle else "none")
        return tuple(labels)

    def child(self, state, message: int):
        return self._normalize(self._apply(state, message))

    def _wants(self, buyer: int, valuation: Valuation, item: str, state) -> bool:
        k = self.items.index(item)
        value = valuation.value({item})
        price = state.prices[k]
        return value > price or (value == price and buyer < state.priority[k])

    def truthful_message(self, state, valuation: Valuation) -> int:
        actor = self._actor(state.pos)
        if state.pos < len(self.sample):
            try:
                return self.domains[actor].index(valuation)
            except ValueError:
                raise ValueError(
                    f"bidder {actor}'s valuation is outside the declared domain"
                ) from None
        menu = self._menu(state)
        if self.mode == "bundle":
            take = frozenset(
                j for j in state.unsold if self._wants(actor, valuation, j, state)
            )
            return menu.index(take)
        best_item = None
        best_u = None
        for j in state.unsold:
            u = valuation.value({j}) - state.prices[self.items.index(j)]
            if best_u is None or u > best_u:
                best_item, best_u = j, u
        if best_u is not None and best_u >= 0 and self._wants(
            actor, valuation, best_item, state
        ):
            return menu.index(frozenset({best_item}))
        return menu.index(frozenset())


def _max_price_mechanism(
    name: str, n: int, items: tuple, mode: str, exact_fast=None
) -> RandomizedMechanism:
    setting = CombinatorialSetting(tuple(items))
    prob = Fraction(1, 2 ** n)

    def element(sample: tuple) -> SupportElement:
        label = "sample=" + (",".join(map(str, sample)) if sample else "-")

        def outcome_fn(instance: Instance) -> Outcome:
            domains = [[v] for v in instance.valuations]
            game = MaxPricePartitionGame(sample, setting.items, n, domains, mode)
            out, _ = run_game(game, instance.valuations)
            return out

        def game_fn(domains) -> Game:
            return MaxPricePartitionGame(sample, setting.items, n, domains, mode)

        return SupportElement(label, prob, outcome_fn, game_fn)

    def branches_fn() -> list:
        return [
            element(tuple(i for i in range(n) if mask >> i & 1))
            for mask in range(2 ** n)
        ]

    def sample_fn(rng: CounterRng) -> SupportElement:
        # one coin per bidder, ascending; 0 joins the sample
        return element(tuple(i for i in range(n) if rng.below(2) == 0))

    return RandomizedMechanism(
        name, setting, n, 2 ** n, branches_fn, sample_fn, exact_fast=exact_fast
    )


def mech2_additive(n: int, items: Sequence[str]) -> RandomizedMechanism:
    """Fair-coin sample, max-sampled-value item prices, bundle shopping.

    The intended bidders are additive, for whom per-item shopping is
    exactly preferred-bundle shopping.
    """
    return _max_price_mechanism("mech2-additive", n, tuple(items), "bundle")


def naive_max_price_ud(n: int, items: Sequence[str]) -> RandomizedMechanism:
    """The same sampled max pricing applied to unit-demand bidders.

    Kept as a baseline to show why unit-demand needs opportunity-cost
    prices: on crowded instances the max-sampled price lets only a
    vanishing fraction of bidders buy.
    """
    return _max_price_mechanism(
        "naive-max-price",
        n,
        tuple(items),
        "single",
        exact_fast=_naive_constant_rows_exact,
    )


def _constant_integer_rows(instance: Instance) -> Optional[list]:
    """Per-bidder value if every bidder prices all items equally (ints)."""
    rows = []
    for v in instance.valuations:
        if not hasattr(v, "per_item"):
            return None
        values = [v.per_item[j] for j in instance.items]
        if any(x != values[0] for x in values[1:]):
            return None
        if values[0].denominator != 1:
            return None
        rows.append(values[0].numerator)
    return rows


def _naive_constant_rows_exact(instance: Instance) -> Optional[Fraction]:
    """Closed-form support expectation for constant-row instances.

    Enumerates all 2^n partitions with integer arithmetic; each buyer
    takes one (interchangeable) item while supply lasts.
    """
    rows = _constant_integer_rows(instance)
    if rows is None:
        return None
    n, m = instance.n, instance.m
    total = 0
    for mask in range(1 << n):
        price = 0
        setter = -1
        for i in range(n):
            if mask >> i & 1 and rows[i] > price:
                price, setter = rows[i], i
        left = m
        welfare = 0
        for i in range(n):
            if mask >> i & 1 or left == 0:
                continue
            if rows[i] > price or (rows[i] == price and i < setter):
                welfare += rows[i]
                left -= 1
        total += welfare
    return Fraction(total, 1 << n)


# ---------------------------------------------------------------------------
# sampled serial pricing for unit-demand bidders (Mechanism 3 shape)


def arrivals_discarded(n: int) -> int:
    """How many of the first arrivals are observed without trading."""
    return math.floor(n / math.e)


@dataclass(frozen=True)
class ArrivalState:
    pos: int
    reporting: bool
    reports: tuple  # (bidder, message) in processing order
    taken: tuple  # bundles, aligned with served positions
    payments: tuple  # aligned with taken
    unsold: tuple


@dataclass(frozen=True)
class ArrivalLeaf:
    taken: tuple
    payments: tuple


class ArrivalPricingGame(Game):
    """Process bidders in a fixed arrival order with learned prices.

    The first floor(n/e) arrivals only report.  Each later arrival
    faces per-item prices equal to the welfare the observed bidders
    lose if that item disappears — OPT(S, M) - OPT(S, M minus the
    item) — takes an available item of positive surplus (highest
    surplus, then earliest item), settles exact zero surplus by the
    canonical optimum (take the earliest zero-surplus item only if the
    canonical optimum over S plus herself assigns it to her), then
    reports and joins S.  The last arrival's report is skipped: nobody
    is left to price against it.
    """

    def __init__(
        self,
        order: Sequence[int],
        items: tuple,
        domains: Sequence[Sequence[Valuation]],
    ) -> None:
        self.order = tuple(order)
        self.n = len(self.order)
        self.items = tuple(items)
        self.setting = CombinatorialSetting(self.items)
        self.domains = [list(d) for d in domains]
        self.cut = arrivals_discarded(self.n)

    # -- bookkeeping --------------------------------------------------------

    def _reported_valuations(self, reports: tuple) -> list:
        return [(b, self.domains[b][msg]) for b, msg in reports]

    def _price_vector(self, reports: tuple, unsold: tuple) -> dict:
        reported = self._reported_valuations(reports)
        if not reported or not unsold:
            return {j: ZERO for j in unsold}
        inst = Instance(self.setting, tuple(v for _, v in reported))
        base = opt_value_restricted(inst, items=unsold)
        prices = {}
        for j in unsold:
            rest = tuple(x for x in unsold if x != j)
            prices[j] = base - opt_value_restricted(inst, items=rest)
        return prices

    def _canonical_assigns(
        self, reports: tuple, unsold: tuple, bidder: int, valuation, item: str
    ) -> bool:
        """Does the canonical optimum give ``item`` to ``bidder``?

        The canonical instance contains the observed bidders plus this
        one, ordered by original index (the global tie-break order).
        """
        entries = self._reported_valuations(reports) + [(bidder, valuation)]
        entries.sort(key=lambda e: e[0])
        inst = Instance(self.setting, tuple(v for _, v in entries))
        position = [b for b, _ in entries].index(bidder)
        result = opt_restricted(inst, items=unsold)
        return item in result.witness.bundles[position]

    def _serving(self, pos: int) -> bool:
        return pos >= self.cut

    def _menu(self, state: ArrivalState) -> list:
        return [frozenset()] + [frozenset({j}) for j in state.unsold]

    def _apply(self, state: ArrivalState, message: int):
        bidder = self.order[state.pos]
        if state.reporting:
            return ArrivalState(
                state.pos + 1,
                not self._serving(state.pos + 1),
                state.reports + ((bidder, message),),
                state.taken,
                state.payments,
                state.unsold,
            )
        bundle = self._menu(state)[message]
        if bundle:
            prices = self._price_vector(state.reports, state.unsold)
            paid = sum((prices[j] for j in bundle), ZERO)
        else:
            paid = ZERO
        return ArrivalState(
            state.pos,
            True,
            state.reports,
            state.taken + (bundle,),
            state.payments + (paid,),
            tuple(j for j in state.unsold if j not in bundle),
        )

    def _normalize(self, state):
        while True:
            if state.pos == self.n:
                return ArrivalLeaf(state.taken, state.payments)
            bidder = self.order[state.pos]
            if state.reporting:
                if state.pos == self.n - 1:
                    # the final report is inconsequential: skip it
                    state = ArrivalState(
                        self.n, True, state.reports, state.taken,
                        state.payments, state.unsold,
                    )
                    continue
                if len(self.domains[bidder]) > 1:
                    return state
                state = self._apply(state, 0)
            else:
                if state.unsold:
                    return state
                state = self._apply(state, 0)

    def root_state(self):
        return self._normalize(
            ArrivalState(0, not self._serving(0), (), (), (), self.items)
        )

    def is_leaf(self, state) -> bool:
        return isinstance(state, ArrivalLeaf)

    def outcome(self, state) -> Outcome:
        bundles = [frozenset()] * self.n
        payments = [ZERO] * self.n
        served = 0
        for pos in range(self.n):
            if self._serving(pos):
                bidder = self.order[pos]
                bundles[bidder] = state.taken[served]
                payments[bidder] = state.payments[served]
                served += 1
        return Outcome(Allocation(tuple(bundles)), tuple(payments))

    def bidder(self, state) -> int:
        return self.order[state.pos]

    def messages(self, state) -> tuple:
        bidder = self.order[state.pos]
        if state.reporting:
            return tuple(f"report:{k}" for k in range(len(self.domains[bidder])))
        return ("none",) + state.unsold

    def child(self, state, message: int):
        return self._normalize(self._apply(state, message))

    def truthful_message(self, state, valuation: Valuation) -> int:
        bidder = self.order[state.pos]
        if state.reporting:
            try:
                return self.domains[bidder].index(valuation)
            except ValueError:
                raise ValueError(
                    f"bidder {bidder}'s valuation is outside the declared domain"
                ) from None
        prices = self._price_vector(state.reports, state.unsold)
        menu = self._menu(state)
        best_item = None
        best_u = None
        for j in state.unsold:
            u = valuation.value({j}) - prices[j]
            if best_u is None or u > best_u:
                best_item, best_u = j, u
        if best_u is None or best_u < 0:
            return 0
        if best_u > 0:
            return menu.index(frozenset({best_item}))
        candidate = next(
            j for j in state.unsold if valuation.value({j}) - prices[j] == 0
        )
        if self._canonical_assigns(
            state.reports, state.unsold, bidder, valuation, candidate
        ):
            return menu.index(frozenset({candidate}))
        return 0


def _mech3_fast_outcome(instance: Instance, order: tuple) -> Optional[Outcome]:
    """Constant-row shortcut for one arrival order, integer arithmetic.

    When every bidder values all items equally, prices are uniform
    across items (top-t minus top-(t-1) sums of observed values, t
    capped at availability), so a buying arrival just takes the
    earliest unsold item.
    """
    rows = _constant_integer_rows(instance)
    if rows is None:
        return None
    n = instance.n
    cut = arrivals_discarded(n)
    observed: list = []  # ascending; top values live at the tail

    bundles = [frozenset()] * n
    payments = [ZERO] * n
    unsold = list(instance.items)
    for pos, bidder in enumerate(order):
        value = rows[bidder]
        if pos >= cut and unsold:
            a = len(unsold)
            t = min(len(observed), a)
            t2 = min(len(observed), a - 1)
            price = sum(observed[len(observed) - t :]) - sum(
                observed[len(observed) - t2 :]
            )
            surplus = value - price
            take = False
            if surplus > 0:
                take = True
            elif surplus == 0:
                # canonical optimum over observed + this bidder: the
                # matched set is the top-a of (value desc, index asc);
                # she gets the earliest unsold item exactly when she
                # is the smallest-index matched bidder
                pool = sorted(
                    [(rows[b], b) for b in order[:pos]] + [(value, bidder)],
                    key=lambda e: (-e[0], e[1]),
                )
                matched = min(b for _, b in pool[:a])
                take = matched == bidder
            if take:
                item = unsold.pop(0)
                bundles[bidder] = frozenset({item})
                payments[bidder] = Fraction(price)
        if pos < n - 1:
            bisect.insort(observed, value)
    return Outcome(Allocation(tuple(bundles)), tuple(payments))


def mech3_unit_demand(n: int, items: Sequence[str]) -> RandomizedMechanism:
    """Uniform arrival order, observe floor(n/e), then price-and-serve.

    Sampling draws one uniform permutation (descending Fisher-Yates).
    The exact support has n! branches and is only enumerable for small
    n; Monte Carlo covers the rest.
    """
    setting = CombinatorialSetting(tuple(items))
    count = math.factorial(n)
    prob = Fraction(1, count)

    def element(order: tuple) -> SupportElement:
        label = "arrival-order=" + ",".join(map(str, order))

        def outcome_fn(instance: Instance) -> Outcome:
            fast = _mech3_fast_outcome(instance, order)
            if fast is not None:
                return fast
            domains = [[v] for v in instance.valuations]
            game = ArrivalPricingGame(order, setting.items, domains)
            out, _ = run_game(game, instance.valuations)
            return out

        def game_fn(domains) -> Game:
            return ArrivalPricingGame(order, setting.items, domains)

        return SupportElement(label, prob, outcome_fn, game_fn)

    def branches_fn() -> list:
        return [element(order) for order in permutations(range(n))]

    def sample_fn(rng: CounterRng) -> SupportElement:
        return element(tuple(rng.shuffled(range(n))))

    return RandomizedMechanism(
        "mech3-unit-demand", setting, n, count, branches_fn, sample_fn
    )


# ---------------------------------------------------------------------------
# registry


def mechanism_for_instance(name: str, instance: Instance, **params) -> RandomizedMechanism:
    """Build the named mechanism shaped to the given instance."""
    n = instance.n
    multi = instance.multiunit
    if name == "grand-bundle":
        return grand_bundle_auction(n, instance.setting)
    if name == "random-bundles":
        if not multi:
            raise ValueError("random-bundles needs a multi-unit instance")
        return random_bundles(n, instance.m)
    if name in ("mech1-sm", "mech1-single-minded"):
        if not multi:
            raise ValueError("mech1 needs a multi-unit instance")
        return mech1_single_minded(n, instance.m)
    if name in ("mech1-dm", "mech1-decreasing-marginals"):
        if not multi:
            raise ValueError("mech1 needs a multi-unit instance")
        return mech1_decreasing_marginals(n, instance.m)
    if name == "mech2-additive":
        if multi:
            raise ValueError("mech2 needs a combinatorial instance")
        return mech2_additive(n, instance.items)
    if name == "mech3-unit-demand":
        if multi:
            raise ValueError("mech3 needs a combinatorial instance")
        return mech3_unit_demand(n, instance.items)
    if name == "naive-max-price":
        if multi:
            raise ValueError("naive-max-price needs a combinatorial instance")
        return naive_max_price_ud(n, instance.items)
    if name == "m1-2x2":
        if not multi or instance.m != 2 or n != 2:
            raise ValueError("m1-2x2 is bound to 2 bidders and 2 units")
        return m1_2x2(params.get("p", Fraction(1, 2)))
    if name == "m2-2x2":
        if multi or n != 2 or len(instance.items) != 2:
            raise ValueError("m2-2x2 is bound to 2 bidders and 2 items")
        return m2_2x2(instance.items)
    if name == "m3-2x2":
        if multi or n != 2 or len(instance.items) != 2:
            raise ValueError("m3-2x2 is bound to 2 bidders and 2 items")
        return m3_2x2(params.get("p", Fraction(1, 3)), instance.items)
    if name == "three-item-dm":
        if not multi or instance.m != 3 or n != 2:
            raise ValueError("three-item-dm is bound to 2 bidders and 3 units")
        return three_item_dm_mechanism()
    raise ValueError(f"unknown mechanism {name!r}")


MECHANISM_NAMES = (
    "grand-bundle",
    "random-bundles",
    "mech1-single-minded",
    "mech1-decreasing-marginals",
    "mech2-additive",
    "mech3-unit-demand",
    "naive-max-price",
    "m1-2x2",
    "m2-2x2",
    "m3-2x2",
    "three-item-dm",
)
