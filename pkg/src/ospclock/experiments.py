"""Distributional evaluation and the hardness/benchmark fixtures.

Approximation guarantees here are always stated against the exact
optimum: either profile-by-profile over a finite distribution (with
the expectation taken over per-profile ratios), by full enumeration of
a mechanism's coin space, or by seeded Monte Carlo with a plain
standard-error band when enumeration is out of reach.

The module also hosts the adversarial families used to show the
guarantees are tight: the single-minded two-bidder distribution on
which no grand-bundle-style clock beats 5/6, its additive and
unit-demand two-item cousins, and the crowded unit-demand market where
max-sampled-price selling collapses but opportunity-cost pricing keeps
a 1/e share.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence, Union

from .mechanisms import RandomizedMechanism, SupportElement
from .protocols import Protocol, behavior_from_strategy, play
from .rng import CounterRng
from .valuations import (
    AdditiveValuation,
    CombinatorialSetting,
    Instance,
    MultiUnitSetting,
    Setting,
    UnitDemandValuation,
    Valuation,
    as_single_minded,
    make_single_minded,
)
from .welfare import is_critical, opt, opt_value_restricted, welfare_of

ZERO = Fraction(0)
ONE = Fraction(1)


# ---------------------------------------------------------------------------
# profile distributions and ratio reports


@dataclass(frozen=True)
class ProfileEntry:
    label: str
    probability: Fraction
    valuations: tuple


@dataclass(frozen=True)
class ProfileDistribution:
    """A finite distribution over valuation profiles of one setting."""

    setting: Setting
    entries: tuple

    def __post_init__(self) -> None:
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        if not entries:
            raise ValueError("distribution needs at least one profile")
        total = sum((e.probability for e in entries), ZERO)
        if total != ONE:
            raise ValueError(f"profile probabilities sum to {total}, not 1")
        n = len(entries[0].valuations)
        for e in entries:
            if len(e.valuations) != n:
                raise ValueError("profiles disagree on the number of bidders")
            Instance(self.setting, tuple(e.valuations))  # validates shapes

    @property
    def n(self) -> int:
        return len(self.entries[0].valuations)

    def instance(self, label: str) -> Instance:
        for e in self.entries:
            if e.label == label:
                return Instance(self.setting, tuple(e.valuations))
        raise KeyError(label)


@dataclass(frozen=True)
class ProfileRow:
    label: str
    probability: Fraction
    welfare: Fraction
    opt: Fraction
    ratio: Fraction


@dataclass(frozen=True)
class RatioReport:
    """Welfare summary; exact unless ``stderr`` is set.

    ``ratio`` is the headline number: the probability-weighted mean of
    per-profile ratios for distributional reports, welfare/OPT for a
    single instance.  ``trials`` doubles as the number of instances
    inspected for search reports.
    """

    expected_welfare: Fraction
    opt: Fraction
    ratio: Fraction
    stderr: Optional[float] = None
    trials: Optional[int] = None
    breakdown: tuple = field(default_factory=tuple)

    @property
    def exact(self) -> bool:
        return self.stderr is None

    @property
    def ci(self) -> Optional[float]:
        """Half-width of the 3-sigma band around ``ratio``."""
        return None if self.stderr is None else 3 * self.stderr


Evaluable = Union[RandomizedMechanism, SupportElement, tuple]


def _expected_welfare(subject: Evaluable, instance: Instance) -> Fraction:
    if isinstance(subject, RandomizedMechanism):
        return subject.exact_expected_welfare(instance)
    if isinstance(subject, SupportElement):
        return welfare_of(instance, subject.outcome(instance).allocation)
    protocol, strategies = subject
    behaviors = [
        behavior_from_strategy(protocol, i, strategies[i], v)
        for i, v in enumerate(instance.valuations)
    ]
    outcome, _ = play(protocol, behaviors)
    return welfare_of(instance, outcome.allocation)


def eval_on_distribution(subject: Evaluable, dist: ProfileDistribution) -> RatioReport:
    """Exact expected approximation ratio over a profile distribution.

    Accepts a randomized mechanism, one support branch, or a
    deterministic (protocol, strategies) pair.  Every profile must
    have positive optimal welfare.
    """
    rows = []
    for entry in dist.entries:
        instance = Instance(dist.setting, tuple(entry.valuations))
        best = opt(instance).value
        if best == 0:
            raise ValueError(f"profile {entry.label!r} has zero optimal welfare")
        welfare = _expected_welfare(subject, instance)
        rows.append(
            ProfileRow(entry.label, entry.probability, welfare, best, welfare / best)
        )
    return RatioReport(
        expected_welfare=sum((r.probability * r.welfare for r in rows), ZERO),
        opt=sum((r.probability * r.opt for r in rows), ZERO),
        ratio=sum((r.probability * r.ratio for r in rows), ZERO),
        breakdown=tuple(rows),
    )


def mc_ratio(
    mech: RandomizedMechanism, instance: Instance, trials: int, seed: int
) -> RatioReport:
    """Monte Carlo estimate of welfare/OPT from seeded branch draws.

    All draws come from one counter-based stream, so the estimate is a
    pure function of (mechanism, instance, trials, seed).
    """
    if trials <= 0:
        raise ValueError("trials must be positive")
    best = opt(instance).value
    if best == 0:
        raise ValueError("instance has zero optimal welfare")
    rng = CounterRng(seed)
    total = ZERO
    total_sq = 0.0
    for _ in range(trials):
        branch = mech.sample_branch(rng)
        outcome = branch.outcome(instance)
        ratio = welfare_of(instance, outcome.allocation) / best
        total += ratio
        total_sq += float(ratio) * float(ratio)
    mean = total / trials
    variance = max(total_sq / trials - float(mean) ** 2, 0.0)
    stderr = math.sqrt(variance / trials)
    return RatioReport(
        expected_welfare=mean * best,
        opt=best,
        ratio=mean,
        stderr=stderr,
        trials=trials,
    )


# ---------------------------------------------------------------------------
# fair-coin sampling behavior


@dataclass(frozen=True)
class SamplingReport:
    """How often a fair-coin split keeps both halves valuable."""

    probability: Union[Fraction, float]
    exact: bool
    trials: Optional[int]
    opt: Fraction
    ratio_threshold: Fraction


def _unit_step_values(instance: Instance) -> Optional[list]:
    """Per-bidder scalar when everyone wants a single unit, else None."""
    if not instance.multiunit:
        return None
    out = []
    for v in instance.valuations:
        sm = as_single_minded(v)
        if sm is None or (sm.d != 1 and sm.x != 0):
            return None
        out.append(sm.x)
    return out


def sampling_lemma_experiment(
    instance: Instance,
    trials: int,
    seed: int,
    critical_threshold: Fraction = Fraction(1, 100),
    ratio_threshold: Fraction = Fraction(1, 5),
) -> SamplingReport:
    """Probability that both halves of a random split carry OPT/5.

    Splits every bidder by a fair coin into (S, U) and measures
    P[OPT(S) >= OPT * t and OPT(U) >= OPT * t] for t = 1/5.  Exact by
    enumerating all 2^n partitions when n <= 12, Monte Carlo
    otherwise.  Refuses instances where some bidder is critical (grand
    bundle worth a ``critical_threshold`` share of OPT): the guarantee
    simply fails there, a lone pivotal bidder lands on one side only.

    Markets where every bidder wants just one unit get a closed-form
    evaluation (top-m sums along one precomputed value order), which
    keeps hundreds of bidders comfortable.
    """
    n = instance.n
    steps = _unit_step_values(instance)
    if steps is not None:
        m = instance.m
        by_value = sorted(range(n), key=lambda i: -steps[i])

        def restricted_opt(member) -> tuple:
            got_in = got_out = 0
            top_in = top_out = ZERO
            for i in by_value:
                if got_in == m and got_out == m:
                    break
                if member(i):
                    if got_in < m:
                        top_in += steps[i]
                        got_in += 1
                elif got_out < m:
                    top_out += steps[i]
                    got_out += 1
            return top_in, top_out

        best, _ = restricted_opt(lambda i: True)
        for i, x in enumerate(steps):
            if x >= critical_threshold * best:
                raise ValueError(
                    f"bidder {i} is critical at threshold {critical_threshold}; "
                    "the split guarantee does not apply"
                )
        bar = best * ratio_threshold

        def joint(mask: int) -> bool:
            top_s, top_u = restricted_opt(lambda i: mask >> i & 1)
            return top_s >= bar and top_u >= bar

    else:
        for i in range(n):
            if is_critical(instance, i, critical_threshold):
                raise ValueError(
                    f"bidder {i} is critical at threshold {critical_threshold}; "
                    "the split guarantee does not apply"
                )
        best = opt(instance).value
        bar = best * ratio_threshold

        def joint(mask: int) -> bool:
            inside = [i for i in range(n) if mask >> i & 1]
            outside = [i for i in range(n) if not mask >> i & 1]
            return (
                opt_value_restricted(instance, bidders=inside) >= bar
                and opt_value_restricted(instance, bidders=outside) >= bar
            )

    if n <= 12:
        hits = sum(1 for mask in range(1 << n) if joint(mask))
        return SamplingReport(
            Fraction(hits, 1 << n), True, None, best, ratio_threshold
        )
    if trials <= 0:
        raise ValueError("trials must be positive for Monte Carlo")
    rng = CounterRng(seed)
    hits = 0
    for _ in range(trials):
        mask = 0
        for i in range(n):
            if rng.below(2) == 0:  # 0 puts the bidder into S
                mask |= 1 << i
        if joint(mask):
            hits += 1
    return SamplingReport(hits / trials, False, trials, best, ratio_threshold)


# ---------------------------------------------------------------------------
# hard distributions


def _check_k(k: int) -> int:
    k = int(k)
    if k < 2:
        raise ValueError("k must be at least 2")
    return k


def hard_dist_mua_sm(k: int, m: int = 2) -> ProfileDistribution:
    """Two single-minded bidders that punish grand-bundle selling.

    Mixes a symmetric low-value profile (where splitting the supply
    doubles welfare) with four lopsided profiles (where the grand
    bundle is optimal).  Any mechanism committed to selling everything
    as one lot loses half the value on the symmetric profile, capping
    its expected ratio at 5/6 — and the profile weights make 5/6 the
    exact ceiling for every k >= 2.
    """
    k = _check_k(k)
    if m < 2:
        raise ValueError("needs at least two units")
    unit_small = make_single_minded(1, 1, m)
    unit_large = make_single_minded(k * k + 1, 1, m)
    grand_small = make_single_minded(k * k, m, m)
    grand_large = make_single_minded(k ** 4, m, m)
    entries = (
        ProfileEntry("profile-1", Fraction(1, 3), (unit_small, unit_small)),
        ProfileEntry("profile-2", Fraction(1, 6), (grand_small, unit_small)),
        ProfileEntry("profile-3", Fraction(1, 6), (unit_large, grand_large)),
        ProfileEntry("profile-4", Fraction(1, 6), (unit_small, grand_small)),
        ProfileEntry("profile-5", Fraction(1, 6), (grand_large, unit_large)),
    )
    return ProfileDistribution(MultiUnitSetting(m), entries)


CROSS_ITEMS = ("a", "b")


def _single_item(kind: str, item: str, value) -> Valuation:
    table = {j: Fraction(value) if j == item else ZERO for j in CROSS_ITEMS}
    cls = AdditiveValuation if kind == "additive" else UnitDemandValuation
    return cls(CROSS_ITEMS, table)


def cross_valuation_sets(kind: str, k: int) -> tuple[dict, dict]:
    """The seven-valuation menus behind the two-item hard distributions.

    Bidder 0 leans on item a, bidder 1 on item b, with magnitudes 1,
    k, k^2, k^4 and one two-item valuation apiece; the menus are
    mirror images.
    """
    k = _check_k(k)
    if kind not in ("additive", "unit_demand"):
        raise ValueError(f"unknown kind {kind!r}")
    cls = AdditiveValuation if kind == "additive" else UnitDemandValuation
    menu0 = {
        "a-one": _single_item(kind, "a", 1),
        "a-mid": _single_item(kind, "a", k * k),
        "a-large": _single_item(kind, "a", k ** 4),
        "b-small": _single_item(kind, "b", k),
        "b-mid": _single_item(kind, "b", k * k),
        "b-large": _single_item(kind, "b", k ** 4),
        "both": cls(CROSS_ITEMS, {"a": Fraction(2 * k + 3), "b": Fraction(2 * k + 1)}),
    }
    menu1 = {
        "b-one": _single_item(kind, "b", 1),
        "b-mid": _single_item(kind, "b", k * k),
        "b-large": _single_item(kind, "b", k ** 4),
        "a-small": _single_item(kind, "a", k),
        "a-mid": _single_item(kind, "a", k * k),
        "a-large": _single_item(kind, "a", k ** 4),
        "both": cls(CROSS_ITEMS, {"a": Fraction(2 * k + 1), "b": Fraction(2 * k + 3)}),
    }
    return menu0, menu1


def _hard_dist_cross(kind: str, k: int) -> ProfileDistribution:
    menu0, menu1 = cross_valuation_sets(kind, k)
    entries = (
        ProfileEntry("profile-1", Fraction(1, 4), (menu0["a-one"], menu1["b-one"])),
        ProfileEntry("profile-2", Fraction(1, 8), (menu0["a-mid"], menu1["a-large"])),
        ProfileEntry("profile-3", Fraction(1, 8), (menu0["b-large"], menu1["b-mid"])),
        ProfileEntry("profile-4", Fraction(1, 8), (menu0["b-mid"], menu1["b-large"])),
        ProfileEntry("profile-5", Fraction(1, 8), (menu0["a-large"], menu1["a-mid"])),
        ProfileEntry("profile-6", Fraction(1, 8), (menu0["b-small"], menu1["b-one"])),
        ProfileEntry("profile-7", Fraction(1, 8), (menu0["a-one"], menu1["a-small"])),
    )
    return ProfileDistribution(CombinatorialSetting(CROSS_ITEMS), entries)


def hard_dist_additive(k: int) -> ProfileDistribution:
    """Two additive bidders contesting two items; ceiling 7/8."""
    return _hard_dist_cross("additive", k)


def hard_dist_unit_demand(k: int) -> ProfileDistribution:
    """Two unit-demand bidders contesting two items; ceiling 7/8."""
    return _hard_dist_cross("unit_demand", k)


# ---------------------------------------------------------------------------
# the crowded unit-demand market


def ud_failure_instance(n: int) -> Instance:
    """sqrt(n) bidders value every item at 2, the rest at 1; m = n.

    The optimum seats everyone (n + sqrt(n)); any price keyed to the
    maximum sampled value shuts out the low bidders, so revenue-style
    pricing wastes almost everything while opportunity-cost pricing
    keeps a constant fraction.
    """
    root = math.isqrt(n)
    if root * root != n:
        raise ValueError(f"{n} is not a perfect square")
    width = max(2, len(str(n - 1)))
    items = tuple(f"j{t:0{width}d}" for t in range(n))
    high = {j: Fraction(2) for j in items}
    low = {j: ONE for j in items}
    vals = tuple(
        UnitDemandValuation(items, high if i < root else low) for i in range(n)
    )
    return Instance(CombinatorialSetting(items), vals)


# ---------------------------------------------------------------------------
# aggregation and search


def yao_aggregate(
    reports: Sequence[RatioReport], weights: Optional[Sequence[Fraction]] = None
) -> Fraction:
    """Worst per-profile ratio of a mixture of mechanisms.

    Each report must carry a breakdown over the same profiles.  The
    returned minimum is never larger than the weight-averaged expected
    ratio (a mixture cannot beat its average), which is what makes
    per-distribution ceilings transfer to randomized mechanisms.
    """
    if not reports:
        raise ValueError("need at least one report")
    if weights is None:
        weights = [Fraction(1, len(reports))] * len(reports)
    weights = [Fraction(w) for w in weights]
    if len(weights) != len(reports) or sum(weights, ZERO) != ONE:
        raise ValueError("weights must match the reports and sum to 1")
    labels = [row.label for row in reports[0].breakdown]
    for rep in reports:
        if [row.label for row in rep.breakdown] != labels:
            raise ValueError("reports cover different profiles")
    per_profile = []
    for idx, label in enumerate(labels):
        mixed = sum(
            (w * rep.breakdown[idx].ratio for w, rep in zip(weights, reports)), ZERO
        )
        per_profile.append(mixed)
    worst = min(per_profile)
    average = sum(
        (w * rep.ratio for w, rep in zip(weights, reports)), ZERO
    )
    assert worst <= average
    return worst


@dataclass(frozen=True)
class InstanceGrid:
    """Cartesian product of per-bidder valuation menus."""

    setting: Setting
    domains: tuple

    def __post_init__(self) -> None:
        domains = tuple(tuple(d) for d in self.domains)
        object.__setattr__(self, "domains", domains)
        if not domains or any(not d for d in domains):
            raise ValueError("every bidder needs a non-empty menu")

    @property
    def count(self) -> int:
        total = 1
        for d in self.domains:
            total *= len(d)
        return total

    def instances(self):
        indices = [0] * len(self.domains)
        while True:
            yield Instance(
                self.setting,
                tuple(d[i] for d, i in zip(self.domains, indices)),
            )
            pos = len(indices) - 1
            while pos >= 0:
                indices[pos] += 1
                if indices[pos] < len(self.domains[pos]):
                    break
                indices[pos] = 0
                pos -= 1
            if pos < 0:
                return

    def sample(self, rng: CounterRng) -> Instance:
        return Instance(
            self.setting,
            tuple(d[rng.below(len(d))] for d in self.domains),
        )


def worst_case_search(
    mech: RandomizedMechanism,
    grid: InstanceGrid,
    budget: int,
    seed: int = 0,
) -> tuple[Optional[Instance], RatioReport]:
    """Grid (or seeded-sample) probe for the mechanism's worst ratio.

    Exhaustive when the grid fits the budget, otherwise ``budget``
    seeded draws.  Zero-OPT instances are skipped.  Best-effort: the
    result is a floor certificate for the instances visited, never an
    upper-bound proof.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    if grid.count <= budget:
        candidates = grid.instances()
    else:
        rng = CounterRng(seed)
        candidates = (grid.sample(rng) for _ in range(budget))
    worst: Optional[tuple] = None
    evaluated = 0
    for instance in candidates:
        best = opt_value_restricted(instance)
        if best == 0:
            continue
        evaluated += 1
        ratio = mech.exact_expected_welfare(instance) / best
        if worst is None or ratio < worst[0]:
            worst = (ratio, instance, best)
    if worst is None:
        return None, RatioReport(ZERO, ZERO, ZERO, trials=0)
    ratio, instance, best = worst
    return instance, RatioReport(
        expected_welfare=ratio * best,
        opt=best,
        ratio=ratio,
        trials=evaluated,
    )
