"""Exact optimal-welfare computation with canonical witnesses.

``opt`` / ``opt_restricted`` route each instance to an exact solver:

* multi-unit: dynamic program over (bidder suffix, units remaining);
  single-minded bidders contribute only the candidate quantities
  ``{0, d}``, which makes the same DP a 0/1 knapsack; the all-unit-
  demand case (every bidder single-minded with d=1) short-circuits to
  a top-``m`` sum so sampling experiments with hundreds of bidders
  stay cheap.
* additive: each item goes to the smallest-index bidder of maximum
  value for it (the "i*_j" rule), independently per item.
* unit-demand: maximum-weight bipartite matching; instances whose
  bidders value every available item equally ("constant rows") use a
  closed form, everything else an exact Hungarian solver on Fractions.
* explicit or mixed combinatorial: DP over (bidder suffix, item mask).

Ties are broken canonically per solver so every caller sees one fixed
witness:

* multi-unit DP: lexicographically smallest quantity vector (earlier
  bidders prefer fewer units when indifferent);
* additive: the i*_j rule, items always assigned (zero-value items go
  to bidder 0);
* unit-demand: bidder-major — bidder 0 takes the earliest item (in
  universe order) consistent with optimality, preferring being matched
  over unmatched, then bidder 1 on what remains, and so on;
* mask DP: bidder-major, each bidder takes the numerically smallest
  bundle bitmask consistent with optimality (so the empty bundle when
  indifferent).

``brute_force_opt`` enumerates every feasible allocation and exists to
cross-check the solvers in tests; it keeps the first maximizer in its
fixed enumeration order.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Optional, Sequence, Union

from .valuations import (
    AdditiveValuation,
    Instance,
    MultiUnitValuation,
    SingleMindedParams,
    UnitDemandValuation,
    as_single_minded,
)

ZERO = Fraction(0)


class SizeCapError(Exception):
    """The requested computation exceeds a configured size cap."""


def _cap(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None:
        return default
    return int(raw)


@dataclass(frozen=True)
class Allocation:
    """One bundle per bidder: a quantity (multi-unit) or an item set."""

    bundles: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "bundles", tuple(self.bundles))


@dataclass(frozen=True)
class OptResult:
    value: Fraction
    witness: Allocation


def check_allocation_for(setting, n: int, alloc: Allocation) -> None:
    """Raise ValueError unless the allocation is feasible in the setting."""
    from .valuations import MultiUnitSetting as _MU

    if len(alloc.bundles) != n:
        raise ValueError("allocation has the wrong number of bidders")
    if isinstance(setting, _MU):
        total = 0
        for q in alloc.bundles:
            if not isinstance(q, int) or q < 0:
                raise ValueError(f"bad quantity {q!r}")
            total += q
        if total > setting.m:
            raise ValueError(f"{total} units allocated but only {setting.m} exist")
    else:
        seen: set = set()
        universe = set(setting.items)
        for b in alloc.bundles:
            bundle = frozenset(b)
            if not bundle <= universe:
                raise ValueError(f"bundle {sorted(bundle)} outside the item universe")
            if bundle & seen:
                raise ValueError("bundles overlap")
            seen |= bundle


def check_allocation(instance: Instance, alloc: Allocation) -> None:
    """Raise ValueError unless the allocation is feasible for the instance."""
    check_allocation_for(instance.setting, instance.n, alloc)


def welfare_of(instance: Instance, alloc: Allocation) -> Fraction:
    """Total value of an allocation (validates feasibility first)."""
    check_allocation(instance, alloc)
    total = ZERO
    for v, b in zip(instance.valuations, alloc.bundles):
        total += v.value(b)
    return total


def empty_allocation(instance: Instance) -> Allocation:
    if instance.multiunit:
        return Allocation(tuple(0 for _ in range(instance.n)))
    return Allocation(tuple(frozenset() for _ in range(instance.n)))


# ---------------------------------------------------------------------------
# Multi-unit solvers


def _candidate_quantities(v: MultiUnitValuation, limit: int) -> list[int]:
    sm = as_single_minded(v)
    if sm is not None:
        return [0] if sm.d > limit or sm.x == 0 else [0, sm.d]
    return list(range(limit + 1))


def _opt_multiunit(
    valuations: Sequence[MultiUnitValuation], capacity: int
) -> tuple[Fraction, list[int]]:
    """Suffix DP; returns (value, lexicographically smallest quantities)."""
    n = len(valuations)
    sms = [as_single_minded(v) for v in valuations]
    if all(sm is not None and sm.d == 1 for sm in sms):
        return _opt_all_unit_step(sms, capacity)  # type: ignore[arg-type]
    # dp[i][r] = best welfare for bidders i.. with r units left
    dp = [[ZERO] * (capacity + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        v = valuations[i]
        for r in range(capacity + 1):
            best = ZERO
            for q in _candidate_quantities(v, r):
                got = v.value(q) + dp[i + 1][r - q]
                if got > best:
                    best = got
            dp[i][r] = best
    quantities: list[int] = []
    r = capacity
    for i in range(n):
        v = valuations[i]
        target = dp[i][r]
        for q in _candidate_quantities(v, r):
            if v.value(q) + dp[i + 1][r - q] == target:
                quantities.append(q)
                r -= q
                break
        else:  # pragma: no cover - DP bookkeeping guarantees a hit
            raise AssertionError("witness reconstruction failed")
    return dp[0][capacity], quantities


def _opt_all_unit_step(
    sms: Sequence[SingleMindedParams], capacity: int
) -> tuple[Fraction, list[int]]:
    """All bidders want a single unit: take the top-``capacity`` values.

    Reproduces the DP's lex-min witness: when values tie at the cutoff,
    later bidders are served (a lex-min quantity vector gives earlier
    bidders 0 when indifferent).
    """
    order = sorted(
        (i for i, sm in enumerate(sms) if sm.x > 0),
        key=lambda i: (-sms[i].x, -i),
    )
    chosen = order[:capacity]
    value = sum((sms[i].x for i in chosen), ZERO)
    quantities = [0] * len(sms)
    for i in chosen:
        quantities[i] = 1
    return value, quantities


# ---------------------------------------------------------------------------
# Additive solver


def _opt_additive(
    valuations: Sequence[AdditiveValuation],
    bidder_ids: Sequence[int],
    items: Sequence[str],
) -> tuple[Fraction, dict[str, int]]:
    """Assign each item to its smallest-index maximum bidder.

    ``bidder_ids`` are positions in the original instance; the returned
    assignment maps item -> original bidder index (items always
    assigned, zero-value items to the first bidder in ``bidder_ids``).
    """
    total = ZERO
    assignment: dict[str, int] = {}
    for j in items:
        best = max(valuations[k].per_item[j] for k in range(len(bidder_ids)))
        winner = min(
            k for k in range(len(bidder_ids)) if valuations[k].per_item[j] == best
        )
        total += best
        assignment[j] = bidder_ids[winner]
    return total, assignment


# ---------------------------------------------------------------------------
# Unit-demand solvers


def _constant_rows(
    valuations: Sequence[UnitDemandValuation], items: Sequence[str]
) -> Optional[list[Fraction]]:
    """Per-bidder value if each bidder values all of ``items`` equally."""
    if not items:
        return [ZERO for _ in valuations]
    rows = []
    for v in valuations:
        first = v.per_item[items[0]]
        if any(v.per_item[j] != first for j in items[1:]):
            return None
        rows.append(first)
    return rows


def _ud_constant_opt(rows: Sequence[Fraction], items: Sequence[str]) -> tuple[
    Fraction, list[Optional[str]]
]:
    """Closed-form matching for constant-row unit-demand instances.

    Matched bidders are the ``min(n, m)`` best by (value desc, index
    asc); they receive items in universe order by ascending bidder
    index.  This equals the bidder-major canonical witness because
    items are interchangeable.
    """
    t = min(len(rows), len(items))
    chosen = sorted(range(len(rows)), key=lambda i: (-rows[i], i))[:t]
    chosen.sort()
    value = sum((rows[i] for i in chosen), ZERO)
    assigned: list[Optional[str]] = [None] * len(rows)
    for pos, i in enumerate(chosen):
        assigned[i] = items[pos]
    return value, assigned


def _hungarian_max(value: Sequence[Sequence[Fraction]]) -> Fraction:
    """Maximum-weight assignment value, rows matched to distinct columns.

    Exact Jonker-Volgenant style shortest augmenting paths over
    Fractions.  The matrix is padded to square with zeros so partial
    matchings are allowed (unmatched = matched to a zero pad).
    """
    nr = len(value)
    nc = len(value[0]) if nr else 0
    size = max(nr, nc)
    if size == 0:
        return ZERO
    big = ZERO
    for row in value:
        for x in row:
            if x > big:
                big = x
    # Minimize cost = big - weight on a square matrix.
    cost = [
        [
            (big - value[r][c]) if r < nr and c < nc else big
            for c in range(size)
        ]
        for r in range(size)
    ]
    infinity = big * size + size + 1
    # potentials and column matching, 1-indexed internally
    u = [ZERO] * (size + 1)
    v = [ZERO] * (size + 1)
    match = [0] * (size + 1)  # match[col] = row
    for r in range(1, size + 1):
        match[0] = r
        j0 = 0
        minv = [infinity] * (size + 1)
        prev = [0] * (size + 1)
        used = [False] * (size + 1)
        while True:
            used[j0] = True
            i0 = match[j0]
            delta = infinity
            j1 = 0
            for j in range(1, size + 1):
                if used[j]:
                    continue
                cur = cost[i0 - 1][j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    prev[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(size + 1):
                if used[j]:
                    u[match[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = prev[j0]
            match[j0] = match[j1]
            j0 = j1
    total_cost = ZERO
    for j in range(1, size + 1):
        r = match[j] - 1
        c = j - 1
        if r < nr and c < nc:
            total_cost += value[r][c]
    return total_cost


def _ud_opt_value(
    valuations: Sequence[UnitDemandValuation], items: Sequence[str]
) -> Fraction:
    rows = _constant_rows(valuations, items)
    if rows is not None:
        t = min(len(rows), len(items))
        return sum(sorted(rows, reverse=True)[:t], ZERO)
    matrix = [[v.per_item[j] for j in items] for v in valuations]
    return _hungarian_max(matrix)


def _ud_opt_witness(
    valuations: Sequence[UnitDemandValuation], items: Sequence[str]
) -> tuple[Fraction, list[Optional[str]]]:
    rows = _constant_rows(valuations, items)
    if rows is not None:
        return _ud_constant_opt(rows, items)
    target = _ud_opt_value(valuations, items)
    assigned: list[Optional[str]] = [None] * len(valuations)
    remaining = list(items)
    rest = list(range(len(valuations)))
    need = target
    for i in range(len(valuations)):
        rest = rest[1:]
        placed = None
        for j in remaining:
            sub = [x for x in remaining if x != j]
            if valuations[i].per_item[j] + _ud_opt_value(
                [valuations[k] for k in rest], sub
            ) == need:
                placed = j
                break
        if placed is not None:
            assigned[i] = placed
            remaining.remove(placed)
            need -= valuations[i].per_item[placed]
        # else: leaving i unmatched must be consistent (it is: the
        # remaining bidders alone attain `need`).
    return target, assigned


# ---------------------------------------------------------------------------
# General combinatorial solver (mask DP)


def _bundle_values(v, items: Sequence[str]) -> list[Fraction]:
    vals = []
    for mask in range(1 << len(items)):
        bundle = frozenset(items[j] for j in range(len(items)) if mask >> j & 1)
        vals.append(v.value(bundle))
    return vals


def _opt_mask_dp(
    valuations: Sequence, items: Sequence[str]
) -> tuple[Fraction, list[frozenset]]:
    n = len(valuations)
    m = len(items)
    cap = _cap("OSPCLOCK_OPT_CAP", 30_000_000)
    work = max(n, 1) * 3 ** m
    if work > cap:
        raise SizeCapError(
            f"mask DP needs ~{work} steps for n={n}, m={m}; cap is {cap} "
            "(override with OSPCLOCK_OPT_CAP)"
        )
    values = [_bundle_values(v, items) for v in valuations]
    full = (1 << m) - 1
    dp = [[ZERO] * (full + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        vi = values[i]
        nxt = dp[i + 1]
        row = dp[i]
        for mask in range(full + 1):
            best = vi[0] + nxt[mask]
            sub = mask
            while sub:
                got = vi[sub] + nxt[mask ^ sub]
                if got > best:
                    best = got
                sub = (sub - 1) & mask
            row[mask] = best
    bundles: list[frozenset] = []
    mask = full
    for i in range(n):
        vi = values[i]
        target = dp[i][mask]
        # smallest bitmask attaining the optimum (empty bundle first)
        pick = None
        candidates = [0]
        sub = mask
        while sub:
            candidates.append(sub)
            sub = (sub - 1) & mask
        for sub in sorted(candidates):
            if vi[sub] + dp[i + 1][mask ^ sub] == target:
                pick = sub
                break
        assert pick is not None
        bundles.append(frozenset(items[j] for j in range(m) if pick >> j & 1))
        mask ^= pick
    return dp[0][full], bundles


# ---------------------------------------------------------------------------
# Public API


def _resolve_bidders(instance: Instance, bidders) -> list[int]:
    if bidders is None:
        return list(range(instance.n))
    ids = sorted(set(int(i) for i in bidders))
    for i in ids:
        if not 0 <= i < instance.n:
            raise ValueError(f"bidder index {i} out of range")
    return ids


def opt_restricted(
    instance: Instance,
    bidders: Optional[Iterable[int]] = None,
    items: Union[None, int, Iterable[str]] = None,
) -> OptResult:
    """Optimal welfare using only the given bidders and items.

    ``items`` is a unit count in the multi-unit setting and an item
    subset in the combinatorial one; ``None`` means no restriction.
    The witness covers the full bidder index space, with excluded
    bidders receiving nothing.
    """
    ids = _resolve_bidders(instance, bidders)
    if instance.multiunit:
        capacity = instance.m if items is None else int(items)
        if not 0 <= capacity <= instance.m:
            raise ValueError(f"item count {capacity} outside 0..{instance.m}")
        vals = [instance.valuations[i] for i in ids]
        value, quantities = _opt_multiunit(vals, capacity)
        full_q = [0] * instance.n
        for i, q in zip(ids, quantities):
            full_q[i] = q
        return OptResult(value, Allocation(tuple(full_q)))

    if items is None:
        chosen_items = list(instance.items)
    else:
        if isinstance(items, int):
            raise ValueError("combinatorial settings need an item subset, not a count")
        subset = set(items)
        extra = subset - set(instance.items)
        if extra:
            raise ValueError(f"unknown items {sorted(extra)}")
        chosen_items = [j for j in instance.items if j in subset]

    vals = [instance.valuations[i] for i in ids]
    bundles: list[frozenset] = [frozenset()] * instance.n

    if not ids or not chosen_items:
        value = ZERO
    elif all(isinstance(v, AdditiveValuation) for v in vals):
        value, assignment = _opt_additive(vals, ids, chosen_items)
        per_bidder: dict[int, set] = {i: set() for i in ids}
        for j, owner in assignment.items():
            per_bidder[owner].add(j)
        for i in ids:
            bundles[i] = frozenset(per_bidder[i])
    elif all(isinstance(v, UnitDemandValuation) for v in vals):
        value, assigned = _ud_opt_witness(vals, chosen_items)
        for k, i in enumerate(ids):
            if assigned[k] is not None:
                bundles[i] = frozenset({assigned[k]})
    else:
        value, packed = _opt_mask_dp(vals, chosen_items)
        for k, i in enumerate(ids):
            bundles[i] = packed[k]
    return OptResult(value, Allocation(tuple(bundles)))


def opt(instance: Instance) -> OptResult:
    """Exact optimal welfare with the canonical witness."""
    return opt_restricted(instance)


def opt_value_restricted(
    instance: Instance,
    bidders: Optional[Iterable[int]] = None,
    items: Union[None, int, Iterable[str]] = None,
) -> Fraction:
    """Value-only fast path (skips witness reconstruction where possible)."""
    ids = _resolve_bidders(instance, bidders)
    if instance.multiunit:
        capacity = instance.m if items is None else int(items)
        vals = [instance.valuations[i] for i in ids]
        return _opt_multiunit(vals, capacity)[0]
    if items is None:
        chosen_items = list(instance.items)
    else:
        subset = set(items)
        chosen_items = [j for j in instance.items if j in subset]
    vals = [instance.valuations[i] for i in ids]
    if not ids or not chosen_items:
        return ZERO
    if all(isinstance(v, UnitDemandValuation) for v in vals):
        return _ud_opt_value(vals, chosen_items)
    return opt_restricted(instance, ids, chosen_items).value


def brute_force_opt(instance: Instance) -> OptResult:
    """Independent exhaustive oracle (tests only; small instances).

    Enumerates every feasible allocation in a fixed order and keeps the
    first maximizer, so its witness tie-breaking is its own.
    """
    cap = _cap("OSPCLOCK_BRUTE_CAP", 2_000_000)
    n, m = instance.n, instance.m
    if instance.multiunit:
        # quantity vectors with sum <= m, lexicographic order
        est = (m + 1) ** n
        if est > cap:
            raise SizeCapError(f"brute force would enumerate {est} vectors; cap {cap}")
        best: Optional[tuple[Fraction, tuple[int, ...]]] = None

        def rec(i: int, left: int, acc: list[int], total: Fraction) -> None:
            nonlocal best
            if i == n:
                if best is None or total > best[0]:
                    best = (total, tuple(acc))
                return
            for q in range(left + 1):
                acc.append(q)
                rec(i + 1, left - q, acc, total + instance.valuations[i].value(q))
                acc.pop()

        rec(0, m, [], ZERO)
        assert best is not None
        return OptResult(best[0], Allocation(best[1]))

    est = (n + 1) ** m
    if est > cap:
        raise SizeCapError(f"brute force would enumerate {est} assignments; cap {cap}")
    items = instance.items
    best_c: Optional[tuple[Fraction, tuple[frozenset, ...]]] = None
    # owners[j] in 0..n-1 assigns item j; n leaves it unallocated
    owners = [0] * m
    while True:
        bundles = [set() for _ in range(n)]
        for j, owner in enumerate(owners):
            if owner < n:
                bundles[owner].add(items[j])
        total = ZERO
        for i in range(n):
            total += instance.valuations[i].value(bundles[i])
        if best_c is None or total > best_c[0]:
            best_c = (total, tuple(frozenset(b) for b in bundles))
        # odometer over base n+1, item-major
        j = m - 1
        while j >= 0 and owners[j] == n:
            owners[j] = 0
            j -= 1
        if j < 0:
            break
        owners[j] += 1
    assert best_c is not None
    return OptResult(best_c[0], Allocation(best_c[1]))


def is_critical(
    instance: Instance, bidder: int, threshold: Fraction = Fraction(1, 100)
) -> bool:
    """Does the bidder's grand-bundle value reach ``threshold * OPT``?

    Sampling-based guarantees need every bidder to be non-critical:
    a critical bidder can land in the discarded sample and take most
    of the optimum with it.
    """
    total = opt(instance).value
    return instance.grand_bundle_value(bidder) >= threshold * total
