"""Valuation classes for multi-unit and combinatorial auctions.

Two settings share one `Instance` container:

* multi-unit — ``m`` identical items, each bidder has a monotone value
  vector over quantities ``1..m`` (``v(0) = 0`` implicit);
* combinatorial — a finite set of named items, each bidder has an
  additive, unit-demand, or explicitly tabulated valuation over bundles.

All values are exact :class:`fractions.Fraction`, never floats, so
expected-welfare identities (5/6, 3/4, ...) hold exactly in tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Iterable, Mapping, Union

MAX_EXPLICIT_ITEMS = 12

Bundle = frozenset  # of item names
Quantity = int


def as_fraction(x: Union[int, str, Fraction]) -> Fraction:
    """Coerce an int, Fraction, or \"p/q\" string to an exact Fraction."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, bool):
        raise TypeError("bool is not a valuation amount")
    if isinstance(x, (int, str)):
        return Fraction(x)
    raise TypeError(f"cannot interpret {x!r} as an exact rational")


def format_fraction(x: Fraction) -> str:
    """Serialize a Fraction as the canonical \"p/q\" string."""
    return f"{x.numerator}/{x.denominator}"


# ---------------------------------------------------------------------------
# Multi-unit valuations


@dataclass(frozen=True)
class MultiUnitValuation:
    """Monotone valuation over quantities of a homogeneous good.

    ``values[q-1]`` is the value for receiving ``q`` units; receiving
    nothing is worth 0.  Construction rejects negative entries and any
    decrease, so every instance of this class is monotone by fiat.
    """

    values: tuple[Fraction, ...]

    def __post_init__(self) -> None:
        vals = tuple(as_fraction(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if not vals:
            raise ValueError("multi-unit valuation needs at least one quantity")
        prev = Fraction(0)
        for q, v in enumerate(vals, start=1):
            if v < 0:
                raise ValueError(f"negative value {v} at quantity {q}")
            if v < prev:
                raise ValueError(
                    f"valuation decreases from {prev} to {v} at quantity {q}"
                )
            prev = v

    @property
    def m(self) -> int:
        return len(self.values)

    def value(self, quantity: Quantity) -> Fraction:
        if not 0 <= quantity <= self.m:
            raise ValueError(f"quantity {quantity} outside 0..{self.m}")
        if quantity == 0:
            return Fraction(0)
        return self.values[quantity - 1]

    def marginal(self, quantity: Quantity) -> Fraction:
        """v(q) - v(q-1) for q in 1..m."""
        if not 1 <= quantity <= self.m:
            raise ValueError(f"quantity {quantity} outside 1..{self.m}")
        return self.value(quantity) - self.value(quantity - 1)


@dataclass(frozen=True)
class SingleMindedParams:
    """A scalar value ``x`` for any quantity of at least ``d`` units."""

    x: Fraction
    d: int


def make_single_minded(
    x: Union[int, str, Fraction], d: int, m: int
) -> MultiUnitValuation:
    """Step valuation: worth ``x`` at quantities >= ``d``, else 0."""
    x = as_fraction(x)
    if x < 0:
        raise ValueError(f"single-minded value must be non-negative, got {x}")
    if not 1 <= d <= m:
        raise ValueError(f"demand {d} outside 1..{m}")
    zero = Fraction(0)
    return MultiUnitValuation(tuple(zero if q < d else x for q in range(1, m + 1)))


def as_single_minded(v: MultiUnitValuation) -> SingleMindedParams | None:
    """Recover (x, d) if ``v`` is a single step function, else None.

    The all-zero vector is reported as x=0, d=1.  Used by the welfare
    oracle to route single-minded instances to the knapsack solver.
    """
    positive = [q for q in range(1, v.m + 1) if v.value(q) > 0]
    if not positive:
        return SingleMindedParams(Fraction(0), 1)
    d = positive[0]
    x = v.value(d)
    if all(v.value(q) == x for q in positive):
        return SingleMindedParams(x, d)
    return None


def check_decreasing_marginals(v: MultiUnitValuation) -> bool:
    """True iff marginal values are non-increasing in the quantity."""
    return all(
        v.marginal(q) >= v.marginal(q + 1) for q in range(1, v.m)
    )


# ---------------------------------------------------------------------------
# Combinatorial valuations


def _normalize_bundle(bundle: Iterable[str], items: tuple[str, ...]) -> Bundle:
    b = frozenset(bundle)
    extra = b - set(items)
    if extra:
        raise ValueError(f"bundle contains unknown items {sorted(extra)}")
    return b


def _check_per_item(values: Mapping[str, object], items: tuple[str, ...]) -> dict:
    if set(values) != set(items):
        raise ValueError(
            f"per-item values keyed by {sorted(values)} but items are {list(items)}"
        )
    out = {}
    for j in items:
        v = as_fraction(values[j])  # type: ignore[arg-type]
        if v < 0:
            raise ValueError(f"negative value {v} for item {j!r}")
        out[j] = v
    return out


@dataclass(frozen=True)
class AdditiveValuation:
    """Bundle value is the sum of per-item values."""

    items: tuple[str, ...]
    per_item: Mapping[str, Fraction]

    def __post_init__(self) -> None:
        object.__setattr__(self, "items", tuple(self.items))
        object.__setattr__(self, "per_item", _check_per_item(self.per_item, self.items))

    def value(self, bundle: Iterable[str]) -> Fraction:
        b = _normalize_bundle(bundle, self.items)
        return sum((self.per_item[j] for j in b), Fraction(0))


@dataclass(frozen=True)
class UnitDemandValuation:
    """Bundle value is the best single item in the bundle."""

    items: tuple[str, ...]
    per_item: Mapping[str, Fraction]

    def __post_init__(self) -> None:
        object.__setattr__(self, "items", tuple(self.items))
        object.__setattr__(self, "per_item", _check_per_item(self.per_item, self.items))

    def value(self, bundle: Iterable[str]) -> Fraction:
        b = _normalize_bundle(bundle, self.items)
        if not b:
            return Fraction(0)
        return max(self.per_item[j] for j in b)


@dataclass(frozen=True)
class ExplicitValuation:
    """Full table from every bundle of the universe to a value.

    The standard constructor requires a complete, non-negative table
    with ``v(emptyset) = 0`` and checks monotonicity.  Grids that sweep
    arbitrary tables (then filter with :func:`check_class`) can pass
    ``require_monotone=False``.
    """

    items: tuple[str, ...]
    table: Mapping[Bundle, Fraction]
    require_monotone: bool = field(default=True, compare=False)

    def __post_init__(self) -> None:
        items = tuple(self.items)
        object.__setattr__(self, "items", items)
        if len(items) > MAX_EXPLICIT_ITEMS:
            raise ValueError(
                f"explicit tables capped at {MAX_EXPLICIT_ITEMS} items, got {len(items)}"
            )
        table = {}
        for raw_bundle, raw_value in self.table.items():
            b = _normalize_bundle(raw_bundle, items)
            v = as_fraction(raw_value)  # type: ignore[arg-type]
            if v < 0:
                raise ValueError(f"negative value {v} for bundle {sorted(b)}")
            table[b] = v
        if len(table) != 2 ** len(items):
            raise ValueError(
                f"table has {len(table)} bundles, expected {2 ** len(items)}"
            )
        if table[frozenset()] != 0:
            raise ValueError("empty bundle must be worth 0")
        object.__setattr__(self, "table", table)
        if self.require_monotone and not _table_monotone(items, table):
            raise ValueError("explicit valuation is not monotone")

    def value(self, bundle: Iterable[str]) -> Fraction:
        return self.table[_normalize_bundle(bundle, self.items)]


def _table_monotone(items: tuple[str, ...], table: Mapping[Bundle, Fraction]) -> bool:
    # Dropping any single item never increases the value; chains of
    # single drops cover every subset pair.
    for b, v in table.items():
        for j in b:
            if table[b - {j}] > v:
                return False
    return True


CombinatorialValuation = Union[AdditiveValuation, UnitDemandValuation, ExplicitValuation]
Valuation = Union[MultiUnitValuation, AdditiveValuation, UnitDemandValuation, ExplicitValuation]


def all_bundles(items: Iterable[str]) -> list[Bundle]:
    """Every subset of the universe, smallest first, deterministic order."""
    items = tuple(items)
    out: list[Bundle] = []
    for size in range(len(items) + 1):
        out.extend(frozenset(c) for c in combinations(items, size))
    return out


def check_class(v: CombinatorialValuation, cls: str) -> bool:
    """Exhaustively test membership in a combinatorial valuation class.

    ``cls`` is one of ``"monotone"``, ``"subadditive"``, ``"additive"``,
    ``"unit_demand"``.  The check evaluates the defining property over
    the full bundle lattice, so it is exact (and only suitable for the
    small universes this package deals in).
    """
    items = v.items
    bundles = all_bundles(items)
    if cls == "monotone":
        return all(
            v.value(b - {j}) <= v.value(b) for b in bundles for j in b
        )
    if cls == "subadditive":
        return all(
            v.value(a | b) <= v.value(a) + v.value(b)
            for a in bundles
            for b in bundles
        )
    if cls == "additive":
        singles = {j: v.value({j}) for j in items}
        return all(
            v.value(b) == sum((singles[j] for j in b), Fraction(0)) for b in bundles
        )
    if cls == "unit_demand":
        singles = {j: v.value({j}) for j in items}
        return all(
            v.value(b) == (max(singles[j] for j in b) if b else Fraction(0))
            for b in bundles
        )
    raise ValueError(f"unknown valuation class {cls!r}")


def bundle_value(v: Valuation, bundle) -> Fraction:
    """Evaluate any valuation on a quantity or an item set."""
    if isinstance(v, MultiUnitValuation):
        return v.value(bundle)
    return v.value(bundle)


# ---------------------------------------------------------------------------
# Instances


@dataclass(frozen=True)
class MultiUnitSetting:
    m: int

    def __post_init__(self) -> None:
        if self.m < 1:
            raise ValueError("need at least one unit")


@dataclass(frozen=True)
class CombinatorialSetting:
    items: tuple[str, ...]

    def __post_init__(self) -> None:
        items = tuple(self.items)
        object.__setattr__(self, "items", items)
        if not items:
            raise ValueError("need at least one item")
        if len(set(items)) != len(items):
            raise ValueError("duplicate item names")


Setting = Union[MultiUnitSetting, CombinatorialSetting]


@dataclass(frozen=True)
class Instance:
    """A setting plus one compatible valuation per bidder.

    Bidders are indexed 0..n-1 throughout the package; the index order
    is also the tie-breaking priority used by welfare witnesses and
    clock auctions (lower index wins ties).
    """

    setting: Setting
    valuations: tuple[Valuation, ...]

    def __post_init__(self) -> None:
        vals = tuple(self.valuations)
        object.__setattr__(self, "valuations", vals)
        if not vals:
            raise ValueError("need at least one bidder")
        if isinstance(self.setting, MultiUnitSetting):
            for i, v in enumerate(vals):
                if not isinstance(v, MultiUnitValuation):
                    raise ValueError(f"bidder {i}: expected a multi-unit valuation")
                if v.m != self.setting.m:
                    raise ValueError(
                        f"bidder {i}: valuation over {v.m} units in an "
                        f"{self.setting.m}-unit setting"
                    )
        else:
            for i, v in enumerate(vals):
                if isinstance(v, MultiUnitValuation):
                    raise ValueError(f"bidder {i}: expected a combinatorial valuation")
                if tuple(v.items) != self.setting.items:
                    raise ValueError(f"bidder {i}: item universe mismatch")

    @property
    def n(self) -> int:
        return len(self.valuations)

    @property
    def multiunit(self) -> bool:
        return isinstance(self.setting, MultiUnitSetting)

    @property
    def m(self) -> int:
        if isinstance(self.setting, MultiUnitSetting):
            return self.setting.m
        return len(self.setting.items)

    @property
    def items(self) -> tuple[str, ...]:
        if isinstance(self.setting, CombinatorialSetting):
            return self.setting.items
        raise ValueError("multi-unit settings have no named items")

    def grand_bundle_value(self, bidder: int) -> Fraction:
        v = self.valuations[bidder]
        if isinstance(v, MultiUnitValuation):
            return v.value(self.m)
        return v.value(v.items)


# ---------------------------------------------------------------------------
# JSON serialization (rationals are always "p/q" strings)


def _bundle_key(bundle: Bundle) -> str:
    return ",".join(sorted(bundle))


def _per_item_json(per_item: Mapping[str, Fraction], items: tuple[str, ...]) -> dict:
    return {j: format_fraction(per_item[j]) for j in items}


def valuation_to_json(v: Valuation) -> dict:
    if isinstance(v, MultiUnitValuation):
        sm = as_single_minded(v)
        if sm is not None and sm.x > 0:
            return {"kind": "single_minded", "x": format_fraction(sm.x), "d": sm.d}
        return {"kind": "multi_unit", "values": [format_fraction(x) for x in v.values]}
    if isinstance(v, AdditiveValuation):
        return {"kind": "additive", "values": _per_item_json(v.per_item, v.items)}
    if isinstance(v, UnitDemandValuation):
        return {"kind": "unit_demand", "values": _per_item_json(v.per_item, v.items)}
    if isinstance(v, ExplicitValuation):
        return {
            "kind": "explicit",
            "values": {
                _bundle_key(b): format_fraction(v.table[b])
                for b in all_bundles(v.items)
            },
        }
    raise TypeError(f"not a valuation: {v!r}")


def instance_to_json(instance: Instance) -> dict:
    if isinstance(instance.setting, MultiUnitSetting):
        setting = {"multiunit": instance.setting.m}
    else:
        setting = {"items": list(instance.setting.items)}
    return {
        "setting": setting,
        "bidders": [valuation_to_json(v) for v in instance.valuations],
    }


def _valuation_from_json(data: Mapping, setting: Setting) -> Valuation:
    kind = data.get("kind")
    if isinstance(setting, MultiUnitSetting):
        if kind == "single_minded":
            return make_single_minded(as_fraction(data["x"]), int(data["d"]), setting.m)
        if kind == "multi_unit":
            values = [as_fraction(x) for x in data["values"]]
            if len(values) != setting.m:
                raise ValueError(
                    f"got {len(values)} values in a {setting.m}-unit setting"
                )
            return MultiUnitValuation(tuple(values))
        raise ValueError(f"unknown multi-unit valuation kind {kind!r}")
    items = setting.items
    values = data.get("values", {})
    if kind == "additive":
        return AdditiveValuation(items, {j: as_fraction(x) for j, x in values.items()})
    if kind == "unit_demand":
        return UnitDemandValuation(items, {j: as_fraction(x) for j, x in values.items()})
    if kind == "explicit":
        table = {}
        for key, raw in values.items():
            bundle = frozenset(part for part in key.split(",") if part)
            table[bundle] = as_fraction(raw)
        return ExplicitValuation(items, table)
    raise ValueError(f"unknown combinatorial valuation kind {kind!r}")


def instance_from_json(data: Mapping) -> Instance:
    raw_setting = data["setting"]
    if "multiunit" in raw_setting:
        setting: Setting = MultiUnitSetting(int(raw_setting["multiunit"]))
    elif "items" in raw_setting:
        setting = CombinatorialSetting(tuple(raw_setting["items"]))
    else:
        raise ValueError("setting must name 'multiunit' or 'items'")
    bidders = tuple(_valuation_from_json(b, setting) for b in data["bidders"])
    return Instance(setting, bidders)
