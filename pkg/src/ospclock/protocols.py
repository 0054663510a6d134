"""Deterministic extensive-form protocols and the ascending-clock builder.

A :class:`Protocol` is a finite tree.  Node identity is the message
history from the root (a tuple of message indices), so path
intersections and divergence vertices reduce to prefix comparisons.
Each internal node names one acting bidder and at least two labelled
messages; each leaf carries an :class:`Outcome`.

Protocols are built by *games*: small state machines exposing the
acting bidder, message list, transition, and a truthful message per
state.  ``materialize`` walks a game breadth-first into an explicit
tree; ``run_game`` plays a single path directly, which matters because
full trees grow exponentially while one play-out is linear.  Both use
the same transition code, so the tree and the simulation cannot drift
apart.

The central game here is the generalized ascending auction
(:class:`GaaSpec`): every bidder holds a base bundle and bids for a
potential bundle while a price clock rises along a finite grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .valuations import (
    CombinatorialSetting,
    MultiUnitSetting,
    Setting,
    Valuation,
    as_fraction,
    format_fraction,
)
from .welfare import Allocation, SizeCapError, _cap, check_allocation_for

ZERO = Fraction(0)

NodeId = tuple  # of message indices
Behavior = Mapping  # NodeId -> message index, for one bidder
Strategy = Callable  # (valuation, NodeId) -> message index


@dataclass(frozen=True)
class Outcome:
    """Leaf result: who gets what, who pays what."""

    allocation: Allocation
    payments: tuple

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "payments", tuple(as_fraction(p) for p in self.payments)
        )

    def utility(self, bidder: int, valuation: Valuation) -> Fraction:
        return valuation.value(self.allocation.bundles[bidder]) - self.payments[bidder]


def validate_outcome(setting: Setting, n: int, outcome: Outcome) -> None:
    if len(outcome.payments) != n:
        raise ValueError("payment vector has wrong length")
    check_allocation_for(setting, n, outcome.allocation)


@dataclass(frozen=True)
class ProtocolNode:
    bidder: int
    messages: tuple[str, ...]


class Protocol:
    """Explicit finite tree with history-tuple node ids.

    ``nodes`` maps internal node ids to (bidder, message labels);
    ``leaves`` maps leaf ids to outcomes.  ``info`` optionally maps node
    ids to builder state (clock price, active set, ...) so strategies
    and reports can interpret nodes without replaying.
    """

    def __init__(
        self,
        n: int,
        setting: Setting,
        nodes: Mapping[NodeId, ProtocolNode],
        leaves: Mapping[NodeId, Outcome],
        info: Optional[Mapping[NodeId, object]] = None,
    ) -> None:
        self.n = n
        self.setting = setting
        self.nodes = dict(nodes)
        self.leaves = dict(leaves)
        self.info = dict(info or {})
        self._validate()

    def _validate(self) -> None:
        if self.n < 1:
            raise ValueError("protocols need at least one bidder")
        overlap = set(self.nodes) & set(self.leaves)
        if overlap:
            raise ValueError(f"ids both internal and leaf: {sorted(overlap)[:3]}")
        everything = set(self.nodes) | set(self.leaves)
        if () not in everything:
            raise ValueError("missing root")
        cap = _cap("OSPCLOCK_TREE_CAP", 2_000_000)
        if len(everything) > cap:
            raise SizeCapError(f"protocol has {len(everything)} nodes; cap {cap}")
        for u, node in self.nodes.items():
            if not 0 <= node.bidder < self.n:
                raise ValueError(f"node {u}: bidder {node.bidder} out of range")
            if len(node.messages) < 2:
                raise ValueError(f"node {u}: single-message nodes must be contracted")
            for k in range(len(node.messages)):
                if u + (k,) not in everything:
                    raise ValueError(f"node {u}: missing child for message {k}")
        for u in everything:
            if u and u[:-1] not in self.nodes:
                raise ValueError(f"unreachable id {u}")
            if u:
                if u[-1] >= len(self.nodes[u[:-1]].messages):
                    raise ValueError(f"id {u} exceeds parent's message count")
        for u, out in self.leaves.items():
            validate_outcome(self.setting, self.n, out)

    # -- navigation ---------------------------------------------------------

    def is_leaf(self, u: NodeId) -> bool:
        return u in self.leaves

    def outcome(self, u: NodeId) -> Outcome:
        return self.leaves[u]

    def bidder(self, u: NodeId) -> int:
        return self.nodes[u].bidder

    def messages(self, u: NodeId) -> tuple[str, ...]:
        return self.nodes[u].messages

    def child(self, u: NodeId, message: int) -> NodeId:
        if not 0 <= message < len(self.nodes[u].messages):
            raise ValueError(f"message {message} out of range at {u}")
        return u + (message,)

    def size(self) -> int:
        return len(self.nodes) + len(self.leaves)

    def bidder_nodes(self, bidder: int) -> list[NodeId]:
        return sorted(
            (u for u, node in self.nodes.items() if node.bidder == bidder),
            key=lambda u: (len(u), u),
        )

    def all_ids_by_depth(self) -> list[NodeId]:
        both = list(self.nodes) + list(self.leaves)
        both.sort(key=lambda u: (len(u), u))
        return both


def play(protocol: Protocol, behaviors: Sequence[Behavior]) -> tuple[Outcome, list]:
    """Follow a behavior profile from the root; return outcome and path."""
    if len(behaviors) != protocol.n:
        raise ValueError("need one behavior per bidder")
    u: NodeId = ()
    path = [u]
    while not protocol.is_leaf(u):
        node = protocol.nodes[u]
        try:
            message = behaviors[node.bidder][u]
        except KeyError:
            raise ValueError(
                f"behavior of bidder {node.bidder} undefined at node {u}"
            ) from None
        u = protocol.child(u, message)
        path.append(u)
    return protocol.outcome(u), path


def divergence_vertex(path_a: Sequence[NodeId], path_b: Sequence[NodeId]):
    """Last common node of two root-to-leaf paths, or None if they equal."""
    last = None
    for a, b in zip(path_a, path_b):
        if a != b:
            return last
        last = a
    if len(path_a) != len(path_b):  # one path is a prefix of the other
        return last
    return None


def behavior_from_strategy(
    protocol: Protocol, bidder: int, strategy: Strategy, valuation: Valuation
) -> dict:
    """Tabulate a strategy into a total behavior for one bidder."""
    table = {}
    for u in protocol.bidder_nodes(bidder):
        msg = strategy(valuation, u)
        if not 0 <= msg < len(protocol.messages(u)):
            raise ValueError(f"strategy returned message {msg} out of range at {u}")
        table[u] = msg
    return table


@dataclass
class RealizedRule:
    """Outcome table over a finite domain product.

    ``table`` is keyed by per-bidder indices into ``domains`` (the
    valuations themselves are not hashable).
    """

    domains: tuple[tuple[Valuation, ...], ...]
    table: dict

    def outcome(self, profile_indices: tuple[int, ...]) -> Outcome:
        return self.table[profile_indices]


def realize_rule(
    protocol: Protocol,
    strategies: Sequence[Strategy],
    domains: Sequence[Sequence[Valuation]],
) -> RealizedRule:
    """Play every profile in the domain product through the strategies."""
    if len(strategies) != protocol.n or len(domains) != protocol.n:
        raise ValueError("need one strategy and one domain per bidder")
    doms = tuple(tuple(d) for d in domains)
    total = 1
    for d in doms:
        if not d:
            raise ValueError("empty domain")
        total *= len(d)
    cap = _cap("OSPCLOCK_PROFILE_CAP", 200_000)
    if total > cap:
        raise SizeCapError(f"domain product has {total} profiles; cap {cap}")
    behaviors = [
        [behavior_from_strategy(protocol, i, strategies[i], v) for v in doms[i]]
        for i in range(protocol.n)
    ]
    table = {}
    indices = [0] * protocol.n
    while True:
        profile = tuple(indices)
        outcome, _ = play(protocol, [behaviors[i][indices[i]] for i in range(protocol.n)])
        table[profile] = outcome
        pos = protocol.n - 1
        while pos >= 0 and indices[pos] == len(doms[pos]) - 1:
            indices[pos] = 0
            pos -= 1
        if pos < 0:
            break
        indices[pos] += 1
    return RealizedRule(doms, table)


# ---------------------------------------------------------------------------
# Games: implicit protocols as state machines


class Game:
    """Interface for deterministic protocol state machines.

    Subclasses define the tree implicitly; ``materialize`` makes it
    explicit and ``run_game`` plays it directly.  States may be any
    immutable value.  Builders must never expose a state with fewer
    than two messages — contract such states away in the transition.
    """

    n: int
    setting: Setting

    def root_state(self):
        raise NotImplementedError

    def is_leaf(self, state) -> bool:
        raise NotImplementedError

    def outcome(self, state) -> Outcome:
        raise NotImplementedError

    def bidder(self, state) -> int:
        raise NotImplementedError

    def messages(self, state) -> tuple[str, ...]:
        raise NotImplementedError

    def child(self, state, message: int):
        raise NotImplementedError

    def truthful_message(self, state, valuation: Valuation) -> int:
        raise NotImplementedError


def materialize(game: Game, max_nodes: Optional[int] = None) -> Protocol:
    """Breadth-first expansion of a game into an explicit Protocol."""
    cap = max_nodes if max_nodes is not None else _cap("OSPCLOCK_TREE_CAP", 2_000_000)
    nodes: dict = {}
    leaves: dict = {}
    info: dict = {}
    queue = [((), game.root_state())]
    count = 0
    while queue:
        next_queue = []
        for u, state in queue:
            count += 1
            if count > cap:
                raise SizeCapError(f"game tree exceeds {cap} nodes")
            info[u] = state
            if game.is_leaf(state):
                leaves[u] = game.outcome(state)
                continue
            labels = game.messages(state)
            if len(labels) < 2:
                raise ValueError(f"game exposed a {len(labels)}-message state at {u}")
            nodes[u] = ProtocolNode(game.bidder(state), tuple(labels))
            for k in range(len(labels)):
                next_queue.append((u + (k,), game.child(state, k)))
        queue = next_queue
    return Protocol(game.n, game.setting, nodes, leaves, info)


def run_game(
    game: Game,
    valuations: Sequence[Valuation],
    message_fn: Optional[Callable] = None,
) -> tuple[Outcome, tuple]:
    """Play one path of a game without building the tree.

    ``message_fn(bidder, state, labels)`` picks each message; the
    default plays ``game.truthful_message`` for the acting bidder's
    valuation.  Returns the outcome and the message history, which is
    exactly the leaf's node id in the materialized tree.
    """
    state = game.root_state()
    history: list[int] = []
    steps = 0
    limit = _cap("OSPCLOCK_PLAY_CAP", 1_000_000)
    while not game.is_leaf(state):
        steps += 1
        if steps > limit:
            raise SizeCapError(f"play exceeded {limit} steps")
        i = game.bidder(state)
        labels = game.messages(state)
        if message_fn is None:
            msg = game.truthful_message(state, valuations[i])
        else:
            msg = message_fn(i, state, labels)
        if not 0 <= msg < len(labels):
            raise ValueError(f"message {msg} out of range")
        history.append(msg)
        state = game.child(state, msg)
    return game.outcome(state), tuple(history)


def game_strategy(game: Game, protocol: Optional[Protocol] = None) -> Strategy:
    """Truthful strategy usable with an explicit tree.

    With ``protocol`` given (and materialized from the same game) the
    state is read off ``protocol.info``; otherwise the node history is
    replayed through the game, which is slower but standalone.
    """

    def strategy(valuation: Valuation, u: NodeId) -> int:
        if protocol is not None and u in protocol.info:
            state = protocol.info[u]
        else:
            state = game.root_state()
            for msg in u:
                state = game.child(state, msg)
        return game.truthful_message(state, valuation)

    return strategy


def truthful_strategies(game: Game, protocol: Optional[Protocol] = None) -> list:
    s = game_strategy(game, protocol)
    return [s for _ in range(game.n)]


# ---------------------------------------------------------------------------
# Generalized ascending auctions


def _bundle_leq(setting: Setting, small, large) -> bool:
    if isinstance(setting, MultiUnitSetting):
        return 0 <= small <= large <= setting.m
    return frozenset(small) <= frozenset(large) <= frozenset(setting.items)


@dataclass(frozen=True)
class GaaSpec:
    """A generalized ascending auction.

    Every bidder is guaranteed the base bundle and clocks for the
    potential bundle.  At each grid price, still-active bidders are
    polled (highest index first) to stay or exit; exits are processed
    immediately.  The auction ends the moment it is feasible to give
    every remaining active bidder the potential bundle alongside the
    exited bidders' base bundles; winners then pay the last grid price
    that completed a full round (so ties resolve at the tied price, in
    favor of the lowest-index bidder).

    ``feasible`` overrides the default feasibility test (the induced
    allocation fits in the supply); custom predicates must accept the
    all-exited set and must imply allocation feasibility.
    """

    setting: Setting
    base: tuple
    potential: tuple
    grid: tuple
    feasible: Optional[Callable] = None

    def __post_init__(self) -> None:
        base = tuple(self.base)
        potential = tuple(self.potential)
        if isinstance(self.setting, CombinatorialSetting):
            base = tuple(frozenset(b) for b in base)
            potential = tuple(frozenset(p) for p in potential)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "potential", potential)
        grid = tuple(as_fraction(p) for p in self.grid)
        object.__setattr__(self, "grid", grid)
        if len(base) != len(potential) or not base:
            raise ValueError("need matching non-empty base/potential profiles")
        for i, (b, p) in enumerate(zip(base, potential)):
            if not _bundle_leq(self.setting, b, p):
                raise ValueError(f"bidder {i}: base bundle must lie inside potential")
        if not grid:
            raise ValueError("price grid is empty")
        if any(p < 0 for p in grid):
            raise ValueError("negative grid price")
        if any(a >= b for a, b in zip(grid, grid[1:])):
            raise ValueError("grid must be strictly increasing")
        if not self.is_feasible(frozenset()):
            raise ValueError("base-bundle profile must be feasible")

    @property
    def n(self) -> int:
        return len(self.base)

    def is_feasible(self, active: frozenset) -> bool:
        if self.feasible is not None:
            return bool(self.feasible(active))
        chosen = [
            self.potential[i] if i in active else self.base[i] for i in range(self.n)
        ]
        if isinstance(self.setting, MultiUnitSetting):
            return sum(chosen) <= self.setting.m
        taken: set = set()
        for bundle in chosen:
            if bundle & taken:
                return False
            taken |= bundle
        return True

    def marginal(self, bidder: int, valuation: Valuation) -> Fraction:
        """The clock value of the upgrade: v(potential) - v(base)."""
        return valuation.value(self.potential[bidder]) - valuation.value(
            self.base[bidder]
        )


@dataclass(frozen=True)
class GaaState:
    price_index: int
    queue: tuple  # active bidders still to poll at this price, first acts
    active: frozenset
    clearing: Fraction  # last fully completed grid price (0 before any)


@dataclass(frozen=True)
class GaaLeaf:
    winners: frozenset
    clearing: Fraction


class GaaGame(Game):
    """State machine for a :class:`GaaSpec` clock auction."""

    def __init__(self, spec: GaaSpec) -> None:
        self.spec = spec
        self.n = spec.n
        self.setting = spec.setting

    def root_state(self):
        everyone = frozenset(range(self.n))
        if self.spec.is_feasible(everyone):
            return GaaLeaf(everyone, ZERO)
        return GaaState(0, self._poll_order(everyone), everyone, ZERO)

    @staticmethod
    def _poll_order(active: frozenset) -> tuple:
        return tuple(sorted(active, reverse=True))

    def is_leaf(self, state) -> bool:
        return isinstance(state, GaaLeaf)

    def outcome(self, state) -> Outcome:
        spec = self.spec
        bundles = [
            spec.potential[i] if i in state.winners else spec.base[i]
            for i in range(self.n)
        ]
        payments = [
            state.clearing if i in state.winners else ZERO for i in range(self.n)
        ]
        return Outcome(Allocation(tuple(bundles)), tuple(payments))

    def bidder(self, state) -> int:
        return state.queue[0]

    def messages(self, state) -> tuple[str, ...]:
        return ("stay", "exit")

    def child(self, state, message: int):
        spec = self.spec
        i = state.queue[0]
        rest = state.queue[1:]
        active = state.active
        if message == 1:
            active = active - {i}
            if spec.is_feasible(active):
                return GaaLeaf(active, state.clearing)
        if rest:
            return GaaState(state.price_index, rest, active, state.clearing)
        # round complete without reaching feasibility: commit the price
        clearing = spec.grid[state.price_index]
        nxt = state.price_index + 1
        if nxt == len(spec.grid):
            # grid exhausted; remaining actives are sent to their base
            # bundles unpaid rather than made winners at an uncleared
            # price
            return GaaLeaf(frozenset(), ZERO)
        return GaaState(nxt, self._poll_order(active), active, clearing)

    def truthful_message(self, state, valuation: Valuation) -> int:
        i = state.queue[0]
        price = self.spec.grid[state.price_index]
        return 0 if price <= self.spec.marginal(i, valuation) else 1


def build_gaa(spec: GaaSpec, max_nodes: Optional[int] = None) -> Protocol:
    return materialize(GaaGame(spec), max_nodes)


def gaa_truthful_strategy(spec: GaaSpec, protocol: Optional[Protocol] = None) -> Strategy:
    """Stay while the clock price is at most v(potential) - v(base)."""
    return game_strategy(GaaGame(spec), protocol)


def clock_grid(marginals: Iterable, sentinel_step: int = 1) -> tuple:
    """Price grid reproducing the continuous clock on given marginals.

    Takes all distinct positive marginal values plus one sentinel price
    strictly above the maximum, so every bidder has an exact truthful
    exit point and no bidder stays forever.
    """
    values = sorted({as_fraction(x) for x in marginals if as_fraction(x) > 0})
    top = values[-1] + sentinel_step if values else Fraction(sentinel_step)
    return tuple(values) + (top,)


def gaa_grid_for_domains(spec_base, spec_potential, setting, domains) -> tuple:
    """Clock grid covering every marginal in per-bidder valuation sets."""
    marginals = []
    for i, dom in enumerate(domains):
        for v in dom:
            marginals.append(
                v.value(spec_potential[i]) - v.value(spec_base[i])
            )
    return clock_grid(marginals)


# ---------------------------------------------------------------------------
# serialization


def _id_to_key(u: NodeId) -> str:
    return ".".join(str(k) for k in u)


def _key_to_id(key: str) -> NodeId:
    if key == "":
        return ()
    return tuple(int(part) for part in key.split("."))


def _allocation_to_json(setting: Setting, alloc: Allocation):
    if isinstance(setting, MultiUnitSetting):
        return list(alloc.bundles)
    return [sorted(b) for b in alloc.bundles]


def _allocation_from_json(setting: Setting, data) -> Allocation:
    if isinstance(setting, MultiUnitSetting):
        return Allocation(tuple(int(q) for q in data))
    return Allocation(tuple(frozenset(b) for b in data))


def protocol_to_json(protocol: Protocol) -> dict:
    if isinstance(protocol.setting, MultiUnitSetting):
        setting = {"multiunit": protocol.setting.m}
    else:
        setting = {"items": list(protocol.setting.items)}
    return {
        "n": protocol.n,
        "setting": setting,
        "nodes": {
            _id_to_key(u): {"bidder": node.bidder, "messages": list(node.messages)}
            for u, node in sorted(protocol.nodes.items())
        },
        "leaves": {
            _id_to_key(u): {
                "allocation": _allocation_to_json(protocol.setting, out.allocation),
                "payments": [format_fraction(p) for p in out.payments],
            }
            for u, out in sorted(protocol.leaves.items())
        },
    }


def protocol_from_json(data: Mapping) -> Protocol:
    raw = data["setting"]
    if "multiunit" in raw:
        setting: Setting = MultiUnitSetting(int(raw["multiunit"]))
    else:
        setting = CombinatorialSetting(tuple(raw["items"]))
    nodes = {
        _key_to_id(key): ProtocolNode(int(nd["bidder"]), tuple(nd["messages"]))
        for key, nd in data["nodes"].items()
    }
    leaves = {
        _key_to_id(key): Outcome(
            _allocation_from_json(setting, leaf["allocation"]),
            tuple(as_fraction(p) for p in leaf["payments"]),
        )
        for key, leaf in data["leaves"].items()
    }
    return Protocol(int(data["n"]), setting, nodes, leaves)


def protocol_to_dot(protocol: Protocol) -> str:
    """GraphViz rendering of the tree (for eyeballing small protocols)."""
    lines = ["digraph protocol {", "  node [shape=box];"]
    for u, node in sorted(protocol.nodes.items()):
        lines.append(
            f'  "{_id_to_key(u) or "root"}" [label="bidder {node.bidder + 1}"];'
        )
        for k, label in enumerate(node.messages):
            child = u + (k,)
            lines.append(
                f'  "{_id_to_key(u) or "root"}" -> "{_id_to_key(child)}"'
                f' [label="{label}"];'
            )
    for u, out in sorted(protocol.leaves.items()):
        pays = ",".join(str(p) for p in out.payments)
        lines.append(
            f'  "{_id_to_key(u)}" [shape=ellipse, label="pay {pays}"];'
        )
    lines.append("}")
    return "\n".join(lines)
