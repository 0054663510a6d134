"""Exhaustive verification of obvious dominance and related properties.

``verify_osp`` checks the defining quantifier alternation directly: at
every node of bidder *i* that is attainable when *i* plays the
strategy-induced behavior, the worst case of continuing truthfully must
weakly beat the best case of any deviating message, where "worst" and
"best" range over everything the other bidders (and, after a
deviation, bidder *i* too) might do.

Naively that quantifies over behavior profiles, which is doubly
exponential.  Instead, two linear tree passes per (bidder, valuation)
compute for every node

* ``min_pinned[u]``: the worst utility over continuations where *i*'s
  edges follow the candidate behavior and everyone else is free, and
* ``max_free[u]``: the best utility over all continuations,

and the check compares them across sibling edges.  Witnesses carry two
behavior profiles that replay to exactly the reported utilities.

Also here: ex-post individual rationality + no-negative-transfers,
weak monotonicity and dominant-strategy checks on realized rules, and
the divergence lemma (profiles sharing a vertex, with strictly ranked
utilities for one bidder, must agree on that bidder's message there).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .protocols import (
    NodeId,
    Protocol,
    RealizedRule,
    Strategy,
    behavior_from_strategy,
    play,
)
from .valuations import Valuation, format_fraction, valuation_to_json

ZERO = Fraction(0)


@dataclass
class OspWitness:
    """A replayable obvious-dominance violation."""

    bidder: int
    valuation_index: int
    valuation: Valuation
    node: NodeId
    truthful_message: int
    deviating_message: int
    worst_truthful_utility: Fraction
    best_deviating_utility: Fraction
    truthful_profile: list
    deviating_profile: list

    def to_json(self) -> dict:
        def profile_json(profile):
            return [
                {".".join(map(str, u)): msg for u, msg in sorted(table.items())}
                for table in profile
            ]

        return {
            "bidder": self.bidder,
            "valuation_index": self.valuation_index,
            "valuation": valuation_to_json(self.valuation),
            "node": ".".join(map(str, self.node)),
            "truthful_message": self.truthful_message,
            "deviating_message": self.deviating_message,
            "worst_truthful_utility": format_fraction(self.worst_truthful_utility),
            "best_deviating_utility": format_fraction(self.best_deviating_utility),
            "truthful_profile": profile_json(self.truthful_profile),
            "deviating_profile": profile_json(self.deviating_profile),
        }


@dataclass
class OspVerdict:
    status: str  # "pass" or "fail"
    witness: Optional[OspWitness] = None

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_json(self) -> dict:
        data = {"status": self.status}
        if self.witness is not None:
            data["witness"] = self.witness.to_json()
        return data


@dataclass
class CheckVerdict:
    """Pass/fail result of a named property check."""

    check: str
    status: str
    details: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_json(self) -> dict:
        return {"check": self.check, "status": self.status, "details": self.details}


# ---------------------------------------------------------------------------
# obvious dominance


def _utility_passes(protocol: Protocol, bidder: int, valuation, behavior):
    """min-pinned and max-free utilities for every node, bottom-up."""
    min_pinned: dict = {}
    max_free: dict = {}
    for u in reversed(protocol.all_ids_by_depth()):
        if protocol.is_leaf(u):
            util = protocol.outcome(u).utility(bidder, valuation)
            min_pinned[u] = util
            max_free[u] = util
            continue
        node = protocol.nodes[u]
        children = [u + (k,) for k in range(len(node.messages))]
        max_free[u] = max(max_free[c] for c in children)
        if node.bidder == bidder:
            min_pinned[u] = min_pinned[u + (behavior[u],)]
        else:
            min_pinned[u] = min(min_pinned[c] for c in children)
    return min_pinned, max_free


def _attainable_nodes(protocol: Protocol, bidder: int, behavior) -> set:
    """Nodes whose history agrees with the behavior at the bidder's nodes."""
    attainable = {(): True}
    for u in protocol.all_ids_by_depth():
        if protocol.is_leaf(u) or not attainable.get(u, False):
            continue
        node = protocol.nodes[u]
        for k in range(len(node.messages)):
            attainable[u + (k,)] = node.bidder != bidder or k == behavior[u]
    return {u for u, ok in attainable.items() if ok}


def _descend(protocol, start, pick):
    """Extend a path from ``start`` to a leaf, choosing edges via ``pick``."""
    steps = []
    u = start
    while not protocol.is_leaf(u):
        k = pick(u)
        steps.append((u, k))
        u = protocol.child(u, k)
    return steps


def _profile_from_steps(protocol: Protocol, steps) -> list:
    profile = [dict() for _ in range(protocol.n)]
    for u, k in steps:
        profile[protocol.bidder(u)][u] = k
    return profile


def verify_osp(
    protocol: Protocol,
    strategies: Sequence[Strategy],
    domains: Sequence[Sequence[Valuation]],
) -> OspVerdict:
    """Check obvious dominance of the strategies over the domain.

    Bidders, then domain valuations, then nodes (shallowest first, then
    lexicographic), then deviating messages are scanned in a fixed
    order, so the reported witness is deterministic.
    """
    if len(strategies) != protocol.n or len(domains) != protocol.n:
        raise ValueError("need one strategy and one domain per bidder")
    for i in range(protocol.n):
        my_nodes = protocol.bidder_nodes(i)
        for v_idx, valuation in enumerate(domains[i]):
            behavior = behavior_from_strategy(protocol, i, strategies[i], valuation)
            min_pinned, max_free = _utility_passes(protocol, i, valuation, behavior)
            attainable = _attainable_nodes(protocol, i, behavior)
            for u in my_nodes:
                if u not in attainable:
                    continue
                truthful = behavior[u]
                worst = min_pinned[u + (truthful,)]
                for dev in range(len(protocol.messages(u))):
                    if dev == truthful:
                        continue
                    best = max_free[u + (dev,)]
                    if best > worst:
                        witness = _build_witness(
                            protocol,
                            i,
                            v_idx,
                            valuation,
                            behavior,
                            u,
                            truthful,
                            dev,
                            worst,
                            best,
                            min_pinned,
                            max_free,
                        )
                        return OspVerdict("fail", witness)
    return OspVerdict("pass")


def _build_witness(
    protocol, i, v_idx, valuation, behavior, u, truthful, dev, worst, best,
    min_pinned, max_free,
) -> OspWitness:
    prefix_steps = [(u[:t], u[t]) for t in range(len(u))]

    def pick_pinned(w):
        node = protocol.nodes[w]
        if node.bidder == i:
            return behavior[w]
        return min(
            range(len(node.messages)), key=lambda k: (min_pinned[w + (k,)], k)
        )

    def pick_free(w):
        node = protocol.nodes[w]
        return min(
            range(len(node.messages)), key=lambda k: (-max_free[w + (k,)], k)
        )

    truthful_steps = (
        prefix_steps + [(u, truthful)] + _descend(protocol, u + (truthful,), pick_pinned)
    )
    deviating_steps = (
        prefix_steps + [(u, dev)] + _descend(protocol, u + (dev,), pick_free)
    )
    return OspWitness(
        bidder=i,
        valuation_index=v_idx,
        valuation=valuation,
        node=u,
        truthful_message=truthful,
        deviating_message=dev,
        worst_truthful_utility=worst,
        best_deviating_utility=best,
        truthful_profile=_profile_from_steps(protocol, truthful_steps),
        deviating_profile=_profile_from_steps(protocol, deviating_steps),
    )


def replay_witness(protocol: Protocol, witness: OspWitness) -> tuple:
    """Recompute the two witness utilities via play (for audits/tests)."""
    out_t, _ = play(protocol, witness.truthful_profile)
    out_d, _ = play(protocol, witness.deviating_profile)
    return (
        out_t.utility(witness.bidder, witness.valuation),
        out_d.utility(witness.bidder, witness.valuation),
    )


# ---------------------------------------------------------------------------
# individual rationality and no negative transfers


def verify_ir_nnt(
    protocol: Protocol,
    strategies: Sequence[Strategy],
    domains: Sequence[Sequence[Valuation]],
) -> CheckVerdict:
    """Ex-post IR over the realized domain product; NNT over all leaves."""
    for u in sorted(protocol.leaves, key=lambda w: (len(w), w)):
        outcome = protocol.outcome(u)
        for i, payment in enumerate(outcome.payments):
            if payment < 0:
                return CheckVerdict(
                    "ir_nnt",
                    "fail",
                    {
                        "failure": "negative_transfer",
                        "leaf": ".".join(map(str, u)),
                        "bidder": i,
                        "payment": format_fraction(payment),
                    },
                )
    from .protocols import realize_rule

    rule = realize_rule(protocol, strategies, domains)
    for profile in sorted(rule.table):
        outcome = rule.table[profile]
        for i in range(protocol.n):
            v = rule.domains[i][profile[i]]
            utility = outcome.utility(i, v)
            if utility < 0:
                return CheckVerdict(
                    "ir_nnt",
                    "fail",
                    {
                        "failure": "individual_rationality",
                        "profile": list(profile),
                        "bidder": i,
                        "utility": format_fraction(utility),
                    },
                )
    return CheckVerdict("ir_nnt", "pass")


# ---------------------------------------------------------------------------
# realized-rule properties


def _profile_with(profile: tuple, position: int, value: int) -> tuple:
    return profile[:position] + (value,) + profile[position + 1 :]


def verify_weak_monotonicity(rule: RealizedRule) -> CheckVerdict:
    """f_i must not reward lowering one's own relative valuation.

    For each bidder and each unilateral swap v_i -> v_i' with bundles
    S, S': require v_i(S) - v_i(S') >= v_i'(S) - v_i'(S').
    """
    n = len(rule.domains)
    for profile in sorted(rule.table):
        for i in range(n):
            v = rule.domains[i][profile[i]]
            s = rule.table[profile].allocation.bundles[i]
            for alt in range(len(rule.domains[i])):
                if alt == profile[i]:
                    continue
                w = rule.domains[i][alt]
                s_alt = rule.table[_profile_with(profile, i, alt)].allocation.bundles[i]
                if v.value(s) - v.value(s_alt) < w.value(s) - w.value(s_alt):
                    return CheckVerdict(
                        "weak_monotonicity",
                        "fail",
                        {
                            "bidder": i,
                            "profile": list(profile),
                            "alternative": alt,
                        },
                    )
    return CheckVerdict("weak_monotonicity", "pass")


def verify_dsic(rule: RealizedRule) -> CheckVerdict:
    """Truth-telling beats any in-domain misreport, profile by profile."""
    n = len(rule.domains)
    for profile in sorted(rule.table):
        for i in range(n):
            v = rule.domains[i][profile[i]]
            honest = rule.table[profile].utility(i, v)
            for alt in range(len(rule.domains[i])):
                if alt == profile[i]:
                    continue
                lied = rule.table[_profile_with(profile, i, alt)].utility(i, v)
                if lied > honest:
                    return CheckVerdict(
                        "dsic",
                        "fail",
                        {
                            "bidder": i,
                            "profile": list(profile),
                            "misreport": alt,
                            "honest_utility": format_fraction(honest),
                            "misreport_utility": format_fraction(lied),
                        },
                    )
    return CheckVerdict("dsic", "pass")


# ---------------------------------------------------------------------------
# divergence lemma


def check_divergence_lemma(
    protocol: Protocol,
    strategies: Sequence[Strategy],
    bidder: int,
    node: NodeId,
    profile_a: Sequence[Valuation],
    profile_b: Sequence[Valuation],
) -> CheckVerdict:
    """Shared-vertex consistency forced by obvious dominance.

    If both strategy-induced plays pass through ``node`` (where
    ``bidder`` acts) and the first profile's bidder strictly prefers
    the second profile's realized outcome (both judged by the first
    profile's valuation), an obviously dominant strategy must send the
    same message at ``node`` under both of the bidder's valuations.
    Returns "consistent"/"violation" when that test applies,
    "not_applicable" when the utilities are not strictly ranked.
    """
    if node not in protocol.nodes:
        raise ValueError(f"{node} is not an internal node")
    if protocol.bidder(node) != bidder:
        raise ValueError(f"bidder {bidder} does not act at {node}")
    plays = []
    for profile in (profile_a, profile_b):
        behaviors = [
            behavior_from_strategy(protocol, j, strategies[j], profile[j])
            for j in range(protocol.n)
        ]
        outcome, path = play(protocol, behaviors)
        plays.append((behaviors, outcome, path))
    for _, _, path in plays:
        if node not in path:
            raise ValueError(f"vertex {node} is not on both realized paths")
    v = profile_a[bidder]
    utility_a = plays[0][1].utility(bidder, v)
    utility_b = plays[1][1].utility(bidder, v)
    details = {
        "node": ".".join(map(str, node)),
        "bidder": bidder,
        "utility_a": format_fraction(utility_a),
        "utility_b": format_fraction(utility_b),
    }
    if not utility_a < utility_b:
        return CheckVerdict("divergence_lemma", "not_applicable", details)
    msg_a = plays[0][0][bidder][node]
    msg_b = plays[1][0][bidder][node]
    details.update({"message_a": msg_a, "message_b": msg_b})
    status = "consistent" if msg_a == msg_b else "violation"
    return CheckVerdict("divergence_lemma", status, details)
