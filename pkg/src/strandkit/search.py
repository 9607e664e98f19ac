"""Breadth-first backward reachability from an attack pattern.

The search explores predecessors of a symbolic attack state until it finds
an initial state (every bar at the start, nothing already known), proving
the pattern reachable, or exhausts the frontier within the depth bound,
proving it unreachable at that bound.  Visited states are collapsed by a
canonical key invariant under variable/fresh renaming and the structural
axioms.
"""
from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

from itertools import permutations

from .model import (
    KNOWN,
    Minter,
    SignedMessage,
    SymbolicState,
    SyncPoint,
    instantiate,
    is_initial,
    item_terms,
    state_key,
)
from .semantics import (
    ABSTRACT,
    MODES,
    RuntimeSpec,
    SYNC,
    backward_successors,
    trans_inv,
)
from .terms import App, FreshConst, Var, term_key, term_size
from .theory import canon, normalize

# how many earlier states per structural bucket the subsumption check
# compares against; the matcher is quadratic in bucket size without a cap
_SUBSUME_SCAN_CAP = 48


def _peak_rss_mb() -> float:
    import resource
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0


ATTACK_FOUND = "AttackFound"
SECURE_FINITE = "SecureFinite"
INCONCLUSIVE = "Inconclusive"


@dataclass
class SearchBudget:
    max_depth: int = 20
    max_states: int = 100_000
    unify_branch: int = 512
    wall_seconds: Optional[float] = None
    # cap on the term size of intruder demands; None picks a default from
    # the protocol's own message sizes, 0 disables the cap.  Dropping an
    # oversized demand never fabricates an attack (traces are replayed
    # independently) but makes SecureFinite unclaimable, which the search
    # accounts for.
    max_fact_size: Optional[int] = None
    # peak resident-set cap in MiB; exceeding it yields Inconclusive instead
    # of letting the OS kill the process mid-search.
    max_rss_mb: Optional[int] = None


def _default_fact_cap(spec: RuntimeSpec) -> int:
    biggest = 1
    minter = Minter()
    for schema in spec.schemas.values():
        inst = instantiate(schema, minter)
        for it in inst.items:
            for t in item_terms(it):
                biggest = max(biggest, term_size(t))
    return 2 * biggest


@dataclass
class TraceStep:
    rule: str
    state: SymbolicState


@dataclass
class SearchResult:
    verdict: str
    trace: Optional[list] = None  # TraceSteps from attack pattern to initial
    stats: dict = field(default_factory=dict)

    @property
    def found(self) -> bool:
        return self.verdict == ATTACK_FOUND


class _Node:
    __slots__ = ("state", "rule", "parent")

    def __init__(self, state, rule, parent):
        self.state = state
        self.rule = rule
        self.parent = parent


def _goal(state: SymbolicState, lazy_vars: bool) -> bool:
    if not all(s.bar == 0 for s in state.strands):
        return False
    for f in state.facts:
        if f.kind == KNOWN:
            # a leftover demand for a bare variable is satisfiable by any
            # public value the intruder can produce on its own
            if lazy_vars and isinstance(f.payload, Var):
                continue
            return False
    return True


def _strand_shape(s) -> tuple:
    return (s.role, s.bar, len(s.items))


def _skeleton(state: SymbolicState) -> tuple:
    """Bucket key shared by a state and all of its instances."""
    return tuple(sorted(_strand_shape(s) for s in state.strands))


def _item_meta(it) -> tuple:
    if isinstance(it, SignedMessage):
        return ("msg", it.polarity)
    if isinstance(it, SyncPoint):
        return ("sync", it.direction, it.parents, it.children, it.mode)
    return ("param", it.direction)


def _state_instance_of(cand: SymbolicState, gen: SymbolicState, th, leq) -> bool:
    """True when cand is an instance of gen, up to fresh renaming.

    A conservative one-sided check: a True answer is always correct, a
    False answer may miss an instance (e.g. through hard AC matching).
    Dropping an instance of an explored state preserves every verdict:
    each backward step from the instance lifts to a step from the more
    general state, and a reachable initial state lifts to one at least as
    general, which is still initial.
    """
    if len(gen.facts) < len(cand.facts) or len(gen.strands) != len(cand.strands):
        return False
    bnd: dict = {}  # Var -> Term and FreshConst -> FreshConst
    fresh_image: set = set()

    def bind(p, t, trail) -> bool:
        bnd[p] = t
        trail.append(p)
        return True

    def undo(trail) -> None:
        while trail:
            p = trail.pop()
            t = bnd.pop(p)
            if isinstance(p, FreshConst):
                fresh_image.discard(t)

    def match(p, t, trail) -> bool:
        if isinstance(p, Var):
            got = bnd.get(p)
            if got is not None:
                return got == t
            if not leq(t.sort, p.sort):
                return False
            return bind(p, t, trail)
        if isinstance(p, FreshConst):
            got = bnd.get(p)
            if got is not None:
                return got == t
            if not isinstance(t, FreshConst) or t in fresh_image:
                return False
            fresh_image.add(t)
            return bind(p, t, trail)
        if not isinstance(t, App) or not isinstance(p, App) or p.op != t.op:
            return False
        ax = th.axiom(p.op)
        if ax is not None and ax.assoc and ax.comm and len(p.args) != len(t.args):
            return _match_ac(p, t, trail)
        if len(p.args) != len(t.args):
            return False
        for pa, ta in zip(p.args, t.args):
            if not match(pa, ta, trail):
                return False
        return True

    def _match_ac(p, t, trail) -> bool:
        # flattened canonical argument lists; at most one collector
        # variable absorbs the leftover arguments
        pargs = [a for a in p.args]
        free = [a for a in pargs if isinstance(a, Var) and a not in bnd]
        if len(free) != 1:
            return False
        var = free[0]
        pargs.remove(var)
        if len(pargs) > len(t.args):
            return False

        def place(i, remaining, inner) -> bool:
            if i == len(pargs):
                if not remaining:
                    unit = th.axiom(p.op).unit
                    return unit is not None and match(var, unit, inner)
                rest = remaining[0] if len(remaining) == 1 else \
                    canon(App(p.op, tuple(remaining), p.sort), th)
                return match(var, rest, inner)
            for j, ta in enumerate(remaining):
                sub: list = []
                if match(pargs[i], ta, sub):
                    if place(i + 1, remaining[:j] + remaining[j + 1:], inner):
                        inner.extend(sub)
                        return True
                undo(sub)
            return False

        inner: list = []
        if place(0, list(t.args), inner):
            trail.extend(inner)
            return True
        undo(inner)
        return False

    def match_terms(p, t, trail) -> bool:
        return match(canon(p, th), canon(t, th), trail)

    def match_strand(gs, cs, trail) -> bool:
        for gi, ci in zip(gs.items, cs.items):
            if _item_meta(gi) != _item_meta(ci):
                return False
            for pt, tt in zip(item_terms(gi), item_terms(ci)):
                if not match_terms(pt, tt, trail):
                    return False
        return True

    groups: dict = {}
    for s in gen.strands:
        groups.setdefault(_strand_shape(s), [[], []])[0].append(s)
    for s in cand.strands:
        entry = groups.get(_strand_shape(s))
        if entry is None:
            return False
        entry[1].append(s)
    group_list = list(groups.values())
    if any(len(gs) != len(cs) for gs, cs in group_list):
        return False

    cand_diseq_keys = {
        tuple(sorted((term_key(normalize(l, th)), term_key(normalize(r, th)))))
        for (l, r) in cand.diseqs
    }

    def apply_bnd(t):
        if isinstance(t, (Var, FreshConst)):
            return bnd.get(t, t)
        if isinstance(t, App) and t.args:
            return App(t.op, tuple(apply_bnd(a) for a in t.args), t.sort)
        return t

    def diseqs_hold() -> bool:
        for (l, r) in gen.diseqs:
            key = tuple(sorted((term_key(normalize(apply_bnd(l), th)),
                                term_key(normalize(apply_bnd(r), th)))))
            if key not in cand_diseq_keys:
                return False
        return True

    gfacts = sorted(gen.facts, key=lambda f: -len(term_key(canon(f.payload, th))))

    def match_facts(i, used) -> bool:
        if i == len(gfacts):
            return len(used) == len(cand.facts) and diseqs_hold()
        f = gfacts[i]
        for j, cf in enumerate(cand.facts):
            if cf.kind != f.kind:
                continue
            trail: list = []
            if match_terms(f.payload, cf.payload, trail) and \
                    match_facts(i + 1, used | {j}):
                return True
            undo(trail)
        return False

    def match_groups(k) -> bool:
        if k == len(group_list):
            return match_facts(0, frozenset())
        gs, cs = group_list[k]
        for perm in permutations(cs):
            trail: list = []
            if all(match_strand(g, c, trail) for g, c in zip(gs, perm)) and \
                    match_groups(k + 1):
                return True
            undo(trail)
        return False

    return match_groups(0)


def reachability_search(start: SymbolicState, spec: RuntimeSpec, mode: str,
                        budget: Optional[SearchBudget] = None,
                        lazy_vars: bool = True) -> SearchResult:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode}")
    budget = budget or SearchBudget()
    minter = Minter()
    t0 = time.monotonic()
    fact_cap = budget.max_fact_size
    if fact_cap is None:
        fact_cap = _default_fact_cap(spec)
    stats = {"states_explored": 0, "states_enqueued": 1, "deduped": 0,
             "subsumed": 0, "size_pruned": 0, "incomplete_unifications": 0,
             "max_depth_reached": 0}
    root = _Node(start, "attack-pattern", None)
    if _goal(start, lazy_vars):
        return _finish(ATTACK_FOUND, root, stats, t0, complete=True)
    frontier = deque([root])
    visited = {state_key(start)}
    th, leq = spec.theory, spec.signature.leq
    kept: dict = {_skeleton(start): [start]}
    truncated = False  # depth or state budget cut off unexplored states
    while frontier:
        if budget.wall_seconds is not None and \
                time.monotonic() - t0 > budget.wall_seconds:
            return _finish(INCONCLUSIVE, None, stats, t0, complete=False,
                           reason="wall clock budget exhausted")
        node = frontier.popleft()
        state = node.state
        if budget.max_rss_mb is not None and \
                stats["states_explored"] % 64 == 0 and \
                _peak_rss_mb() > budget.max_rss_mb:
            return _finish(INCONCLUSIVE, None, stats, t0, complete=False,
                           reason="memory budget exhausted")
        if state.depth >= budget.max_depth:
            truncated = True
            continue
        stats["states_explored"] += 1
        steps = backward_successors(state, spec, mode, minter,
                                    unify_branch=budget.unify_branch,
                                    stats=stats, lazy_vars=lazy_vars,
                                    max_fact_size=fact_cap)
        for step in steps:
            key = state_key(step.predecessor)
            if key in visited:
                stats["deduped"] += 1
                continue
            visited.add(key)
            child = _Node(step.predecessor, step.rule, node)
            if _goal(step.predecessor, lazy_vars):
                complete = not truncated and \
                    stats["incomplete_unifications"] == 0 and \
                    stats["size_pruned"] == 0
                return _finish(ATTACK_FOUND, child, stats, t0,
                               complete=complete)
            skel = _skeleton(step.predecessor)
            bucket = kept.setdefault(skel, [])
            nf = len(step.predecessor.facts)
            # bound the scan so subsumption cost stays linear overall
            if any(len(g.facts) >= nf and
                   _state_instance_of(step.predecessor, g, th, leq)
                   for g in bucket[:_SUBSUME_SCAN_CAP]):
                stats["subsumed"] += 1
                continue
            bucket.append(step.predecessor)
            stats["states_enqueued"] += 1
            stats["max_depth_reached"] = max(stats["max_depth_reached"],
                                             step.predecessor.depth)
            if stats["states_enqueued"] >= budget.max_states:
                return _finish(INCONCLUSIVE, None, stats, t0, complete=False,
                               reason="state budget exhausted")
            frontier.append(child)
    if truncated or stats["incomplete_unifications"] > 0:
        return _finish(INCONCLUSIVE, None, stats, t0, complete=False,
                       reason="depth bound reached")
    if stats["size_pruned"] > 0:
        return _finish(INCONCLUSIVE, None, stats, t0, complete=False,
                       reason="demand size cap pruned states")
    return _finish(SECURE_FINITE, None, stats, t0, complete=True)


def _finish(verdict, node, stats, t0, complete, reason=None) -> SearchResult:
    stats = dict(stats)
    stats["verdict"] = verdict
    stats["complete"] = complete
    if reason:
        stats["reason"] = reason
    stats["wall_ms"] = int((time.monotonic() - t0) * 1000)
    trace = None
    if node is not None:
        trace = []
        while node is not None:
            trace.append(TraceStep(node.rule, node.state))
            node = node.parent
        trace.reverse()
        stats["depth"] = len(trace) - 1
    return SearchResult(verdict, trace, stats)


def trace_replay(result: SearchResult, spec: RuntimeSpec, mode: str,
                 lazy_vars: bool = True) -> bool:
    """Re-derive every step of a found trace independently.

    Each state in the trace must be producible from its predecessor in the
    trace by a rule of the same name, up to canonical renaming.
    """
    if not result.found or not result.trace:
        return False
    minter = Minter()
    for prev, nxt in zip(result.trace, result.trace[1:]):
        steps = backward_successors(prev.state, spec, mode, minter,
                                    lazy_vars=lazy_vars)
        want = (nxt.rule, state_key(nxt.state))
        if not any((s.rule, state_key(s.predecessor)) == want for s in steps):
            return False
    return _goal(result.trace[-1].state, lazy_vars)


def trace_to_dot(result: SearchResult) -> str:
    lines = ["digraph trace {", "  node [shape=box, fontname=monospace];"]
    trace = result.trace or []
    for i, step in enumerate(trace):
        label = _state_label(step.state).replace('"', "'")
        lines.append(f'  n{i} [label="{label}"];')
        if i > 0:
            rule = step.rule.replace('"', "'")
            lines.append(f'  n{i - 1} -> n{i} [label="{rule}"];')
    lines.append("}")
    return "\n".join(lines)


def _state_label(state: SymbolicState) -> str:
    parts = [f"depth {state.depth}"]
    for s in state.strands:
        parts.append(repr(s))
    for f in state.facts:
        parts.append(repr(f))
    return "\\n".join(parts)


# ------------------------------------------------------------ comparison

def level_keys(start: SymbolicState, spec: RuntimeSpec, mode: str,
               depth: int, view=None, lazy_vars: bool = True) -> list:
    """Per-depth sets of canonical state keys of the backward search tree.

    `view` optionally maps each state to a common representation before
    keying (used to compare the explicit-synchronization rules against the
    abstract composition rules through the view translation).
    """
    minter = Minter()
    conv = view or (lambda st: st)
    levels = [{state_key(conv(start))}]
    frontier = [start]
    seen = {state_key(conv(start))}
    for _ in range(depth):
        nxt = []
        keys = set()
        for st in frontier:
            for step in backward_successors(st, spec, mode, minter,
                                            lazy_vars=lazy_vars):
                k = state_key(conv(step.predecessor))
                keys.add(k)
                if k not in seen:
                    seen.add(k)
                    nxt.append(step.predecessor)
        levels.append(keys)
        frontier = nxt
    return levels


def level_states(start: SymbolicState, spec: RuntimeSpec, mode: str,
                 depth: int, lazy_vars: bool = True) -> list:
    """Per-depth lists of distinct states of the backward search tree."""
    minter = Minter()
    levels = [[start]]
    frontier = [start]
    seen = {state_key(start)}
    for _ in range(depth):
        nxt = []
        for st in frontier:
            for step in backward_successors(st, spec, mode, minter,
                                            lazy_vars=lazy_vars):
                k = state_key(step.predecessor)
                if k not in seen:
                    seen.add(k)
                    nxt.append(step.predecessor)
        levels.append(nxt)
        frontier = nxt
    return levels


def bisimulation_report(abs_start: SymbolicState, abs_spec: RuntimeSpec,
                        sync_start: SymbolicState, sync_spec: RuntimeSpec,
                        depth: int) -> dict:
    """Compare the abstract and synchronization rule sets step for step.

    Sync-side states are translated back to the abstract view; the two
    searches match when each depth level reaches exactly the same set of
    canonical states.
    """
    a_levels = level_keys(abs_start, abs_spec, ABSTRACT, depth)
    s_levels = level_keys(sync_start, sync_spec, SYNC, depth,
                          view=lambda st: trans_inv(st, sync_spec))
    levels = []
    equivalent = True
    for d in range(depth + 1):
        a, s = a_levels[d], s_levels[d]
        ok = a == s
        equivalent = equivalent and ok
        levels.append({"depth": d, "abstract_states": len(a),
                       "sync_states": len(s),
                       "common": len(a & s), "matched": ok})
    return {"equivalent": equivalent, "depth": depth, "levels": levels}
