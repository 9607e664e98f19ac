"""Transition rules over symbolic states, run backwards and forwards.

Backward search runs the protocol rules in reverse from an attack pattern
toward an initial state.  Receives become intruder-knowledge demands,
sends either pass silently or mark the point where the intruder learned a
message, and composition points pair a finished parent with a just-started
child, either an existing strand or a newly introduced one.

Three rule sets share this machinery: `basic` (messages only), `abstract`
(parameter-list handover driven by the composition relation) and `sync`
(explicit synchronization points).  The `trans`/`trans_inv` pair converts
states between the latter two views.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

from .model import (
    KNOWN,
    MODE_ONE_MANY,
    MODE_ONE_ONE,
    TO_LEARN,
    IntruderFact,
    Minter,
    ParamList,
    SignedMessage,
    StrandInstance,
    StrandSchema,
    SymbolicState,
    SyncPoint,
    UnknownComposition,
    apply_subst_state,
    instantiate,
    state_key,
)
from .terms import App, FRESH, FreshConst, IDENTITY, MSG, Signature, Subst, \
    Term, term_key, term_size
from .terms import Var as VarType
from .theory import EquationalTheory, eq_modulo
from .unify import UnifierSet, match_modulo, unify_modulo

BASIC = "basic"
ABSTRACT = "abstract"
SYNC = "sync"
MODES = (BASIC, ABSTRACT, SYNC)


@dataclass
class RuntimeSpec:
    """Everything the semantics needs: signature, theory, role schemas and
    the composition relation."""

    name: str
    signature: Signature
    theory: EquationalTheory
    schemas: dict  # role -> StrandSchema
    triples: list = field(default_factory=list)

    def children_of(self, parent: str) -> list:
        return [c for (a, c, m) in self.triples if a == parent]

    def parents_of(self, child: str) -> list:
        return [a for (a, c, m) in self.triples if c == child]

    def modes_with(self, parent: str, child: str) -> list:
        return [m for (a, c, m) in self.triples if a == parent and c == child]


@dataclass(frozen=True)
class BackwardStep:
    rule: str
    unifier: Subst
    predecessor: SymbolicState


def _tup(terms: tuple) -> App:
    return App("%tup", tuple(terms), MSG)


def _retract(state: SymbolicState, si: int) -> SymbolicState:
    strands = list(state.strands)
    strands[si] = strands[si].with_bar(strands[si].bar - 1)
    return replace(state, strands=tuple(strands))


def _with_bars(state: SymbolicState, updates: dict) -> SymbolicState:
    strands = list(state.strands)
    for si, bar in updates.items():
        strands[si] = strands[si].with_bar(bar)
    return replace(state, strands=tuple(strands))


def _add_fact(state: SymbolicState, fact: IntruderFact,
              th: EquationalTheory) -> SymbolicState:
    for f in state.facts:
        if f.kind == fact.kind and term_key(f.payload) == term_key(fact.payload):
            return state
    return replace(state, facts=state.facts + (fact,))


def _flip_fact(state: SymbolicState, fi: int) -> SymbolicState:
    facts = list(state.facts)
    facts[fi] = IntruderFact(TO_LEARN, facts[fi].payload)
    return replace(state, facts=tuple(facts))


def _add_strand(state: SymbolicState, inst: StrandInstance) -> SymbolicState:
    return replace(state, strands=state.strands + (inst,))


def backward_successors(state: SymbolicState, spec: RuntimeSpec, mode: str,
                        minter: Minter,
                        unify_branch: int = 512,
                        stats: dict = None,
                        lazy_vars: bool = False,
                        max_fact_size: int = 0) -> list:
    """All one-step predecessors of a symbolic state, as BackwardSteps.

    The result order is deterministic for a given state: strand order,
    then fact order, then role order of introduced schemas.

    `max_fact_size` (0 = unbounded) drops predecessors whose intruder
    demands grow beyond that term size; dropping makes the step set
    incomplete (recorded in stats["size_pruned"]), never unsound.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode}")
    th = spec.theory
    leq = spec.signature.leq
    steps: list = []
    seen_keys: set = set()

    def emit(rule: str, sigma: Subst, pred: SymbolicState):
        pred = apply_subst_state(pred, sigma, th)
        if pred is None:
            return
        if max_fact_size and any(
                f.kind == KNOWN and term_size(f.payload) > max_fact_size
                for f in pred.facts):
            if stats is not None:
                stats["size_pruned"] = stats.get("size_pruned", 0) + 1
            return
        pred = replace(pred, depth=state.depth + 1)
        key = (rule.split(":")[0], state_key(pred))
        if key in seen_keys:
            return
        seen_keys.add(key)
        steps.append(BackwardStep(rule, sigma, pred))

    def unifiers(t1: Term, t2: Term) -> UnifierSet:
        us = unify_modulo(t1, t2, th, leq=leq, branch_budget=unify_branch)
        if stats is not None and not us.complete:
            stats["incomplete_unifications"] = \
                stats.get("incomplete_unifications", 0) + 1
        return us

    known = [(fi, f) for fi, f in enumerate(state.facts) if f.kind == KNOWN]
    if lazy_vars:
        # a demand for a bare variable is trivially satisfiable by public
        # data, so it is never used to drive explanations or merges
        active = [(fi, f) for fi, f in known
                  if not isinstance(f.payload, VarType)]
    else:
        active = known

    # message rules (reversed receive/send)
    for si, s in enumerate(state.strands):
        if s.bar == 0:
            continue
        item = s.items[s.bar - 1]
        if not isinstance(item, SignedMessage):
            continue
        m = item.payload
        if item.polarity == "-":
            emit("recv", IDENTITY,
                 _add_fact(_retract(state, si), IntruderFact(KNOWN, m), th))
            for fi, f in active:
                for sg in unifiers(m, f.payload):
                    if not sg.is_identity():
                        emit("recv", sg, _retract(state, si))
        else:
            emit("send_silent", IDENTITY, _retract(state, si))
            for fi, f in active:
                for sg in unifiers(m, f.payload):
                    emit("send_learn", sg, _flip_fact(_retract(state, si), fi))

    # composition rules, driven from a child whose bar sits right after
    # its input interface
    if mode in (ABSTRACT, SYNC):
        for ci, c in enumerate(state.strands):
            if c.bar != 1:
                continue
            head = c.items[0]
            if mode == SYNC and isinstance(head, SyncPoint) and head.direction == "in":
                _sync_rules(state, spec, ci, c, head, emit, unifiers, minter)
            if mode == ABSTRACT and isinstance(head, ParamList) and head.direction == "in":
                _abstract_rules(state, spec, ci, c, head, emit, unifiers, minter)

    # reversed strand introduction: a known fact is explained by a schema's
    # positive message in one step; the strand itself never enters the
    # state, only the demands for the messages it would have received
    # first.  Schemas whose prefix contains an interface item are excluded:
    # they can only run after a composition handover.
    for fi, f in active:
        for role in sorted(spec.schemas):
            schema = spec.schemas[role]
            for idx, it in enumerate(schema.items):
                if not isinstance(it, SignedMessage):
                    break  # interface item before this send
                if it.polarity != "+":
                    continue
                inst = instantiate(schema, minter, bar=idx)
                demands = [x.payload for x in inst.items[:idx]
                           if x.polarity == "-"]
                for sg in unifiers(inst.items[idx].payload, f.payload):
                    pred = _flip_fact(state, fi)
                    for d in demands:
                        pred = _add_fact(pred, IntruderFact(KNOWN, d), th)
                    emit(f"intro_strand:{role}", sg, pred)
    return steps


def _sync_rules(state, spec, ci, c, head, emit, unifiers, minter):
    for pi, p in enumerate(state.strands):
        if pi == ci or not p.items:
            continue
        last = p.items[-1]
        if not (isinstance(last, SyncPoint) and last.direction == "out"):
            continue
        if p.role not in head.parents or c.role not in last.children \
                or last.mode != head.mode:
            continue
        if p.bar == len(p.items):
            for sg in unifiers(_tup(last.payload), _tup(head.payload)):
                emit("sync_compose", sg,
                     _with_bars(state, {pi: len(p.items) - 1, ci: 0}))
        if head.mode == MODE_ONE_MANY and p.bar == len(p.items) - 1:
            for sg in unifiers(_tup(last.payload), _tup(head.payload)):
                emit("sync_1many", sg, _with_bars(state, {ci: 0}))
    for a in head.parents:
        schema = spec.schemas.get(a)
        if schema is None:
            continue
        out = schema.items[-1] if schema.items else None
        if not (isinstance(out, SyncPoint) and out.direction == "out"
                and c.role in out.children and out.mode == head.mode):
            continue
        inst = instantiate(schema, minter, bar=len(schema.items) - 1)
        for sg in unifiers(_tup(inst.items[-1].payload), _tup(head.payload)):
            emit(f"sync_new_parent:{a}", sg,
                 _with_bars(_add_strand(state, inst),
                            {ci: 0}))


def _abstract_rules(state, spec, ci, c, head, emit, unifiers, minter):
    for pi, p in enumerate(state.strands):
        if pi == ci or not p.items:
            continue
        last = p.items[-1]
        if not (isinstance(last, ParamList) and last.direction == "out"):
            continue
        modes = spec.modes_with(p.role, c.role)
        if not modes:
            continue
        if p.bar == len(p.items):
            for sg in unifiers(_tup(last.payload), _tup(head.payload)):
                emit("compose_11", sg,
                     _with_bars(state, {pi: len(p.items) - 1, ci: 0}))
        if MODE_ONE_MANY in modes and p.bar == len(p.items) - 1:
            for sg in unifiers(_tup(last.payload), _tup(head.payload)):
                emit("compose_1many", sg, _with_bars(state, {ci: 0}))
    for a in sorted(spec.parents_of(c.role)):
        schema = spec.schemas.get(a)
        if schema is None:
            continue
        out = schema.items[-1] if schema.items else None
        if not (isinstance(out, ParamList) and out.direction == "out"):
            continue
        inst = instantiate(schema, minter, bar=len(schema.items) - 1)
        for sg in unifiers(_tup(inst.items[-1].payload), _tup(head.payload)):
            emit(f"compose_new_parent:{a}", sg,
                 _with_bars(_add_strand(state, inst), {ci: 0}))


# --------------------------------------------------------------- forward

@dataclass(frozen=True)
class ForwardStep:
    rule: str
    successor: SymbolicState


def forward_step(state: SymbolicState, spec: RuntimeSpec, mode: str,
                 rules: tuple = None) -> list:
    """All one-step successors of a (typically ground) state.

    `rules` optionally restricts the computation to the named rule
    families (base rule names, without the `:role` suffix)."""

    def wanted(*names):
        return rules is None or any(n in rules for n in names)

    th = spec.theory
    out: list = []
    known = [(fi, f) for fi, f in enumerate(state.facts) if f.kind == KNOWN]
    to_learn = [(fi, f) for fi, f in enumerate(state.facts) if f.kind == TO_LEARN]

    def advance(si):
        strands = list(state.strands)
        strands[si] = strands[si].with_bar(strands[si].bar + 1)
        return replace(state, strands=tuple(strands))

    for si, s in enumerate(state.strands):
        if s.bar >= len(s.items):
            continue
        item = s.items[s.bar]
        if isinstance(item, SignedMessage):
            if item.polarity == "-":
                if wanted("recv") and any(
                        eq_modulo(f.payload, item.payload, th) for _, f in known):
                    out.append(ForwardStep("recv", advance(si)))
            else:
                if wanted("send_silent"):
                    out.append(ForwardStep("send_silent", advance(si)))
                if wanted("send_learn"):
                    for fi, f in to_learn:
                        if eq_modulo(f.payload, item.payload, th):
                            nxt = advance(si)
                            facts = list(nxt.facts)
                            facts[fi] = IntruderFact(KNOWN, facts[fi].payload)
                            out.append(ForwardStep(
                                "send_learn", replace(nxt, facts=tuple(facts))))
    # strand introduction read forwards: a pending fact becomes known when
    # some schema's positive message produces it from already-known parts
    if wanted("intro_strand"):
        out.extend(_forward_intro(state, spec))
    if mode in (ABSTRACT, SYNC) and wanted(
            "sync_compose", "sync_1many", "sync_new_parent",
            "compose_11", "compose_1many", "compose_new_parent"):
        out.extend(_forward_compose(state, spec, mode))
    return out


def _forward_intro(state: SymbolicState, spec: RuntimeSpec) -> list:
    th = spec.theory
    leq = spec.signature.leq
    known = [f.payload for f in state.facts if f.kind == KNOWN]
    out: list = []
    for fi, f in enumerate(state.facts):
        if f.kind != TO_LEARN:
            continue
        for role in sorted(spec.schemas):
            schema = spec.schemas[role]
            minter = Minter()
            for idx, it in enumerate(schema.items):
                if not isinstance(it, SignedMessage):
                    break  # interface item: runs only after a handover
                if it.polarity != "+":
                    continue
                inst = instantiate(schema, minter, bar=idx)
                # the deduction may be performed by a strand instance whose
                # own fresh values already occur in the state, so they must
                # stay bindable rather than minted anew
                table = {fc: VarType(f"%f{fc.hint}{fc.ident}", FRESH)
                         for fc in inst.fresh_ids}

                def devar(t, _table=table):
                    if isinstance(t, FreshConst):
                        return _table.get(t, t)
                    if isinstance(t, App) and t.args:
                        return App(t.op, tuple(devar(a, _table)
                                               for a in t.args), t.sort)
                    return t

                payload = devar(inst.items[idx].payload)
                demands = [devar(x.payload) for x in inst.items[:idx]
                           if x.polarity == "-"]
                produced = False
                for sg in match_modulo(payload, f.payload, th, leq=leq):
                    if _demands_met([sg(d) for d in demands], known, th, leq):
                        facts = list(state.facts)
                        facts[fi] = IntruderFact(KNOWN, f.payload)
                        out.append(ForwardStep(
                            f"intro_strand:{role}",
                            replace(state, facts=tuple(facts))))
                        produced = True
                        break
                if produced:
                    break
    return out


def _demands_met(demands: list, known: list, th: EquationalTheory, leq) -> bool:
    """Each demanded message must be producible as a known fact, under a
    consistent instantiation of the leftover schema variables."""
    if not demands:
        return True
    d, rest = demands[0], demands[1:]
    for k in known:
        for sg in match_modulo(d, k, th, leq=leq):
            if _demands_met([sg(r) for r in rest], known, th, leq):
                return True
    return False


def _forward_compose(state: SymbolicState, spec: RuntimeSpec, mode: str) -> list:
    th = spec.theory
    out: list = []
    for ci, c in enumerate(state.strands):
        if c.bar != 0 or not c.items:
            continue
        head = c.items[0]
        if mode == SYNC and not (isinstance(head, SyncPoint)
                                 and head.direction == "in"):
            continue
        if mode == ABSTRACT and not (isinstance(head, ParamList)
                                     and head.direction == "in"):
            continue
        for pi, p in enumerate(state.strands):
            if pi == ci or not p.items:
                continue
            last = p.items[-1]
            if p.bar != len(p.items) - 1:
                continue
            if mode == SYNC:
                if not (isinstance(last, SyncPoint) and last.direction == "out"
                        and p.role in head.parents and c.role in last.children
                        and last.mode == head.mode):
                    continue
                modes = [head.mode]
            else:
                if not (isinstance(last, ParamList) and last.direction == "out"):
                    continue
                modes = spec.modes_with(p.role, c.role)
                if not modes:
                    continue
            if not _payloads_equal(last.payload, head.payload, th):
                continue
            strands = list(state.strands)
            strands[ci] = strands[ci].with_bar(1)
            strands[pi] = strands[pi].with_bar(len(p.items))
            rule = "sync_compose" if mode == SYNC else "compose_11"
            out.append(ForwardStep(rule, replace(state, strands=tuple(strands))))
            if MODE_ONE_MANY in modes:
                strands = list(state.strands)
                strands[ci] = strands[ci].with_bar(1)
                rule = "sync_1many" if mode == SYNC else "compose_1many"
                out.append(ForwardStep(rule, replace(state, strands=tuple(strands))))
            # the generated new-parent rule, run forwards: the parent is
            # consumed by the handover
            strands = [st for sj, st in enumerate(state.strands) if sj != pi]
            cj = ci if ci < pi else ci - 1
            strands[cj] = c.with_bar(1)
            prefix = "sync_new_parent" if mode == SYNC else "compose_new_parent"
            out.append(ForwardStep(f"{prefix}:{p.role}",
                                   replace(state, strands=tuple(strands))))
    return out


def _payloads_equal(p1: tuple, p2: tuple, th: EquationalTheory) -> bool:
    return len(p1) == len(p2) and all(eq_modulo(a, b, th) for a, b in zip(p1, p2))


# ---------------------------------------------------- state translation

def trans(state: SymbolicState, spec: RuntimeSpec) -> SymbolicState:
    """Abstract view to synchronization view; bar positions are kept."""

    def conv(role, item):
        if not isinstance(item, ParamList):
            return item
        if item.direction == "out":
            children = spec.children_of(role)
            if not children:
                raise UnknownComposition(f"{role} is not a parent of anything")
            mode = _uniform_mode(spec, role)
            return SyncPoint("out", (role,), tuple(children), mode, item.payload)
        parents = spec.parents_of(role)
        if not parents:
            raise UnknownComposition(f"{role} is not a child of anything")
        mode = _uniform_mode(spec, role)
        return SyncPoint("in", tuple(parents), (role,), mode, item.payload)

    strands = tuple(
        replace(s, items=tuple(conv(s.role, it) for it in s.items))
        for s in state.strands)
    return replace(state, strands=strands)


def trans_inv(state: SymbolicState, spec: RuntimeSpec) -> SymbolicState:
    """Synchronization view back to the abstract view."""
    strands = tuple(
        replace(s, items=tuple(
            ParamList(it.direction, it.payload) if isinstance(it, SyncPoint) else it
            for it in s.items))
        for s in state.strands)
    return replace(state, strands=strands)


def runtime_spec(doc, mode: str) -> RuntimeSpec:
    """Squash a parsed document into one RuntimeSpec for the chosen mode.

    - basic: roles as written; parameter lists are inert bookkeeping.
    - abstract: roles as written; parameter lists drive composition via
      the declared composition relation.
    - sync: parameter lists are rewritten to synchronization points.
    """
    from .dsl import merge_protocols, synch_transform

    if mode not in MODES:
        raise ValueError(f"unknown mode {mode}")
    if mode == SYNC:
        merged = synch_transform(doc)
    else:
        merged = merge_protocols(doc, "+".join(p.name for p in doc.protocols))
    return RuntimeSpec(merged.name, merged.signature, merged.theory,
                       dict(merged.schemas), list(doc.triples))


def _uniform_mode(spec: RuntimeSpec, role: str) -> str:
    modes = {m for (a, c, m) in spec.triples if a == role or c == role}
    if len(modes) != 1:
        raise UnknownComposition(f"{role} has no single composition mode")
    return modes.pop()
