"""Equational theories: structural axioms plus oriented rewrite rules.

Structural axioms (associativity, commutativity, identity, nilpotence) are
compiled away by `canon`, which flattens and sorts argument lists, removes
identity elements and cancels equal pairs under nilpotent operators.  The
oriented rules are applied by `normalize` modulo those canonical forms.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations
from typing import Iterator, Mapping, Optional, Sequence

from .terms import (
    App,
    FreshConst,
    Subst,
    Term,
    Var,
    least_sort,
    term_key,
    variables,
)


class StepBudgetExceeded(Exception):
    """Normalization did not reach a normal form within the step budget."""


class IrregularRule(Exception):
    """A rewrite rule has a variable left side or invents right-side variables."""


@dataclass(frozen=True)
class AxiomDecl:
    assoc: bool = False
    comm: bool = False
    unit: Optional[Term] = None
    nilpotent: bool = False

    def __post_init__(self):
        if self.nilpotent and (not (self.assoc and self.comm) or self.unit is None):
            raise IrregularRule("nilpotent operators need assoc, comm and a unit")


@dataclass(frozen=True)
class EquationalTheory:
    """Oriented rules plus per-operator structural axioms.

    Rules must be regular: a non-variable left side whose variables cover
    the right side.  The canonical-axiom kinds here are regular by
    construction.
    """

    rules: tuple = ()
    axioms: tuple = ()  # tuple of (opname, AxiomDecl)
    step_budget: int = 10000

    def __post_init__(self):
        for lhs, rhs in self.rules:
            if isinstance(lhs, Var):
                raise IrregularRule(f"rule left side is a variable: {lhs!r}")
            if not variables(rhs) <= variables(lhs):
                raise IrregularRule(f"rule {lhs!r} -> {rhs!r} invents variables")

    @property
    def axiom_map(self) -> dict:
        return dict(self.axioms)

    def axiom(self, op: str) -> Optional[AxiomDecl]:
        m = self.__dict__.get("_axiom_map")
        if m is None:
            m = dict(self.axioms)
            object.__setattr__(self, "_axiom_map", m)
        return m.get(op)

    def is_ac(self, op: str) -> bool:
        ax = self.axiom(op)
        return ax is not None and ax.assoc and ax.comm

    def is_nilpotent(self, op: str) -> bool:
        ax = self.axiom(op)
        return ax is not None and ax.nilpotent

    def nilpotent_ops(self) -> list:
        return [name for name, decl in self.axioms if decl.nilpotent]

    def is_free(self) -> bool:
        return not self.rules and not self.axioms

    def merge(self, other: "EquationalTheory") -> "EquationalTheory":
        rules = list(self.rules)
        for r in other.rules:
            if r not in rules:
                rules.append(r)
        axmap = dict(self.axioms)
        for op, decl in other.axioms:
            if op in axmap and axmap[op] != decl:
                raise IrregularRule(f"conflicting axioms for operator {op}")
            axmap[op] = decl
        return EquationalTheory(tuple(rules), tuple(sorted(axmap.items())),
                                max(self.step_budget, other.step_budget))


EMPTY_THEORY = EquationalTheory()


def canon(t: Term, th: EquationalTheory) -> Term:
    """Canonical form modulo the structural axioms (no rule rewriting)."""
    if not isinstance(t, App) or not t.args:
        return t
    cache = th.__dict__.get("_canon_cache")
    if cache is None:
        cache = {}
        object.__setattr__(th, "_canon_cache", cache)
    hit = cache.get(t)
    if hit is not None:
        return hit
    out = _canon_app(t, th)
    cache[t] = out
    return out


def _canon_app(t: App, th: EquationalTheory) -> Term:
    args = tuple(canon(a, th) for a in t.args)
    ax = th.axiom(t.op)
    if ax is None:
        return App(t.op, args, t.sort)
    if ax.assoc and ax.comm:
        flat = []
        for a in args:
            if isinstance(a, App) and a.op == t.op:
                flat.extend(a.args)
            else:
                flat.append(a)
        if ax.unit is not None:
            unit_key = term_key(ax.unit)
            flat = [a for a in flat if term_key(a) != unit_key]
        if ax.nilpotent:
            counted: dict = {}
            for a in flat:
                counted.setdefault(term_key(a), [0, a])[0] += 1
            flat = []
            for key in sorted(counted):
                n, a = counted[key]
                flat.extend([a] * (n % 2))
        flat.sort(key=term_key)
        if not flat:
            if ax.unit is None:
                raise IrregularRule(f"{t.op} collapsed to nothing without a unit")
            return ax.unit
        if len(flat) == 1:
            return flat[0]
        return App(t.op, tuple(flat), t.sort)
    if ax.comm:
        args = tuple(sorted(args, key=term_key))
    return App(t.op, args, t.sort)


def ac_atoms(t: Term, op: str, th: EquationalTheory) -> list:
    """The flattened argument list of t viewed under an AC operator."""
    t = canon(t, th)
    ax = th.axiom(op)
    if isinstance(t, App) and t.op == op:
        return list(t.args)
    if ax is not None and ax.unit is not None and term_key(t) == term_key(ax.unit):
        return []
    return [t]


def ac_combine(atoms: Sequence[Term], op: str, th: EquationalTheory, sort: str) -> Term:
    ax = th.axiom(op)
    if not atoms:
        if ax is None or ax.unit is None:
            raise IrregularRule(f"cannot build empty {op}")
        return ax.unit
    if len(atoms) == 1:
        return atoms[0]
    return canon(App(op, tuple(atoms), sort), th)


def match_ax(pattern: Term, subject: Term, th: EquationalTheory,
             binding: Optional[dict] = None) -> Iterator[dict]:
    """Match pattern against subject modulo the structural axioms.

    Yields extensions of the given binding (dicts from Var to Term).  Both
    sides are assumed canonical.  AC matching is complete only for small
    argument lists: non-variable pattern arguments are matched injectively
    and at most one trailing pattern variable absorbs the leftovers, which
    covers every rule shape used here.
    """
    if binding is None:
        binding = {}
    if isinstance(pattern, Var):
        if pattern in binding:
            if term_key(binding[pattern]) == term_key(subject):
                yield binding
            return
        yield {**binding, pattern: subject}
        return
    if isinstance(pattern, FreshConst):
        if pattern == subject:
            yield binding
        return
    if not isinstance(subject, App) or subject.op != pattern.op:
        return
    ax = th.axiom(pattern.op)
    if ax is not None and ax.assoc and ax.comm:
        yield from _match_ac(list(pattern.args), list(subject.args), pattern.op,
                             pattern.sort, th, binding)
        return
    if len(pattern.args) != len(subject.args):
        return
    orders = [subject.args]
    if ax is not None and ax.comm and len(subject.args) == 2:
        orders = [subject.args, subject.args[::-1]]
    for order in orders:
        yield from _match_seq(pattern.args, order, th, binding)


def _match_seq(pats, subjs, th, binding) -> Iterator[dict]:
    if not pats:
        yield binding
        return
    for b in match_ax(pats[0], subjs[0], th, binding):
        yield from _match_seq(pats[1:], subjs[1:], th, b)


def _match_ac(pats, subjs, op, sort, th, binding) -> Iterator[dict]:
    if len(pats) > len(subjs):
        return
    if len(pats) == len(subjs):
        seen = set()
        for perm in permutations(range(len(subjs))):
            for b in _match_seq(pats, [subjs[i] for i in perm], th, binding):
                key = tuple(sorted((v.name, term_key(t)) for v, t in b.items()))
                if key not in seen:
                    seen.add(key)
                    yield b
        return
    # Fewer pattern arguments: let one variable argument absorb the rest.
    for vi, pv in enumerate(pats):
        if not isinstance(pv, Var):
            continue
        rest_pats = pats[:vi] + pats[vi + 1 :]
        n_rest = len(rest_pats)
        for chosen in permutations(range(len(subjs)), n_rest):
            chosen_set = set(chosen)
            leftover = [subjs[i] for i in range(len(subjs)) if i not in chosen_set]
            absorbed = ac_combine(leftover, op, th, sort)
            for b0 in match_ax(pv, absorbed, th, binding):
                yield from _match_seq(rest_pats, [subjs[i] for i in chosen], th, b0)
        return  # one absorber is enough for the rule shapes in scope


class _Budget:
    __slots__ = ("left",)

    def __init__(self, n: int):
        self.left = n

    def spend(self) -> None:
        self.left -= 1
        if self.left < 0:
            raise StepBudgetExceeded("rewrite step budget exhausted")


_norm_cache: dict = {}
_rule_cache: dict = {}


def _rule_info(th: EquationalTheory):
    """Per-theory precomputation: rule lhs head symbols and rules with
    their variables renamed apart from any subject term."""
    info = _rule_cache.get(th)
    if info is None:
        heads = {lhs.op for lhs, _ in th.rules if isinstance(lhs, App)}
        renamed = []
        for lhs, rhs in th.rules:
            ren = {v: Var(v.name + "%rule", v.sort) for v in variables(lhs)}
            s = Subst(ren, _trusted=True)
            renamed.append((s(lhs), s(rhs)))
        info = (heads, tuple(renamed))
        _rule_cache[th] = info
    return info


def normalize(t: Term, th: EquationalTheory) -> Term:
    """The normal form of t under the theory's rules, modulo its axioms.

    Raises StepBudgetExceeded after th.step_budget rule applications, which
    flags a non-terminating rule set rather than looping forever.

    Normal forms are memoized per theory: backward search renormalizes the
    same payloads constantly.
    """
    key = (t, th)
    got = _norm_cache.get(key)
    if got is None:
        budget = _Budget(th.step_budget)
        got = _normalize(canon(t, th), th, budget)
        _norm_cache[key] = got
        _norm_cache[(got, th)] = got
    return got


def _normalize(t: Term, th: EquationalTheory, budget: _Budget) -> Term:
    if not isinstance(t, App):
        return t
    args = tuple(_normalize(a, th, budget) for a in t.args)
    t = canon(App(t.op, args, t.sort), th)
    while isinstance(t, App):
        rewritten = _rewrite_root(t, th, budget)
        if rewritten is None:
            # a root canon step (flattening) can expose inner redexes only
            # when arguments changed, and those are already normal
            return t
        t = rewritten
        if isinstance(t, App):
            t = canon(App(t.op, tuple(_normalize(a, th, budget) for a in t.args),
                          t.sort), th)
        else:
            t = canon(t, th)
    return t


def _rewrite_root(t: App, th: EquationalTheory, budget: _Budget) -> Optional[Term]:
    heads, rules = _rule_info(th)
    if t.op not in heads:
        return None
    for lhs_r, rhs_r in rules:
        if isinstance(lhs_r, App) and lhs_r.op != t.op:
            continue
        for b in match_ax(lhs_r, t, th):
            budget.spend()
            return canon(Subst(b, _trusted=True)(rhs_r), th)
    return None


def eq_modulo(t1: Term, t2: Term, th: EquationalTheory) -> bool:
    """Equality modulo the full theory: normalize both sides and compare."""
    return term_key(normalize(t1, th)) == term_key(normalize(t2, th))
