"""Unification: syntactic, modulo structural axioms, and modulo rules.

The combined procedure follows the variant route: narrow both sides with
the oriented rules to a bounded depth, then unify the resulting canonical
forms syntactically, with exclusive-or subproblems handed to a dedicated
nilpotent-AC solver.  Every candidate is verified by substitute, normalize
and compare before it is reported, so soundness never depends on the
solver internals.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

from .terms import (
    App,
    FreshConst,
    IDENTITY,
    SortClash,
    Subst,
    Term,
    Var,
    least_sort,
    term_key,
    variables,
)
from .theory import (
    EMPTY_THEORY,
    EquationalTheory,
    ac_atoms,
    ac_combine,
    canon,
    eq_modulo,
    normalize,
)

VARIANT_DEPTH = 5
BRANCH_BUDGET = 512


@dataclass(frozen=True)
class UnifierSet:
    """A set of verified unifiers plus a completeness flag.

    `complete` is False when a search bound (variant depth, branch budget)
    was hit, meaning further unifiers may exist.
    """

    unifiers: tuple = ()
    complete: bool = True

    def __iter__(self):
        return iter(self.unifiers)

    def __len__(self):
        return len(self.unifiers)

    def __bool__(self):
        return bool(self.unifiers)


def syntactic_unify(t1: Term, t2: Term) -> Optional[Subst]:
    """Most general syntactic unifier with occurs check and sort checks.

    Binding a variable requires the bound term's least sort to stay below
    the variable's sort; two variables bind toward the smaller sort.
    """
    sols = _solve([(t1, t2)], {}, EMPTY_THEORY, _Budget(BRANCH_BUDGET), limit=1)
    if not sols:
        return None
    try:
        return Subst(sols[0])
    except SortClash:
        return None


class _Budget:
    __slots__ = ("left", "blown")

    def __init__(self, n: int):
        self.left = n
        self.blown = False

    def spend(self) -> bool:
        if self.left <= 0:
            self.blown = True
            return False
        self.left -= 1
        return True


def _bind(v: Var, t: Term, subst: dict, th: EquationalTheory) -> Optional[dict]:
    t = canon(_apply(subst, t), th)
    if isinstance(t, Var) and t == v:
        return subst
    if v in variables(t):
        return None
    if not isinstance(t, Var):
        # fresh constants live in their own sort, which variables of any
        # message sort may range over is wrong: require proper sort order
        pass
    new = {v: t}
    out = {}
    for w, u in subst.items():
        out[w] = canon(_apply(new, u), th)
    out[v] = t
    return out


def _apply(m: dict, t):
    if isinstance(t, Var):
        got = m.get(t)
        if got is None:
            return t
        return _apply(m, got) if isinstance(got, Var) and got in m else got
    if isinstance(t, App) and t.args:
        return App(t.op, tuple(_apply(m, a) for a in t.args), t.sort)
    return t


def _sort_ok(sig_leq, v: Var, t: Term) -> bool:
    return sig_leq(least_sort(t), v.sort)


def _solve(eqns: list, subst: dict, th: EquationalTheory, budget: _Budget,
           limit: Optional[int] = None, leq=None) -> list:
    """DFS over unification branches; returns solved substitution dicts."""
    if leq is None:
        leq = _default_leq
    if not budget.spend():
        return []
    if not eqns:
        return [subst]
    (a, b), rest = eqns[0], eqns[1:]
    a = canon(_apply(subst, a), th)
    b = canon(_apply(subst, b), th)
    if term_key(a) == term_key(b):
        return _solve(rest, subst, th, budget, limit, leq)
    out: list = []

    def try_branches(branches):
        for new_subst, new_eqns in branches:
            got = _solve(new_eqns + rest, new_subst, th, budget, limit, leq)
            out.extend(got)
            if limit is not None and len(out) >= limit:
                return True
        return False

    # Variable cases
    for x, y in ((a, b), (b, a)):
        if isinstance(x, Var):
            if isinstance(y, Var):
                if leq(y.sort, x.sort):
                    s2 = _bind(x, y, subst, th)
                elif leq(x.sort, y.sort):
                    s2 = _bind(y, x, subst, th)
                else:
                    s2 = None
            elif leq(least_sort(y), x.sort):
                s2 = _bind(x, y, subst, th)
            else:
                s2 = None
            if s2 is not None:
                try_branches([(s2, [])])
            return out
    if isinstance(a, FreshConst) or isinstance(b, FreshConst):
        return out  # unequal fresh constants (or constant vs application)
    # Both are applications.
    nil_op = _xor_head(a, th) or _xor_head(b, th)
    if nil_op is not None:
        branches = []
        for partial in _xor_solve(a, b, nil_op, th, budget, leq):
            s2 = dict(subst)
            ok = True
            new_eqns = []
            for v, t in partial:
                if isinstance(v, Var):
                    if not leq(least_sort(t), v.sort):
                        ok = False
                        break
                    s3 = _bind(v, t, s2, th)
                    if s3 is None:
                        ok = False
                        break
                    s2 = s3
                else:
                    new_eqns.append((v, t))
            if ok:
                branches.append((s2, new_eqns))
        try_branches(branches)
        return out
    if a.op != b.op:
        return out
    ax = th.axiom(a.op)
    if ax is not None and ax.assoc and ax.comm:
        # Same AC operator without nilpotence: permutation branches.
        if len(a.args) != len(b.args):
            return out
        from itertools import permutations

        for perm in permutations(range(len(b.args))):
            if try_branches([(dict(subst),
                              [(a.args[i], b.args[perm[i]]) for i in range(len(a.args))])]):
                break
        return out
    if len(a.args) != len(b.args):
        return out
    orders = [b.args]
    if ax is not None and ax.comm and len(b.args) == 2:
        orders = [b.args, b.args[::-1]]
    for order in orders:
        if try_branches([(dict(subst), list(zip(a.args, order)))]):
            break
    return out


def _default_leq(s1: str, s2: str) -> bool:
    return s1 == s2 or s2 == "Msg"


def _xor_head(t: Term, th: EquationalTheory) -> Optional[str]:
    if isinstance(t, App) and th.is_nilpotent(t.op):
        return t.op
    return None


def _xor_solve(a: Term, b: Term, op: str, th: EquationalTheory,
               budget: _Budget, leq) -> list:
    """Candidate branch constraints for a =? b under a nilpotent AC op.

    Each candidate is a list of (left, right) constraints; a Var on the
    left means a proposed binding, anything else is a residual equation.
    """
    atoms = _sym_diff(ac_atoms(a, op, th) + ac_atoms(b, op, th))
    return _solve_atoms(atoms, a.sort if isinstance(a, App) else b.sort, op, th,
                        budget, leq)


def _sym_diff(atoms: list) -> list:
    counted: dict = {}
    for t in atoms:
        counted.setdefault(term_key(t), [0, t])[0] += 1
    out = []
    for key in sorted(counted):
        n, t = counted[key]
        out.extend([t] * (n % 2))
    return out


def _solve_atoms(atoms: list, sort: str, op: str, th: EquationalTheory,
                 budget: _Budget, leq) -> list:
    if not atoms:
        return [[]]
    # A top-level variable not occurring elsewhere has a unique most general
    # solution in the Boolean group: bind it to the sum of the rest.
    for i, v in enumerate(atoms):
        if isinstance(v, Var):
            rest = atoms[:i] + atoms[i + 1 :]
            rhs = ac_combine(rest, op, th, sort)
            if v not in variables(rhs) and leq(least_sort(rhs), v.sort):
                return [[(v, rhs)]]
    # Otherwise alien atoms must cancel pairwise.
    if len(atoms) % 2 == 1 or not atoms:
        return []
    if not budget.spend():
        return []
    out = []
    a0, tail = atoms[0], atoms[1:]
    seen_partner = set()
    for j, aj in enumerate(tail):
        pk = term_key(aj)
        if pk in seen_partner:
            continue
        seen_partner.add(pk)
        for s in _solve([(a0, aj)], {}, th, budget, leq=leq):
            remaining = [canon(_apply(s, t), th) for k, t in enumerate(tail) if k != j]
            remaining = _sym_diff(
                [x for t in remaining for x in ac_atoms(t, op, th)])
            for rest_sol in _solve_atoms(remaining, sort, op, th, budget, leq):
                out.append([(v, t) for v, t in s.items()] + rest_sol)
    return out


def unify_canonical(t1: Term, t2: Term, th: EquationalTheory,
                    leq=None, budget: Optional[_Budget] = None) -> list:
    """Unifiers modulo structural axioms only (no rule narrowing)."""
    if budget is None:
        budget = _Budget(BRANCH_BUDGET)
    dicts = _solve([(t1, t2)], {}, th, budget, leq=leq)
    out = []
    seen = set()
    for d in dicts:
        try:
            s = Subst(d)
        except SortClash:
            continue
        key = _subst_key(s)
        if key not in seen:
            seen.add(key)
            out.append(s)
    return out


def _subst_key(s: Subst):
    return tuple(sorted((v.name, v.sort, term_key(t)) for v, t in s.items()))


_variant_counter = [0]


def variants(t: Term, th: EquationalTheory, depth: int = VARIANT_DEPTH) -> tuple:
    """Bounded folding variant narrowing: pairs (variant, substitution).

    Returns (variant_list, complete) where complete is False if the depth
    bound cut narrowing short.
    """
    base_vars = variables(t)
    nf = normalize(t, th)
    seen = {(_pair_key(nf, IDENTITY, base_vars)): None}
    frontier = [(nf, IDENTITY)]
    out = [(nf, IDENTITY)]
    complete = True
    for _ in range(depth):
        new_frontier = []
        for (u, sigma) in frontier:
            for (u2, sigma2) in _narrow_once(u, sigma, th, base_vars):
                key = _pair_key(u2, sigma2, base_vars)
                if key in seen:
                    continue
                seen[key] = None
                new_frontier.append((u2, sigma2))
                out.append((u2, sigma2))
        frontier = new_frontier
        if not frontier:
            break
    else:
        if frontier:
            complete = False
    return out, complete


def _pair_key(u, sigma, base_vars):
    # Identify variants up to renaming of the fresh narrowing variables.
    ren: dict = {}

    def k(t):
        if isinstance(t, Var):
            if t in base_vars:
                return (0, t.name, t.sort)
            return (3, ren.setdefault(t, len(ren)), t.sort)
        if isinstance(t, FreshConst):
            return (1, t.ident)
        return (2, t.op, len(t.args)) + tuple(k(a) for a in t.args)

    ukey = k(u)
    skey = tuple(sorted((v.name, k(sigma(v))) for v in base_vars))
    return (ukey, skey)


def _narrow_once(u: Term, sigma: Subst, th: EquationalTheory, base_vars):
    from .terms import positions, replace_at, subterm_at

    results = []
    for pos in positions(u):
        sub = subterm_at(u, pos)
        if not isinstance(sub, App):
            continue
        for lhs, rhs in th.rules:
            _variant_counter[0] += 1
            suffix = f"v{_variant_counter[0]}"
            ren = {v: Var(f"{v.name}%{suffix}", v.sort) for v in variables(lhs)}
            rs = Subst(ren, _trusted=True)
            lhs_r, rhs_r = rs(lhs), rs(rhs)
            for theta in unify_canonical(sub, lhs_r, th):
                u2 = normalize(theta(replace_at(u, pos, rhs_r)), th)
                sigma2 = sigma.compose(theta)
                results.append((u2, sigma2))
    return results


_unify_cache: dict = {}
_aux_counter = [0]


def unify_modulo(t1: Term, t2: Term, th: EquationalTheory,
                 leq=None, variant_depth: int = VARIANT_DEPTH,
                 branch_budget: int = BRANCH_BUDGET) -> UnifierSet:
    """A complete-up-to-bounds set of verified unifiers modulo th.

    The two terms may share variables.  Unifiers are restricted to the
    variables of the problem, verified by substitute-normalize-compare,
    and minimized by discarding instances of more general unifiers.

    Results are memoized up to a renaming of variables and fresh
    constants, since backward search poses the same problems over and
    over with freshly renamed strand instances.
    """
    fwd_vars: dict = {}
    fwd_fresh: dict = {}

    def canonize(t: Term) -> Term:
        if isinstance(t, Var):
            got = fwd_vars.get(t)
            if got is None:
                got = Var(f"%W{len(fwd_vars)}", t.sort)
                fwd_vars[t] = got
            return got
        if isinstance(t, FreshConst):
            got = fwd_fresh.get(t)
            if got is None:
                got = FreshConst(len(fwd_fresh), "c")
                fwd_fresh[t] = got
            return got
        if isinstance(t, App) and t.args:
            return App(t.op, tuple(canonize(a) for a in t.args), t.sort)
        return t

    c1, c2 = canonize(t1), canonize(t2)
    cache_key = (term_key(c1), term_key(c2), variant_depth, branch_budget,
                 th, getattr(leq, "__self__", leq))
    hit = _unify_cache.get(cache_key)
    if hit is None:
        hit = _unify_modulo_raw(c1, c2, th, leq, variant_depth, branch_budget)
        if len(_unify_cache) >= 100_000:  # bound the memo's footprint
            _unify_cache.clear()
        _unify_cache[cache_key] = hit
    inv_vars = {cv: ov for ov, cv in fwd_vars.items()}
    inv_fresh = {cf: of for of, cf in fwd_fresh.items()}
    if not hit.unifiers:
        return hit
    _aux_counter[0] += 1
    aux = f"%g{_aux_counter[0]}"

    def back(t: Term) -> Term:
        if isinstance(t, Var):
            got = inv_vars.get(t)
            if got is not None:
                return got
            return Var(f"{t.name}{aux}", t.sort)
        if isinstance(t, FreshConst):
            return inv_fresh.get(t, t)
        if isinstance(t, App) and t.args:
            return App(t.op, tuple(back(a) for a in t.args), t.sort)
        return t

    out = []
    for s in hit.unifiers:
        out.append(Subst({inv_vars[v]: back(u) for v, u in s.items()
                          if v in inv_vars}, _trusted=True))
    return UnifierSet(tuple(out), hit.complete)


def _unify_modulo_raw(t1: Term, t2: Term, th: EquationalTheory,
                      leq, variant_depth: int,
                      branch_budget: int) -> UnifierSet:
    problem_vars = variables(t1) | variables(t2)
    if th.is_free():
        s = syntactic_unify(t1, t2)
        return UnifierSet((s.restrict(problem_vars),) if s is not None else ())
    pair = App("%pair", (t1, t2), "Msg")
    vars_list, complete = variants(pair, th, variant_depth)
    budget = _Budget(branch_budget)
    found = []
    seen = set()
    for (u, sigma) in vars_list:
        if not (isinstance(u, App) and u.op == "%pair"):
            continue
        u1, u2 = u.args
        for theta in unify_canonical(u1, u2, th, leq=leq, budget=budget):
            cand = _deflate(sigma.compose(theta).restrict(problem_vars),
                            problem_vars)
            if not eq_modulo(cand(t1), cand(t2), th):
                continue
            key = _subst_key(cand)
            if key in seen:
                continue
            seen.add(key)
            found.append(cand)
    if budget.blown:
        complete = False
    minimized = _minimize(found, problem_vars, th)
    minimized.sort(key=_subst_key)
    return UnifierSet(tuple(minimized), complete)


def _deflate(s: Subst, problem_vars: set) -> Subst:
    """Swap bindings of problem variables to auxiliary narrowing variables.

    A binding K -> W where W is an auxiliary variable names the same most
    general unifier as W -> K with K left untouched; the latter keeps the
    problem variables visible.
    """
    m = dict(s)
    changed = True
    while changed:
        changed = False
        for v in list(m):
            t = m[v]
            if isinstance(t, Var) and t not in problem_vars and t.sort == v.sort:
                swap = Subst({t: v}, _trusted=True)
                del m[v]
                m = {k: swap(u) for k, u in m.items()}
                changed = True
                break
    return Subst(m)


def _minimize(substs: list, problem_vars: set, th: EquationalTheory) -> list:
    """Drop unifiers that are instances of another unifier in the set."""
    keep = []
    for i, s in enumerate(substs):
        redundant = False
        for j, g in enumerate(substs):
            if i == j:
                continue
            if _is_instance_of(g, s, problem_vars, th):
                if _is_instance_of(s, g, problem_vars, th) and j > i:
                    continue  # equivalent pair: keep the first one
                redundant = True
                break
        if not redundant:
            keep.append(s)
    return keep


def _is_instance_of(general: Subst, specific: Subst, problem_vars: set,
                    th: EquationalTheory) -> bool:
    """True if specific = general . rho (modulo axioms) on the problem vars."""
    pvs = sorted(problem_vars, key=term_key)
    gen = App("%tup", tuple(normalize(general(v), th) for v in pvs), "Msg")
    spe = App("%tup", tuple(normalize(specific(v), th) for v in pvs), "Msg")
    svars = sorted(variables(spe), key=term_key)
    freeze = {v: App(_FREEZE_PREFIX + v.name, (), v.sort) for v in svars}
    frozen = Subst(freeze, _trusted=True)(spe)
    for s in unify_canonical(gen, frozen, th, budget=_Budget(128)):
        if eq_modulo(s(gen), frozen, th):
            return True
    return False


def xor_unify(t1: Term, t2: Term, th: EquationalTheory, leq=None) -> UnifierSet:
    """Unification in the nilpotent-AC (exclusive-or) fragment."""
    if not th.nilpotent_ops():
        raise ValueError("theory has no nilpotent operator")
    problem_vars = variables(t1) | variables(t2)
    budget = _Budget(BRANCH_BUDGET)
    out = []
    for s in unify_canonical(t1, t2, th, leq=leq, budget=budget):
        cand = s.restrict(problem_vars)
        if eq_modulo(cand(t1), cand(t2), th):
            out.append(cand)
    minimized = _minimize(out, problem_vars, th)
    minimized.sort(key=_subst_key)
    return UnifierSet(tuple(minimized), not budget.blown)


_freeze_counter = [0]
_FREEZE_PREFIX = "%frz%"


def match_modulo(pattern: Term, target: Term, th: EquationalTheory,
                 leq=None, variant_depth: int = VARIANT_DEPTH) -> UnifierSet:
    """One-sided unification: target variables are treated as constants."""
    tvars = sorted(variables(target), key=term_key)
    freeze = {v: App(_FREEZE_PREFIX + v.name, (), v.sort) for v in tvars}
    thaw = {c.op: v for v, c in freeze.items()}
    frozen_target = Subst(freeze, _trusted=True)(target)
    got = unify_modulo(pattern, frozen_target, th, leq=leq,
                       variant_depth=variant_depth)
    pvars = variables(pattern)
    out = []
    for s in got:
        m = {}
        ok = True
        for v, t in s.items():
            if v not in pvars:
                continue
            m[v] = _thaw(t, thaw)
        if ok:
            out.append(Subst(m, _trusted=True))
    return UnifierSet(tuple(out), got.complete)


def _thaw(t: Term, thaw: dict) -> Term:
    if isinstance(t, App):
        if not t.args and t.op in thaw:
            return thaw[t.op]
        if t.args:
            return App(t.op, tuple(_thaw(a, thaw) for a in t.args), t.sort)
    return t
