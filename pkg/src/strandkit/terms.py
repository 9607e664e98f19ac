"""Order-sorted terms, signatures, positions and substitutions.

Terms come in three shapes: named variables with a sort, fresh constants
(nonce seeds minted once per strand instance, never substituted for), and
operator applications.  Every application carries the result sort computed
when it was built, so least-sort lookup never needs the signature again.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Optional, Sequence, Union

MSG = "Msg"
FRESH = "Fresh"


class IllTyped(Exception):
    """A term does not respect the declared operator profiles."""


class SortClash(Exception):
    """A substitution binds a variable to a term of an incompatible sort."""


class InvalidPosition(Exception):
    """A position does not exist in the term it is applied to."""


class SignatureClash(Exception):
    """Two signatures declare the same operator with different profiles."""


@dataclass(frozen=True)
class Var:
    name: str
    sort: str = MSG

    def __repr__(self) -> str:
        return f"{self.name}:{self.sort}"


@dataclass(frozen=True)
class FreshConst:
    """A fresh value minted for one strand instance.

    Fresh constants behave like free constants: they unify only with
    themselves and with variables, and no substitution ever replaces them.
    """

    ident: int
    hint: str = "r"

    @property
    def sort(self) -> str:
        return FRESH

    def __repr__(self) -> str:
        return f"{self.hint}!{self.ident}"


@dataclass(frozen=True)
class App:
    op: str
    args: tuple = ()
    sort: str = MSG

    def __repr__(self) -> str:
        if not self.args:
            return self.op
        return f"{self.op}({', '.join(map(repr, self.args))})"


def _app_hash(self: "App") -> int:
    h = self.__dict__.get("_hash")
    if h is None:
        h = hash((self.op, self.args, self.sort))
        object.__setattr__(self, "_hash", h)
    return h


# Deep terms are hashed constantly (substitution maps, memo tables, state
# keys); caching the hash on the node turns that from O(size) into O(1).
App.__hash__ = _app_hash

Term = Union[Var, FreshConst, App]
Position = tuple


def const(name: str, sort: str = MSG) -> App:
    return App(name, (), sort)


def least_sort(t: Term) -> str:
    return t.sort


def is_ground(t: Term) -> bool:
    if isinstance(t, Var):
        return False
    if isinstance(t, App):
        return all(is_ground(a) for a in t.args)
    return True


def variables(t: Term) -> set:
    """All variables occurring in a term (or tuple of terms)."""
    out: set = set()
    _collect_vars(t, out)
    return out


def _collect_vars(t, out: set) -> None:
    if isinstance(t, Var):
        out.add(t)
    elif isinstance(t, App):
        for a in t.args:
            _collect_vars(a, out)
    elif isinstance(t, (tuple, list)):
        for a in t:
            _collect_vars(a, out)


def fresh_constants(t) -> set:
    out: set = set()
    _collect_fresh(t, out)
    return out


def _collect_fresh(t, out: set) -> None:
    if isinstance(t, FreshConst):
        out.add(t)
    elif isinstance(t, App):
        for a in t.args:
            _collect_fresh(a, out)
    elif isinstance(t, (tuple, list)):
        for a in t:
            _collect_fresh(a, out)


def positions(t: Term) -> Iterator[Position]:
    """All positions of t, root first, in left-to-right order."""
    yield ()
    if isinstance(t, App):
        for i, a in enumerate(t.args):
            for p in positions(a):
                yield (i,) + p


def subterm_at(t: Term, pos: Position) -> Term:
    for i in pos:
        if not isinstance(t, App) or i >= len(t.args):
            raise InvalidPosition(f"no position {pos}")
        t = t.args[i]
    return t


def replace_at(t: Term, pos: Position, u: Term) -> Term:
    if not pos:
        return u
    if not isinstance(t, App) or pos[0] >= len(t.args):
        raise InvalidPosition(f"no position {pos}")
    i = pos[0]
    args = t.args[:i] + (replace_at(t.args[i], pos[1:], u),) + t.args[i + 1 :]
    return App(t.op, args, t.sort)


def term_key(t: Term):
    """Total order key: variables < fresh constants < applications."""
    if isinstance(t, Var):
        return (0, t.name, t.sort)
    if isinstance(t, FreshConst):
        return (1, t.ident)
    k = t.__dict__.get("_key")
    if k is None:
        k = (2, t.op, len(t.args)) + tuple(term_key(a) for a in t.args)
        object.__setattr__(t, "_key", k)
    return k


def term_size(t: Term) -> int:
    if isinstance(t, App):
        return 1 + sum(term_size(a) for a in t.args)
    return 1


class Signature:
    """Sorts with a subsort partial order, plus operator declarations.

    Operators are keyed by (name, arity) so a role name can serve both as a
    constant announcement and as a unary tag constructor.
    """

    def __init__(self) -> None:
        self.sorts: set = {MSG, FRESH}
        self._direct: dict = {}  # sort -> set of direct supersorts
        self.ops: dict = {}  # (name, arity) -> (argsorts, result)
        self._closure: Optional[dict] = None

    def copy(self) -> "Signature":
        sig = Signature()
        sig.sorts = set(self.sorts)
        sig._direct = {k: set(v) for k, v in self._direct.items()}
        sig.ops = dict(self.ops)
        return sig

    def add_sort(self, s: str) -> None:
        self.sorts.add(s)
        self._closure = None

    def add_subsort(self, sub: str, sup: str) -> None:
        self.sorts.add(sub)
        self.sorts.add(sup)
        self._direct.setdefault(sub, set()).add(sup)
        self._closure = None
        if self.leq(sup, sub) and sub != sup:
            raise SortClash(f"subsort cycle between {sub} and {sup}")

    def supersorts(self, s: str) -> set:
        if self._closure is None:
            self._closure = {}
        if s not in self._closure:
            seen = {s}
            stack = [s]
            while stack:
                cur = stack.pop()
                for sup in self._direct.get(cur, ()):
                    if sup not in seen:
                        seen.add(sup)
                        stack.append(sup)
            self._closure[s] = seen
        return self._closure[s]

    def leq(self, s1: str, s2: str) -> bool:
        return s2 in self.supersorts(s1)

    def declare_op(self, name: str, argsorts: Sequence[str], result: str) -> None:
        key = (name, len(argsorts))
        profile = (tuple(argsorts), result)
        if key in self.ops and self.ops[key] != profile:
            raise SignatureClash(
                f"operator {name}/{len(argsorts)} redeclared with a different profile"
            )
        for s in list(argsorts) + [result]:
            if s not in self.sorts:
                raise IllTyped(f"unknown sort {s} in declaration of {name}")
        self.ops[key] = profile

    def has_op(self, name: str, arity: int) -> bool:
        return (name, arity) in self.ops

    def result_sort(self, name: str, arity: int) -> str:
        return self.ops[(name, arity)][1]

    def make(self, name: str, *args: Term) -> App:
        key = (name, len(args))
        if key not in self.ops:
            raise IllTyped(f"unknown operator {name}/{len(args)}")
        argsorts, result = self.ops[key]
        for a, s in zip(args, argsorts):
            if not self.leq(least_sort(a), s):
                raise IllTyped(
                    f"argument {a!r} of {name} has sort {least_sort(a)}, needs {s}"
                )
        return App(name, tuple(args), result)

    def check_term(self, t: Term) -> None:
        """Raise IllTyped if t uses undeclared operators or breaks profiles.

        Flattened associative applications (arity above the declared 2) are
        accepted: each argument is checked against the binary profile.
        """
        if isinstance(t, (Var, FreshConst)):
            if isinstance(t, Var) and t.sort not in self.sorts:
                raise IllTyped(f"variable {t!r} has unknown sort {t.sort}")
            return
        key = (t.op, len(t.args))
        if key not in self.ops and len(t.args) > 2 and (t.op, 2) in self.ops:
            argsorts, result = self.ops[(t.op, 2)]
            for a in t.args:
                self.check_term(a)
                if not self.leq(least_sort(a), argsorts[0]):
                    raise IllTyped(f"argument {a!r} of flattened {t.op} ill-sorted")
            return
        if key not in self.ops:
            raise IllTyped(f"unknown operator {t.op}/{len(t.args)}")
        argsorts, result = self.ops[key]
        for a, s in zip(t.args, argsorts):
            self.check_term(a)
            if not self.leq(least_sort(a), s):
                raise IllTyped(
                    f"argument {a!r} of {t.op} has sort {least_sort(a)}, needs {s}"
                )
        if t.sort != result:
            raise IllTyped(f"{t!r} carries sort {t.sort}, declared result is {result}")

    def merge(self, other: "Signature") -> "Signature":
        out = self.copy()
        out.sorts |= other.sorts
        for sub, sups in other._direct.items():
            for sup in sups:
                out.add_subsort(sub, sup)
        for (name, arity), profile in other.ops.items():
            out.declare_op(name, profile[0], profile[1])
        return out


class Subst(Mapping):
    """An idempotent, sort-preserving substitution on variables."""

    __slots__ = ("_map",)

    def __init__(self, mapping: Optional[Mapping] = None, _trusted: bool = False):
        m = {v: t for v, t in (mapping or {}).items() if v != t}
        if not _trusted:
            for v, t in m.items():
                if not isinstance(v, Var):
                    raise SortClash(f"substitution domain must be variables, got {v!r}")
            # Make idempotent: substitute the map into its own ranges until no
            # domain variable remains in a range.  A cycle means the map was
            # not a valid idempotent substitution.
            for _ in range(len(m) + 1):
                dirty = False
                for v in list(m):
                    new = _apply(m, m[v])
                    if new != m[v]:
                        m[v] = new
                        dirty = True
                if not dirty:
                    break
            else:
                raise SortClash("cyclic substitution")
            for v in list(m):
                if v == m[v]:
                    del m[v]
            for v, t in m.items():
                if v in variables(t):
                    raise SortClash(f"occurs violation binding {v!r}")
        self._map = m

    def __getitem__(self, v):
        return self._map[v]

    def __iter__(self):
        return iter(self._map)

    def __len__(self):
        return len(self._map)

    def __call__(self, t):
        return _apply(self._map, t)

    def __repr__(self) -> str:
        items = sorted(self._map.items(), key=lambda kv: kv[0].name)
        return "{" + ", ".join(f"{v.name} -> {t!r}" for v, t in items) + "}"

    def is_identity(self) -> bool:
        return not self._map

    def compose(self, other: "Subst") -> "Subst":
        """Return the substitution equivalent to applying self, then other."""
        m = {v: other(t) for v, t in self._map.items()}
        for v, t in other._map.items():
            if v not in m:
                m[v] = t
        return Subst(m)

    def restrict(self, vars_keep) -> "Subst":
        keep = set(vars_keep)
        return Subst({v: t for v, t in self._map.items() if v in keep}, _trusted=True)

    def domain(self) -> set:
        return set(self._map)


IDENTITY = Subst()


def _apply(m: Mapping, t):
    if isinstance(t, Var):
        return m.get(t, t)
    if isinstance(t, App):
        if not t.args:
            return t
        return App(t.op, tuple(_apply(m, a) for a in t.args), t.sort)
    if isinstance(t, tuple):
        return tuple(_apply(m, a) for a in t)
    return t


_rename_counter = itertools.count(1)


def rename_apart(obj, reserved) -> tuple:
    """Rename the variables of obj away from the reserved variable set.

    Returns (renamed_obj, renaming).  The renaming is injective on the
    object's variables and its new names collide neither with reserved
    names nor with the object's own.
    """
    own = variables(obj)
    reserved_names = {v.name for v in reserved} | {v.name for v in own}
    ren = {}
    for v in sorted(own, key=term_key):
        if any(r.name == v.name for r in reserved):
            while True:
                cand = f"{v.name}#{next(_rename_counter)}"
                if cand not in reserved_names:
                    break
            reserved_names.add(cand)
            ren[v] = Var(cand, v.sort)
    s = Subst(ren, _trusted=True)
    return s(obj), s


def rename_all(obj, suffix: str):
    """Rename every variable of obj by appending a suffix; returns (obj', Subst)."""
    own = variables(obj)
    ren = {v: Var(f"{v.name}#{suffix}", v.sort) for v in own}
    s = Subst(ren, _trusted=True)
    return s(obj), s
