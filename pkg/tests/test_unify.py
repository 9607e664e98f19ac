import pytest

from strandkit.terms import App, FreshConst, Subst, Var, const, term_key, variables
from strandkit.theory import AxiomDecl, EquationalTheory, eq_modulo, normalize
from strandkit.unify import (
    UnifierSet,
    match_modulo,
    syntactic_unify,
    unify_modulo,
    variants,
    xor_unify,
)

ZERO = const("zero", "Msg")


def xor(*args):
    return App("xor", tuple(args), "Msg")


XOR_TH = EquationalTheory(
    axioms=(("xor", AxiomDecl(assoc=True, comm=True, unit=ZERO, nilpotent=True)),),
)

X, Y, Z, K, M = Var("X"), Var("Y"), Var("Z"), Var("K"), Var("M")


def e(k, m):
    return App("e", (k, m), "Msg")


def d(k, m):
    return App("d", (k, m), "Msg")


ED_TH = EquationalTheory(rules=((d(X, e(X, Z)), Z), (e(X, d(X, Z)), Z)))


def test_syntactic_unify_basic():
    s = syntactic_unify(App("f", (X, const("b"))), App("f", (const("a"), Y)))
    assert s is not None
    assert s(X) == const("a") and s(Y) == const("b")


def test_syntactic_unify_occurs_check():
    assert syntactic_unify(X, App("f", (X,))) is None


def test_syntactic_unify_clash():
    assert syntactic_unify(const("a"), const("b")) is None


def test_syntactic_unify_shared_vars():
    s = syntactic_unify(App("f", (X, X)), App("f", (Y, const("a"))))
    assert s is not None
    assert s(X) == const("a") and s(Y) == const("a")


def test_fresh_constants_unify_only_with_themselves():
    f1, f2 = FreshConst(1), FreshConst(2)
    assert syntactic_unify(f1, f2) is None
    assert syntactic_unify(f1, f1) is not None


def test_variants_of_decrypt():
    t = d(K, X)
    vs, complete = variants(t, ED_TH)
    assert complete
    # the identity variant plus the collapse where X is an encryption
    assert len(vs) == 2
    terms = {term_key(v) for v, _ in vs}
    assert term_key(t) in terms


def test_unify_modulo_decrypt_csu():
    got = unify_modulo(d(K, X), Y, ED_TH)
    assert got.complete
    assert len(got) == 2
    for s in got:
        assert eq_modulo(s(d(K, X)), s(Y), ED_TH)
    shapes = set()
    for s in got:
        if Y in s.domain():
            assert s(Y) == d(K, X)
            shapes.add("y")
        else:
            assert s(X) == e(K, Y)
            shapes.add("x")
    assert shapes == {"x", "y"}


def test_unify_modulo_verifies_all_unifiers():
    t1 = e(K, d(K, X))
    t2 = const("m")
    got = unify_modulo(t1, t2, ED_TH)
    assert got
    for s in got:
        assert eq_modulo(s(t1), s(t2), ED_TH)


def test_xor_unify_single_variable():
    a, b = const("na"), const("nb")
    got = xor_unify(xor(X, b), xor(a, b), XOR_TH)
    assert len(got) == 1
    (s,) = got.unifiers
    assert s(X) == a


def test_xor_unify_master_solution():
    a, b = const("na"), const("nb")
    got = xor_unify(xor(X, Y), xor(a, b), XOR_TH)
    assert len(got) == 1
    (s,) = got.unifiers
    assert eq_modulo(s(xor(X, Y)), xor(a, b), XOR_TH)


def test_xor_unify_cancellation_to_zero():
    a = const("na")
    got = xor_unify(xor(X, X), ZERO, XOR_TH)
    assert len(got) == 1
    assert got.unifiers[0].is_identity()
    got2 = xor_unify(xor(a, a), ZERO, XOR_TH)
    assert got2 and got2.unifiers[0].is_identity()


def test_xor_unify_alien_pairing():
    f = lambda t: App("f", (t,), "Msg")
    a = const("a")
    got = xor_unify(xor(f(X), f(a)), ZERO, XOR_TH)
    assert any(s(X) == a for s in got)


def test_xor_unify_under_constructor():
    a, b = const("na"), const("nb")
    t1 = App("pk", (const("c", "Name"), xor(X, b)), "Msg")
    t2 = App("pk", (const("c", "Name"), xor(a, b)), "Msg")
    got = unify_modulo(t1, t2, XOR_TH)
    assert any(s(X) == a for s in got)


def test_unify_modulo_fails_cleanly():
    got = unify_modulo(const("a"), const("b"), ED_TH)
    assert not got
    assert got.complete


def test_match_modulo_one_sided():
    pat = App("pk", (X, Y), "Msg")
    target = App("pk", (Var("A", "Msg"), const("m")), "Msg")
    got = match_modulo(pat, target, ED_TH)
    assert got
    s = got.unifiers[0]
    assert s(pat) == target
    # target variables must not be instantiated
    assert all(v in variables(pat) for v in s.domain())


def test_match_modulo_respects_theory():
    a = const("a", "Name")
    pat = App("sk", (a, App("pk", (a, X), "Msg")), "Msg")
    target = const("m")
    th = EquationalTheory(
        rules=((App("sk", (Var("A", "Name"), App("pk", (Var("A", "Name"), M), "Msg")), "Msg"), M),)
    )
    got = match_modulo(pat, target, th)
    assert any(eq_modulo(s(pat), target, th) for s in got)


def test_unifier_sets_are_deterministic():
    got1 = unify_modulo(d(K, X), Y, ED_TH)
    got2 = unify_modulo(d(K, X), Y, ED_TH)
    assert [repr(s) for s in got1] == [repr(s) for s in got2]
