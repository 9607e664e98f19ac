import pytest

from strandkit.terms import App, FreshConst, Var, const, term_key
from strandkit.theory import (
    AxiomDecl,
    EquationalTheory,
    IrregularRule,
    StepBudgetExceeded,
    canon,
    eq_modulo,
    match_ax,
    normalize,
)

ZERO = const("zero", "Msg")


def xor(*args):
    return App("xor", tuple(args), "Msg")


@pytest.fixture
def xor_theory():
    return EquationalTheory(
        rules=(),
        axioms=(("xor", AxiomDecl(assoc=True, comm=True, unit=ZERO, nilpotent=True)),),
    )


@pytest.fixture
def cancel_theory():
    A, M = Var("A", "Name"), Var("M", "Msg")
    sk = lambda a, m: App("sk", (a, m), "Msg")
    pk = lambda a, m: App("pk", (a, m), "Msg")
    return EquationalTheory(
        rules=((sk(A, pk(A, M)), M), (pk(A, sk(A, M)), M)),
    )


def test_ac_flatten_and_sort(xor_theory):
    a, b, c = const("a"), const("b"), const("c")
    t1 = xor(a, xor(b, c))
    t2 = xor(xor(c, b), a)
    assert canon(t1, xor_theory) == canon(t2, xor_theory)


def test_unit_removed(xor_theory):
    a = const("a")
    assert canon(xor(a, ZERO), xor_theory) == a
    assert canon(xor(ZERO, ZERO), xor_theory) == ZERO


def test_nilpotent_pairs_cancel(xor_theory):
    a, b = const("a"), const("b")
    assert canon(xor(a, a), xor_theory) == ZERO
    assert canon(xor(a, xor(a, b)), xor_theory) == b
    assert canon(xor(a, b, a, b), xor_theory) == ZERO


def test_canonical_form_idempotent(xor_theory):
    a, b = const("a"), const("b")
    t = canon(xor(a, xor(b, xor(a, ZERO))), xor_theory)
    assert canon(t, xor_theory) == t


def test_normalize_cancellation_rules(cancel_theory):
    a = const("a", "Name")
    m = const("m")
    t = App("sk", (a, App("pk", (a, m), "Msg")), "Msg")
    assert normalize(t, cancel_theory) == m
    nested = App("pk", (a, App("sk", (a, App("pk", (a, m), "Msg")), "Msg")), "Msg")
    assert normalize(nested, cancel_theory) == App("pk", (a, m), "Msg")


def test_normalize_under_context(cancel_theory):
    a = const("a", "Name")
    m = const("m")
    red = App("sk", (a, App("pk", (a, m), "Msg")), "Msg")
    t = App("h", (red, red), "Msg")
    assert normalize(t, cancel_theory) == App("h", (m, m), "Msg")


def test_normalize_is_idempotent(cancel_theory):
    a = const("a", "Name")
    t = App("pk", (a, App("sk", (a, Var("M")), "Msg")), "Msg")
    nf = normalize(t, cancel_theory)
    assert normalize(nf, cancel_theory) == nf


def test_step_budget_flags_nontermination():
    x = Var("X")
    loop = EquationalTheory(
        rules=((App("f", (x,)), App("f", (App("f", (x,)),))),),
        step_budget=50,
    )
    with pytest.raises(StepBudgetExceeded):
        normalize(App("f", (const("c"),)), loop)


def test_irregular_rules_rejected():
    with pytest.raises(IrregularRule):
        EquationalTheory(rules=((Var("X"), const("c")),))
    with pytest.raises(IrregularRule):
        EquationalTheory(rules=((App("f", (Var("X"),)), Var("Y")),))


def test_match_modulo_ac(xor_theory):
    a, b = const("a"), const("b")
    X = Var("X")
    pat = xor(a, X)
    subj = canon(xor(b, a), xor_theory)
    sols = list(match_ax(canon(pat, xor_theory), subj, xor_theory))
    assert any(m[X] == b for m in sols)


def test_eq_modulo(cancel_theory):
    a = const("a", "Name")
    m = const("m")
    assert eq_modulo(App("sk", (a, App("pk", (a, m), "Msg")), "Msg"), m, cancel_theory)
    assert not eq_modulo(m, const("m2"), cancel_theory)
