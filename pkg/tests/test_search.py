"""Breadth-first backward reachability, tracing and comparison reports."""
import pathlib

import pytest

from strandkit.dsl import attack_state, parse_document
from strandkit.model import (
    KNOWN,
    IntruderFact,
    Minter,
    SignedMessage,
    StrandInstance,
    SymbolicState,
    instantiate,
)
from strandkit.search import (
    ATTACK_FOUND,
    INCONCLUSIVE,
    SECURE_FINITE,
    SearchBudget,
    bisimulation_report,
    level_keys,
    level_states,
    reachability_search,
    trace_replay,
    trace_to_dot,
)
from strandkit.semantics import ABSTRACT, BASIC, SYNC, runtime_spec, trans_inv
from strandkit.terms import Var

SPECS = pathlib.Path(__file__).resolve().parents[1] / "specs"


def load(name):
    return parse_document((SPECS / name).read_text())


@pytest.fixture(scope="module")
def nsl():
    return load("nsl.strand")


@pytest.fixture(scope="module")
def nsl_db():
    return load("nsl_db.strand")


def test_goal_state_is_attack(nsl):
    spec = runtime_spec(nsl, BASIC)
    start = SymbolicState()  # already initial
    res = reachability_search(start, spec, BASIC, SearchBudget(max_depth=1))
    assert res.verdict == ATTACK_FOUND
    assert res.trace is not None and len(res.trace) == 1


def test_trivial_send_found_and_replayed(nsl):
    spec = runtime_spec(nsl, BASIC)
    sig = spec.signature
    m = sig.make("pk", sig.make("a"), sig.make("b"))
    start = SymbolicState((StrandInstance("x", (SignedMessage("+", m),), 1),))
    res = reachability_search(start, spec, BASIC, SearchBudget(max_depth=2))
    assert res.found
    assert [ts.rule for ts in res.trace][1:] == ["send_silent"]
    assert trace_replay(res, spec, BASIC)


def test_unsatisfiable_demand_is_secure_finite(nsl):
    # nothing in the initial knowledge and no rule produces a bare fresh
    # nonce of an honest principal faster than the depth bound
    spec = runtime_spec(nsl, BASIC)
    sig = spec.signature
    minter = Minter()
    secret = sig.make("n", sig.make("a"), minter.fresh("r"))
    start = SymbolicState((), (IntruderFact(KNOWN, secret),))
    res = reachability_search(start, spec, BASIC,
                              SearchBudget(max_depth=3, max_states=5000))
    assert not res.found


def test_depth_budget_gives_inconclusive(nsl):
    doc = nsl
    spec = runtime_spec(doc, BASIC)
    start = attack_state(doc, "secrecy", spec, Minter())
    res = reachability_search(start, spec, BASIC, SearchBudget(max_depth=1))
    assert res.verdict == INCONCLUSIVE
    assert not res.found


def test_lazy_variable_demand_counts_as_satisfied(nsl):
    spec = runtime_spec(nsl, BASIC)
    start = SymbolicState((), (IntruderFact(KNOWN, Var("X", "Msg")),))
    res = reachability_search(start, spec, BASIC, SearchBudget(max_depth=1),
                              lazy_vars=True)
    assert res.found


def test_search_is_deterministic(nsl_db):
    spec = runtime_spec(nsl_db, SYNC)
    runs = []
    for _ in range(2):
        start = attack_state(nsl_db, "a1", spec, Minter())
        res = reachability_search(start, spec, SYNC,
                                  SearchBudget(max_depth=2, max_states=2000))
        runs.append((res.verdict, res.stats["states_explored"],
                     res.stats["states_enqueued"]))
    assert runs[0] == runs[1]


def test_trace_to_dot_shape(nsl):
    spec = runtime_spec(nsl, BASIC)
    sig = spec.signature
    m = sig.make("pk", sig.make("a"), sig.make("b"))
    start = SymbolicState((StrandInstance("x", (SignedMessage("+", m),), 1),))
    res = reachability_search(start, spec, BASIC, SearchBudget(max_depth=2))
    dot = trace_to_dot(res)
    assert dot.startswith("digraph") and "send_silent" in dot


def test_level_keys_and_states_agree(nsl_db):
    spec = runtime_spec(nsl_db, SYNC)
    start = attack_state(nsl_db, "a1", spec, Minter())
    keys = level_keys(start, spec, SYNC, 2)
    states = level_states(start, spec, SYNC, 2)
    assert [len(k) for k in keys[:1]] == [1]
    # every enumerated state's key appears in the level's key set
    from strandkit.model import state_key

    for lvl_states, lvl_keys in zip(states, keys):
        assert {state_key(s) for s in lvl_states} <= lvl_keys


def corrupt_modes(spec):
    """Flip every one-to-one synchronization point to one-to-many."""
    import dataclasses

    from strandkit.model import MODE_ONE_MANY, StrandSchema, SyncPoint

    schemas = {}
    for role, sch in spec.schemas.items():
        items = tuple(
            dataclasses.replace(it, mode=MODE_ONE_MANY)
            if isinstance(it, SyncPoint) else it for it in sch.items)
        schemas[role] = StrandSchema(sch.role, sch.fresh, items)
    triples = [(p, c, MODE_ONE_MANY) for (p, c, m) in spec.triples]
    return dataclasses.replace(spec, schemas=schemas, triples=triples)


def shared_parent_start(spec):
    """One finished parent and two children both just past their input
    handover: the shape that separates one-to-one from one-to-many."""
    minter = Minter()
    parent = instantiate(spec.schemas["NSL.resp"], minter, bar=4)
    c1 = instantiate(spec.schemas["DB.init"], minter, bar=1)
    c2 = instantiate(spec.schemas["DB.init"], minter, bar=1)
    return SymbolicState((parent, c1, c2))


def test_bisimulation_divergence_on_mode_corruption(nsl_db):
    sync_spec = runtime_spec(nsl_db, SYNC)
    abs_spec = runtime_spec(nsl_db, ABSTRACT)
    good_start = shared_parent_start(sync_spec)
    ok = bisimulation_report(trans_inv(good_start, sync_spec), abs_spec,
                             good_start, sync_spec, 2)
    assert ok["equivalent"]
    # under one-to-many the single parent hands over to the second child
    # as well, a state the one-to-one rules cannot reach
    bad_sync = corrupt_modes(sync_spec)
    bad_start = shared_parent_start(bad_sync)
    bad = bisimulation_report(trans_inv(bad_start, bad_sync), abs_spec,
                              bad_start, bad_sync, 2)
    assert not bad["equivalent"]
    first_bad = next(lv for lv in bad["levels"] if not lv["matched"])
    assert first_bad["sync_states"] > first_bad["common"]
