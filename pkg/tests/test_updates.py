import random

import pytest
from hypothesis import given, settings, strategies as st

from ecalp import updates as up
from ecalp.kb import replay
from ecalp.parser import parse_clauses, parse_term
from ecalp.solver import SolverError, solve_all, succeeds
from ecalp.terms import Atom, Number, Text
from helpers import build_case, check_transaction, state_of, to_ops
from oracles import random_ops

XOR = "integrity(xor(p(x), neg(p(x))))."


def consistent_example():
    return state_of(("facts", "neg(p(x))."), ("ics", XOR))


def test_xor_constraint_evaluation():
    ic = up.constraint_from_term(parse_term("xor(p(x), neg(p(x)))"))
    both = state_of("p(x). neg(p(x)).")
    assert up.evaluate_constraint(ic, both)[0]
    assert not up.evaluate_constraint(ic, state_of("neg(p(x))."))[0]
    assert up.evaluate_constraint(ic, state_of("other."))[0]   # neither holds
    assert not up.evaluate_constraint(parse_term("forbidden(f(1))"), state_of("x."))[0]


def test_mutex_and_custom_constraints():
    st_ = state_of("a. b. c(1). c(2).")
    assert up.evaluate_constraint(parse_term("mutex(a, b)"), st_)[0]
    assert not up.evaluate_constraint(parse_term("mutex(a, z)"), st_)[0]
    violated_, witness = up.evaluate_constraint(parse_term("c(X)"), st_)
    assert violated_ and list(witness.values()) == [Number(1)]
    _, all_w = up.evaluate_constraint(parse_term("c(X)"), st_, all_witnesses=True)
    assert len(all_w) == 2


def test_integrity_on_example_states():
    base = consistent_example()
    assert up.test_integrity(base) == []
    forced = base.add(Atom("force"), parse_clauses("p(x)."))
    (v,) = up.test_integrity(forced)
    assert v.constraint.kind == "xor"
    assert up.test_integrity(state_of("f(1).")) == []


def test_hypothetical_integrity():
    base = consistent_example()
    r = up.test_integrity_hypothetical(base, parse_term("p(x)"))
    assert not r.passed and len(r.violations) == 1
    assert up.test_integrity_hypothetical(base, parse_term("q(y)")).passed
    assert up.test_integrity_hypothetical(base, parse_term("neg(p(x))")).passed
    # removing the only neg(p(x)) leaves neither side true
    assert not up.test_integrity_hypothetical(base, parse_term("neg(p(x))"), removal=True).passed
    assert base.state_index == 2
    with pytest.raises(ValueError):
        up.test_integrity_hypothetical(base, parse_term("p(X)"))


def test_hypothetical_builtins():
    base = consistent_example()
    assert not succeeds("testIntegrity(p(x))", base)
    assert succeeds("testIntegrity(q(y))", base)
    assert succeeds("testIntegrity", base)
    assert not succeeds("testIntegrity(neg(p(x)), remove)", base)


def test_non_ground_xor_flounders():
    st_ = state_of("integrity(xor(p(X), neg(p(X)))). neg(p(x)).")
    with pytest.raises(SolverError):
        up.test_integrity(st_)


def test_rolled_back_transaction_keeps_state():
    base = consistent_example()
    res = up.run_transaction(base, [up.Add(Atom("id9"), "p(x).")])
    assert res.outcome == "rolled_back" and res.state is base
    assert len(res.violations) == 1


def test_committed_transaction():
    res = up.run_transaction(state_of("x."), [up.Add(Atom("idA"), "f(1)"), up.Add(Atom("idB"), "g(1)")])
    assert res.committed and succeeds("f(1), g(1)", res.state)
    assert len(res.records) == 2


def test_replace_idiom():
    base = state_of(("id1", "f(1)."))
    res = up.run_transaction(base, [up.Remove(Text("id1")), up.Add(Text("id1"), "f(2).")])
    assert res.committed
    assert not succeeds("f(1)", res.state) and succeeds("f(2)", res.state)
    assert replay(res.state.history).same_clauses(res.state)


def test_bad_payload_rolls_back():
    base = state_of("x.")
    res = up.run_transaction(base, [up.Add(Atom("ok"), "f(1)."), up.Add(Atom("bad"), "f(")])
    assert not res.committed and res.state is base and "payload" in res.diagnostic


def test_placeholder_payload():
    (c1, c2, c3) = up.Add(Atom("id3"), "r(_0):-f(_0),g(_0).f(_0).g(_1).",
                          (Number(1), Number(2))).clauses()
    assert str(c1) == "r(1) :- f(1), g(1)." and str(c2) == "f(1)." and str(c3) == "g(2)."
    (c,) = up.Add(Atom("id4"), "h(_, _).", (Number(7), Number(8))).clauses()
    assert str(c) == "h(7,8)."


def test_update_builtins_emit_operations():
    (ans,) = solve_all('add(id1, "f(9)."), update(id2, "g(_0).", [3]), remove(old)', state_of("x."))
    kinds = [type(i).__name__ for i in ans.intents]
    assert kinds == ["Add", "Add", "Remove"]
    res = up.run_transaction(state_of("x."), ans.intents)
    assert succeeds("f(9), g(3)", res.state)


def test_transaction_builtin_checks_integrity():
    base = consistent_example()
    assert not succeeds('transaction([add(id9, "p(x).")])', base)
    (ans,) = solve_all('transaction([add(id9, "q(x)."), remove(nothing)])', base)
    assert len(ans.intents) == 2


def test_load_file_op(tmp_path):
    path = tmp_path / "lib.ecalp"
    path.write_text("lib(1).\n")
    res = up.run_transaction(state_of("x."), [up.LoadFile(str(path))])
    assert succeeds("lib(1)", res.state)
    missing = up.run_transaction(state_of("x."), [up.LoadFile(str(tmp_path / "none"))])
    assert not missing.committed


def test_empty_transaction_rejected():
    with pytest.raises(ValueError):
        up.run_transaction(state_of("x."), [])


# -- properties ----------------------------------------------------------------

@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10 ** 9))
def test_transactions_are_atomic(seed):
    check_transaction(random.Random(seed))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10 ** 9))
def test_hypothetical_test_never_publishes(seed):
    rng = random.Random(seed)
    _, _, st_ = build_case(rng)
    idx = st_.state_index
    lit = parse_term(rng.choice(("p(x)", "q(x)", "s", "neg(p(x))")))
    up.test_integrity_hypothetical(st_, lit, removal=rng.random() < 0.5)
    assert st_.state_index == idx


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10 ** 9))
def test_split_transactions_compose(seed):
    rng = random.Random(seed)
    _, _, st_ = build_case(rng)
    ops1 = to_ops([o for o in random_ops(rng) if o[0] != "bad"])
    ops2 = to_ops([o for o in random_ops(rng) if o[0] != "bad"])
    if not ops1 or not ops2:
        return
    r1 = up.run_transaction(st_, ops1)
    if not r1.committed:
        return
    r2 = up.run_transaction(r1.state, ops2)
    if not r2.committed:
        return
    joint = up.run_transaction(st_, ops1 + ops2)
    assert joint.committed
    assert joint.state.clause_multiset() == r2.state.clause_multiset()
