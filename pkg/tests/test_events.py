import itertools
import random

import pytest
from hypothesis import given, settings, strategies as st

from ecalp.events import (
    Consume, DetectionRule, EventError, broken, compile_event_expr, consume, detect, eis_key,
    holds_interval, occurrences, parse_expr, record_occurrence,
)
from ecalp.kb import KnowledgeState
from ecalp.parser import parse_clauses, parse_term
from ecalp.solver import solve_all, succeeds
from ecalp.terms import Atom, Number, TimePoint, make_list
from helpers import state_of
from oracles import AlgebraOracle, expr_depth, random_eis, random_expr

T = lambda s: TimePoint(2005, 1, 1, 0, 0, s)  # noqa: E731
SNOOP = parse_term("sequence(b, sequence(a, c))")


def eis(*pairs, base=None):
    st_ = base or KnowledgeState.empty()
    for name, t in pairs:
        st_ = record_occurrence(st_, parse_term(name) if isinstance(name, str) else name,
                                Number(t) if isinstance(t, int) else t)
    return st_


def intervals(expr, st_, with_state=False):
    ms = compile_event_expr(parse_term(expr) if isinstance(expr, str) else expr).matches(
        occurrences(st_), st_ if with_state else None)
    return sorted({(m.start.value, m.end.value) for m in ms})


def test_record_and_query():
    st_ = eis(("a", T(1)))
    assert succeeds("occurs(a, datetime(2005,1,1,0,0,1))", st_)
    assert eis_key(Atom("a")) in st_.modules


def test_duplicate_records_kept_by_seq_no():
    st_ = eis(("a", T(1)), ("a", T(1)))
    o1, o2 = occurrences(st_)
    assert o1.interval == o2.interval and o1.seq_no < o2.seq_no


def test_holds_interval_example():
    st_ = state_of("occurs(a, datetime(2005,1,1,0,0,1)). occurs(b, datetime(2005,1,1,0,0,10)).")
    assert holds_interval(Atom("a"), Atom("b"), st_) == [(T(1), T(10))]
    (ans,) = solve_all("holdsInterval([a,b], I)", st_)
    assert ans.by_name()["I"] == make_list([T(1), T(10)])


def test_holds_interval_broken_by_terminator():
    st_ = state_of("occurs(a, datetime(2005,1,1,0,0,1)). occurs(b, datetime(2005,1,1,0,0,10)). "
                   "terminates(x, [a,b], _). occurs(x, datetime(2005,1,1,0,0,5)).")
    assert holds_interval(Atom("a"), Atom("b"), st_) == []
    assert succeeds("broken(datetime(2005,1,1,0,0,1), [a,b], datetime(2005,1,1,0,0,10))", st_)


def test_broken_needs_strict_inside():
    st_ = state_of("terminates(x, [a,b], _). occurs(x, 1). occurs(x, 10).")
    assert not broken(Number(1), parse_term("[a,b]"), Number(10), st_)
    assert broken(Number(0), parse_term("[a,b]"), Number(10), st_)
    assert not broken(Number(0), parse_term("[a,b]"), Number(10), state_of("occurs(x, 5)."))


def test_holds_interval_context_restricts_terminators():
    st_ = state_of("terminates(x, [a,b], _). occurs(a, 1). occurs(x, 5). occurs(b, 9).")
    assert holds_interval(Atom("a"), Atom("b"), st_) == []
    assert holds_interval(Atom("a"), Atom("b"), st_, context=[Atom("y")]) == [
        (Number(1), Number(9))]
    assert succeeds("holdsInterval([a,b], I, [y])", st_)


def test_point_interval_for_same_event():
    st_ = eis(("a", T(3)))
    assert holds_interval(Atom("a"), Atom("a"), st_) == [(T(3), T(3))]


def test_snoop_anomaly_examples():
    assert intervals(SNOOP, eis(("b", 1), ("a", 5), ("c", 10))) == [(1, 10)]
    assert intervals(SNOOP, eis(("a", 1), ("b", 5), ("c", 10))) == []


def test_or_detects_single_child():
    assert intervals("or(a, b)", eis(("b", 3))) == [(3, 3)]


def test_operator_semantics_samples():
    st_ = eis(("a", 1), ("b", 4), ("c", 6), ("x", 5))
    assert intervals("conjunction(c, a)", st_) == [(1, 6)]
    assert intervals("concurrent(a, b)", st_) == []
    assert intervals("concurrent(a, a)", eis(("a", 1), ("a", 1))) == [(1, 1)]
    assert intervals("xor(a, z)", st_) == [(1, 1)]
    assert intervals("xor(a, b)", st_) == []
    assert intervals("not(x, [a, b])", st_) == [(1, 4)]
    assert intervals("not(x, [a, c])", st_) == []
    assert intervals("any(2, [a, z, c])", st_) == [(1, 6)]
    assert intervals("aperiodic(c, [a, x])", st_) == []
    assert intervals("aperiodic(b, [a, x])", st_) == [(1, 4)]
    assert intervals("periodic(timespan(0,0,0,2), [a, c])", st_) == [(1, 3), (1, 5)]


def test_sequence_respects_terminators_with_state():
    st_ = state_of("occurs(a, 1). occurs(b, 9). occurs(x, 5). terminates(x, [a, b], _).")
    assert intervals("sequence(a, b)", st_) == [(1, 9)]
    assert intervals("sequence(a, b)", st_, with_state=True) == []


def test_malformed_expressions():
    for bad in ("sequence(a)", "any(3, [a, b])", "periodic(timespan(0,0,0,0), [a, b])",
                "not(a, [b])"):
        with pytest.raises(EventError):
            parse_expr(parse_term(bad))


def test_event_builtin():
    st_ = eis(("a", 1), ("b", 4))
    (ans,) = solve_all("event(sequence(a, b), T)", st_)
    assert ans.by_name()["T"] == make_list([Number(1), Number(4)])
    assert len(solve_all("event([E], T)", st_)) == 2


def test_consumption_policies():
    two = eis(("a", 1), ("a", 2))
    assert occurrences(consume(eis_key(Atom("a")), "all", two)) == ()
    (left,) = occurrences(consume(eis_key(Atom("a")), "first", two))
    assert left.start == Number(2)
    (left,) = occurrences(consume(eis_key(Atom("a")), "last", two))
    assert left.start == Number(1)
    assert consume(eis_key(Atom("a")), "none", two) is two
    assert consume(eis_key(Atom("z")), "all", two) is two
    with pytest.raises(EventError):
        consume(eis_key(Atom("a")), "some", two)


def test_consume_pattern_narrows():
    st_ = eis(("request(alice, paris)", 1), ("request(bob, rome)", 2))
    after = Consume(eis_key(Atom("request")), "all", parse_term("request(alice, _)")).apply(st_)
    assert [str(o.event) for o in occurrences(after)] == ["request(bob,rome)"]


def test_detect_with_and_without_consumption():
    rule = DetectionRule(Atom("ab"), parse_term("sequence(a, b)"),
                         ((Atom("a"), "all"), (Atom("b"), "all")))
    found, after = detect(rule, eis(("a", 1), ("b", 2)))
    assert [o.interval for o in found] == [(Number(1), Number(2))]
    assert [o.event for o in occurrences(after)] == [Atom("ab")]
    again, _ = detect(rule, after)
    assert again == []

    keep = DetectionRule(Atom("ab"), parse_term("sequence(a, b)"))
    found, after = detect(keep, eis(("a", 1), ("b", 2)))
    assert len(found) == 1
    assert {o.event.name for o in occurrences(after)} == {"a", "b", "ab"}
    again, _ = detect(keep, after)
    assert again == []


def test_detect_wrong_order_is_quiet():
    st_ = eis(("b", 1), ("a", 2))
    found, after = detect(DetectionRule(Atom("ab"), parse_term("sequence(a, b)")), st_)
    assert found == [] and after is st_


# -- properties ----------------------------------------------------------------

@pytest.mark.parametrize("order", list(itertools.permutations("abc")))
def test_snoop_fix_all_orderings(order):
    st_ = eis(*((name, t) for t, name in enumerate(order, start=1)))
    detected = bool(intervals(SNOOP, st_))
    assert detected == (order == ("b", "a", "c"))


def test_nested_sequences_are_distinguished():
    other = parse_term("sequence(a, sequence(b, c))")
    differ = []
    for order in itertools.permutations("abc"):
        st_ = eis(*((name, t) for t, name in enumerate(order, start=1)))
        differ.append(intervals(SNOOP, st_) != intervals(other, st_))
    assert any(differ)


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 10 ** 9))
def test_matcher_equals_exhaustive_evaluator(seed):
    rng = random.Random(seed)
    e = random_expr(rng, 3)
    assert expr_depth(e) <= 3
    st_ = eis(*random_eis(rng, rng.randint(0, 6)))
    occs = occurrences(st_)
    oracle = AlgebraOracle([(o.seq_no, o.event.name, o.start.value, o.end.value) for o in occs])
    got = {((m.start.value, m.end.value), m.contributors)
           for m in compile_event_expr(e).matches(occs)}
    assert got == oracle.matches(e)


@settings(max_examples=100)
@given(st.lists(st.tuples(st.sampled_from("ab"), st.integers(0, 9)), max_size=6))
def test_consume_all_leaves_nothing_to_detect(events):
    rule = DetectionRule(Atom("ab"), parse_term("sequence(a, b)"),
                         ((Atom("a"), "all"), (Atom("b"), "all")))
    _, after = detect(rule, eis(*events))
    again, _ = detect(rule, after)
    assert again == []


@given(st.sampled_from("abc"), st.integers(0, 100))
def test_atomic_holds_interval_is_point(name, t):
    st_ = eis((name, t))
    assert holds_interval(Atom(name), Atom(name), st_) == [(Number(t), Number(t))]
