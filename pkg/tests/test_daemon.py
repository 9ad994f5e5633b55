import random

from hypothesis import given, settings, strategies as st

from ecalp.clock import SimulatedClock
from ecalp.daemon import (
    EcaDaemon, Injection, collect_eca_rules, evaluate_eca, run_cycle, run_daemon,
)
from ecalp.kb import KnowledgeState
from ecalp.parser import parse_term
from ecalp.solver import Context, default_registry
from ecalp.terms import Blank
from helpers import DATA, flight_registry, load_texts, run_scenario, state_of

FLIGHT = (DATA / "flight.ecalp").read_text()


def outcomes(reports, label):
    return [(r.cycle_no, r.outcome_of(label).outcome) for r in reports
            if r.outcome_of(label).outcome not in ("time_not_due", "event_absent")]


def test_collect_rules():
    (rule,) = collect_eca_rules(state_of(FLIGHT))
    assert not isinstance(rule.time, Blank) and rule.label == '"main"#0'
    (ca,) = collect_eca_rules(state_of("eca(condition(c), action(a))."))
    assert [isinstance(p, Blank) for p in ca.parts] == [True, True, False, False, True, True]
    assert collect_eca_rules(KnowledgeState.empty()) == []


def test_flight_books_second_flight_once():
    _, reports, lines = run_scenario(
        [("flight", FLIGHT)], 12, flight_registry(),
        injections=[Injection(parse_term("request(alice, paris)"), 5)])
    assert lines == ["NOTIFY alice flightBooked(f2)"]
    assert outcomes(reports, '"flight"#0') == [(11, "fired")]


def test_flight_without_flights_runs_else():
    _, reports, lines = run_scenario(
        [("flight", FLIGHT)], 12, flight_registry(),
        injections=[Injection(parse_term("request(alice, rome)"), 5)])
    assert lines == ["NOTIFY alice bookedUp(rome)"]
    assert outcomes(reports, '"flight"#0') == [(11, "else_fired")]


def test_request_consumed_after_firing():
    daemon, _, _ = run_scenario(
        [("flight", FLIGHT)], 25, flight_registry(),
        injections=[Injection(parse_term("request(alice, paris)"), 5)])
    assert not any(c.key == ("occurs", 2) for cs in daemon.state.modules.values() for c in cs)


def test_time_gate_stops_evaluation():
    st_, opts, ctx = load_texts(("flight", FLIGHT))
    firing = evaluate_eca(collect_eca_rules(st_)[0], st_, opts, ctx)
    assert firing.outcome == "time_not_due" and firing.stages_called == ("time",)


def test_event_absent_skips_later_parts():
    st_ = state_of("eca(e, c, a).")
    firing = evaluate_eca(collect_eca_rules(st_)[0], st_)
    assert firing.outcome == "event_absent" and firing.stages_called == ("event",)


def test_postcondition_failure_backtracks_into_action():
    text = ("eca(e, pick(X), say(X), ok(X)). e. pick(1). pick(2). ok(2). "
            "say(X) :- sendMessage(log, X).")
    _, reports, lines = run_scenario([("m", text)], 1)
    assert lines == ["NOTIFY log 2"]
    assert reports[0].outcomes[0].outcome == "fired"


def test_failed_stage_reported():
    _, reports, lines = run_scenario([("m", "eca(e, missing, act). e. act :- sendMessage(a, b).")], 1)
    o = reports[0].outcomes[0]
    assert (o.outcome, o.stage) == ("failed", "condition") and lines == []


def test_stage_error_becomes_failure():
    _, reports, _ = run_scenario([("m", "eca(e, not(q(X)), sendMessage(a, b)). e.")], 1)
    o = reports[0].outcomes[0]
    assert (o.outcome, o.stage) == ("failed", "condition") and "floundering" in o.diagnostic


def test_integrity_violation_rolls_back_firing():
    text = ('eca(e, _, (add(bad, "p(x)."), sendMessage(a, done))). e. neg(p(x)). '
            'integrity(xor(p(x), neg(p(x)))).')
    daemon, reports, lines = run_scenario([("m", text)], 2)
    assert [(o.outcome, o.stage) for r in reports for o in r.outcomes] == [
        ("failed", "postcondition")] * 2
    assert lines == [] and "bad" not in str(list(daemon.state.modules))


def test_else_and_main_branch_are_exclusive():
    text = 'eca(_, e, c, add(m1, "a."), ok, add(m2, "b.")). e. c.'
    daemon, reports, _ = run_scenario([("m", text)], 1)
    assert reports[0].outcomes[0].outcome == "else_fired"
    names = {str(o) for o in daemon.state.modules}
    assert "m2" in names and "m1" not in names


def test_inert_rule():
    _, reports, _ = run_scenario([("m", "eca(e, c, _).")], 1)
    assert reports[0].outcomes[0].outcome == "inert"


def test_rule_chain_one_step_per_cycle():
    chain = ('eca(e2, _, (remove(m2), sendMessage(admin, done))). '
             'eca(e1, _, (remove(m1), add(m2, "e2."))). '
             'eca(start, _, (remove(m0), add(m1, "e1."))).')
    daemon, reports, lines = run_scenario([("rules", chain), ("boot", ':- add(m0, "start.").')], 4)
    fired = [(r.cycle_no, o.rule) for r in reports for o in r.outcomes if o.outcome == "fired"]
    assert fired == [(1, '"rules"#2'), (2, '"rules"#1'), (3, '"rules"#0')]
    assert lines == ["NOTIFY admin done"]
    assert [len(r.transitions) for r in reports] == [1, 1, 1, 0]


def test_new_rules_active_next_cycle():
    text = 'eca(go, _, add(extra, "eca(go, _, sendMessage(x, y)).")). go.'
    _, reports, lines = run_scenario([("m", text)], 2)
    assert [len(r.outcomes) for r in reports] == [1, 2]
    assert lines == ["NOTIFY x y"]


def test_empty_rule_set():
    st_ = state_of("f(1).")
    report, after = run_cycle(st_)
    assert report.outcomes == [] and after is st_


def test_every_ten_seconds():
    text = "eca(tick, _, sendMessage(clock, tick)). tick :- sysTime(T), interval(timespan(0,0,0,10), T)."
    _, reports, lines = run_scenario([("m", text)], 35)
    assert [r.cycle_no - 1 for r in reports if r.messages] == [10, 20, 30]
    assert len(lines) == 3


def test_max_cycles_zero_and_stop():
    st_ = state_of("eca(e, _, sendMessage(a, b)). e.")
    after, reports = run_daemon(st_, max_cycles=0)
    assert reports == [] and after is st_

    seen = []
    daemon = EcaDaemon(st_, SimulatedClock(), 1.0, sink=lambda m: (seen.append(m), daemon.stop()))
    reports = daemon.run()
    assert len(reports) == 1 and len(seen) == 1


def test_deterministic_runs_reproduce():
    def run():
        _, reports, lines = run_scenario(
            [("flight", FLIGHT)], 25, flight_registry(),
            injections=[Injection(parse_term("request(alice, paris)"), 5),
                        Injection(parse_term("request(bob, tokyo)"), 15)])
        return [line for r in reports for line in r.lines()], lines
    assert run() == run()


# -- properties ----------------------------------------------------------------

@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 9))
def test_parallel_agrees_on_independent_rules(seed):
    rng = random.Random(seed)
    parts = []
    for i in range(rng.randint(2, 6)):
        ev = rng.choice(["e", "f", "missing"])
        parts.append(f'eca({ev}, _, (add(out{i}, "r{i}."), sendMessage(r{i}, {ev}))).')
    text = " ".join(parts) + " e. f."
    det, det_reports, _ = run_scenario([("m", text)], 2, mode="deterministic")
    par, par_reports, _ = run_scenario([("m", text)], 2, mode="parallel")
    assert det.state.clause_multiset() == par.state.clause_multiset()
    assert [r.lines() for r in det_reports] == [r.lines() for r in par_reports]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from(["t", "e", "c", "a", "p"]), max_size=5))
def test_no_stage_after_a_failed_one(present):
    facts = " ".join(f"{x}." for x in present)
    st_ = state_of("eca(t, e, c, a, p). " + facts)
    firing = evaluate_eca(collect_eca_rules(st_)[0], st_, ctx=Context(default_registry(),
                                                                      SimulatedClock()))
    order = ["time", "event", "condition", "action", "postcondition"]
    # backtracking may call a stage again; first calls must follow the rule order
    called = list(dict.fromkeys(firing.stages_called))
    assert called == order[:len(called)]
    for stage, fact in zip(called[:-1], "teca"):
        assert fact in present
