"""Small shared builders for the test modules."""
from __future__ import annotations

import importlib.util
from pathlib import Path

from ecalp import updates as up
from ecalp.clock import SimulatedClock
from ecalp.cli import run_directives
from ecalp.daemon import EcaDaemon
from ecalp.kb import KnowledgeState, as_oid
from ecalp.parser import parse_clauses, parse_program
from ecalp.solver import Context, SolverOptions, default_registry
from ecalp.terms import Atom
from oracles import TX_ATOMS, facts_after, random_constraints, random_ops, violated

DATA = Path(__file__).parent / "data"


def state_of(*modules) -> KnowledgeState:
    """``state_of(("m1", "f(1)."), ...)`` or a single program text under ``main``."""
    st = KnowledgeState.empty()
    for m in modules:
        oid, text = m if isinstance(m, tuple) else ("main", m)
        st = st.add(as_oid(oid), parse_program(text).clauses)
    return st


def flight_registry():
    reg = default_registry()
    spec = importlib.util.spec_from_file_location("flight_plugin", DATA / "flight_plugin.py")
    mod = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(mod)
    mod.register(reg)
    return reg


def load_texts(*modules, clock=None, registry=None):
    """Load ``(oid, text)`` modules and run their directives; returns (state, opts, ctx)."""
    clock = clock or SimulatedClock()
    opts = SolverOptions(clock=clock)
    ctx = Context(registry or default_registry(), clock)
    st = KnowledgeState.empty()
    directives = []
    for oid, text in modules:
        prog = parse_program(text)
        if prog.clauses:
            st = st.add(as_oid(oid), prog.clauses)
        directives.extend(prog.directives)
    return run_directives(st, directives, opts, ctx), opts, ctx


def run_scenario(modules, cycles, registry=None, mode="deterministic", injections=()):
    """Run ``cycles`` daemon cycles on a simulated clock with a one second tick."""
    clock = SimulatedClock()
    st, opts, ctx = load_texts(*modules, clock=clock, registry=registry)
    lines = []
    daemon = EcaDaemon(st, clock, 1.0, mode, opts, ctx.registry,
                       sink=lambda m: lines.append(m.line()), injections=injections)
    reports = daemon.run(cycles)
    return daemon, reports, lines


# -- random transactions -----------------------------------------------------------

def build_case(rng):
    constraints = random_constraints(rng)
    modules = {}
    for oid in ("m0", "m1"):
        if rng.random() < 0.7:
            modules[oid] = rng.sample(TX_ATOMS, rng.randint(1, 2))
    st_ = KnowledgeState.empty()
    for oid, fs in modules.items():
        st_ = st_.add(Atom(oid), parse_clauses(" ".join(f + "." for f in fs)))
    if constraints:
        st_ = st_.add(Atom("ics"), parse_clauses(" ".join(f"integrity({c})." for c in constraints)))
    return constraints, modules, st_


def to_ops(ops):
    out = []
    for kind, oid, facts in ops:
        if kind == "add":
            out.append(up.Add(Atom(oid), " ".join(f + "." for f in facts)))
        elif kind == "remove":
            out.append(up.Remove(Atom(oid)))
        else:
            out.append(up.Add(Atom(oid), "broken(("))
    return out


def check_transaction(rng):
    """One random transaction checked against the set-membership oracle; True if committed."""
    constraints, modules, st_ = build_case(rng)
    ops = random_ops(rng)
    before = st_.clause_multiset(), st_.state_index
    res = up.run_transaction(st_, to_ops(ops))
    expect_parse_failure = any(k == "bad" for k, _, _ in ops)
    after = facts_after(modules, ops)
    expect_violation = violated(constraints, after)
    if res.committed:
        assert not expect_parse_failure and not expect_violation
        assert up.test_integrity(res.state) == []
    else:
        assert expect_parse_failure or expect_violation
        assert res.state is st_
        assert (res.state.clause_multiset(), res.state.state_index) == before
    return res.committed
