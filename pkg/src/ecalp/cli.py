"""Command line: ``ecalp run | query | translate | check``.

Exit codes: 0 clean run, 1 parse or configuration error, 2 runtime failure
(solver error, failed directive, integrity violation reported by ``check``).
"""
from __future__ import annotations

import argparse
import datetime as _dt
import importlib.util
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from .clock import SIM_EPOCH, Clock, SimulatedClock, SystemClock
from .daemon import EcaDaemon, Injection
from .kb import KnowledgeState, as_oid
from .parser import ParseError, format_term, parse_program, parse_term
from .ruleml import RulemlError, load_ruleml, translate_to_ecalp
from .solver import Context, Message, Registry, SolverError, SolverOptions, default_registry, solve
from .terms import TimePoint
from .updates import run_transaction, test_integrity

TRACE_LEVELS = ("off", "rules", "solver")


class ConfigError(Exception):
    pass


@dataclass
class CliConfig:
    scripts: List[str]
    mode: str = "deterministic"
    tick_ms: int = 1000
    max_cycles: Optional[int] = None
    clock: str = "real"
    trace_level: str = "off"
    inject: List[Tuple[str, float]] = field(default_factory=list)
    query: Optional[str] = None
    plugins: List[str] = field(default_factory=list)

    def validate(self):
        if self.tick_ms < 1:
            raise ConfigError("--tick-ms must be at least 1")
        if self.max_cycles is not None and self.max_cycles < 0:
            raise ConfigError("--max-cycles must be non-negative")
        if self.trace_level not in TRACE_LEVELS:
            raise ConfigError(f"trace level must be one of {', '.join(TRACE_LEVELS)}")
        if self.clock.startswith("sim") and self.mode != "deterministic":
            raise ConfigError("a simulated clock requires --deterministic")


def parse_clock(spec: str, tick_ms: int) -> Tuple[Clock, float]:
    """``real`` or ``sim:START:STEP_MS``; returns the clock and the per-cycle step in seconds.

    START is seconds after 1970-01-01 or an ISO date-time.
    """
    if spec == "real":
        return SystemClock(), tick_ms / 1000
    parts = spec.split(":", 1)
    if parts[0] != "sim":
        raise ConfigError(f"unknown clock {spec!r}")
    start, step = SIM_EPOCH, tick_ms
    if len(parts) == 2 and parts[1]:
        start_text, _, step_text = parts[1].rpartition(":")
        if not start_text:
            start_text, step_text = step_text, ""
        try:
            if start_text.lstrip("-").isdigit():
                start = SIM_EPOCH.shift(int(start_text))
            elif start_text:
                start = TimePoint.from_datetime(_dt.datetime.fromisoformat(start_text))
            if step_text:
                step = int(step_text)
        except ValueError as exc:
            raise ConfigError(f"bad simulated clock {spec!r}: {exc}") from None
    if step < 1:
        raise ConfigError("the simulated step must be at least 1 ms")
    return SimulatedClock(start), step / 1000


def parse_injection(text: str) -> Tuple[str, float]:
    term, sep, at = text.rpartition("@")
    if not sep or not term:
        raise ConfigError(f"injection {text!r} is not of the form term@seconds")
    try:
        return term, float(at)
    except ValueError:
        raise ConfigError(f"injection time {at!r} is not a number") from None


def load_plugin(path: str, registry: Registry) -> None:
    spec = importlib.util.spec_from_file_location(f"ecalp_plugin_{Path(path).stem}", path)
    if spec is None or spec.loader is None:
        raise ConfigError(f"cannot load plugin {path}")
    mod = importlib.util.module_from_spec(spec)
    try:
        spec.loader.exec_module(mod)
    except (OSError, SyntaxError) as exc:
        raise ConfigError(f"cannot load plugin {path}: {exc}") from None
    if not hasattr(mod, "register"):
        raise ConfigError(f"plugin {path} has no register(registry) function")
    mod.register(registry)


def read_script(path: str):
    """Parse a script (``.xml`` documents are translated first)."""
    p = Path(path)
    if p.suffix.lower() == ".xml":
        result = translate_to_ecalp(load_ruleml(p))
        for w in result.warnings:
            print(f"warning: {path}: {w}", file=sys.stderr)
        text = result.program
    else:
        text = p.read_text(encoding="utf-8")
    return parse_program(text)


def load_scripts(paths: Sequence[str]):
    """Parse everything first so that a broken file means nothing is loaded."""
    programs = [(path, read_script(path)) for path in paths]
    state = KnowledgeState.empty()
    directives = []
    for path, prog in programs:
        if prog.clauses:
            state = state.add(as_oid(path), prog.clauses)
        directives.extend(prog.directives)
    return state, directives


def run_directives(state: KnowledgeState, directives, opts, ctx) -> KnowledgeState:
    for goal in directives:
        goals = list(goal) if isinstance(goal, (tuple, list)) else [goal]
        text = ", ".join(format_term(g) for g in goals)
        answer = next(iter(solve(goals, state, opts, ctx)), None)
        if answer is None:
            raise SolverError(f"directive failed: {text}")
        ops = [i for i in answer.intents if not isinstance(i, Message)]
        for m in answer.messages:
            print(m.line(), flush=True)
        if ops:
            result = run_transaction(state, ops, opts, ctx)
            if not result.committed:
                raise SolverError(f"directive rolled back: {text}")
            state = result.state
    return state


def print_answers(goal: str, state, opts, ctx, out=None) -> int:
    out = out or sys.stdout
    count = 0
    for ans in solve(goal, state, opts, ctx):
        count += 1
        named = ans.by_name()
        if named:
            out.write(", ".join(f"{k} = {format_term(v)}" for k, v in named.items()) + "\n")
        else:
            out.write("true.\n")
        for m in ans.messages:
            out.write(m.line() + "\n")
    if count == 0:
        out.write("false.\n")
    return count


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ecalp", description="Reactive logic programming engine")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="load scripts and run the ECA daemon")
    run.add_argument("scripts", nargs="+")
    mode = run.add_mutually_exclusive_group()
    mode.add_argument("--deterministic", dest="mode", action="store_const", const="deterministic")
    mode.add_argument("--parallel", dest="mode", action="store_const", const="parallel")
    run.add_argument("--tick-ms", type=int, default=1000)
    run.add_argument("--max-cycles", type=int)
    run.add_argument("--clock", default="real", help="real or sim:START:STEP_MS")
    run.add_argument("--trace", default="off", choices=TRACE_LEVELS)
    run.add_argument("--inject", action="append", default=[], metavar="TERM@SECONDS")
    run.add_argument("--plugin", action="append", default=[], metavar="FILE.py")
    run.add_argument("--query", help="goal to answer after loading, before the daemon starts")

    q = sub.add_parser("query", help="answer a goal against the loaded scripts")
    q.add_argument("scripts", nargs="+")
    q.add_argument("goal")
    q.add_argument("--plugin", action="append", default=[], metavar="FILE.py")

    t = sub.add_parser("translate", help="translate ECA-RuleML to an ECA-LP script")
    t.add_argument("input")
    t.add_argument("-o", "--output")

    c = sub.add_parser("check", help="parse scripts and test integrity constraints")
    c.add_argument("scripts", nargs="+")
    return ap


def _cmd_run(args) -> int:
    cfg = CliConfig(args.scripts, args.mode or "deterministic", args.tick_ms, args.max_cycles,
                    args.clock, os.environ.get("ECALP_TRACE") or args.trace,
                    [parse_injection(i) for i in args.inject], args.query, args.plugin)
    cfg.validate()
    clock, step = parse_clock(cfg.clock, cfg.tick_ms)
    registry = default_registry()
    for p in cfg.plugins:
        load_plugin(p, registry)
    state, directives = load_scripts(cfg.scripts)
    injections = [Injection(parse_term(t), at) for t, at in cfg.inject]
    out = sys.stdout

    def emit(line: str):
        out.write(line + "\n")
        out.flush()

    daemon = EcaDaemon(state, clock, step, cfg.mode, SolverOptions(clock=clock), registry,
                       sink=lambda m: emit(m.line()), injections=injections,
                       tracer=emit if cfg.trace_level == "solver" else None,
                       report_tracer=emit if cfg.trace_level in ("rules", "solver") else None)
    daemon.state = run_directives(daemon.state, directives, daemon.opts, daemon.ctx)
    if cfg.query:
        print_answers(cfg.query, daemon.state, daemon.opts, daemon.ctx, out)
    try:
        daemon.run(cfg.max_cycles)
    except KeyboardInterrupt:
        pass
    return 0


def _cmd_query(args) -> int:
    registry = default_registry()
    for p in args.plugin:
        load_plugin(p, registry)
    state, directives = load_scripts(args.scripts)
    ctx = Context(registry, SystemClock())
    opts = SolverOptions()
    state = run_directives(state, directives, opts, ctx)
    print_answers(args.goal, state, opts, ctx)
    return 0


def _cmd_translate(args) -> int:
    result = translate_to_ecalp(load_ruleml(args.input))
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if args.output:
        Path(args.output).write_text(result.program, encoding="utf-8")
    else:
        sys.stdout.write(result.program)
    return 0


def _cmd_check(args) -> int:
    state, directives = load_scripts(args.scripts)
    violations = test_integrity(state)
    for v in violations:
        print(f"violation: {v}")
    n_clauses = sum(len(cs) for cs in state.modules.values())
    print(f"{n_clauses} clauses, {len(state.eca_facts)} eca rules, "
          f"{len(state.integrity_constraints)} integrity constraints, "
          f"{len(violations)} violations")
    return 2 if violations else 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {"run": _cmd_run, "query": _cmd_query, "translate": _cmd_translate,
                "check": _cmd_check}
    try:
        return handlers[args.command](args)
    except (ConfigError, ParseError, RulemlError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SolverError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
