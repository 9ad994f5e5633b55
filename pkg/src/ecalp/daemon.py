"""ECA rule interpreter and polling daemon.

Every cycle the daemon reads the ``eca/6`` facts of the current snapshot and
proves each rule as ``T, E, ((C, A, P) ; EL)``.  The parts are solved one
after another with their bindings threaded through, so a failing action or
post-condition backtracks into the remaining answers of the condition (and
of the event and time parts).  The first complete branch wins; its update
intents are committed as one transaction and its messages are delivered
after the commit.
"""
from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, Optional, Sequence, Tuple

from .clock import Clock, SimulatedClock
from .events import EventError, record_occurrence
from .kb import KnowledgeState, UpdateRecord
from .parser import ECA_SLOTS, format_term
from .solver import Context, Message, SolverError, SolverOptions, default_registry, solve
from .terms import BLANK, Blank, Struct, Term, TimePoint, apply_substitution
from .updates import TransactionError, run_transaction

__all__ = [
    "EcaRule", "RuleOutcome", "TransitionRecord", "CycleReport", "Firing",
    "collect_eca_rules", "evaluate_eca", "commit_firing", "execute_eca", "run_cycle",
    "EcaDaemon", "run_daemon", "Injection", "print_sink", "STAGES",
]

STAGES = ECA_SLOTS   # time, event, condition, action, postcondition, else
_STAGE_ERRORS = (SolverError, EventError, TransactionError, TypeError, ValueError)


@dataclass(frozen=True)
class EcaRule:
    oid: Tuple[Term, int]      # (module id, position within the module)
    time: Term = BLANK
    event: Term = BLANK
    condition: Term = BLANK
    action: Term = BLANK
    postcondition: Term = BLANK
    else_action: Term = BLANK

    @classmethod
    def from_term(cls, oid, pos: int, t: Struct) -> "EcaRule":
        return cls((oid, pos), *t.args)

    @property
    def parts(self) -> Tuple[Term, ...]:
        return (self.time, self.event, self.condition, self.action,
                self.postcondition, self.else_action)

    @property
    def label(self) -> str:
        return f"{format_term(self.oid[0])}#{self.oid[1]}"

    @property
    def inert(self) -> bool:
        return isinstance(self.action, Blank)


def collect_eca_rules(state: KnowledgeState) -> List[EcaRule]:
    """The eca facts of ``state`` in module order."""
    return [EcaRule.from_term(oid, pos, t) for oid, pos, t in state.eca_facts]


@dataclass(frozen=True)
class TransitionRecord:
    pre_state_index: int
    post_state_index: int
    trigger: Tuple[str, str]       # (rule label, branch stage)
    updates: Tuple[UpdateRecord, ...] = ()


@dataclass(frozen=True)
class RuleOutcome:
    rule: str
    outcome: str                   # fired | else_fired | time_not_due | event_absent | failed | inert
    stage: str = ""
    diagnostic: str = ""
    messages: Tuple[Message, ...] = ()
    stages_called: Tuple[str, ...] = field(default=(), compare=False)

    def line(self, cycle_no: int) -> str:
        out = f"{cycle_no}\t{self.rule}\t{self.stage or '-'}\t{self.outcome}"
        if self.diagnostic:
            out += f"\t{self.diagnostic}"
        return out


@dataclass
class CycleReport:
    cycle_no: int
    time: Optional[TimePoint]
    outcomes: List[RuleOutcome] = field(default_factory=list)
    transitions: List[TransitionRecord] = field(default_factory=list)
    messages: List[Message] = field(default_factory=list)

    def lines(self) -> List[str]:
        return [o.line(self.cycle_no) for o in self.outcomes]

    def outcome_of(self, label: str) -> Optional[RuleOutcome]:
        for o in self.outcomes:
            if o.rule == label:
                return o
        return None


@dataclass(frozen=True)
class Firing:
    """Result of proving one rule: an outcome and the winning branch's intents."""

    rule: EcaRule
    outcome: str
    stage: str = ""
    diagnostic: str = ""
    intents: tuple = ()
    stages_called: Tuple[str, ...] = ()


Tracer = Optional[Callable[[str], None]]


def _stage_answers(part: Term, bindings: dict, state, opts, ctx, stage: str,
                   called: list, tracer: Tracer, label: str) -> Iterator[Tuple[dict, tuple]]:
    if isinstance(part, Blank):
        yield bindings, ()
        return
    called.append(stage)
    goal = apply_substitution(part, bindings)
    for ans in solve([goal], state, opts, ctx):
        merged = dict(bindings)
        merged.update(ans)
        if tracer:
            shown = ", ".join(f"{v.name}={format_term(t)}" for v, t in ans.items())
            tracer(f"{label}\t{stage}\tanswer\t{shown or 'true'}")
        yield merged, tuple(ans.intents)


def evaluate_eca(rule: EcaRule, state: KnowledgeState, opts: Optional[SolverOptions] = None,
                 ctx: Optional[Context] = None, tracer: Tracer = None) -> Firing:
    """Prove the rule against ``state`` without changing it."""
    if rule.inert:
        return Firing(rule, "inert")
    ctx = (ctx or Context()).for_rule(rule.oid)
    called: list = []
    label = rule.label
    reached = {"time": False, "event": False, "condition": False, "action": False}
    current = ["time"]

    def answers(stage, part, b):
        current[0] = stage
        return _stage_answers(part, b, state, opts, ctx, stage, called, tracer, label)

    te_answers = []
    try:
        for b1, i1 in answers("time", rule.time, {}):
            reached["time"] = True
            for b2, i2 in answers("event", rule.event, b1):
                reached["event"] = True
                te_answers.append((b2, i1 + i2))
                for b3, i3 in answers("condition", rule.condition, b2):
                    reached["condition"] = True
                    for b4, i4 in answers("action", rule.action, b3):
                        reached["action"] = True
                        for _b5, i5 in answers("postcondition", rule.postcondition, b4):
                            return Firing(rule, "fired", "postcondition", "",
                                          i1 + i2 + i3 + i4 + i5, tuple(called))
        if not reached["time"]:
            return Firing(rule, "time_not_due", "time", stages_called=tuple(called))
        if not reached["event"]:
            return Firing(rule, "event_absent", "event", stages_called=tuple(called))
        failed_at = ("postcondition" if reached["action"] else
                     "action" if reached["condition"] else "condition")
        if isinstance(rule.else_action, Blank):
            return Firing(rule, "failed", failed_at, "no branch succeeded",
                          stages_called=tuple(called))
        for b, intents in te_answers:
            for _b6, i6 in answers("else", rule.else_action, b):
                return Firing(rule, "else_fired", "else", "", intents + i6, tuple(called))
        return Firing(rule, "failed", "else", "else action failed", stages_called=tuple(called))
    except _STAGE_ERRORS as exc:
        return Firing(rule, "failed", current[0], str(exc), stages_called=tuple(called))


def commit_firing(firing: Firing, state: KnowledgeState, opts=None, ctx=None
                  ) -> Tuple[RuleOutcome, KnowledgeState, Optional[TransitionRecord]]:
    """Apply a firing's updates as one transaction; messages survive only a commit."""
    rule = firing.rule
    messages = tuple(i for i in firing.intents if isinstance(i, Message))
    ops = [i for i in firing.intents if not isinstance(i, Message)]
    called = firing.stages_called
    if firing.outcome not in ("fired", "else_fired"):
        return (RuleOutcome(rule.label, firing.outcome, firing.stage, firing.diagnostic,
                            (), called), state, None)
    transition = None
    if ops:
        result = run_transaction(state, ops, opts, ctx)
        if not result.committed:
            diag = result.diagnostic or "; ".join(str(v) for v in result.violations)
            return (RuleOutcome(rule.label, "failed", "postcondition", diag, (), called),
                    state, None)
        transition = TransitionRecord(state.state_index, result.state.state_index,
                                      (rule.label, firing.stage), result.records)
        state = result.state
    return (RuleOutcome(rule.label, firing.outcome, firing.stage, "", messages, called),
            state, transition)


def execute_eca(rule: EcaRule, state: KnowledgeState, opts=None, ctx=None,
                tracer: Tracer = None) -> Tuple[RuleOutcome, KnowledgeState]:
    outcome, state, _t = commit_firing(evaluate_eca(rule, state, opts, ctx, tracer),
                                       state, opts, ctx)
    return outcome, state


def run_cycle(state: KnowledgeState, mode: str = "deterministic", opts=None,
              ctx: Optional[Context] = None, cycle_no: int = 1, tracer: Tracer = None,
              workers: Optional[int] = None) -> Tuple[CycleReport, KnowledgeState]:
    """Run every eca rule of ``state`` once."""
    if mode not in ("deterministic", "parallel"):
        raise ValueError(f"unknown mode {mode}")
    ctx = ctx or Context()
    report = CycleReport(cycle_no, ctx.clock.now())
    rules = collect_eca_rules(state)
    results: dict = {}

    def settle(idx, firing, st):
        outcome, st, transition = commit_firing(firing, st, opts, ctx)
        results[idx] = outcome
        if transition is not None:
            report.transitions.append(transition)
        report.messages.extend(outcome.messages)
        return st

    if mode == "deterministic" or len(rules) < 2:
        for idx, rule in enumerate(rules):
            state = settle(idx, evaluate_eca(rule, state, opts, ctx, tracer), state)
    else:
        entry = state
        with ThreadPoolExecutor(max_workers=workers or min(8, len(rules))) as pool:
            futures = {pool.submit(evaluate_eca, r, entry, opts, ctx, tracer): i
                       for i, r in enumerate(rules)}
            for fut in as_completed(futures):
                state = settle(futures[fut], fut.result(), state)
    report.outcomes = [results[i] for i in range(len(rules))]
    return report, state


def print_sink(message: Message) -> None:
    print(message.line(), flush=True)


@dataclass(frozen=True)
class Injection:
    """An event occurrence fed to the daemon once its clock reaches ``at`` seconds."""

    event: Term
    at: float = 0.0


class EcaDaemon:
    """Runs cycles every ``tick`` seconds on an injectable clock."""

    def __init__(self, state: KnowledgeState, clock: Optional[Clock] = None, tick: float = 1.0,
                 mode: str = "deterministic", opts: Optional[SolverOptions] = None,
                 registry=None, sink: Optional[Callable[[Message], None]] = None,
                 injections: Sequence[Injection] = (), tracer: Tracer = None,
                 report_tracer: Tracer = None):
        if tick <= 0:
            raise ValueError("tick must be positive")
        self.clock = clock or SimulatedClock()
        self.tick = tick
        self.mode = mode
        self.opts = opts or SolverOptions(clock=self.clock)
        self.ctx = Context(registry or default_registry(), self.clock)
        self.sink = sink
        self.tracer = tracer
        self.report_tracer = report_tracer
        self.state = state
        self.cycles = 0
        self._pending = sorted(injections, key=lambda i: i.at)
        self._stop = threading.Event()
        self.reports: List[CycleReport] = []

    def stop(self) -> None:
        self._stop.set()

    def _inject_due(self) -> None:
        now = self.clock.now()
        origin = self.ctx.origin
        while self._pending:
            inj = self._pending[0]
            due = origin.shift(int(inj.at))
            if due > now:
                break
            self._pending.pop(0)
            self.state = record_occurrence(self.state, inj.event, now)

    def step(self) -> CycleReport:
        self._inject_due()
        self.cycles += 1
        report, self.state = run_cycle(self.state, self.mode, self.opts, self.ctx,
                                       self.cycles, self.tracer)
        self.reports.append(report)
        if self.report_tracer:
            for line in report.lines():
                self.report_tracer(line)
        if self.sink:
            for m in report.messages:
                self.sink(m)
        return report

    def run(self, max_cycles: Optional[int] = None) -> List[CycleReport]:
        """Cycle until ``max_cycles`` or :meth:`stop`; each cycle finishes before stopping."""
        done = []
        while not self._stop.is_set():
            if max_cycles is not None and len(done) >= max_cycles:
                break
            done.append(self.step())
            self.clock.sleep(self.tick)
        return done


def run_daemon(state: KnowledgeState, tick: float = 1.0, max_cycles: Optional[int] = None,
               mode: str = "deterministic", clock: Optional[Clock] = None, **kwargs
               ) -> Tuple[KnowledgeState, List[CycleReport]]:
    daemon = EcaDaemon(state, clock, tick, mode, **kwargs)
    reports = daemon.run(max_cycles)
    return daemon.state, reports
