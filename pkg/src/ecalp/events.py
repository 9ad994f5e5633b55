"""Interval-based event calculus, event algebra and event instance sequences.

Raw events are ``occurs(E, T)`` facts.  ``T`` is a time point (an atomic
event on ``[T, T]``) or a two element list ``[T1, T2]`` (a detected complex
event).  The event instance sequence (EIS) of type ``f`` is every occurrence
whose event has principal functor ``f``; new occurrences are stored in the
module ``eis(f)``.

Algebra expressions are terms built from ``sequence``, ``conjunction``,
``or``, ``xor``, ``concurrent`` (two or more children), ``not(E, [I, J])``,
``any(N, [E...])``, ``aperiodic(E, [I, J])`` and ``periodic(TS, [I, J])``.
Any other term is a leaf that matches occurrences by unification.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

from .kb import KnowledgeState
from .parser import format_term
from .solver import BUILTINS, SolverError, solve
from .terms import (
    Atom, Clause, Number, Struct, Term, TimePoint, TimeSpan, Var,
    is_ground, list_items, make_list, rename_term, unify,
)

__all__ = [
    "Occurrence", "Match", "EventExpr", "DetectionRule", "Consume", "EventError",
    "occurrences", "record_occurrence", "holds_interval", "broken", "parse_expr",
    "compile_event_expr", "detect", "consume", "eis_key", "OPERATORS",
]

POLICIES = ("all", "first", "last", "none")
OPERATORS = ("sequence", "conjunction", "or", "xor", "concurrent", "not", "any",
             "aperiodic", "periodic")


class EventError(ValueError):
    pass


def _tkey(t: Term):
    if isinstance(t, TimePoint):
        return t
    if isinstance(t, Number):
        return t.value
    raise EventError(f"not a time: {format_term(t)}")


def _le(a: Term, b: Term) -> bool:
    return _tkey(a) <= _tkey(b)


def _lt(a: Term, b: Term) -> bool:
    return _tkey(a) < _tkey(b)


def _shift(t: Term, seconds: int) -> Term:
    if isinstance(t, TimePoint):
        return t.shift(seconds)
    return Number(t.value + seconds)


def _tmin(xs):
    return min(xs, key=_tkey)


def _tmax(xs):
    return max(xs, key=_tkey)


@dataclass(frozen=True)
class Occurrence:
    event: Term
    start: Term
    end: Term
    seq_no: int
    oid: Term = field(default=None, compare=False)
    clause: Optional[Clause] = field(default=None, compare=False, repr=False)

    @property
    def interval(self) -> Tuple[Term, Term]:
        return (self.start, self.end)

    @property
    def order_key(self):
        return (_tkey(self.start), _tkey(self.end), self.seq_no)


def eis_key(event: Term) -> Term:
    if isinstance(event, Atom):
        name = event.name
    elif isinstance(event, Struct):
        name = event.functor
    else:
        raise EventError(f"event must be an atom or compound term: {format_term(event)}")
    return Struct("eis", (Atom(name),))


def _type_of(event: Term) -> Optional[str]:
    if isinstance(event, Atom):
        return event.name
    if isinstance(event, Struct):
        return event.functor
    return None


def _occurrence_from(clause: Clause, oid) -> Optional[Occurrence]:
    if not clause.is_fact:
        return None
    event, t = clause.head.args
    if not is_ground(event):
        return None
    items = list_items(t)
    if items is not None:
        if len(items) != 2:
            return None
        start, end = items
    else:
        start = end = t
    if not isinstance(start, (TimePoint, Number)) or type(start) is not type(end):
        return None
    if _lt(end, start):
        return None
    return Occurrence(event, start, end, clause.uid, oid, clause)


def occurrences(state: KnowledgeState) -> Tuple[Occurrence, ...]:
    """All ground ``occurs/2`` facts, ordered by (start, end, arrival)."""
    memo = state.cache()
    hit = memo.get("occurrences")
    if hit is None:
        found = []
        for oid, cs in state.modules.items():
            for c in cs:
                if c.key == ("occurs", 2):
                    occ = _occurrence_from(c, oid)
                    if occ is not None:
                        found.append(occ)
        hit = memo["occurrences"] = tuple(sorted(found, key=lambda o: o.order_key))
    return hit


def _time_term(start: Term, end: Term) -> Term:
    return make_list([start, end])


def record_occurrence(state: KnowledgeState, event: Term, time, key: Optional[Term] = None
                      ) -> KnowledgeState:
    """Add ``occurs(event, time)`` under ``eis(type)``; ``time`` may be a ``(start, end)`` pair."""
    if isinstance(time, tuple):
        time = _time_term(*time)
    return state.add(key if key is not None else eis_key(event),
                     [Clause(Struct("occurs", (event, time)))])


def _matching(occs: Iterable[Occurrence], pattern: Term) -> List[Tuple[Occurrence, dict]]:
    out = []
    pat = rename_term(pattern) if not is_ground(pattern) else pattern
    for o in occs:
        s = unify(pat, o.event)
        if s is not None:
            out.append((o, s))
    return out


# -- holdsInterval / broken ----------------------------------------------------------

def _terminators(state: KnowledgeState, pair: Term, t1: Term, t2: Term, ctx=None) -> List[Term]:
    goal = Struct("terminates", (Var("Terminator"), pair, make_list([t1, t2])))
    out = []
    for ans in solve([goal], state, ctx=ctx):
        term = ans.by_name()["Terminator"]
        if term not in out:
            out.append(term)
    return out


def broken(t1: Term, pair: Term, t2: Term, state: KnowledgeState,
           context: Optional[Sequence[Term]] = None, ctx=None) -> bool:
    """True iff a declared terminator of ``pair`` occurs strictly inside ``(t1, t2)``."""
    occs = occurrences(state)
    for term in _terminators(state, pair, t1, t2, ctx):
        if context is not None and not any(unify(term, c) is not None for c in context):
            continue
        for o, _ in _matching(occs, term):
            if _lt(t1, o.start) and _lt(o.end, t2):
                return True
    return False


def holds_interval(e1: Term, e2: Term, state: KnowledgeState,
                   context: Optional[Sequence[Term]] = None, ctx=None,
                   with_events: bool = False) -> list:
    """Intervals ``(start(e1), end(e2))`` with e1 no later than e2 and nothing breaking them.

    With ``with_events`` each item is ``((start, end), event1, event2)``.
    """
    occs = occurrences(state)
    out = []
    for o1, s1 in _matching(occs, e1):
        for o2, s2 in _matching(occs, e2):
            if not _le(o1.end, o2.start):
                continue
            pair = make_list([o1.event, o2.event])
            if broken(o1.end, pair, o2.start, state, context, ctx):
                continue
            item = (o1.start, o2.end)
            if with_events:
                item = (item, o1.event, o2.event)
            if item not in out:
                out.append(item)
    return out


# -- event algebra ---------------------------------------------------------------

@dataclass(frozen=True)
class EventExpr:
    op: str                      # "leaf" or one of OPERATORS
    children: Tuple["EventExpr", ...] = ()
    pattern: Optional[Term] = None
    n: int = 0
    span: int = 0                # periodic step in seconds

    def __str__(self):
        return format_term(self.term())

    def term(self) -> Term:
        if self.op == "leaf":
            return self.pattern
        if self.op in ("not", "aperiodic"):
            e, i, j = self.children
            return Struct(self.op, (e.term(), make_list([i.term(), j.term()])))
        if self.op == "periodic":
            i, j = self.children
            return Struct("periodic", (self.pattern, make_list([i.term(), j.term()])))
        if self.op == "any":
            return Struct("any", (Number(self.n), make_list([c.term() for c in self.children])))
        return Struct(self.op, tuple(c.term() for c in self.children))

    def leaves(self) -> List[Term]:
        if self.op == "leaf":
            return [self.pattern]
        return [p for c in self.children for p in c.leaves()]


def _window(t: Term) -> Tuple[Term, Term]:
    items = list_items(t)
    if items is None or len(items) != 2:
        raise EventError(f"expected a window [Initiator, Terminator], got {format_term(t)}")
    return items[0], items[1]


def parse_expr(t: Term) -> EventExpr:
    """Turn an algebra term into an :class:`EventExpr`, checking operator arity."""
    if isinstance(t, Var):
        raise EventError("event expression is an unbound variable")
    if isinstance(t, Struct) and t.functor in OPERATORS:
        f, args = t.functor, t.args
        if f in ("sequence", "conjunction", "or", "xor", "concurrent"):
            if len(args) == 1 and list_items(args[0]) is not None:
                args = tuple(list_items(args[0]))
            if len(args) < 2:
                raise EventError(f"{f} needs at least two children")
            return EventExpr(f, tuple(parse_expr(a) for a in args))
        if f in ("not", "aperiodic") and len(args) == 2:
            i, j = _window(args[1])
            return EventExpr(f, (parse_expr(args[0]), parse_expr(i), parse_expr(j)))
        if f == "any" and len(args) == 2:
            n = args[0]
            items = list_items(args[1])
            if not isinstance(n, Number) or items is None:
                raise EventError("any(N, [E...]) needs a number and a list")
            if not 1 <= n.value <= len(items):
                raise EventError("any(N, Es) needs 1 <= N <= len(Es)")
            return EventExpr("any", tuple(parse_expr(a) for a in items), n=int(n.value))
        if f == "periodic" and len(args) == 2:
            ts = args[0]
            if not isinstance(ts, TimeSpan) or ts.total_seconds <= 0:
                raise EventError("periodic needs a positive timespan")
            i, j = _window(args[1])
            return EventExpr("periodic", (parse_expr(i), parse_expr(j)), pattern=ts,
                             span=ts.total_seconds)
        if f == "not" and len(args) == 1:
            return EventExpr("leaf", pattern=t)
        raise EventError(f"malformed {f} expression: {format_term(t)}")
    if isinstance(t, (Atom, Struct)):
        return EventExpr("leaf", pattern=t)
    raise EventError(f"not an event expression: {format_term(t)}")


@dataclass(frozen=True)
class Match:
    start: Term
    end: Term
    contributors: FrozenSet[int]

    @property
    def interval(self):
        return (self.start, self.end)

    def sort_key(self):
        return (_tkey(self.end), _tkey(self.start), tuple(sorted(self.contributors)))


def _hull(ms: Sequence[Match]) -> Match:
    ids: FrozenSet[int] = frozenset().union(*(m.contributors for m in ms))
    return Match(_tmin([m.start for m in ms]), _tmax([m.end for m in ms]), ids)


def _disjoint(ms: Sequence[Match]) -> bool:
    seen: set = set()
    for m in ms:
        if seen & m.contributors:
            return False
        seen |= m.contributors
    return True


class Matcher:
    """Bottom-up evaluator of one expression over a list of occurrences."""

    def __init__(self, expr: EventExpr):
        self.expr = expr

    def matches(self, occs: Sequence[Occurrence], state: Optional[KnowledgeState] = None,
                ctx=None) -> List[Match]:
        self._occs = occs
        self._state = state
        self._ctx = ctx
        try:
            found = self._eval(self.expr)
        finally:
            self._state = None
        return sorted(found, key=Match.sort_key)

    def _eval(self, e: EventExpr) -> set:
        op = e.op
        if op == "leaf":
            return {Match(o.start, o.end, frozenset([o.seq_no]))
                    for o, _ in _matching(self._occs, e.pattern)}
        if op == "or":
            return set().union(*(self._eval(c) for c in e.children))
        if op == "xor":
            per = [self._eval(c) for c in e.children]
            out = set()
            for k, ms in enumerate(per):
                if all(not other for j, other in enumerate(per) if j != k):
                    out |= ms
            return out
        if op == "sequence":
            return self._sequence(e)
        if op in ("conjunction", "concurrent"):
            return self._combine([self._eval(c) for c in e.children], op == "concurrent")
        if op == "any":
            per = [self._eval(c) for c in e.children]
            out = set()
            for idx in combinations(range(len(per)), e.n):
                out |= self._combine([per[i] for i in idx], False)
            return out
        if op == "not":
            body, ini, ter = (self._eval(c) for c in e.children)
            out = set()
            for i in ini:
                for j in ter:
                    if i.contributors & j.contributors or not _le(i.end, j.start):
                        continue
                    if any(_lt(i.end, b.start) and _lt(b.end, j.start) for b in body):
                        continue
                    out.add(Match(i.start, j.end, i.contributors | j.contributors))
            return out
        if op == "aperiodic":
            body, ini, ter = (self._eval(c) for c in e.children)
            out = set()
            for i in ini:
                for b in body:
                    if b.contributors & i.contributors or not _lt(i.end, b.start):
                        continue
                    if any(_lt(i.end, j.start) and _lt(j.end, b.start) for j in ter):
                        continue
                    out.add(Match(i.start, b.end, i.contributors | b.contributors))
            return out
        if op == "periodic":
            ini, ter = (self._eval(c) for c in e.children)
            out = set()
            for i in ini:
                closers = [j for j in ter if _le(i.end, j.start) and not (i.contributors & j.contributors)]
                if not closers:
                    continue
                limit = _tmin([j.start for j in closers])
                k = 1
                while True:
                    p = _shift(i.end, k * e.span)
                    if not _le(p, limit):
                        break
                    out.add(Match(i.start, p, i.contributors))
                    k += 1
            return out
        raise EventError(f"unsupported operator {op}")

    def _combine(self, per: List[set], concurrent: bool) -> set:
        out = set()

        def rec(k, chosen):
            if k == len(per):
                if concurrent:
                    for x in range(len(chosen)):
                        for y in range(x + 1, len(chosen)):
                            a, b = chosen[x], chosen[y]
                            if not (_le(a.start, b.end) and _le(b.start, a.end)):
                                return
                out.add(_hull(chosen))
                return
            for m in per[k]:
                if all(not (m.contributors & c.contributors) for c in chosen):
                    chosen.append(m)
                    rec(k + 1, chosen)
                    chosen.pop()
        rec(0, [])
        return out

    def _sequence(self, e: EventExpr) -> set:
        # chained holdsInterval: consecutive children ordered end <= start and unbroken
        per = [self._eval(c) for c in e.children]
        terms = [c.term() for c in e.children]
        out = set()

        def rec(k, chosen):
            if k == len(per):
                out.add(Match(chosen[0].start, chosen[-1].end,
                              frozenset().union(*(c.contributors for c in chosen))))
                return
            for m in per[k]:
                if chosen:
                    prev = chosen[-1]
                    if not _le(prev.end, m.start):
                        continue
                    if any(m.contributors & c.contributors for c in chosen):
                        continue
                    if self._state is not None and broken(
                            prev.end, make_list([terms[k - 1], terms[k]]), m.start,
                            self._state, ctx=self._ctx):
                        continue
                chosen.append(m)
                rec(k + 1, chosen)
                chosen.pop()
        rec(0, [])
        return out


def compile_event_expr(expr) -> Matcher:
    """Compile an algebra term (or :class:`EventExpr`) into a :class:`Matcher`."""
    if isinstance(expr, Term):
        expr = parse_expr(expr)
    if not isinstance(expr, EventExpr):
        raise EventError(f"not an event expression: {expr!r}")
    return Matcher(expr)


# -- consumption -------------------------------------------------------------------

def _remove_clauses(state: KnowledgeState, doomed: Dict[Term, set]) -> KnowledgeState:
    for oid, uids in doomed.items():
        cs = state.module(oid)
        kept = tuple(c for c in cs if c.uid not in uids)
        if len(kept) == len(cs):
            continue
        state = state.remove(oid)
        if kept:
            state = state.add(oid, kept)
    return state


def _select(occs: Sequence[Occurrence], policy: str) -> List[Occurrence]:
    if not occs:
        return []
    ordered = sorted(occs, key=lambda o: (_tkey(o.end), _tkey(o.start), o.seq_no))
    if policy == "all":
        return list(ordered)
    if policy == "first":
        return [ordered[0]]
    if policy == "last":
        return [ordered[-1]]
    return []


def consume(key: Term, policy: str, state: KnowledgeState, pattern: Optional[Term] = None
            ) -> KnowledgeState:
    """Remove occurrences of the EIS ``key`` (``eis(f)``) per ``policy``.

    ``pattern`` narrows the EIS to occurrences whose event unifies with it.
    An EIS with nothing to remove leaves the state as it is.
    """
    if policy not in POLICIES:
        raise EventError(f"unknown consumption policy {policy}")
    if policy == "none":
        return state
    if not (isinstance(key, Struct) and key.functor == "eis" and len(key.args) == 1):
        raise EventError(f"not an EIS key: {format_term(key)}")
    ftype = _type_of(key.args[0])
    occs = [o for o in occurrences(state) if _type_of(o.event) == ftype]
    if pattern is not None:
        occs = [o for o, _ in _matching(occs, pattern)]
    doomed: Dict[Term, set] = {}
    for o in _select(occs, policy):
        doomed.setdefault(o.oid, set()).add(o.seq_no)
    return _remove_clauses(state, doomed)


@dataclass(frozen=True)
class Consume:
    """Deferred consumption intent, applied when the proof's updates commit."""

    key: Term
    policy: str = "all"
    pattern: Optional[Term] = None

    def apply(self, state: KnowledgeState) -> KnowledgeState:
        return consume(self.key, self.policy, state, self.pattern)


def _remove_specific(state: KnowledgeState, used: Iterable[int]) -> KnowledgeState:
    used = set(used)
    doomed: Dict[Term, set] = {}
    for o in occurrences(state):
        if o.seq_no in used:
            doomed.setdefault(o.oid, set()).add(o.seq_no)
    return _remove_clauses(state, doomed)


# -- detection rules -----------------------------------------------------------

@dataclass(frozen=True)
class DetectionRule:
    name: Term
    expr: object                              # algebra term or EventExpr
    consumption: Tuple[Tuple[Term, str], ...] = ()   # (leaf type, policy); default none

    def policy_for(self, leaf_type: str) -> str:
        for t, p in self.consumption:
            if _type_of(t) == leaf_type or (isinstance(t, Struct) and t.functor == "eis"
                                            and _type_of(t.args[0]) == leaf_type):
                return p
        return "none"


def detect(rule: DetectionRule, state: KnowledgeState, ctx=None
           ) -> Tuple[List[Occurrence], KnowledgeState]:
    """Detect the rule's complex event, record each detection under ``eis(name)``.

    Without consumption every match is recorded, earliest end first.  With
    consumption the earliest match is recorded, its leaf EIS are consumed per
    policy and the expression is evaluated again until nothing new matches.
    """
    matcher = compile_event_expr(rule.expr)
    types = sorted({t for t in (_type_of(p) for p in matcher.expr.leaves()) if t})
    policies = {t: rule.policy_for(t) for t in types}
    consuming = any(p != "none" for p in policies.values())
    key = eis_key(rule.name)
    detections: List[Occurrence] = []

    def already(st, m):
        return any(o.event == rule.name and o.interval == m.interval for o in occurrences(st))

    def record(st, m):
        t = _time_term(m.start, m.end)
        st = st.add(key, [Clause(Struct("occurs", (rule.name, t)))])
        detections.append(Occurrence(rule.name, m.start, m.end, st.module(key)[-1].uid, key))
        return st

    if not consuming:
        for m in matcher.matches(occurrences(state), state, ctx):
            if not already(state, m):
                state = record(state, m)
        return detections, state

    while True:
        fresh = [m for m in matcher.matches(occurrences(state), state, ctx)
                 if not already(state, m)]
        if not fresh:
            return detections, state
        # each round records a new detection, so the loop ends once matches run out
        state = record(state, fresh[0])
        for t, p in policies.items():
            if p != "none":
                state = consume(Struct("eis", (Atom(t),)), p, state)


# -- script builtins ----------------------------------------------------------------

@BUILTINS.register("event", 2)
def _event(eng, args):
    expr = eng.resolve(args[0])
    items = list_items(expr)

    if items is not None:
        if len(items) != 1:
            raise SolverError("event([E], T) takes a one element list")
        pattern = items[0]
        return _solutions(eng, ([(pattern, o.event), (args[1], _time_term(o.start, o.end))]
                                for o in occurrences(eng.state)))

    try:
        matcher = compile_event_expr(expr)
    except EventError as exc:
        raise SolverError(str(exc)) from None
    matches = matcher.matches(occurrences(eng.state), eng.state, eng.ctx)

    def gen():
        seen = set()
        for m in matches:
            if m.interval in seen:
                continue
            seen.add(m.interval)
            if eng.unify(args[1], _time_term(m.start, m.end)):
                yield
    return gen()


def _solutions(eng, candidates):
    """Generator of solutions: each candidate is a list of (term, value) pairs to unify."""
    mark = len(eng.trail)
    for pairs in candidates:
        eng.undo(mark)
        if eng.unify_all([p for p, _ in pairs], [v for _, v in pairs]):
            yield
    eng.undo(mark)


@BUILTINS.register("holdsInterval", 2)
def _holds2(eng, args):
    return _holds(eng, args[0], args[1], None)


@BUILTINS.register("holdsInterval", 3)
def _holds3(eng, args):
    ctx_items = list_items(eng.resolve(args[2]))
    if ctx_items is None:
        raise SolverError("holdsInterval/3 needs a context list")
    return _holds(eng, args[0], args[1], ctx_items)


def _holds(eng, pair, interval, context):
    items = list_items(eng.resolve(pair))
    if items is None or len(items) != 2:
        raise SolverError("holdsInterval needs a pair [E1, E2]")
    e1, e2 = items
    found = holds_interval(e1, e2, eng.state, context, eng.ctx, with_events=True)
    return _solutions(eng, ([(e1, ev1), (e2, ev2), (interval, _time_term(s, t))]
                            for (s, t), ev1, ev2 in found))


@BUILTINS.register("broken", 3)
def _broken(eng, args):
    t1, t2 = eng.resolve(args[0]), eng.resolve(args[2])
    if isinstance(t1, Var) or isinstance(t2, Var):
        raise SolverError("broken/3 needs bound times")
    return broken(t1, eng.resolve(args[1]), t2, eng.state, ctx=eng.ctx)


def consume_op(eng, args) -> Consume:
    """Build a :class:`Consume` intent from ``consume/1,2`` arguments."""
    target = eng.resolve(args[0])
    policy = "all"
    if len(args) == 2:
        p = eng.resolve(args[1])
        if not isinstance(p, Atom) or p.name not in POLICIES:
            raise SolverError(f"unknown consumption policy {format_term(p)}")
        policy = p.name
    if isinstance(target, Struct) and target.functor == "eis" and len(target.args) == 1:
        return Consume(target, policy)
    if isinstance(target, Var):
        raise SolverError("consume/1 needs an EIS key or an event")
    return Consume(eis_key(target), policy, target)


@BUILTINS.register("consume", 1, effectful=True)
def _consume1(eng, args):
    eng.emit(consume_op(eng, args))
    return True


@BUILTINS.register("consume", 2, effectful=True)
def _consume2(eng, args):
    eng.emit(consume_op(eng, args))
    return True
