"""Backward-chaining SLDNF engine.

The machine works over one immutable :class:`~ecalp.kb.KnowledgeState`:
leftmost selection, clauses tried in textual order, chronological
backtracking with a binding trail, cut, and negation as finite failure with
an allowedness check (selecting ``not(L)`` with ``L`` non-ground raises
:class:`FlounderingError`).  A loop check fails any call that is a variant of
one of its ancestors, which makes function-free programs terminate.

Builtins never touch the knowledge base.  Effectful ones record *intents*
that are trailed like bindings, so a branch that fails takes its intents
with it.  The caller decides what to do with the intents of an answer.
"""
from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

from .clock import Clock, SystemClock
from .parser import format_term, parse_query
from .terms import (
    Atom, Clause, ListTerm, Number, Struct, Term, Text, TimePoint, TimeSpan, Var,
    apply_substitution, compare_time, deref, is_ground, list_items, make_list,
    rename_apart, term_vars, unify_into, variant_key,
)

__all__ = [
    "SolverError", "FlounderingError", "DepthExceeded", "UnknownBuiltin",
    "InstantiationError", "EvaluationError", "SolverOptions", "Context", "Answer",
    "Message", "Registry", "BUILTINS", "default_registry", "solve", "solve_all",
    "succeeds", "call_builtin", "Engine", "evaluate",
]


class SolverError(Exception):
    pass


class FlounderingError(SolverError):
    def __init__(self, literal: Term):
        self.literal = literal
        super().__init__(f"floundering: default negation selected on non-ground literal "
                         f"not({format_term(literal)})")


class DepthExceeded(SolverError):
    def __init__(self, depth: int, goal: Term):
        self.depth = depth
        self.goal = goal
        super().__init__(f"derivation depth {depth} exceeded at {format_term(goal)}")


class UnknownBuiltin(SolverError):
    pass


class InstantiationError(SolverError):
    pass


class EvaluationError(SolverError, TypeError):
    pass


@dataclass
class SolverOptions:
    max_depth: int = 10_000
    loop_check: bool = True
    occurs_check: bool = True
    scope: Optional[Term] = None
    clock: Optional[Clock] = None

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")


@dataclass(frozen=True)
class Message:
    """Outbound notification recorded by ``sendMessage/2``."""

    recipient: Term
    content: Term

    def line(self) -> str:
        return f"NOTIFY {format_term(self.recipient)} {format_term(self.content)}"


# -- builtin registry -----------------------------------------------------------

BuiltinFn = Callable[["Engine", tuple], Union[bool, None, Iterator]]


@dataclass
class Builtin:
    name: str
    arity: int
    fn: BuiltinFn
    effectful: bool = False


class Registry:
    """Maps name/arity to builtin implementations and host functions."""

    def __init__(self, entries: Optional[Dict[tuple, Builtin]] = None):
        self._entries: Dict[tuple, Builtin] = dict(entries or {})

    def copy(self) -> "Registry":
        return Registry(self._entries)

    def get(self, name: str, arity: int) -> Optional[Builtin]:
        return self._entries.get((name, arity))

    def __contains__(self, key) -> bool:
        return key in self._entries

    def register(self, name: str, arity: int, effectful: bool = False):
        """Decorator for engine-level builtins ``fn(engine, args)``."""
        def deco(fn):
            self._entries[(name, arity)] = Builtin(name, arity, fn, effectful)
            return fn
        return deco

    def register_host(self, name: str, arity: int, fn: Callable, effectful: bool = False):
        """Register a host function.

        ``fn`` receives the resolved argument terms (effectful functions also
        get an ``emit`` keyword to queue intents) and returns a bool, or an
        iterable of argument tuples to unify with the call's arguments.
        """
        def call(eng: "Engine", args: tuple):
            vals = tuple(eng.resolve(a) for a in args)
            res = fn(*vals, emit=eng.emit) if effectful else fn(*vals)
            if res is None or isinstance(res, bool):
                return bool(res)

            def gen():
                for sol in res:
                    if len(sol) != len(args):
                        raise SolverError(f"host function {name}/{arity} returned "
                                          f"{len(sol)} values")
                    if eng.unify_all(args, sol):
                        yield
            return gen()

        self._entries[(name, arity)] = Builtin(name, arity, call, effectful)

    def names(self):
        return sorted(self._entries)


BUILTINS = Registry()
_loaded_extensions = False


def default_registry() -> Registry:
    """A copy of the standard builtins, including update and event builtins."""
    global _loaded_extensions
    if not _loaded_extensions:
        from . import events, updates  # noqa: F401  (they register into BUILTINS)
        _loaded_extensions = True
    return BUILTINS.copy()


@dataclass
class Context:
    """State shared by the proofs of one session or daemon.

    ``timers`` holds the last firing time of every ``interval/2`` call site,
    keyed by (rule key, call site); ``origin`` is when timers start counting.
    """

    registry: Registry = field(default_factory=default_registry)
    clock: Clock = field(default_factory=SystemClock)
    origin: Optional[TimePoint] = None
    timers: dict = field(default_factory=dict)
    rule_key: object = None
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        if self.origin is None:
            self.origin = self.clock.now()

    def for_rule(self, rule_key) -> "Context":
        """Same shared timers and registry, different interval key."""
        ctx = Context(self.registry, self.clock, self.origin, self.timers, rule_key, self.lock)
        return ctx


class Answer(dict):
    """Bindings of the query's named variables, plus the intents of the proof."""

    intents: tuple = ()

    def __init__(self, bindings, intents=()):
        super().__init__(bindings)
        self.intents = tuple(intents)

    @property
    def messages(self) -> List[Message]:
        return [i for i in self.intents if isinstance(i, Message)]

    def by_name(self) -> dict:
        return {v.name: t for v, t in self.items()}


# -- machine ------------------------------------------------------------------------

class _Fail:
    __slots__ = ()


FAIL = _Fail()


class Frame:
    __slots__ = ("goal", "next", "depth", "cut", "anc", "site")

    def __init__(self, goal, nxt, depth, cut, anc, site=None):
        self.goal = goal
        self.next = nxt
        self.depth = depth
        self.cut = cut
        self.anc = anc
        self.site = site


class ChoicePoint:
    __slots__ = ("mark", "imark", "frame", "clauses", "pos", "gen", "cont")

    def __init__(self, mark, imark, frame=None, clauses=None, pos=0, gen=None, cont=None):
        self.mark = mark
        self.imark = imark
        self.frame = frame
        self.clauses = clauses
        self.pos = pos
        self.gen = gen
        self.cont = cont


_CONTROL = {("true", 0), ("fail", 0), ("false", 0), ("!", 0), (",", 2),
            ("not", 1), ("\\+", 1)}


class Engine:
    """One proof search over one snapshot.  Not reusable across queries."""

    def __init__(self, state, opts: Optional[SolverOptions] = None,
                 ctx: Optional[Context] = None, anc=None, base_depth: int = 0):
        self.state = state
        self.opts = opts or SolverOptions()
        if ctx is None:
            ctx = Context(clock=self.opts.clock or SystemClock())
        self.ctx = ctx
        self.registry = ctx.registry
        self.b: dict = {}
        self.trail: list = []
        self.intents: list = []
        self.cps: List[ChoicePoint] = []
        self.frame: Optional[Frame] = None
        self._anc0 = anc
        self._depth0 = base_depth
        self.calls = 0

    # binding helpers ------------------------------------------------------------
    def resolve(self, t: Term) -> Term:
        return apply_substitution(t, self.b)

    def deref(self, t: Term) -> Term:
        return deref(t, self.b)

    def undo(self, mark: int) -> None:
        trail, b = self.trail, self.b
        while len(trail) > mark:
            del b[trail.pop()]

    def unify(self, a: Term, b: Term) -> bool:
        """Unify, undoing partial bindings on failure."""
        mark = len(self.trail)
        if unify_into(a, b, self.b, self.trail, self.opts.occurs_check):
            return True
        self.undo(mark)
        return False

    def unify_all(self, xs: Sequence[Term], ys: Sequence[Term]) -> bool:
        mark = len(self.trail)
        for x, y in zip(xs, ys):
            if not unify_into(x, y, self.b, self.trail, self.opts.occurs_check):
                self.undo(mark)
                return False
        return True

    def emit(self, intent) -> None:
        self.intents.append(intent)

    def spawn(self, scope=..., keep_ancestors: bool = True) -> "Engine":
        opts = self.opts
        if scope is not ...:
            opts = SolverOptions(opts.max_depth, opts.loop_check, opts.occurs_check,
                                 scope, opts.clock)
        depth = self.frame.depth if self.frame is not None else self._depth0
        anc = self.frame.anc if (keep_ancestors and self.frame is not None) else None
        return Engine(self.state, opts, self.ctx, anc, depth)

    # driver ---------------------------------------------------------------------
    def run(self, goals: Sequence[Term]) -> Iterator[None]:
        """Yield once per proof; bindings are live in ``self.b`` at each yield."""
        frame = None
        for i, g in reversed(list(enumerate(goals))):
            frame = Frame(g, frame, self._depth0, 0, self._anc0, ("query", i))
        while True:
            if frame is None:
                yield
                frame = self._backtrack()
            else:
                frame = self._step(frame)
                if frame is FAIL:
                    frame = self._backtrack()
            if frame is FAIL:
                return

    def _backtrack(self):
        cps = self.cps
        while cps:
            cp = cps.pop()
            self.undo(cp.mark)
            del self.intents[cp.imark:]
            if cp.gen is not None:
                self.frame = cp.frame
                try:
                    next(cp.gen)
                except StopIteration:
                    self.undo(cp.mark)
                    continue
                cps.append(cp)
                return cp.cont
            f = self._try_clauses(cp.frame, cp.clauses, cp.pos)
            if f is not FAIL:
                return f
        return FAIL

    def _try_clauses(self, frame: Frame, clauses, pos: int):
        goal = frame.goal  # already dereferenced selected literal
        mark, imark = len(self.trail), len(self.intents)
        cut = len(self.cps)
        n = len(clauses)
        depth = frame.depth
        for i in range(pos, n):
            c = rename_apart(clauses[i])
            if unify_into(c.head, goal, self.b, self.trail, self.opts.occurs_check):
                if i + 1 < n:
                    self.cps.append(ChoicePoint(mark, imark, frame, clauses, i + 1))
                f = frame.next
                uid = clauses[i].uid
                for j in range(len(c.body) - 1, -1, -1):
                    f = Frame(c.body[j], f, depth, cut, frame.anc, (uid, j))
                return f
            self.undo(mark)
        return FAIL

    def _step(self, frame: Frame):
        g = deref(frame.goal, self.b)
        self.calls += 1
        if isinstance(g, Var):
            raise InstantiationError("goal is an unbound variable")
        if isinstance(g, Atom):
            name, args = g.name, ()
        elif isinstance(g, Struct):
            name, args = g.functor, g.args
        else:
            raise SolverError(f"goal is not callable: {format_term(g)}")
        arity = len(args)
        nxt = frame.next

        if (name, arity) in _CONTROL:
            if name == "true":
                return nxt
            if name in ("fail", "false"):
                return FAIL
            if name == "!":
                del self.cps[frame.cut:]
                return nxt
            if name == ",":
                second = Frame(args[1], nxt, frame.depth, frame.cut, frame.anc, frame.site)
                return Frame(args[0], second, frame.depth, frame.cut, frame.anc, frame.site)
            # default negation
            lit = self.resolve(args[0])
            if not is_ground(lit):
                raise FlounderingError(lit)
            self.frame = frame
            sub = self.spawn()
            for _ in sub.run([lit]):
                return FAIL
            return nxt

        if name == "call" and arity >= 1:
            target = deref(args[0], self.b)
            if arity > 1:
                if isinstance(target, Atom):
                    target = Struct(target.name, tuple(args[1:]))
                elif isinstance(target, Struct):
                    target = Struct(target.functor, target.args + tuple(args[1:]))
            return Frame(target, nxt, frame.depth, len(self.cps), frame.anc, frame.site)

        bi = self.registry.get(name, arity)
        if bi is not None:
            self.frame = frame
            mark, imark = len(self.trail), len(self.intents)
            res = bi.fn(self, args)
            if res is True:
                return nxt
            if res is False or res is None:
                self.undo(mark)
                del self.intents[imark:]
                return FAIL
            try:
                next(res)
            except StopIteration:
                self.undo(mark)
                del self.intents[imark:]
                return FAIL
            self.cps.append(ChoicePoint(mark, imark, frame, gen=res, cont=nxt))
            return nxt

        clauses = self.state.clauses_for(name, arity, self.opts.scope)
        if not clauses:
            return FAIL
        depth = frame.depth + 1
        if depth > self.opts.max_depth:
            raise DepthExceeded(self.opts.max_depth, self.resolve(g))
        anc = frame.anc
        if self.opts.loop_check:
            key = variant_key(g, self.b)
            a = anc
            while a is not None:
                if a[0] == key:
                    return FAIL
                a = a[1]
            anc = (key, anc)
        return self._try_clauses(Frame(g, nxt, depth, frame.cut, anc, frame.site), clauses, 0)


# -- public API -------------------------------------------------------------------

def _as_goals(goal) -> List[Term]:
    if isinstance(goal, str):
        return parse_query(goal)
    if isinstance(goal, Term):
        return [goal]
    return list(goal)


def solve(goal, state, opts: Optional[SolverOptions] = None,
          ctx: Optional[Context] = None) -> Iterator[Answer]:
    """Lazily yield answers to ``goal`` (text, a term, or a list of literals)."""
    goals = _as_goals(goal)
    qvars = []
    for g in goals:
        for v in term_vars(g):
            if v.name != "_" and v not in qvars:
                qvars.append(v)
    eng = Engine(state, opts, ctx)
    for _ in eng.run(goals):
        yield Answer({v: eng.resolve(v) for v in qvars}, eng.intents)


def solve_all(goal, state, opts=None, ctx=None) -> List[Answer]:
    return list(solve(goal, state, opts, ctx))


def succeeds(goal, state, opts=None, ctx=None) -> bool:
    for _ in solve(goal, state, opts, ctx):
        return True
    return False


def call_builtin(name: str, args: Sequence[Term], state, opts=None,
                 ctx: Optional[Context] = None) -> Iterator[Answer]:
    """Run one registered builtin directly."""
    ctx = ctx or Context(clock=(opts.clock if opts and opts.clock else SystemClock()))
    if ctx.registry.get(name, len(args)) is None and (name, len(args)) not in _CONTROL:
        raise UnknownBuiltin(f"unknown builtin {name}/{len(args)}")
    goal = Struct(name, tuple(args)) if args else Atom(name)
    return solve([goal], state, opts, ctx)


# -- evaluation -------------------------------------------------------------------

def _norm(v):
    if isinstance(v, Fraction) and v.denominator == 1:
        return int(v)
    return v


def evaluate(t: Term, s: Optional[dict] = None):
    """Evaluate an arithmetic/time expression to int, Fraction, TimePoint or TimeSpan."""
    t = deref(t, s) if s else t
    if isinstance(t, Number):
        return t.value
    if isinstance(t, (TimePoint, TimeSpan)):
        return t
    if isinstance(t, Var):
        raise InstantiationError("arithmetic on an unbound variable")
    if isinstance(t, Struct):
        if len(t.args) == 2 and t.functor in ("+", "-", "*", "/", "//", "mod"):
            a, b = evaluate(t.args[0], s), evaluate(t.args[1], s)
            return _arith(t.functor, a, b)
        if len(t.args) == 1 and t.functor == "-":
            a = evaluate(t.args[0], s)
            if isinstance(a, (int, Fraction)):
                return -a
        if t.functor == "datetime" and len(t.args) == 6:
            return TimePoint(*(int(evaluate(a, s)) for a in t.args))
        if t.functor == "timespan" and len(t.args) == 4:
            return TimeSpan(*(int(evaluate(a, s)) for a in t.args))
    raise EvaluationError(f"cannot evaluate {format_term(apply_substitution(t, s or {}))}")


def _span_from_seconds(sec: int) -> TimeSpan:
    if sec < 0:
        raise EvaluationError("negative time span")
    d, r = divmod(sec, 86400)
    h, r = divmod(r, 3600)
    m, r = divmod(r, 60)
    return TimeSpan(d, h, m, r)


def _arith(op, a, b):
    num = (int, Fraction)
    if isinstance(a, num) and isinstance(b, num):
        if op == "+":
            return _norm(a + b)
        if op == "-":
            return _norm(a - b)
        if op == "*":
            return _norm(a * b)
        if b == 0:
            raise EvaluationError("division by zero")
        if op == "/":
            return _norm(Fraction(a) / Fraction(b))
        if op == "//":
            return a // b
        return a % b
    if isinstance(a, TimePoint) and isinstance(b, TimeSpan) and op in "+-":
        return a.shift(b.total_seconds if op == "+" else -b.total_seconds)
    if isinstance(a, TimePoint) and isinstance(b, TimePoint) and op == "-":
        return _span_from_seconds(int((a.to_datetime() - b.to_datetime()).total_seconds()))
    if isinstance(a, TimeSpan) and isinstance(b, TimeSpan) and op in "+-":
        return _span_from_seconds(a.total_seconds + b.total_seconds if op == "+"
                                  else a.total_seconds - b.total_seconds)
    raise EvaluationError(f"cannot apply {op} to {type(a).__name__} and {type(b).__name__}")


def _to_term(v) -> Term:
    if isinstance(v, Term):
        return v
    return Number(_norm(v))


def _compare_values(a, b) -> int:
    num = (int, Fraction)
    if isinstance(a, num) and isinstance(b, num):
        return (a > b) - (a < b)
    return compare_time(a, b)


def _interval_bounds(t: Term, s) -> Optional[tuple]:
    items = list_items(t, s)
    if items is not None and len(items) == 2:
        return items
    return None


def compare_terms(op: str, x: Term, y: Term, s=None) -> bool:
    """Numeric / chronological comparison; ``[A,B] op [C,D]`` compares B with C."""
    ix, iy = _interval_bounds(x, s), _interval_bounds(y, s)
    if ix is not None and iy is not None:
        x, y = ix[1], iy[0]
    c = _compare_values(evaluate(x, s), evaluate(y, s))
    return {"<": c < 0, ">": c > 0, "<=": c <= 0, "=<": c <= 0, ">=": c >= 0,
            "=:=": c == 0, "=\\=": c != 0}[op]


# -- core builtins ----------------------------------------------------------------

def _register_core(reg: Registry):
    for op in ("<", ">", "<=", "=<", ">=", "=:=", "=\\="):
        def cmp(eng, args, op=op):
            try:
                return compare_terms(op, args[0], args[1], eng.b)
            except TypeError as exc:
                raise EvaluationError(str(exc)) from None
        reg.register(op, 2)(cmp)

    @reg.register("=", 2)
    def _eq(eng, args):
        return eng.unify(args[0], args[1])

    @reg.register("\\=", 2)
    def _neq(eng, args):
        mark = len(eng.trail)
        if eng.unify(args[0], args[1]):
            eng.undo(mark)
            return False
        return True

    @reg.register("==", 2)
    def _ident(eng, args):
        return eng.resolve(args[0]) == eng.resolve(args[1])

    @reg.register("\\==", 2)
    def _nident(eng, args):
        return eng.resolve(args[0]) != eng.resolve(args[1])

    @reg.register("is", 2)
    def _is(eng, args):
        return eng.unify(args[0], _to_term(evaluate(args[1], eng.b)))

    @reg.register("var", 1)
    def _var(eng, args):
        return isinstance(eng.deref(args[0]), Var)

    @reg.register("nonvar", 1)
    def _nonvar(eng, args):
        return not isinstance(eng.deref(args[0]), Var)

    @reg.register("ground", 1)
    def _ground(eng, args):
        return is_ground(args[0], eng.b)

    @reg.register("atom", 1)
    def _atom(eng, args):
        return isinstance(eng.deref(args[0]), Atom)

    @reg.register("number", 1)
    def _number(eng, args):
        return isinstance(eng.deref(args[0]), Number)

    @reg.register("member", 2)
    def _member(eng, args):
        items = list_items(args[1], eng.b)
        if items is None:
            raise InstantiationError("member/2 needs a proper list")

        def gen():
            for it in items:
                if eng.unify(args[0], it):
                    yield
        return gen()

    @reg.register("findall", 3)
    def _findall(eng, args):
        template, goal = args[0], args[1]
        sub = eng.spawn()
        sub.b = dict(eng.b)
        results = [sub.resolve(template) for _ in sub.run([goal])]
        return eng.unify(args[2], make_list(results))

    @reg.register("sysTime", 1)
    def _systime(eng, args):
        return eng.unify(args[0], eng.ctx.clock.now())

    @reg.register("interval", 2)
    def _interval(eng, args):
        span = eng.deref(args[0])
        if not isinstance(span, TimeSpan):
            span = evaluate(span, eng.b)
        if not isinstance(span, TimeSpan):
            raise EvaluationError("interval/2 needs a timespan")
        now = eng.deref(args[1])
        if isinstance(now, Var):
            now = eng.ctx.clock.now()
            eng.unify(args[1], now)
        if not isinstance(now, TimePoint):
            raise EvaluationError("interval/2 needs a time point")
        site = eng.frame.site if eng.frame is not None else None
        key = (eng.ctx.rule_key, site)
        ctx = eng.ctx
        with ctx.lock:
            last = ctx.timers.get(key, ctx.origin)
            due = (now.to_datetime() - last.to_datetime()).total_seconds() >= span.total_seconds
            if due:
                ctx.timers[key] = now
        return due

    @reg.register("sendMessage", 2, effectful=True)
    def _send(eng, args):
        eng.emit(Message(eng.resolve(args[0]), eng.resolve(args[1])))
        return True


_register_core(BUILTINS)
