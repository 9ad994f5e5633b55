"""Term representation, substitutions and unification.

Every other part of the engine trades in the immutable term classes defined
here.  Substitutions are plain dicts mapping :class:`Var` to terms; the
solver keeps them in *triangular* form (a variable may be bound to a term
that still contains bound variables) and :func:`apply_substitution` resolves
them to a fixed point.
"""
from __future__ import annotations

import datetime as _dt
import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Mapping, Optional, Union

__all__ = [
    "Term", "Atom", "Number", "Text", "Var", "Struct", "ListTerm", "TimePoint",
    "TimeSpan", "Blank", "BLANK", "NIL", "Clause", "Substitution",
    "unify", "apply_substitution", "rename_apart", "compare_time", "is_ground",
    "term_vars", "deref", "variant_key", "fresh_var", "TimeKindError",
    "make_list", "list_items", "is_callable",
]


class TimeKindError(TypeError):
    """Raised when a time point is compared with a time span (or anything else)."""


class Term:
    """Base class of all terms."""

    __slots__ = ()


@dataclass(frozen=True, slots=True)
class Atom(Term):
    name: str

    def __str__(self):
        from .parser import format_term
        return format_term(self)


@dataclass(frozen=True, slots=True)
class Number(Term):
    value: Union[int, Fraction]

    def __str__(self):
        return str(self.value)


@dataclass(frozen=True, slots=True)
class Text(Term):
    value: str

    def __str__(self):
        from .parser import format_term
        return format_term(self)


@dataclass(frozen=True, slots=True)
class Var(Term):
    name: str
    id: int = 0

    def __str__(self):
        return self.name if self.name != "_" else f"_G{self.id}"


@dataclass(frozen=True, slots=True)
class Struct(Term):
    functor: str
    args: tuple

    def __post_init__(self):
        if not self.args:
            raise ValueError("compound terms need at least one argument; use Atom")

    @property
    def arity(self) -> int:
        return len(self.args)

    def __str__(self):
        from .parser import format_term
        return format_term(self)


@dataclass(frozen=True, slots=True)
class ListTerm(Term):
    """``[a, b | Tail]``.  ``tail`` is None for a proper list.

    Construction through :func:`make_list` keeps the representation flat: a
    tail is never itself a ListTerm.
    """

    items: tuple
    tail: Optional[Term] = None

    def __str__(self):
        from .parser import format_term
        return format_term(self)


NIL = ListTerm(())


@dataclass(frozen=True, slots=True, order=True)
class TimePoint(Term):
    year: int
    month: int
    day: int
    hour: int = 0
    minute: int = 0
    second: int = 0

    def __post_init__(self):
        # raises ValueError on an invalid calendar date-time
        _dt.datetime(self.year, self.month, self.day, self.hour, self.minute, self.second)

    def to_datetime(self) -> _dt.datetime:
        return _dt.datetime(self.year, self.month, self.day, self.hour, self.minute, self.second)

    @classmethod
    def from_datetime(cls, value: _dt.datetime) -> "TimePoint":
        return cls(value.year, value.month, value.day, value.hour, value.minute, value.second)

    def shift(self, seconds: int) -> "TimePoint":
        return TimePoint.from_datetime(self.to_datetime() + _dt.timedelta(seconds=seconds))

    def as_struct(self) -> Struct:
        return Struct("datetime", tuple(Number(v) for v in
                                        (self.year, self.month, self.day,
                                         self.hour, self.minute, self.second)))

    def __str__(self):
        return "datetime(%d,%d,%d,%d,%d,%d)" % (self.year, self.month, self.day,
                                                self.hour, self.minute, self.second)


@dataclass(frozen=True, slots=True)
class TimeSpan(Term):
    days: int = 0
    hours: int = 0
    minutes: int = 0
    seconds: int = 0

    def __post_init__(self):
        if min(self.days, self.hours, self.minutes, self.seconds) < 0:
            raise ValueError("timespan fields must be non-negative")

    @property
    def total_seconds(self) -> int:
        return ((self.days * 24 + self.hours) * 60 + self.minutes) * 60 + self.seconds

    def as_struct(self) -> Struct:
        return Struct("timespan", tuple(Number(v) for v in
                                        (self.days, self.hours, self.minutes, self.seconds)))

    def __str__(self):
        return "timespan(%d,%d,%d,%d)" % (self.days, self.hours, self.minutes, self.seconds)


@dataclass(frozen=True, slots=True)
class Blank(Term):
    """A blank ECA part, written ``_`` inside an ``eca`` fact."""

    def __str__(self):
        return "_"


BLANK = Blank()

Substitution = dict  # Var -> Term

_uids = itertools.count(1)


@dataclass(frozen=True)
class Clause:
    head: Term
    body: tuple = ()
    span: Optional[tuple] = field(default=None, compare=False, repr=False)
    uid: int = field(default_factory=lambda: next(_uids), compare=False, repr=False)

    @property
    def is_fact(self) -> bool:
        return not self.body

    @property
    def key(self) -> tuple:
        return predicate_key(self.head)

    def __str__(self):
        from .parser import format_clause
        return format_clause(self)


def predicate_key(t: Term) -> tuple:
    if isinstance(t, Struct):
        return (t.functor, len(t.args))
    if isinstance(t, Atom):
        return (t.name, 0)
    if isinstance(t, TimePoint):
        return ("datetime", 6)
    if isinstance(t, TimeSpan):
        return ("timespan", 4)
    raise TypeError(f"not a callable term: {t!r}")


def is_callable(t: Term) -> bool:
    return isinstance(t, (Atom, Struct))


# -- lists ------------------------------------------------------------------

def make_list(items: Iterable[Term], tail: Optional[Term] = None) -> Term:
    """Flat list constructor; an empty prefix returns the tail itself."""
    items = tuple(items)
    if isinstance(tail, ListTerm):
        items += tail.items
        tail = tail.tail
    if not items:
        return NIL if tail is None else tail
    return ListTerm(items, tail)


def list_items(t: Term, s: Optional[Mapping] = None) -> Optional[list]:
    """Items of a proper list (after dereferencing through ``s``), else None."""
    t = deref(t, s) if s else t
    if not isinstance(t, ListTerm):
        return None
    out = list(t.items)
    tail = t.tail
    while tail is not None:
        tail = deref(tail, s) if s else tail
        if not isinstance(tail, ListTerm):
            return None
        out.extend(tail.items)
        tail = tail.tail
    return out


# -- substitutions ------------------------------------------------------------

def deref(t: Term, s: Mapping) -> Term:
    while isinstance(t, Var):
        nxt = s.get(t)
        if nxt is None:
            return t
        t = nxt
    return t


def apply_substitution(t: Term, s: Mapping) -> Term:
    """Replace every bound variable of ``t`` transitively."""
    if not s:
        return t
    t = deref(t, s)
    if isinstance(t, Struct):
        return Struct(t.functor, tuple(apply_substitution(a, s) for a in t.args))
    if isinstance(t, ListTerm):
        items = tuple(apply_substitution(a, s) for a in t.items)
        tail = apply_substitution(t.tail, s) if t.tail is not None else None
        return make_list(items, tail)
    return t


def term_vars(t: Term, s: Optional[Mapping] = None) -> Iterator[Var]:
    """Variables of ``t`` in left-to-right order (with repeats)."""
    stack = [t]
    while stack:
        x = stack.pop()
        if s:
            x = deref(x, s)
        if isinstance(x, Var):
            yield x
        elif isinstance(x, Struct):
            stack.extend(reversed(x.args))
        elif isinstance(x, ListTerm):
            if x.tail is not None:
                stack.append(x.tail)
            stack.extend(reversed(x.items))


def is_ground(t: Term, s: Optional[Mapping] = None) -> bool:
    for _ in term_vars(t, s):
        return False
    return True


def _occurs(v: Var, t: Term, s: Mapping) -> bool:
    return any(x == v for x in term_vars(t, s))


def _time_to_struct(t: Term) -> Term:
    if isinstance(t, (TimePoint, TimeSpan)):
        return t.as_struct()
    return t


def unify_into(a: Term, b: Term, s: dict, trail: Optional[list] = None,
               occurs_check: bool = True) -> bool:
    """Destructively extend ``s`` so that ``a`` and ``b`` become equal.

    Bound variables are appended to ``trail`` so a caller can undo them.  On
    failure ``s`` may hold partial bindings; callers restore from the trail.
    """
    stack = [(a, b)]
    while stack:
        x, y = stack.pop()
        x = deref(x, s)
        y = deref(y, s)
        if x is y or x == y:
            continue
        if isinstance(x, Var):
            if occurs_check and _occurs(x, y, s):
                return False
            s[x] = y
            if trail is not None:
                trail.append(x)
            continue
        if isinstance(y, Var):
            if occurs_check and _occurs(y, x, s):
                return False
            s[y] = x
            if trail is not None:
                trail.append(y)
            continue
        if type(x) is not type(y):
            x2, y2 = _time_to_struct(x), _time_to_struct(y)
            if x2 is x and y2 is y:
                return False
            stack.append((x2, y2))
            continue
        if isinstance(x, Struct):
            if x.functor != y.functor or len(x.args) != len(y.args):
                return False
            stack.extend(zip(x.args, y.args))
        elif isinstance(x, ListTerm):
            if not x.items or not y.items:  # [] against a non-empty list
                return False
            n = min(len(x.items), len(y.items))
            stack.extend(zip(x.items[:n], y.items[:n]))
            stack.append((make_list(x.items[n:], x.tail), make_list(y.items[n:], y.tail)))
        else:
            # atoms, numbers, texts, time values and blanks compare structurally
            return False
    return True


def unify(a: Term, b: Term, s: Optional[Mapping] = None,
          occurs_check: bool = True) -> Optional[dict]:
    """Most general unifier of ``a`` and ``b`` extending ``s``, or None.

    The returned substitution is idempotent.  Without the occurs check a
    binding may be cyclic, so the raw triangular bindings are returned.
    """
    work = dict(s or {})
    if not unify_into(a, b, work, occurs_check=occurs_check):
        return None
    if not occurs_check:
        return work
    return {v: apply_substitution(t, work) for v, t in work.items()}


# -- renaming -----------------------------------------------------------------

_fresh_ids = itertools.count(1 << 24)


def fresh_var(name: str = "_") -> Var:
    return Var(name, next(_fresh_ids))


def _rename(t: Term, mapping: dict, counter) -> Term:
    if isinstance(t, Var):
        v = mapping.get(t)
        if v is None:
            v = mapping[t] = Var(t.name, next(counter))
        return v
    if isinstance(t, Struct):
        return Struct(t.functor, tuple(_rename(a, mapping, counter) for a in t.args))
    if isinstance(t, ListTerm):
        tail = _rename(t.tail, mapping, counter) if t.tail is not None else None
        return ListTerm(tuple(_rename(a, mapping, counter) for a in t.items), tail)
    return t


def rename_term(t: Term, mapping: Optional[dict] = None, counter=None) -> Term:
    return _rename(t, {} if mapping is None else mapping,
                   _fresh_ids if counter is None else counter)


def rename_apart(clause: Clause, fresh_counter: Optional[int] = None) -> Clause:
    """Copy of ``clause`` whose variables all have ids > ``fresh_counter``.

    Without a counter, ids come from the process-wide fresh-id supply, which is
    what the solver uses.
    """
    counter = _fresh_ids if fresh_counter is None else itertools.count(fresh_counter + 1)
    mapping: dict = {}
    head = _rename(clause.head, mapping, counter)
    if not mapping and not clause.body:
        return clause
    body = tuple(_rename(g, mapping, counter) for g in clause.body)
    if not mapping:
        return clause
    return Clause(head, body, clause.span, clause.uid)


def variant_key(t: Term, s: Optional[Mapping] = None):
    """Hashable key equal for two terms iff they are variants of each other."""
    names: dict = {}

    def walk(x):
        if s:
            x = deref(x, s)
        if isinstance(x, Var):
            return ("$v", names.setdefault(x, len(names)))
        if isinstance(x, Struct):
            return (x.functor,) + tuple(walk(a) for a in x.args)
        if isinstance(x, ListTerm):
            return ("$l", tuple(walk(a) for a in x.items),
                    walk(x.tail) if x.tail is not None else None)
        if isinstance(x, (TimePoint, TimeSpan)):
            return walk(x.as_struct())
        return x

    return walk(t)


# -- time ---------------------------------------------------------------------

def compare_time(a: Term, b: Term) -> int:
    """-1, 0 or 1 by chronological order; both arguments of the same kind."""
    if isinstance(a, TimePoint) and isinstance(b, TimePoint):
        ka, kb = a.to_datetime(), b.to_datetime()
    elif isinstance(a, TimeSpan) and isinstance(b, TimeSpan):
        ka, kb = a.total_seconds, b.total_seconds
    else:
        raise TimeKindError(f"cannot compare {type(a).__name__} with {type(b).__name__}")
    return (ka > kb) - (ka < kb)
