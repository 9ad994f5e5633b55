"""Unitized, versioned knowledge base.

Clauses live in modules keyed by an object id (``oid``).  A
:class:`KnowledgeState` is an immutable snapshot; every positive or negative
module update yields a new snapshot with ``state_index + 1`` and one more
:class:`UpdateRecord` in its history, so any state can be rebuilt from the
empty state by replaying its history.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Callable, Iterable, List, Mapping, Optional, Sequence, Tuple

from .parser import ParsedProgram, format_clause, parse_program
from .terms import Atom, Clause, Struct, Term, Text

__all__ = [
    "ModuleId", "UpdateRecord", "KnowledgeState", "KBWriter", "as_oid",
    "add_module", "remove_module", "clauses_for", "history", "replay",
    "load_module", "EMPTY",
]

ModuleId = Term


def as_oid(oid) -> Term:
    """Module ids are terms; plain Python strings become text (file-path style) ids."""
    if isinstance(oid, Term):
        return oid
    if isinstance(oid, str):
        return Text(oid)
    raise TypeError(f"not a module id: {oid!r}")


@dataclass(frozen=True)
class UpdateRecord:
    oid: Term
    positive: bool
    payload: Tuple[Clause, ...] = ()

    def __post_init__(self):
        if self.positive and not self.payload:
            raise ValueError("a positive update carries at least one clause")
        if not self.positive and self.payload:
            raise ValueError("a negative update carries no clauses")

    @property
    def polarity(self) -> str:
        return "positive" if self.positive else "negative"


class KnowledgeState:
    """Immutable snapshot of the knowledge base after ``state_index`` updates."""

    __slots__ = ("state_index", "_modules", "_history", "_cache", "_history_limit")

    def __init__(self, modules: Optional[dict] = None, state_index: int = 0,
                 history: tuple = (), history_limit: Optional[int] = None):
        self.state_index = state_index
        self._modules = dict(modules or {})
        self._history = history
        self._history_limit = history_limit
        self._cache: dict = {}

    @classmethod
    def empty(cls, history_limit: Optional[int] = None) -> "KnowledgeState":
        return cls(history_limit=history_limit)

    @property
    def modules(self) -> Mapping[Term, Tuple[Clause, ...]]:
        return MappingProxyType(self._modules)

    def module(self, oid) -> Tuple[Clause, ...]:
        return self._modules.get(as_oid(oid), ())

    def __contains__(self, oid) -> bool:
        return as_oid(oid) in self._modules

    @property
    def history(self) -> Tuple[UpdateRecord, ...]:
        return self._history

    def all_clauses(self) -> List[Tuple[Term, Clause]]:
        return [(oid, c) for oid, cs in self._modules.items() for c in cs]

    @property
    def predicate_index(self) -> Mapping[tuple, Tuple[Clause, ...]]:
        idx = self._cache.get("pred")
        if idx is None:
            work: dict = {}
            for _oid, c in self.all_clauses():
                work.setdefault(c.key, []).append(c)
            idx = {k: tuple(v) for k, v in work.items()}
            self._cache["pred"] = idx
        return idx

    def clauses_for(self, functor: str, arity: int, scope=None) -> Tuple[Clause, ...]:
        if scope is None:
            return self.predicate_index.get((functor, arity), ())
        scoped = self._cache.setdefault("scoped", {})
        key = (as_oid(scope), functor, arity)
        hit = scoped.get(key)
        if hit is None:
            hit = scoped[key] = tuple(c for c in self._modules.get(key[0], ())
                                      if c.key == (functor, arity))
        return hit

    @property
    def eca_facts(self) -> List[Tuple[Term, int, Struct]]:
        """(module oid, position in module, eca/6 term) in global order."""
        out = self._cache.get("eca")
        if out is None:
            out = []
            for oid, cs in self._modules.items():
                for pos, c in enumerate(cs):
                    if c.is_fact and c.key == ("eca", 6):
                        out.append((oid, pos, c.head))
            self._cache["eca"] = out
        return out

    @property
    def integrity_constraints(self) -> List[Tuple[Term, Term]]:
        """(module oid, constraint term) for every ``integrity/1`` fact."""
        out = self._cache.get("ic")
        if out is None:
            out = [(oid, c.head.args[0]) for oid, c in self.all_clauses()
                   if c.is_fact and c.key == ("integrity", 1)]
            self._cache["ic"] = out
        return out

    def clause_multiset(self) -> dict:
        """Formatted clauses per module; the basis of state equality checks."""
        return {oid: tuple(format_clause(c) for c in cs) for oid, cs in self._modules.items()}

    def same_clauses(self, other: "KnowledgeState") -> bool:
        return self.clause_multiset() == other.clause_multiset()

    def cache(self) -> dict:
        """Per-snapshot memo for derived views computed by other modules."""
        return self._cache

    # update operations -------------------------------------------------------

    def _next(self, modules: dict, record: UpdateRecord) -> "KnowledgeState":
        hist = self._history + (record,)
        if self._history_limit is not None and len(hist) > self._history_limit:
            hist = hist[-self._history_limit:]
        return KnowledgeState(modules, self.state_index + 1, hist, self._history_limit)

    def add(self, oid, clauses: Iterable[Clause]) -> "KnowledgeState":
        oid = as_oid(oid)
        clauses = tuple(clauses)
        modules = dict(self._modules)
        modules[oid] = modules.get(oid, ()) + clauses
        return self._next(modules, UpdateRecord(oid, True, clauses))

    def remove(self, oid) -> "KnowledgeState":
        oid = as_oid(oid)
        modules = dict(self._modules)
        modules.pop(oid, None)
        return self._next(modules, UpdateRecord(oid, False))

    def apply(self, record: UpdateRecord) -> "KnowledgeState":
        return self.add(record.oid, record.payload) if record.positive else self.remove(record.oid)

    def __repr__(self):
        return f"<KnowledgeState #{self.state_index}: {len(self._modules)} modules>"


EMPTY = KnowledgeState.empty()


def add_module(state: KnowledgeState, oid, clauses: Iterable[Clause]) -> KnowledgeState:
    """Append ``clauses`` to module ``oid`` (created if absent)."""
    clauses = tuple(clauses)
    if not clauses:
        # an empty positive update would not be a valid record; treat as a no-op step
        raise ValueError("add_module needs at least one clause")
    return state.add(oid, clauses)


def remove_module(state: KnowledgeState, oid) -> KnowledgeState:
    """Drop every clause labeled ``oid``; unknown ids still advance the state."""
    return state.remove(oid)


def clauses_for(state: KnowledgeState, functor: str, arity: int, scope=None) -> Tuple[Clause, ...]:
    return state.clauses_for(functor, arity, scope)


def history(state: KnowledgeState) -> Tuple[UpdateRecord, ...]:
    return state.history


def replay(records: Sequence[UpdateRecord], base: Optional[KnowledgeState] = None) -> KnowledgeState:
    state = base if base is not None else KnowledgeState.empty()
    for rec in records:
        state = state.apply(rec)
    return state


def load_module(state: KnowledgeState, path, oid=None) -> Tuple[KnowledgeState, ParsedProgram]:
    """Parse the script at ``path`` and add it as one module keyed by its path."""
    text = Path(path).read_text(encoding="utf-8")
    prog = parse_program(text)
    key = as_oid(oid if oid is not None else str(path))
    if prog.clauses:
        state = state.add(key, prog.clauses)
    return state, prog


class KBWriter:
    """Single writer publishing snapshots; readers just take ``.snapshot``."""

    def __init__(self, state: Optional[KnowledgeState] = None):
        self._state = state if state is not None else KnowledgeState.empty()
        self._lock = threading.Lock()

    @property
    def snapshot(self) -> KnowledgeState:
        return self._state

    def update(self, fn: Callable[[KnowledgeState], KnowledgeState]) -> KnowledgeState:
        with self._lock:
            new = fn(self._state)
            self._state = new
            return new
