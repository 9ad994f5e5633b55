"""Transactional updates guarded by integrity constraints.

An integrity constraint is stated in a script as ``integrity(C)``.  ``C`` is
turned into a goal whose provability means the constraint is violated:

* ``mutex(A, B)``     -- violated when A and B both hold
* ``xor(A, B)``       -- violated unless exactly one of A and B holds
* ``forbidden(A)``    -- violated when A holds
* anything else       -- the term itself is the violation goal

A transaction applies its operations to a hypothetical state, tests every
constraint there and either publishes that state or hands back the input
state untouched.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple, Union

from .kb import KnowledgeState, UpdateRecord, as_oid
from .parser import ParseError, format_term, parse_program
from .solver import BUILTINS, SolverError, solve
from .terms import (
    Atom, Clause, Struct, Term, Text, apply_substitution, is_ground, list_items,
    rename_term, term_vars,
)

__all__ = [
    "IntegrityConstraint", "Violation", "Add", "Remove", "UpdateTransaction",
    "TransactionResult", "HypotheticalResult", "TransactionError",
    "constraint_from_term", "evaluate_constraint", "test_integrity",
    "test_integrity_hypothetical", "run_transaction", "instantiate_payload",
    "apply_ops",
]


class TransactionError(Exception):
    """An operation could not be applied (bad payload, unreadable file ...)."""


@dataclass(frozen=True)
class IntegrityConstraint:
    kind: str                  # xor | mutex | forbidden | custom
    operands: Tuple[Term, ...]
    oid: Optional[Term] = None

    def __post_init__(self):
        if self.kind in ("xor", "mutex") and len(self.operands) != 2:
            raise ValueError(f"{self.kind} constraints take exactly two operands")
        if self.kind in ("forbidden", "custom") and len(self.operands) != 1:
            raise ValueError(f"{self.kind} constraints take one goal")

    @property
    def term(self) -> Term:
        if self.kind == "custom":
            return self.operands[0]
        return Struct(self.kind, self.operands)

    def __str__(self):
        return f"integrity({format_term(self.term)})"


def constraint_from_term(t: Term, oid: Optional[Term] = None) -> IntegrityConstraint:
    if isinstance(t, Struct) and t.functor in ("xor", "mutex") and len(t.args) == 2:
        return IntegrityConstraint(t.functor, t.args, oid)
    if isinstance(t, Struct) and t.functor == "forbidden" and len(t.args) == 1:
        return IntegrityConstraint("forbidden", t.args, oid)
    return IntegrityConstraint("custom", (t,), oid)


def constraints_of(state: KnowledgeState) -> List[IntegrityConstraint]:
    return [constraint_from_term(t, oid) for oid, t in state.integrity_constraints]


@dataclass(frozen=True)
class Violation:
    constraint: IntegrityConstraint
    witness: dict = field(default_factory=dict, compare=False)

    def __str__(self):
        if self.witness:
            w = ", ".join(f"{v.name}={format_term(t)}" for v, t in self.witness.items())
            return f"{self.constraint} violated ({w})"
        return f"{self.constraint} violated"


def _violation_goals(ic: IntegrityConstraint) -> List[List[Term]]:
    """Alternative goals; the constraint is violated if any has an answer."""
    if ic.kind == "mutex":
        return [[ic.operands[0], ic.operands[1]]]
    if ic.kind == "xor":
        a, b = ic.operands
        return [[a, b], [Struct("not", (a,)), Struct("not", (b,))]]
    return [[ic.operands[0]]]


def _evaluate(ic: IntegrityConstraint, state: KnowledgeState, opts=None, ctx=None,
              witnesses: bool = False):
    # fresh variables so witnesses from different constraints never clash
    ren: dict = {}
    found = []
    for goals in _violation_goals(ic):
        goals = [rename_term(g, ren) for g in goals]
        for ans in solve(goals, state, opts, ctx):
            found.append(dict(ans))
            if not witnesses:
                return True, found[0]
    if found:
        return True, found if witnesses else found[0]
    return False, ([] if witnesses else {})


def evaluate_constraint(ic, state: KnowledgeState, opts=None, ctx=None,
                        all_witnesses: bool = False):
    """``(violated, witness)``.  With ``all_witnesses`` the witness is a list."""
    if isinstance(ic, Term):
        ic = constraint_from_term(ic)
    return _evaluate(ic, state, opts, ctx, all_witnesses)


def test_integrity(state: KnowledgeState, extra: Sequence[IntegrityConstraint] = (),
                   opts=None, ctx=None) -> List[Violation]:
    """Every violated constraint of ``state`` (plus ``extra``), in KB order."""
    out = []
    for ic in list(constraints_of(state)) + list(extra):
        violated, witness = _evaluate(ic, state, opts, ctx)
        if violated:
            out.append(Violation(ic, witness))
    return out


@dataclass(frozen=True)
class HypotheticalResult:
    passed: bool
    violations: Tuple[Violation, ...] = ()

    def __bool__(self):
        return self.passed


_HYPO_OID = Struct("$hypothetical", (Atom("test"),))


def _remove_literal(state: KnowledgeState, lit: Term) -> KnowledgeState:
    """Hypothetical state without facts equal to ``lit`` (or rules with that head)."""
    work = state
    for oid, cs in state.modules.items():
        kept = tuple(c for c in cs if c.head != lit)
        if len(kept) != len(cs):
            work = work.remove(oid)
            if kept:
                work = work.add(oid, kept)
    return work


def test_integrity_hypothetical(state: KnowledgeState, lit, removal: bool = False,
                                opts=None, ctx=None) -> HypotheticalResult:
    """Test constraints on ``state`` with ``lit`` added (or removed); nothing is published."""
    if isinstance(lit, Clause):
        clause = lit
    else:
        if not is_ground(lit):
            raise ValueError("hypothetical integrity test needs a ground literal")
        clause = Clause(lit)
    if removal:
        hypo = _remove_literal(state, clause.head)
    else:
        hypo = state.add(_HYPO_OID, [clause])
    violations = test_integrity(hypo, opts=opts, ctx=ctx)
    return HypotheticalResult(not violations, tuple(violations))


# -- operations -----------------------------------------------------------------

@dataclass(frozen=True)
class Add:
    """Positive update.  ``payload`` is clauses or script text; ``values`` fill placeholders."""

    oid: Term
    payload: Union[str, Tuple[Clause, ...]]
    values: Tuple[Term, ...] = ()

    def clauses(self) -> Tuple[Clause, ...]:
        if isinstance(self.payload, str):
            text = self.payload.rstrip()
            if text and not text.endswith("."):
                # payload strings usually omit the final full stop
                text += "."
            try:
                prog = parse_program(text)
            except ParseError as exc:
                raise TransactionError(f"cannot parse update payload for "
                                       f"{format_term(self.oid)}: {exc}") from None
            if prog.directives:
                raise TransactionError("update payloads cannot contain directives")
            clauses = tuple(prog.clauses)
        else:
            clauses = tuple(self.payload)
        if self.values:
            clauses = instantiate_payload(clauses, self.values)
        if not clauses:
            raise TransactionError(f"empty update for {format_term(self.oid)}")
        return clauses

    def apply(self, state: KnowledgeState) -> KnowledgeState:
        return state.add(self.oid, self.clauses())


@dataclass(frozen=True)
class Remove:
    oid: Term

    def apply(self, state: KnowledgeState) -> KnowledgeState:
        return state.remove(self.oid)


@dataclass(frozen=True)
class LoadFile:
    """``add(Path)``: import a script file as the module named by its path."""

    path: str

    def apply(self, state: KnowledgeState) -> KnowledgeState:
        from .kb import load_module
        try:
            state, _prog = load_module(state, self.path)
        except (OSError, ParseError) as exc:
            raise TransactionError(f"cannot import {self.path}: {exc}") from None
        return state


def _placeholder_index(name: str) -> Optional[int]:
    if name.startswith("_") and name[1:].isdigit():
        return int(name[1:])
    return None


def instantiate_payload(clauses: Sequence[Clause], values: Sequence[Term]) -> Tuple[Clause, ...]:
    """Bind placeholder variables: ``_N`` takes ``values[N]``; bare ``_`` take the rest in order."""
    explicit = {i for c in clauses for t in (c.head, *c.body) for v in term_vars(t)
                if (i := _placeholder_index(v.name)) is not None}
    free = (i for i in itertools.count() if i not in explicit)
    out = []
    for c in clauses:
        local: dict = {}
        for t in (c.head, *c.body):
            for v in term_vars(t):
                if v in local:
                    continue
                idx = _placeholder_index(v.name)
                if idx is None and v.name == "_":
                    idx = next(free)
                if idx is not None and idx < len(values):
                    local[v] = values[idx]
        if local:
            c = Clause(apply_substitution(c.head, local),
                       tuple(apply_substitution(g, local) for g in c.body), c.span)
        out.append(c)
    return tuple(out)


Op = Union[Add, Remove, LoadFile, UpdateRecord]


def _apply_op(state: KnowledgeState, op) -> KnowledgeState:
    if isinstance(op, UpdateRecord):
        return state.apply(op)
    return op.apply(state)


def apply_ops(state: KnowledgeState, ops: Iterable) -> KnowledgeState:
    for op in ops:
        state = _apply_op(state, op)
    return state


@dataclass
class UpdateTransaction:
    ops: List = field(default_factory=list)
    extra_constraints: List[IntegrityConstraint] = field(default_factory=list)
    outcome: str = "pending"     # pending | committed | rolled_back
    violations: Tuple[Violation, ...] = ()
    diagnostic: Optional[str] = None

    def _settle(self, outcome: str):
        if self.outcome != "pending":
            raise RuntimeError(f"transaction already {self.outcome}")
        self.outcome = outcome


@dataclass(frozen=True)
class TransactionResult:
    state: KnowledgeState
    committed: bool
    violations: Tuple[Violation, ...] = ()
    diagnostic: Optional[str] = None
    records: Tuple[UpdateRecord, ...] = ()

    @property
    def outcome(self) -> str:
        return "committed" if self.committed else "rolled_back"


def run_transaction(state: KnowledgeState, tx, opts=None, ctx=None) -> TransactionResult:
    """Apply all operations of ``tx`` atomically, or none of them.

    ``tx`` is an :class:`UpdateTransaction` or a plain sequence of operations.
    """
    if not isinstance(tx, UpdateTransaction):
        tx = UpdateTransaction(list(tx))
    if not tx.ops:
        raise ValueError("a transaction needs at least one operation")
    try:
        hypo = apply_ops(state, tx.ops)
    except TransactionError as exc:
        tx._settle("rolled_back")
        tx.diagnostic = str(exc)
        return TransactionResult(state, False, (), str(exc))
    violations = tuple(test_integrity(hypo, tx.extra_constraints, opts, ctx))
    if violations:
        tx._settle("rolled_back")
        tx.violations = violations
        return TransactionResult(state, False, violations)
    tx._settle("committed")
    records = hypo.history[len(hypo.history) - (hypo.state_index - state.state_index):] \
        if hypo.state_index > state.state_index else ()
    return TransactionResult(hypo, True, (), None, tuple(records))


# -- script builtins --------------------------------------------------------------

def _oid_of(eng, t: Term) -> Term:
    t = eng.resolve(t)
    if not is_ground(t):
        raise SolverError(f"update id must be ground, got {format_term(t)}")
    return t


def _payload(eng, t: Term):
    t = eng.resolve(t)
    if isinstance(t, Text):
        return t.value
    if isinstance(t, Atom):
        return t.name
    raise SolverError("update payload must be a string")


def _values(eng, t: Term) -> Tuple[Term, ...]:
    items = list_items(eng.resolve(t))
    if items is None:
        raise SolverError("update values must be a list")
    return tuple(items)


def ops_from_term(eng, t: Term) -> List:
    """Operations described by ``add(...)``/``remove(...)``/``update(...)`` terms or lists of them."""
    t = eng.resolve(t)
    items = list_items(t)
    if items is not None:
        out = []
        for it in items:
            out.extend(ops_from_term(eng, it))
        return out
    if isinstance(t, Struct) and t.functor == "," and len(t.args) == 2:
        return ops_from_term(eng, t.args[0]) + ops_from_term(eng, t.args[1])
    if isinstance(t, Struct):
        n = len(t.args)
        if t.functor == "add" and n == 1:
            return [LoadFile(_payload(eng, t.args[0]))]
        if t.functor in ("add", "update") and n in (2, 3):
            vals = _values(eng, t.args[2]) if n == 3 else ()
            return [Add(_oid_of(eng, t.args[0]), _payload(eng, t.args[1]), vals)]
        if t.functor == "remove" and n == 1:
            return [Remove(_oid_of(eng, t.args[0]))]
        if t.functor == "consume":
            from .events import consume_op
            return [consume_op(eng, t.args)]
    raise SolverError(f"not an update operation: {format_term(t)}")


@BUILTINS.register("add", 1, effectful=True)
def _add1(eng, args):
    eng.emit(LoadFile(_payload(eng, args[0])))
    return True


@BUILTINS.register("add", 2, effectful=True)
def _add2(eng, args):
    eng.emit(Add(_oid_of(eng, args[0]), _payload(eng, args[1])))
    return True


@BUILTINS.register("add", 3, effectful=True)
def _add3(eng, args):
    eng.emit(Add(_oid_of(eng, args[0]), _payload(eng, args[1]), _values(eng, args[2])))
    return True


@BUILTINS.register("update", 3, effectful=True)
def _update3(eng, args):
    eng.emit(Add(_oid_of(eng, args[0]), _payload(eng, args[1]), _values(eng, args[2])))
    return True


@BUILTINS.register("remove", 1, effectful=True)
def _remove1(eng, args):
    eng.emit(Remove(_oid_of(eng, args[0])))
    return True


@BUILTINS.register("transaction", 1, effectful=True)
def _transaction(eng, args):
    ops = ops_from_term(eng, args[0])
    # the ops must pass integrity on their own, against the current snapshot
    result = run_transaction(eng.state, ops, eng.opts, eng.ctx)
    if not result.committed:
        return False
    for op in ops:
        eng.emit(op)
    return True


@BUILTINS.register("partial", 2)
def _partial(eng, args):
    scope = _oid_of(eng, args[1])
    sub = eng.spawn(scope=scope, keep_ancestors=False)
    goal = eng.resolve(args[0])

    def gen():
        for _ in sub.run([goal]):
            if eng.unify(args[0], sub.resolve(goal)):
                mark = len(eng.intents)
                eng.intents.extend(sub.intents)
                yield
                del eng.intents[mark:]
    return gen()


@BUILTINS.register("testIntegrity", 0)
def _test_integrity0(eng, args):
    return not test_integrity(eng.state, opts=eng.opts, ctx=eng.ctx)


@BUILTINS.register("testIntegrity", 1)
def _test_integrity1(eng, args):
    lit = eng.resolve(args[0])
    if not is_ground(lit):
        raise SolverError("testIntegrity/1 needs a ground literal")
    return test_integrity_hypothetical(eng.state, lit, opts=eng.opts, ctx=eng.ctx).passed


@BUILTINS.register("testIntegrity", 2)
def _test_integrity2(eng, args):
    lit = eng.resolve(args[0])
    mode = eng.resolve(args[1])
    if not is_ground(lit):
        raise SolverError("testIntegrity/2 needs a ground literal")
    removal = isinstance(mode, Atom) and mode.name == "remove"
    return test_integrity_hypothetical(eng.state, lit, removal, opts=eng.opts, ctx=eng.ctx).passed
