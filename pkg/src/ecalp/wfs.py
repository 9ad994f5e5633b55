"""Well-founded model of ground, function-free programs by alternating fixpoint.

This is a reference oracle for the SLDNF solver, sharing no code with it.
Atoms are compared as terms; ``neg(p(x))`` counts as an ordinary atom.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import FrozenSet, Iterable, List, Sequence, Tuple

from .parser import parse_program
from .terms import Atom, Clause, ListTerm, Number, Struct, Term, Text, TimePoint, is_ground

__all__ = ["WfsModel", "NotDatalog", "wfs_model", "ground_rules"]


class NotDatalog(ValueError):
    """The input is not a ground function-free program."""


@dataclass(frozen=True)
class WfsModel:
    true_atoms: FrozenSet[Term]
    false_atoms: FrozenSet[Term]
    undefined_atoms: FrozenSet[Term]

    def value(self, atom: Term) -> str:
        if atom in self.true_atoms:
            return "true"
        if atom in self.undefined_atoms:
            return "undefined"
        return "false"


_CONSTANTS = (Atom, Number, Text, TimePoint)


def _check_atom(t: Term) -> Term:
    if isinstance(t, Atom):
        return t
    if isinstance(t, Struct):
        if t.functor == "neg" and len(t.args) == 1:
            _check_atom(t.args[0])
            return t
        for a in t.args:
            if not isinstance(a, _CONSTANTS):
                raise NotDatalog(f"argument {a} is not a constant")
        return t
    raise NotDatalog(f"{t!r} is not an atom")


def ground_rules(clauses: Iterable[Clause]) -> List[Tuple[Term, Tuple[Term, ...], Tuple[Term, ...]]]:
    """Split each clause into (head, positive body, negated body atoms)."""
    rules = []
    for c in clauses:
        if not is_ground(c.head) or not all(is_ground(g) for g in c.body):
            raise NotDatalog("program is not ground")
        pos, neg = [], []
        for lit in c.body:
            if isinstance(lit, Atom) and lit.name == "true":
                continue
            if isinstance(lit, Struct) and lit.functor in ("not", "\\+") and len(lit.args) == 1:
                neg.append(_check_atom(lit.args[0]))
            else:
                pos.append(_check_atom(lit))
        rules.append((_check_atom(c.head), tuple(pos), tuple(neg)))
    return rules


def _least_model(rules, assumed_true: FrozenSet[Term]) -> FrozenSet[Term]:
    """Least model of the reduct: ``not a`` holds iff ``a`` not in ``assumed_true``."""
    active = [(h, pos) for h, pos, neg in rules if not any(a in assumed_true for a in neg)]
    model: set = set()
    changed = True
    while changed:
        changed = False
        for h, pos in active:
            if h not in model and all(a in model for a in pos):
                model.add(h)
                changed = True
    return frozenset(model)


def wfs_model(program, extra_atoms: Sequence[Term] = ()) -> WfsModel:
    """Well-founded model of ``program`` (clauses or source text)."""
    if isinstance(program, str):
        prog = parse_program(program)
        clauses = prog.clauses
    else:
        clauses = list(program)
    rules = ground_rules(clauses)
    base = set(_check_atom(a) for a in extra_atoms)
    for h, pos, neg in rules:
        base.add(h)
        base.update(pos)
        base.update(neg)

    true: FrozenSet[Term] = frozenset()
    possible = _least_model(rules, true)
    while True:
        new_true = _least_model(rules, possible)
        new_possible = _least_model(rules, new_true)
        if new_true == true and new_possible == possible:
            break
        true, possible = new_true, new_possible
    base_f = frozenset(base)
    return WfsModel(true, base_f - possible, possible - true)
