"""ECA-RuleML: XML reader, writer, validator and translator to ECA-LP text.

Element names follow the grammar nonterminals: capitalized names are node
elements (``ECA``, ``Cterm``, ``Sequence`` ...), lowercase names are role
elements (``event``, ``action``, ``oid`` ...).  All elements live in one
namespace, :data:`NS`.

Each kind has a production in :data:`GRAMMAR`, a list of slots
``(allowed kinds, min, max)`` matched in order against the element's
children.  Leaf kinds (``Ind``, ``Data``, ``Var`` ...) carry text instead.
"""
from __future__ import annotations

import itertools
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

from .parser import format_clause, format_term, parse_program
from .terms import (
    BLANK, Atom, Clause, Number, Struct, Term, Text, Var, make_list,
)

__all__ = [
    "NS", "RulemlNode", "RulemlError", "TranslationResult", "GRAMMAR", "KINDS",
    "parse_eca_ruleml", "emit_eca_ruleml", "validate", "translate_to_ecalp",
    "load_ruleml", "canonical_xml",
]

NS = "urn:ecalp:eca-ruleml"
_Q = "{%s}" % NS


class RulemlError(ValueError):
    """Malformed XML or a child sequence that does not fit its production."""


@dataclass(frozen=True)
class RulemlNode:
    kind: str
    children: Tuple["RulemlNode", ...] = ()
    attrs: Tuple[Tuple[str, str], ...] = ()
    text: Optional[str] = None

    def attr(self, name: str, default=None):
        return dict(self.attrs).get(name, default)

    def child_kinds(self) -> List[str]:
        return [c.kind for c in self.children]

    def first(self, kind: str) -> Optional["RulemlNode"]:
        for c in self.children:
            if c.kind == kind:
                return c
        return None

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()


def node(kind: str, *children: RulemlNode, text: Optional[str] = None, **attrs) -> RulemlNode:
    """Shorthand constructor used by tests and the translator."""
    return RulemlNode(kind, tuple(children), tuple(sorted(attrs.items())), text)


# -- grammar -------------------------------------------------------------------

def _k(*names) -> FrozenSet[str]:
    return frozenset(names)


LEAVES = _k("Ind", "Data", "Var", "Skolem", "Ctor", "Rel")
TERM = _k("Ind", "Data", "Var", "Skolem", "Reify", "Cterm", "Plex")
OPS = _k("Sequence", "Or", "Xor", "Conjunction", "Concurrent", "Not", "Any",
         "Aperiodic", "Periodic")
EVENT_OPS = OPS - {"Periodic"}
LITERAL = _k("Atom", "Cterm", "Naf", "Neg", "Equal")
# goals usable in the time, condition and postcondition parts
GOAL = _k("Naf", "Neg", "Cterm", "Atom", "And", "Equal", "Occurs", "HoldsInterval")
OPERAND = TERM | OPS | _k("Atom", "event", "action", "Assert", "Retract")
INTERVALISH = _k("interval", "Interval", "Plex", "Var")
EV = _k("event", "Ind", "Var", "Cterm")
TM = _k("time", "Ind", "Var", "Cterm", "Data")
FL = _k("fluent", "Ind", "Var", "Cterm")
FACTS = _k("Atom", "Cterm", "Implies", "Occurs", "Terminates", "Happens", "Planned",
           "Initially", "Initiates", "HoldsAt", "ValueAt")
OID = ("oid", _k("oid"), 0, 1)
MANY = 10 ** 9

# kind -> ordered slots (label, allowed child kinds, min, max)
GRAMMAR: Dict[str, list] = {
    "RuleBase": [("rules", _k("ECA") | FACTS, 0, MANY)],
    "ECA": [OID, ("time", _k("time"), 0, 1), ("event", _k("event"), 0, 1),
            ("condition", _k("condition"), 0, 1), ("action", _k("action"), 1, 1),
            ("postcondition", _k("postcondition"), 0, 1), ("else", _k("else"), 0, 1)],
    "time": [("part", GOAL, 1, 1)],
    "event": [("part", _k("Naf", "Neg", "Cterm", "Atom", "And", "Ind", "Var") | EVENT_OPS, 1, 1)],
    "condition": [("part", GOAL, 1, 1)],
    "action": [("part", _k("Cterm", "Atom", "Assert", "Retract", "And") | EVENT_OPS, 1, 1)],
    "postcondition": [("part", GOAL, 1, 1)],
    "else": [("part", _k("Cterm", "Atom", "Assert", "Retract", "And") | EVENT_OPS, 1, 1)],
    "Naf": [OID, ("literal", _k("weak", "Atom", "Cterm"), 1, 1)],
    "weak": [("literal", _k("Atom", "Cterm"), 1, 1)],
    "Neg": [OID, ("literal", _k("strong", "Atom", "Equal", "Cterm"), 1, 1)],
    "strong": [("literal", _k("Atom", "Cterm", "Equal"), 1, 1)],
    "Equal": [OID, ("left", TERM, 1, 1), ("right", TERM, 1, 1)],
    "Atom": [OID, ("rel", _k("Rel"), 1, 1), ("args", TERM | _k("slot", "arg"), 0, MANY)],
    "Cterm": [OID, ("op", _k("op"), 1, 1),
              ("args", TERM | _k("slot", "res", "arg", "repro"), 0, MANY)],
    "op": [("constructor", _k("Ctor", "Attachment"), 1, 1)],
    "Attachment": [OID, ("target", _k("Ind", "Var", "Cterm"), 1, 1),
                   ("method", _k("Ind"), 1, 1)],
    "slot": [("name", TERM, 1, 1), ("value", TERM, 1, 1)],
    "res": [("value", TERM, 1, 1)],
    "repro": [("value", TERM, 1, 1)],
    "arg": [("value", TERM, 1, 1)],
    "Reify": [("content", LITERAL | TERM, 1, 1)],
    "Plex": [("items", TERM, 0, MANY)],
    "Assert": [("payload", _k("content", "And"), 1, 1)],
    "content": [("clauses", FACTS, 1, MANY)],
    "Retract": [("oid", _k("oid"), 1, 1)],
    "oid": [("id", _k("Ind", "Var", "Cterm", "Data"), 1, 1)],
    "And": [("parts", GOAL | OPS | FACTS | _k("Assert", "Retract"), 1, MANY)],
    "Implies": [OID, ("head", _k("head"), 1, 1), ("body", _k("body"), 1, 1)],
    "head": [("literal", _k("Atom", "Cterm"), 1, 1)],
    "body": [("literal", LITERAL | _k("And"), 1, 1)],
    # event algebra
    "Sequence": [OID, ("operands", OPERAND, 1, MANY)],
    "Or": [OID, ("operands", OPERAND, 1, MANY)],
    "Xor": [OID, ("operands", OPERAND, 1, MANY)],
    "Conjunction": [OID, ("operands", OPERAND, 1, MANY)],
    "Concurrent": [OID, ("operands", OPERAND, 1, MANY)],
    "Not": [OID, ("operand", OPERAND, 1, 1), ("interval", INTERVALISH, 1, 1)],
    "Any": [OID, ("count", _k("Ind", "Data", "Var"), 1, 1), ("operands", OPERAND, 1, MANY)],
    "Aperiodic": [OID, ("operand", OPERAND, 1, 1), ("interval", INTERVALISH, 1, 1)],
    "Periodic": [OID, ("period", TM, 1, 1), ("interval", INTERVALISH, 1, 1)],
    "Interval": [OID, ("from", OPERAND | _k("time"), 1, 1), ("to", OPERAND | _k("time"), 1, 1)],
    "interval": [("value", _k("Interval", "Plex", "Var"), 1, 1)],
    # event calculus
    "fluent": [("value", _k("Ind", "Var", "Cterm"), 1, 1)],
    "parameter": [("value", _k("Ind", "Var", "Cterm"), 1, 1)],
    "Happens": [OID, ("event", EV, 1, 1), ("time", TM, 1, 1)],
    "Planned": [OID, ("event", EV, 1, 1), ("time", TM, 1, 1)],
    "Occurs": [OID, ("event", EV, 1, 1), ("when", INTERVALISH | TM, 1, 1)],
    "Initially": [OID, ("fluent", FL, 1, 1)],
    "Initiates": [OID, ("event", EV, 1, 1), ("fluent", FL, 1, 1), ("time", TM, 1, 1)],
    "Terminates": [OID, ("event", EV, 1, 1), ("fluent", FL | _k("interval", "Interval", "Plex"), 1, 1),
                   ("time", TM | _k("interval", "Interval", "Plex"), 1, 1)],
    "HoldsAt": [OID, ("fluent", FL, 1, 1), ("time", TM, 1, 1)],
    "ValueAt": [OID, ("parameter", _k("parameter", "Ind", "Var", "Cterm"), 1, 1),
                ("time", TM, 1, 1), ("value", _k("Ind", "Var", "Cterm", "Data"), 1, 1)],
    "HoldsInterval": [OID, ("pattern", _k("interval", "Interval", "Plex", "Cterm") | OPS, 1, 1),
                      ("interval", INTERVALISH, 1, 1)],
}
# the event and action roles double as operand wrappers inside operators
GRAMMAR["event"][0] = ("part", GRAMMAR["event"][0][1] | OPERAND, 1, 1)
GRAMMAR["action"][0] = ("part", GRAMMAR["action"][0][1] | OPERAND, 1, 1)
GRAMMAR["time"][0] = ("part", GRAMMAR["time"][0][1] | TERM, 1, 1)

KINDS = frozenset(GRAMMAR) | LEAVES
# operators with two or more operands in the event algebra
MULTI_OPERAND = _k("Sequence", "Or", "Xor", "Conjunction", "Concurrent")
UNSUPPORTED_EC = _k("Happens", "Planned", "Initially", "Initiates", "HoldsAt", "ValueAt")


def _match_slots(kind: str, kinds: List[str]) -> Optional[str]:
    """None if ``kinds`` fits the production of ``kind``, else a diagnostic."""
    slots = GRAMMAR[kind]
    pos = 0
    for label, allowed, lo, hi in slots:
        n = 0
        while pos < len(kinds) and n < hi and kinds[pos] in allowed:
            pos += 1
            n += 1
        if n < lo:
            found = kinds[pos] if pos < len(kinds) else "end of element"
            return f"{kind}: expected {label} ({' | '.join(sorted(allowed))}), found {found}"
    if pos < len(kinds):
        return f"{kind}: unexpected child {kinds[pos]}"
    return None


def validate(n: RulemlNode, path: str = "") -> None:
    """Raise :class:`RulemlError` naming the first violated production."""
    where = f"{path}/{n.kind}"
    if n.kind not in KINDS:
        raise RulemlError(f"{where}: unknown element {n.kind}")
    if n.kind in LEAVES:
        if n.children:
            raise RulemlError(f"{where}: {n.kind} holds text only")
        if n.kind in ("Ctor", "Rel", "Ind") and not (n.text or "").strip():
            raise RulemlError(f"{where}: {n.kind} needs text")
        return
    if n.text and n.text.strip():
        raise RulemlError(f"{where}: unexpected text {n.text.strip()!r}")
    problem = _match_slots(n.kind, n.child_kinds())
    if problem:
        raise RulemlError(f"{where}: {problem}")
    if n.kind in MULTI_OPERAND:
        operands = [c for c in n.children if c.kind != "oid"]
        if len(operands) < 2:
            raise RulemlError(f"{where}: {n.kind} needs at least two operands")
    for c in n.children:
        validate(c, where)


# -- XML in / out ---------------------------------------------------------------

def _local(tag: str) -> str:
    if tag.startswith("{"):
        ns, _, name = tag[1:].partition("}")
        if ns != NS:
            raise RulemlError(f"element {name} is in foreign namespace {ns}")
        return name
    return tag


def _from_element(el: ET.Element) -> RulemlNode:
    kind = _local(el.tag)
    children = tuple(_from_element(c) for c in el)
    text = el.text
    if kind in LEAVES:
        text = (text or "").strip()
    elif text is not None and not text.strip():
        text = None
    for c in el:
        if c.tail and c.tail.strip():
            raise RulemlError(f"{kind}: stray text {c.tail.strip()!r}")
    return RulemlNode(kind, children, tuple(sorted(el.attrib.items())), text)


def parse_eca_ruleml(xml: str, check: bool = True) -> RulemlNode:
    """Read an ECA-RuleML document and validate it against :data:`GRAMMAR`."""
    try:
        root = ET.fromstring(xml)
    except ET.ParseError as exc:
        raise RulemlError(f"malformed XML: {exc}") from None
    n = _from_element(root)
    if check:
        validate(n)
    return n


def load_ruleml(path) -> RulemlNode:
    return parse_eca_ruleml(Path(path).read_text(encoding="utf-8"))


def _to_element(n: RulemlNode) -> ET.Element:
    el = ET.Element(_Q + n.kind, dict(n.attrs))
    if n.text is not None:
        el.text = n.text
    for c in n.children:
        el.append(_to_element(c))
    return el


def emit_eca_ruleml(n: RulemlNode, check: bool = True, indent: bool = False) -> str:
    """Serialize ``n``; invalid trees are rejected before anything is written."""
    if check:
        validate(n)
    ET.register_namespace("", NS)
    el = _to_element(n)
    if indent:
        ET.indent(el)
    return ET.tostring(el, encoding="unicode")


def canonical_xml(xml: str) -> str:
    """C14N form with insignificant whitespace dropped, for round-trip comparisons."""
    return ET.canonicalize(xml, strip_text=True)


# -- translation ------------------------------------------------------------------

@dataclass
class TranslationResult:
    program: str
    warnings: List[str] = field(default_factory=list)

    def clauses(self) -> List[Clause]:
        return parse_program(self.program).clauses


class _Translator:
    def __init__(self):
        self.warnings: List[str] = []
        self.vars: Dict[str, Var] = {}
        self._assert_ids = itertools.count(1)

    def warn(self, msg: str):
        if msg not in self.warnings:
            self.warnings.append(msg)

    def new_scope(self):
        self.vars = {}

    def var(self, name: str) -> Var:
        if not name or name == "_":
            return Var("_")
        v = self.vars.get(name)
        if v is None:
            v = self.vars[name] = Var(name)
        return v

    # terms
    def term(self, n: RulemlNode) -> Term:
        k = n.kind
        if k == "Ind":
            return _constant(n.text)
        if k == "Data":
            if n.attr("type") == "string":
                return Text(n.text)
            num = _number(n.text)
            return num if num is not None else Text(n.text)
        if k == "Var":
            return self.var(n.text or "")
        if k == "Skolem":
            return Var("_")
        if k == "Plex":
            return make_list([self.term(c) for c in n.children])
        if k == "Reify":
            return Text(format_term(self.term(n.children[0])))
        if k in ("Cterm", "Atom"):
            return self.compound(n)
        if k == "Naf":
            return Struct("not", (self.term(self._inner(n)),))
        if k == "Neg":
            return Struct("neg", (self.term(self._inner(n)),))
        if k == "Equal":
            args = [c for c in n.children if c.kind != "oid"]
            return Struct("=", (self.term(args[0]), self.term(args[1])))
        if k in ("weak", "strong", "arg", "res", "repro", "interval", "fluent", "parameter",
                 "event", "action", "time", "condition", "postcondition", "else", "head", "body", "oid"):
            return self.term(n.children[0])
        if k == "And":
            return _conj([self.term(c) for c in n.children])
        if k == "Interval":
            a, b = [c for c in n.children if c.kind != "oid"]
            return make_list([self.term(a), self.term(b)])
        if k in OPS:
            return self.operator(n)
        if k == "Assert":
            return self.assertion(n)
        if k == "Retract":
            return Struct("remove", (self.term(n.children[0]),))
        if k in ("Occurs", "Terminates", "HoldsInterval") or k in UNSUPPORTED_EC:
            return self.calculus(n)
        raise RulemlError(f"cannot translate {k} as a term")

    def _inner(self, n: RulemlNode) -> RulemlNode:
        return [c for c in n.children if c.kind != "oid"][0]

    def compound(self, n: RulemlNode) -> Term:
        parts = [c for c in n.children if c.kind != "oid"]
        head, args = parts[0], parts[1:]
        if head.kind == "Rel":
            name = head.text
        else:
            ctor = head.children[0]
            name = ctor.text if ctor.kind == "Ctor" else self.attachment(ctor)
        out = []
        for a in args:
            if a.kind == "slot":
                out.append(Struct("slot", (self.term(a.children[0]), self.term(a.children[1]))))
            elif a.kind == "repro":
                self.warn("repro slots carry no meaning for the engine and are dropped")
            else:
                out.append(self.term(a))
        return Struct(name, tuple(out)) if out else Atom(name)

    def attachment(self, n: RulemlNode) -> str:
        target, method = [c for c in n.children if c.kind != "oid"]
        if target.kind == "Cterm":
            prefix = format_term(self.term(target))
        else:
            prefix = target.text
        return f"{prefix}.{method.text}"

    def operator(self, n: RulemlNode) -> Term:
        k = n.kind
        parts = [c for c in n.children if c.kind != "oid"]
        name = k.lower()
        if k in MULTI_OPERAND:
            return Struct(name, tuple(self.term(c) for c in parts))
        if k in ("Not", "Aperiodic"):
            return Struct(name, (self.term(parts[0]), self.term(parts[1])))
        if k == "Any":
            return Struct("any", (self.term(parts[0]), make_list([self.term(c) for c in parts[1:]])))
        if k == "Periodic":
            return Struct("periodic", (self.term(parts[0]), self.term(parts[1])))
        raise RulemlError(f"unknown operator {k}")

    def assertion(self, n: RulemlNode) -> Term:
        payload = n.children[0]
        items = payload.children
        clauses = [self.clause(c) for c in items]
        text = " ".join(format_clause(c) for c in clauses)
        oid = Atom(f"assert_{next(self._assert_ids)}")
        return Struct("add", (oid, Text(text)))

    def calculus(self, n: RulemlNode) -> Term:
        k = n.kind
        if k in UNSUPPORTED_EC:
            self.warn(f"{k} is translated but has no execution support")
        parts = [self.term(c) for c in n.children if c.kind != "oid"]
        name = k[0].lower() + k[1:]
        return Struct(name, tuple(parts))

    # slots and clauses
    def slot(self, n: RulemlNode, role: str) -> Term:
        part = n.first(role)
        if part is None:
            return BLANK
        inner = part.children[0]
        if role == "event" and inner.kind in OPS:
            return Struct("event", (self.term(inner), Var("_")))
        if role in ("action", "else") and inner.kind in ("Sequence", "Conjunction"):
            return _conj([self.term(c) for c in inner.children if c.kind != "oid"])
        if role in ("action", "else") and inner.kind in OPS:
            self.warn(f"{inner.kind} in an {role} part has no execution semantics")
        return self.term(inner)

    def eca(self, n: RulemlNode) -> Clause:
        self.new_scope()
        roles = ("time", "event", "condition", "action", "postcondition", "else")
        return Clause(Struct("eca", tuple(self.slot(n, r) for r in roles)))

    def clause(self, n: RulemlNode) -> Clause:
        self.new_scope()
        if n.kind == "ECA":
            return self.eca(n)
        if n.kind == "Implies":
            head = self.term(n.first("head"))
            body = self.term(n.first("body"))
            return Clause(head, tuple(_flatten(body)))
        return Clause(self.term(n))


def _flatten(t: Term) -> List[Term]:
    if isinstance(t, Struct) and t.functor == "," and len(t.args) == 2:
        return _flatten(t.args[0]) + _flatten(t.args[1])
    return [t]


def _conj(terms: Sequence[Term]) -> Term:
    out = terms[-1]
    for t in reversed(terms[:-1]):
        out = Struct(",", (t, out))
    return out


def _number(text: str) -> Optional[Number]:
    try:
        return Number(int(text))
    except (TypeError, ValueError):
        return None


def _constant(text: str) -> Term:
    num = _number(text)
    return num if num is not None else Atom(text)


def translate_to_ecalp(n: RulemlNode) -> TranslationResult:
    """Turn a validated document (``RuleBase`` or a single rule) into ECA-LP text."""
    validate(n)
    tr = _Translator()
    items = n.children if n.kind == "RuleBase" else (n,)
    lines = [format_clause(tr.clause(c)) for c in items]
    program = "\n".join(lines) + ("\n" if lines else "")
    # the output must read back; a failure here is a translator bug, not user error
    parse_program(program)
    return TranslationResult(program, tr.warnings)
