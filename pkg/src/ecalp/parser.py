"""Reader and printer for ECA-LP scripts.

The surface syntax is the Prolog-like notation used by Prova: clauses end in
``.``, ``%`` starts a comment, variables start with an uppercase letter or
``_``.  A clause ending in ``?`` (or written ``:- Goal.``) is a directive that
is run when the script is loaded.

``eca`` facts of arity 2..6 are normalized to arity 6, with a bare ``_``
argument recorded as a blank part.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, List, Optional

from .terms import (
    BLANK, NIL, Atom, Blank, Clause, ListTerm, Number, Struct, Term, Text,
    TimePoint, TimeSpan, Var, make_list,
)

__all__ = [
    "ParseError", "ParsedProgram", "parse_program", "parse_query", "parse_term",
    "parse_clauses", "format_term", "format_clause", "normalize_eca", "ECA_SLOTS",
]


class ParseError(ValueError):
    """Syntax error with a 1-based line/column and the set of expected tokens."""

    def __init__(self, message: str, line: int = 0, column: int = 0,
                 expected: frozenset = frozenset()):
        self.message = message
        self.line = line
        self.column = column
        self.expected = frozenset(expected)
        where = f"line {line}, column {column}: " if line else ""
        exp = f" (expected one of: {', '.join(sorted(self.expected))})" if self.expected else ""
        super().__init__(f"{where}{message}{exp}")


# -- operators ----------------------------------------------------------------

# name -> (priority, type)
INFIX = {
    ":-": (1200, "xfx"),
    ",": (1000, "xfy"),
    "=": (700, "xfx"), "\\=": (700, "xfx"), "==": (700, "xfx"), "\\==": (700, "xfx"),
    "<": (700, "xfx"), ">": (700, "xfx"), "<=": (700, "xfx"), "=<": (700, "xfx"),
    ">=": (700, "xfx"), "is": (700, "xfx"), "=:=": (700, "xfx"), "=\\=": (700, "xfx"),
    "+": (500, "yfx"), "-": (500, "yfx"),
    "*": (400, "yfx"), "/": (400, "yfx"), "//": (400, "yfx"), "mod": (400, "yfx"),
}
PREFIX = {
    ":-": (1200, "fx"), "?-": (1200, "fx"),
    "\\+": (900, "fy"),
    "-": (200, "fy"),
}

ECA_SLOTS = ("time", "event", "condition", "action", "postcondition", "else")

# which of the six slots an eca fact of a given arity fills, in order
_ECA_ARITY = {
    2: (2, 3),              # CA: production-style rule
    3: (1, 2, 3),           # ECA
    4: (1, 2, 3, 4),        # ECAP
    5: (0, 1, 2, 3, 4),     # time, event, condition, action, postcondition
    6: (0, 1, 2, 3, 4, 5),
}


# -- tokenizer ----------------------------------------------------------------

_SYMBOL_CHARS = set("+-*/\\^<>=~:.?@#&$")
_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+|%[^\n]*|/\*.*?\*/)
  | (?P<num>\d+)
  | (?P<var>[A-Z_][A-Za-z0-9_]*)
  | (?P<name>[a-z][A-Za-z0-9_]*)
  | (?P<str>"(?:[^"\\]|\\.)*")
  | (?P<qatom>'(?:[^'\\]|\\.|'')*')
  | (?P<punct>[()\[\]{},|])
  | (?P<solo>[!;])
  | (?P<sym>[+\-*/\\^<>=~:.?@\#&$]+)
""", re.VERBOSE | re.DOTALL)


@dataclass
class Tok:
    kind: str   # num var name str qatom punct end eof
    text: str
    line: int
    col: int
    layout_before: bool = False
    pos: int = 0


def _unescape(body: str) -> str:
    out = []
    i = 0
    while i < len(body):
        c = body[i]
        if c == "\\" and i + 1 < len(body):
            nxt = body[i + 1]
            out.append({"n": "\n", "t": "\t", "\\": "\\", '"': '"', "'": "'"}.get(nxt, nxt))
            i += 2
            continue
        out.append(c)
        i += 1
    return "".join(out)


def tokenize(text: str) -> List[Tok]:
    toks: List[Tok] = []
    pos = 0
    line, line_start = 1, 0
    layout = True
    n = len(text)
    while pos < n:
        m = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        value = m.group()
        if kind == "ws":
            if value.startswith("/*") and not value.endswith("*/"):
                raise ParseError("unterminated block comment", line, col)
            layout = True
        elif kind == "sym" and value in (".", "?"):
            toks.append(Tok("end", value, line, col, layout, pos))
            layout = False
        elif kind == "sym" and value[-1] in ".?" and (
                m.end() >= n or text[m.end()].isspace() or text[m.end()] == "%"):
            # a symbol atom glued to the clause terminator, e.g. "X = =."
            toks.append(Tok("name", value[:-1], line, col, layout, pos))
            toks.append(Tok("end", value[-1], line, col + len(value) - 1, False, pos + len(value) - 1))
            layout = False
        else:
            if kind == "sym" or kind == "solo":
                kind = "name"
            toks.append(Tok(kind, value, line, col, layout, pos))
            layout = False
        nl = value.count("\n")
        if nl:
            line += nl
            line_start = m.start() + value.rfind("\n") + 1
        pos = m.end()
    toks.append(Tok("eof", "", line, pos - line_start + 1, layout, pos))
    return toks


# -- parser -------------------------------------------------------------------

class _Reader:
    def __init__(self, text: str, eca_blanks: bool = True):
        self.toks = tokenize(text)
        self.i = 0
        self.varmap: dict = {}
        self.var_counter = 0
        self.eca_blanks = eca_blanks

    # token helpers
    @property
    def tok(self) -> Tok:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Tok:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def advance(self) -> Tok:
        t = self.toks[self.i]
        if t.kind != "eof":
            self.i += 1
        return t

    def error(self, message: str, expected=()) -> ParseError:
        t = self.tok
        return ParseError(message, t.line, t.col, frozenset(expected))

    def expect(self, kind: str, text: Optional[str] = None) -> Tok:
        t = self.tok
        if t.kind != kind or (text is not None and t.text != text):
            shown = text if text is not None else kind
            got = t.text or t.kind
            raise self.error(f"unexpected {got!r}", {shown})
        return self.advance()

    def new_clause_scope(self):
        self.varmap = {}
        self.var_counter = 0

    def make_var(self, name: str) -> Var:
        if name == "_":
            self.var_counter += 1
            return Var("_", self.var_counter)
        v = self.varmap.get(name)
        if v is None:
            self.var_counter += 1
            v = self.varmap[name] = Var(name, self.var_counter)
        return v

    # grammar
    def is_term_start(self, t: Tok) -> bool:
        if t.kind in ("num", "var", "name", "str", "qatom"):
            return True
        return t.kind == "punct" and t.text in ("(", "[", "{")

    def parse(self, max_prec: int) -> Term:
        left, left_prec = self.parse_primary(max_prec)
        return self.parse_infix(left, left_prec, max_prec)

    def parse_infix(self, left: Term, left_prec: int, max_prec: int) -> Term:
        while True:
            t = self.tok
            if t.kind == "name" or (t.kind == "punct" and t.text == ","):
                name = t.text
            else:
                return left
            if name == ";":
                raise self.error("';' is not a goal operator; use the eca else part for alternatives")
            op = INFIX.get(name)
            if op is None:
                return left
            prec, typ = op
            if prec > max_prec:
                return left
            left_max = prec - 1 if typ[0] == "x" else prec
            right_max = prec - 1 if typ[2] == "x" else prec
            if left_prec > left_max:
                return left
            self.advance()
            right = self.parse(right_max)
            left = Struct(name, (left, right))
            left_prec = prec

    def parse_arglist(self) -> list:
        args = [self.parse(999)]
        while self.tok.kind == "punct" and self.tok.text == ",":
            self.advance()
            args.append(self.parse(999))
        return args

    def parse_primary(self, max_prec: int):
        t = self.tok
        if t.kind == "num":
            self.advance()
            return Number(int(t.text)), 0
        if t.kind == "var":
            self.advance()
            return self.make_var(t.text), 0
        if t.kind == "str":
            self.advance()
            return Text(_unescape(t.text[1:-1])), 0
        if t.kind == "punct":
            if t.text == "(":
                self.advance()
                inner = self.parse(1200)
                self.expect("punct", ")")
                return inner, 0
            if t.text == "[":
                self.advance()
                if self.tok.kind == "punct" and self.tok.text == "]":
                    self.advance()
                    return self.maybe_call("[]", t)
                items = self.parse_arglist()
                tail = None
                if self.tok.kind == "punct" and self.tok.text == "|":
                    self.advance()
                    tail = self.parse(999)
                self.expect("punct", "]")
                return make_list(items, tail), 0
            if t.text == "{":
                raise self.error("curly-brace terms are not supported")
            raise self.error(f"unexpected {t.text!r}", {"term"})
        if t.kind == "qatom":
            self.advance()
            name = _unescape(t.text[1:-1].replace("''", "'"))
            return self.maybe_call(name, t, quoted=True)
        if t.kind == "name":
            name = t.text
            nxt = self.peek()
            glued_paren = nxt.kind == "punct" and nxt.text == "(" and not nxt.layout_before
            if not glued_paren:
                # negative numeric literal
                if name == "-" and nxt.kind == "num" and not nxt.layout_before:
                    self.advance()
                    self.advance()
                    return Number(-int(nxt.text)), 0
                op = PREFIX.get(name)
                if op is not None and self.is_term_start(nxt) and not (
                        nxt.kind == "name" and nxt.text in INFIX and not self.is_term_start(self.peek(2))):
                    prec, typ = op
                    if prec > max_prec:
                        prec = 999
                    self.advance()
                    arg_max = prec - 1 if typ[1] == "x" else prec
                    arg = self.parse(arg_max)
                    return Struct(name, (arg,)), prec
            self.advance()
            prec = 0
            if (name in INFIX or name in PREFIX) and not glued_paren:
                prec = max(INFIX.get(name, (0,))[0], PREFIX.get(name, (0,))[0])
                if prec > max_prec:
                    prec = 0
            term, _ = self.maybe_call(name, t, glued_paren)
            return term, prec
        if t.kind == "end":
            raise self.error("unexpected end of clause", {"term"})
        raise self.error("unexpected end of input", {"term"})

    def maybe_call(self, name: str, tok: Tok, glued: Optional[bool] = None, quoted: bool = False):
        if glued is None:
            nxt = self.tok
            glued = nxt.kind == "punct" and nxt.text == "(" and not nxt.layout_before
        if not glued:
            return self.atom(name), 0
        self.expect("punct", "(")
        if self.tok.kind == "punct" and self.tok.text == ")":
            self.advance()
            return self.atom(name), 0     # f() is the constant f
        args = self.parse_arglist()
        self.expect("punct", ")")
        return build_struct(name, args), 0

    @staticmethod
    def atom(name: str) -> Term:
        if name == "[]":
            return NIL
        return Atom(name)

    def clause_end(self) -> Tok:
        t = self.tok
        if t.kind != "end":
            raise self.error(f"unexpected {t.text or t.kind!r}", {".", "operator"})
        return self.advance()


def build_struct(name: str, args: list) -> Term:
    """Construct a compound, turning ground datetime/timespan literals into time values."""
    if name == "datetime" and len(args) == 6 and all(
            isinstance(a, Number) and isinstance(a.value, int) for a in args):
        try:
            return TimePoint(*(a.value for a in args))
        except ValueError:
            pass
    if name == "timespan" and len(args) == 4 and all(
            isinstance(a, Number) and isinstance(a.value, int) and a.value >= 0 for a in args):
        return TimeSpan(*(a.value for a in args))
    return Struct(name, tuple(args))


# -- programs -----------------------------------------------------------------

@dataclass
class ParsedProgram:
    clauses: List[Clause] = field(default_factory=list)
    directives: List[tuple] = field(default_factory=list)

    @property
    def eca_rules(self) -> List[Term]:
        return [c.head for c in self.clauses if c.is_fact and _is_eca(c.head)]

    @property
    def integrity_constraints(self) -> List[Term]:
        return [c.head.args[0] for c in self.clauses
                if c.is_fact and isinstance(c.head, Struct)
                and c.head.functor == "integrity" and len(c.head.args) == 1]

    @property
    def derivation_rules(self) -> List[Clause]:
        return [c for c in self.clauses if not c.is_fact]

    @property
    def facts(self) -> List[Clause]:
        return [c for c in self.clauses if c.is_fact]


def _is_eca(t: Term) -> bool:
    return isinstance(t, Struct) and t.functor == "eca" and len(t.args) == 6


def normalize_eca(head: Struct) -> Struct:
    """Normalize an ``eca`` fact of arity 2..6 to arity 6 with blank parts."""
    slots = _ECA_ARITY.get(len(head.args))
    if slots is None:
        raise ValueError(f"eca/{len(head.args)} is not a valid ECA rule arity (2..6)")
    parts = [BLANK] * 6
    for slot, arg in zip(slots, head.args):
        if isinstance(arg, Var) and arg.name == "_":
            arg = BLANK
        parts[slot] = arg
    return Struct("eca", tuple(parts))


def _flatten_conj(t: Term) -> list:
    out = []
    while isinstance(t, Struct) and t.functor == "," and len(t.args) == 2:
        out.append(t.args[0])
        t = t.args[1]
    out.append(t)
    return out


def _check_head(head: Term, tok: Tok):
    if isinstance(head, Var):
        raise ParseError("clause head is a variable", tok.line, tok.col)
    if not isinstance(head, (Atom, Struct)):
        raise ParseError("clause head must be an atom or compound term", tok.line, tok.col)
    if isinstance(head, Struct) and head.functor in ("not", "\\+") and len(head.args) == 1:
        raise ParseError("default negation cannot appear in a clause head", tok.line, tok.col)
    if isinstance(head, Struct) and head.functor == ",":
        raise ParseError("a conjunction cannot be a clause head", tok.line, tok.col)


def _iter_program(text: str) -> Iterator[tuple]:
    r = _Reader(text)
    while r.tok.kind != "eof":
        r.new_clause_scope()
        start = r.tok
        try:
            t = r.parse(1200)
        except RecursionError:
            raise ParseError("term nested too deeply", start.line, start.col) from None
        end = r.clause_end()
        span = (start.line, start.col)
        if end.text == "?":
            if isinstance(t, Struct) and t.functor == "?-" and len(t.args) == 1:
                t = t.args[0]
            yield "directive", tuple(_flatten_conj(t)), span
            continue
        if isinstance(t, Struct) and t.functor in (":-", "?-") and len(t.args) == 1:
            yield "directive", tuple(_flatten_conj(t.args[0])), span
            continue
        if isinstance(t, Struct) and t.functor == ":-" and len(t.args) == 2:
            head, body = t.args
            _check_head(head, start)
            if isinstance(head, Struct) and head.functor == "eca":
                raise ParseError("eca rules must be facts", start.line, start.col)
            yield "clause", Clause(head, tuple(_flatten_conj(body)), span), span
            continue
        _check_head(t, start)
        if isinstance(t, (Struct, Atom)) and _head_name(t) == "eca":
            if not isinstance(t, Struct) or len(t.args) not in _ECA_ARITY:
                n = len(t.args) if isinstance(t, Struct) else 0
                raise ParseError(f"eca/{n} is not a valid ECA rule arity (2..6)",
                                 start.line, start.col)
            t = normalize_eca(t)
        yield "clause", Clause(t, (), span), span


def _head_name(t: Term) -> str:
    return t.functor if isinstance(t, Struct) else t.name


def parse_program(text: str) -> ParsedProgram:
    """Parse a whole script.  Raises :class:`ParseError` on the first syntax error."""
    prog = ParsedProgram()
    try:
        for kind, item, _span in _iter_program(text):
            if kind == "clause":
                prog.clauses.append(item)
            else:
                prog.directives.append(item)
    except RecursionError:
        raise ParseError("term nested too deeply") from None
    return prog


def parse_clauses(text: str) -> List[Clause]:
    prog = parse_program(text)
    if prog.directives:
        raise ParseError("directives are not allowed here")
    return prog.clauses


def parse_query(text: str) -> List[Term]:
    """Parse ``goal1, goal2, ... ?`` (or ``.``) into an ordered goal list."""
    r = _Reader(text)
    if r.tok.kind in ("end", "eof"):
        raise r.error("empty query", {"term"})
    try:
        t = r.parse(1200)
    except RecursionError:
        raise ParseError("term nested too deeply") from None
    if isinstance(t, Struct) and t.functor == "?-" and len(t.args) == 1:
        t = t.args[0]
    if r.tok.kind == "end":
        r.advance()
    elif r.tok.kind != "eof":
        raise r.error(f"unexpected {r.tok.text!r}", {"?", ".", "operator"})
    if r.tok.kind != "eof":
        raise r.error("text after the end of the query", {"end of input"})
    return _flatten_conj(t)


def parse_term(text: str) -> Term:
    """Parse a single term; a trailing ``.`` is optional."""
    r = _Reader(text)
    try:
        t = r.parse(1200)
    except RecursionError:
        raise ParseError("term nested too deeply") from None
    if r.tok.kind == "end":
        r.advance()
    if r.tok.kind != "eof":
        raise r.error(f"unexpected {r.tok.text!r}", {"end of input"})
    return t


# -- printer ------------------------------------------------------------------

_PLAIN_ATOM = re.compile(r"^[a-z][A-Za-z0-9_]*$")
_SYMBOL_ATOM = re.compile(r"^[+\-*/\\^<>=~:.?@#&$]+$")


def _quote_atom(name: str) -> str:
    if _PLAIN_ATOM.match(name) or name in ("!", ";", "[]"):
        return name
    if _SYMBOL_ATOM.match(name) and name not in (".", "?"):
        return name
    return "'" + name.replace("\\", "\\\\").replace("'", "\\'") + "'"


def _quote_text(value: str) -> str:
    return '"' + value.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n") + '"'


class _Printer:
    def __init__(self, terms):
        # variables sharing a print name get disambiguated by id
        seen: dict = {}
        anon: dict = {}
        from .terms import term_vars
        for t in terms:
            for v in term_vars(t):
                if v.name == "_":
                    anon[v] = anon.get(v, 0) + 1
                else:
                    seen.setdefault(v.name, set()).add(v)
        self.names: dict = {}
        used = set(seen)
        for name, vs in seen.items():
            if len(vs) == 1:
                self.names[next(iter(vs))] = name
            else:
                for v in sorted(vs, key=lambda v: v.id):
                    alias = f"{name}_{v.id}"
                    while alias in used:
                        alias += "_"
                    used.add(alias)
                    self.names[v] = alias
        for v, count in anon.items():
            if count == 1:
                self.names[v] = "_"
            else:
                alias = f"_G{v.id}"
                while alias in used:
                    alias += "_"
                used.add(alias)
                self.names[v] = alias

    def fmt(self, t: Term, max_prec: int = 1200) -> str:
        if isinstance(t, Var):
            return self.names.get(t) or (t.name if t.name != "_" else f"_G{t.id}")
        if isinstance(t, Atom):
            s = _quote_atom(t.name)
            if (t.name in INFIX or t.name in PREFIX) and max_prec < 1200:
                return "(" + s + ")" if _SYMBOL_ATOM.match(t.name) else s
            return s
        if isinstance(t, Number):
            return str(t.value)
        if isinstance(t, Text):
            return _quote_text(t.value)
        if isinstance(t, Blank):
            return "_"
        if isinstance(t, (TimePoint, TimeSpan)):
            return str(t)
        if isinstance(t, ListTerm):
            if not t.items:
                return "[]"
            inner = ",".join(self.fmt(a, 999) for a in t.items)
            if t.tail is not None:
                inner += "|" + self.fmt(t.tail, 999)
            return "[" + inner + "]"
        if isinstance(t, Struct):
            name, args = t.functor, t.args
            if len(args) == 2 and name in INFIX:
                prec, typ = INFIX[name]
                lmax = prec - 1 if typ[0] == "x" else prec
                rmax = prec - 1 if typ[2] == "x" else prec
                sep = "," if name == "," else (f" {name} " if name.isalpha() else name)
                if name == ":-":
                    sep = " :- "
                left, right = self.fmt_operand(args[0], lmax), self.fmt_operand(args[1], rmax)
                # keep symbol characters of neighbours from gluing onto the operator
                if sep == name and (left[-1] in _SYMBOL_CHARS or right[0] in _SYMBOL_CHARS):
                    sep = f" {name} "
                s = left + sep + right
                return "(" + s + ")" if prec > max_prec else s
            if len(args) == 1 and name in PREFIX and name != "-":
                prec, typ = PREFIX[name]
                amax = prec - 1 if typ[1] == "x" else prec
                s = name + " " + self.fmt_operand(args[0], amax)
                return "(" + s + ")" if prec > max_prec else s
            return _quote_atom(name) + "(" + ",".join(self.fmt(a, 999) for a in args) + ")"
        raise TypeError(f"cannot format {t!r}")

    def fmt_operand(self, t: Term, max_prec: int) -> str:
        if isinstance(t, Number) and t.value < 0:
            return "(" + str(t.value) + ")"
        if isinstance(t, Atom) and (t.name in INFIX or t.name in PREFIX):
            return "(" + _quote_atom(t.name) + ")"
        return self.fmt(t, max_prec)


def format_term(t: Term) -> str:
    """Print a term so that it reads back as an equal term (up to renaming)."""
    return _Printer([t]).fmt(t, 999)


def format_clause(c: Clause) -> str:
    p = _Printer([c.head, *c.body])
    head = p.fmt(c.head, 999)
    if not c.body:
        return head + "."
    return head + " :- " + ", ".join(p.fmt(g, 999) for g in c.body) + "."


def format_goals(goals) -> str:
    p = _Printer(list(goals))
    return ", ".join(p.fmt(g, 999) for g in goals)
