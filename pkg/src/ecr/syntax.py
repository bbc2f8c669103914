"""Parser, AST and printer for the textual program format.

Syntax (one item per ``.``-terminated sentence):

* facts       ``p(args).``
* rules       ``head :- b1, b2, ... .``
* queries     ``?- g1, g2, ... .``
* directives  ``#table_once p/n.``  ``#abducible p/n.``  ``#abducible pat.``
              ``#dual p/n.``  ``#decouple e.``  ``#multirun [e1, e2].``
              ``#flag name.``
* comments    ``%`` to end of line

Constraint operators: ``.<.  .>.  .=.  .>=.  .=<.  .<>.`` with rational
arithmetic (``+ - * /``) in their operands; rationals are written ``a/b``
or as integers.  ``not g`` is default negation.  Body order is preserved
exactly: evaluation order is semantically significant.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Optional

from .terms import Struct, Term, Var, format_num, is_num

ARITH_FUNCTORS = ("+", "-", "*", "/")
CONSTRAINT_OPS = {".<.": "<", ".>.": ">", ".=.": "=", ".>=.": ">=", ".=<.": "=<", ".<>.": "<>"}
OP_RENDER = {v: k for k, v in CONSTRAINT_OPS.items()}


class ParseError(Exception):
    def __init__(self, message: str, line: int, col: int, expected=None):
        self.message = message
        self.line = line
        self.col = col
        self.expected = tuple(expected or ())
        loc = f"line {line}, column {col}"
        exp = f" (expected one of: {', '.join(self.expected)})" if self.expected else ""
        super().__init__(f"{message} at {loc}{exp}")


# -- AST --------------------------------------------------------------------


class Pos:
    """Positive body literal."""

    __slots__ = ("term",)

    def __init__(self, term: Term):
        self.term = term

    def __repr__(self):
        return f"Pos({self.term!r})"


class NotLit:
    """Default negation ``not g``; g must be ground at call time."""

    __slots__ = ("term",)

    def __init__(self, term: Term):
        self.term = term

    def __repr__(self):
        return f"NotLit({self.term!r})"


class ConstraintLit:
    """``lhs OP rhs`` over rational linear arithmetic."""

    __slots__ = ("op", "lhs", "rhs")

    def __init__(self, op: str, lhs: Term, rhs: Term):
        self.op = op
        self.lhs = lhs
        self.rhs = rhs

    def __repr__(self):
        return f"Constraint({self.lhs!r} {self.op} {self.rhs!r})"


class Clause:
    __slots__ = ("head", "body", "synthetic")

    def __init__(self, head: Term, body: tuple = (), synthetic: Optional[str] = None):
        self.head = head
        self.body = tuple(body)
        self.synthetic = synthetic

    @property
    def is_fact(self) -> bool:
        return not self.body

    def __repr__(self):
        return f"Clause({self.head!r} :- {self.body!r})"


class Directive:
    __slots__ = ("kind", "value")

    def __init__(self, kind: str, value):
        self.kind = kind  # table_once | abducible | dual | decouple | multirun | flag
        self.value = value

    def __repr__(self):
        return f"Directive({self.kind}, {self.value!r})"


class Program:
    """Clauses + directives after parsing; preprocessing passes add
    synthetic can_* facts and register dual predicates."""

    def __init__(self):
        self.clauses: list[Clause] = []
        self.directives: list[Directive] = []
        self.queries: list[tuple] = []  # each a tuple of literals

    def extend(self, other: "Program") -> "Program":
        self.clauses.extend(other.clauses)
        self.directives.extend(other.directives)
        self.queries.extend(other.queries)
        return self

    def copy(self) -> "Program":
        p = Program()
        p.clauses = list(self.clauses)
        p.directives = list(self.directives)
        p.queries = list(self.queries)
        return p

    # directive views ------------------------------------------------------

    def tabled(self) -> set:
        out = set()
        for d in self.directives:
            if d.kind == "table_once":
                out.add(d.value)
        return out

    def duals(self) -> set:
        out = set()
        for d in self.directives:
            if d.kind == "dual":
                out.add(d.value)
        return out

    def abducibles(self) -> list:
        return [d.value for d in self.directives if d.kind == "abducible"]

    def decoupled(self) -> list:
        return [d.value for d in self.directives if d.kind == "decouple"]

    def multirun_plan(self) -> Optional[list]:
        for d in self.directives:
            if d.kind == "multirun":
                return list(d.value)
        return None

    def flags(self) -> set:
        return {d.value for d in self.directives if d.kind == "flag"}

    def validate_directives(self) -> None:
        for collect in ("table_once", "abducible"):
            seen = set()
            for d in self.directives:
                if d.kind != collect:
                    continue
                key = d.value if collect == "table_once" else _abducible_key(d.value)
                if key in seen:
                    raise ValueError(f"duplicate #{collect} directive for {key}")
                seen.add(key)


def _abducible_key(value):
    if isinstance(value, tuple):
        return value
    if isinstance(value, Struct):
        return (value.functor, len(value.args))
    return (value, 0)


# -- Lexer --------------------------------------------------------------------

_PUNCT = (
    ":-",
    "?-",
    ".>=.",
    ".=<.",
    ".<>.",
    ".<.",
    ".>.",
    ".=.",
    "(",
    ")",
    "[",
    "]",
    ",",
    "+",
    "-",
    "*",
    "/",
    ".",
)


class _Token:
    __slots__ = ("kind", "value", "line", "col")

    def __init__(self, kind, value, line, col):
        self.kind = kind
        self.value = value
        self.line = line
        self.col = col


def _tokenize(text: str):
    toks = []
    i, line, col = 0, 1, 1
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "%":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch == "#":
            j = i + 1
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            toks.append(_Token("DIRECTIVE", text[i + 1 : j], line, col))
            col += j - i
            i = j
            continue
        matched = None
        for p in _PUNCT:
            if text.startswith(p, i):
                # "." only terminates a sentence when not starting ".<." etc.
                matched = p
                break
        if matched:
            toks.append(_Token("PUNCT", matched, line, col))
            i += len(matched)
            col += len(matched)
            continue
        if ch.isdigit():
            j = i
            while j < n and text[j].isdigit():
                j += 1
            toks.append(_Token("INT", int(text[i:j]), line, col))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            if ch.isupper() or ch == "_":
                toks.append(_Token("VAR", word, line, col))
            else:
                toks.append(_Token("ATOM", word, line, col))
            col += j - i
            i = j
            continue
        raise ParseError(f"unexpected character {ch!r}", line, col)
    toks.append(_Token("EOF", None, line, col))
    return toks


# -- Parser -------------------------------------------------------------------


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.pos = 0
        self.var_counter = 0
        self.var_map: dict = {}

    def peek(self) -> _Token:
        return self.toks[self.pos]

    def next(self) -> _Token:
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def expect(self, kind, value=None) -> _Token:
        t = self.peek()
        if t.kind != kind or (value is not None and t.value != value):
            want = value if value is not None else kind
            raise ParseError(
                f"unexpected {t.value!r}", t.line, t.col, expected=[str(want)]
            )
        return self.next()

    def at_punct(self, value) -> bool:
        t = self.peek()
        return t.kind == "PUNCT" and t.value == value

    def fresh_var(self, name: str) -> Var:
        if name == "_":
            v = Var(self.var_counter, "_")
            self.var_counter += 1
            return v
        if name not in self.var_map:
            self.var_map[name] = Var(self.var_counter, name)
            self.var_counter += 1
        return self.var_map[name]

    # sentences --------------------------------------------------------------

    def parse_program(self) -> Program:
        prog = Program()
        while self.peek().kind != "EOF":
            self.var_map = {}
            t = self.peek()
            if t.kind == "DIRECTIVE":
                prog.directives.append(self.parse_directive())
            elif t.kind == "PUNCT" and t.value == "?-":
                self.next()
                body = self.parse_body()
                self.expect("PUNCT", ".")
                prog.queries.append(tuple(body))
            else:
                prog.clauses.append(self.parse_clause())
        prog.validate_directives()
        return prog

    def parse_directive(self) -> Directive:
        t = self.next()
        name = t.value
        if name == "table_once" or name == "dual":
            pred = self.expect("ATOM").value
            self.expect("PUNCT", "/")
            arity = self.expect("INT").value
            self.expect("PUNCT", ".")
            return Directive(name, (pred, arity))
        if name == "abducible":
            a = self.expect("ATOM").value
            if self.at_punct("/"):
                self.next()
                arity = self.expect("INT").value
                self.expect("PUNCT", ".")
                return Directive(name, (a, arity))
            if self.at_punct("("):
                args = self.parse_args()
                self.expect("PUNCT", ".")
                return Directive(name, Struct(a, args))
            self.expect("PUNCT", ".")
            return Directive(name, (a, 0))
        if name == "decouple" or name == "flag":
            e = self.expect("ATOM").value
            self.expect("PUNCT", ".")
            return Directive(name, e)
        if name == "multirun":
            self.expect("PUNCT", "[")
            events = [self.expect("ATOM").value]
            while self.at_punct(","):
                self.next()
                events.append(self.expect("ATOM").value)
            self.expect("PUNCT", "]")
            self.expect("PUNCT", ".")
            return Directive(name, events)
        raise ParseError(
            f"unknown directive #{name}",
            t.line,
            t.col,
            expected=["table_once", "abducible", "dual", "decouple", "multirun", "flag"],
        )

    def parse_clause(self) -> Clause:
        head = self.parse_term()
        if not isinstance(head, (str, Struct)):
            t = self.peek()
            raise ParseError("clause head must be an atom or compound", t.line, t.col)
        _reject_arith(head, self)
        if self.at_punct(":-"):
            self.next()
            body = self.parse_body()
            self.expect("PUNCT", ".")
            return Clause(head, tuple(body))
        self.expect("PUNCT", ".")
        return Clause(head, ())

    def parse_body(self) -> list:
        out = [self.parse_literal()]
        while self.at_punct(","):
            self.next()
            out.append(self.parse_literal())
        return out

    def parse_literal(self):
        t = self.peek()
        if t.kind == "ATOM" and t.value == "not":
            nxt = self.toks[self.pos + 1]
            if not (nxt.kind == "PUNCT" and nxt.value in ("(", ",", ".")):
                self.next()
                inner = self.parse_term()
                _reject_arith(inner, self)
                return NotLit(inner)
        lhs = self.parse_term()
        t = self.peek()
        if t.kind == "PUNCT" and t.value in CONSTRAINT_OPS:
            op = CONSTRAINT_OPS[self.next().value]
            rhs = self.parse_term()
            return ConstraintLit(op, lhs, rhs)
        _reject_arith(lhs, self)
        if not isinstance(lhs, (str, Struct)):
            raise ParseError("expected a predicate call", t.line, t.col)
        return Pos(lhs)

    # terms / arithmetic -------------------------------------------------------

    def parse_args(self) -> tuple:
        self.expect("PUNCT", "(")
        args = [self.parse_term()]
        while self.at_punct(","):
            self.next()
            args.append(self.parse_term())
        self.expect("PUNCT", ")")
        return tuple(args)

    def parse_term(self) -> Term:
        return self.parse_additive()

    def parse_additive(self) -> Term:
        t = self.parse_multiplicative()
        while self.peek().kind == "PUNCT" and self.peek().value in ("+", "-"):
            op = self.next().value
            rhs = self.parse_multiplicative()
            t = _fold(op, t, rhs)
        return t

    def parse_multiplicative(self) -> Term:
        t = self.parse_primary()
        while self.peek().kind == "PUNCT" and self.peek().value in ("*", "/"):
            op = self.next().value
            rhs = self.parse_primary()
            t = _fold(op, t, rhs)
        return t

    def parse_primary(self) -> Term:
        t = self.peek()
        if t.kind == "INT":
            self.next()
            return Fraction(t.value)
        if t.kind == "PUNCT" and t.value == "-":
            self.next()
            inner = self.parse_primary()
            if is_num(inner):
                return -inner
            return Struct("-", (Fraction(0), inner))
        if t.kind == "PUNCT" and t.value == "(":
            self.next()
            inner = self.parse_term()
            self.expect("PUNCT", ")")
            return inner
        if t.kind == "VAR":
            self.next()
            return self.fresh_var(t.value)
        if t.kind == "ATOM":
            self.next()
            if self.at_punct("("):
                return Struct(t.value, self.parse_args())
            return t.value
        raise ParseError(
            f"unexpected {t.value!r}",
            t.line,
            t.col,
            expected=["term", "variable", "number", "("],
        )


def _fold(op: str, lhs: Term, rhs: Term) -> Term:
    if is_num(lhs) and is_num(rhs):
        if op == "+":
            return lhs + rhs
        if op == "-":
            return lhs - rhs
        if op == "*":
            return lhs * rhs
        if rhs == 0:
            raise ZeroDivisionError("division by zero in rational literal")
        return lhs / rhs
    return Struct(op, (lhs, rhs))


def _reject_arith(t: Term, parser: _Parser) -> None:
    tok = parser.toks[max(parser.pos - 1, 0)]
    if isinstance(t, Struct):
        if t.functor in ARITH_FUNCTORS:
            raise ParseError(
                "non-constant arithmetic is only allowed inside constraints",
                tok.line,
                tok.col,
            )
        for a in t.args:
            _reject_arith(a, parser)


def parse(text: str) -> Program:
    """Parse program text; raises :class:`ParseError` with line/column."""
    return _Parser(text).parse_program()


def parse_literals(text: str) -> tuple:
    """Parse a comma-separated goal list (e.g. a ``--query`` argument)."""
    p = _Parser(text.rstrip().rstrip(".") + " .")
    body = p.parse_body()
    p.expect("PUNCT", ".")
    return tuple(body)


# -- Printer ------------------------------------------------------------------


def render_term(t: Term) -> str:
    if isinstance(t, Var):
        return t.name if t.name != "_" else f"_G{t.id}"
    if isinstance(t, Fraction):
        return format_num(t)
    if isinstance(t, Struct):
        if t.functor in ARITH_FUNCTORS and len(t.args) == 2:
            return f"({render_term(t.args[0])} {t.functor} {render_term(t.args[1])})"
        return f"{t.functor}({', '.join(render_term(a) for a in t.args)})"
    return t


def render_literal(lit) -> str:
    if isinstance(lit, Pos):
        return render_term(lit.term)
    if isinstance(lit, NotLit):
        return f"not {render_term(lit.term)}"
    if isinstance(lit, ConstraintLit):
        return f"{render_term(lit.lhs)} {OP_RENDER[lit.op]} {render_term(lit.rhs)}"
    raise TypeError(lit)


def render_clause(c: Clause) -> str:
    if c.is_fact:
        return f"{render_term(c.head)}."
    body = ", ".join(render_literal(b) for b in c.body)
    return f"{render_term(c.head)} :- {body}."


def render_directive(d: Directive) -> str:
    if d.kind in ("table_once", "dual"):
        return f"#{d.kind} {d.value[0]}/{d.value[1]}."
    if d.kind == "abducible":
        if isinstance(d.value, tuple):
            return f"#abducible {d.value[0]}/{d.value[1]}."
        return f"#abducible {render_term(d.value)}."
    if d.kind in ("decouple", "flag"):
        return f"#{d.kind} {d.value}."
    if d.kind == "multirun":
        return f"#multirun [{', '.join(d.value)}]."
    raise TypeError(d)


def render_program(p: Program) -> str:
    lines = [render_directive(d) for d in p.directives]
    lines.extend(render_clause(c) for c in p.clauses if c.synthetic is None)
    for q in p.queries:
        lines.append("?- " + ", ".join(render_literal(l) for l in q) + ".")
    return "\n".join(lines) + "\n"
