"""Terms, exact rational arithmetic, substitutions, and unification.

Terms are immutable and safe to share:

* atoms are plain ``str`` (lowercase-initial identifiers),
* numbers are :class:`fractions.Fraction` (always in lowest terms, positive
  denominator, arbitrary precision -- no floats anywhere in the engine),
* variables are :class:`Var`,
* compounds are :class:`Struct`.
"""

from __future__ import annotations

import itertools
from fractions import Fraction
from typing import Iterator, Optional, Union


class Var:
    """A logic variable, identified by an integer id unique per renaming."""

    __slots__ = ("id", "name")

    def __init__(self, id: int, name: str = "_"):
        self.id = id
        self.name = name

    def __eq__(self, other):
        return isinstance(other, Var) and self.id == other.id

    def __hash__(self):
        return hash(("var", self.id))

    def __repr__(self):
        return f"{self.name}_{self.id}"


class Struct:
    """Compound term: functor applied to one or more arguments."""

    __slots__ = ("functor", "args")

    def __init__(self, functor: str, args: tuple):
        if not args:
            raise ValueError("Struct arity must be >= 1; use a plain atom instead")
        self.functor = functor
        self.args = args

    def __eq__(self, other):
        return (
            isinstance(other, Struct)
            and self.functor == other.functor
            and self.args == other.args
        )

    def __hash__(self):
        return hash((self.functor, self.args))

    def __repr__(self):
        return f"{self.functor}({', '.join(map(repr, self.args))})"


Term = Union[str, Fraction, Var, Struct]

# Substitutions map variable ids to terms.  They are kept idempotent by
# walking through chains on lookup; occurs-check keeps them finite.
Subst = dict


def mk_num(n, d=1) -> Fraction:
    return Fraction(n, d)


def is_atom(t: Term) -> bool:
    return isinstance(t, str)


def is_num(t: Term) -> bool:
    return isinstance(t, Fraction)


def walk(t: Term, s: Subst) -> Term:
    """Follow variable bindings until a non-variable or unbound variable."""
    while isinstance(t, Var):
        bound = s.get(t.id)
        if bound is None:
            return t
        t = bound
    return t


def resolve(t: Term, s: Subst) -> Term:
    """Apply a substitution all the way down (builds a new term)."""
    t = walk(t, s)
    if isinstance(t, Struct):
        return Struct(t.functor, tuple(resolve(a, s) for a in t.args))
    return t


def occurs(v: Var, t: Term, s: Subst) -> bool:
    t = walk(t, s)
    if isinstance(t, Var):
        return t.id == v.id
    if isinstance(t, Struct):
        return any(occurs(v, a, s) for a in t.args)
    return False


def unify(t1: Term, t2: Term, s: Optional[Subst] = None) -> Optional[Subst]:
    """Most general unifier extending ``s``, or None on failure.

    Numbers unify only on exact rational equality.  The occurs-check is on.
    The input substitution is not mutated.
    """
    if s is None:
        s = {}
    out = dict(s)
    if _unify_into(t1, t2, out):
        return out
    return None


def _unify_into(t1: Term, t2: Term, s: Subst) -> bool:
    t1 = walk(t1, s)
    t2 = walk(t2, s)
    if isinstance(t1, Var):
        if isinstance(t2, Var) and t2.id == t1.id:
            return True
        if occurs(t1, t2, s):
            return False
        s[t1.id] = t2
        return True
    if isinstance(t2, Var):
        if occurs(t2, t1, s):
            return False
        s[t2.id] = t1
        return True
    if isinstance(t1, Fraction) and isinstance(t2, Fraction):
        return t1 == t2
    if isinstance(t1, str) and isinstance(t2, str):
        return t1 == t2
    if isinstance(t1, Struct) and isinstance(t2, Struct):
        if t1.functor != t2.functor or len(t1.args) != len(t2.args):
            return False
        return all(_unify_into(a, b, s) for a, b in zip(t1.args, t2.args))
    return False


class FreshVars:
    """Fresh-id source for renaming clauses apart."""

    def __init__(self, start: int = 0):
        self._counter = itertools.count(start)

    def next_id(self) -> int:
        return next(self._counter)

    def fresh(self, name: str = "_") -> Var:
        return Var(self.next_id(), name)


def rename_term(t: Term, mapping: dict, fresh: FreshVars) -> Term:
    if isinstance(t, Var):
        v = mapping.get(t.id)
        if v is None:
            v = fresh.fresh(t.name)
            mapping[t.id] = v
        return v
    if isinstance(t, Struct):
        return Struct(t.functor, tuple(rename_term(a, mapping, fresh) for a in t.args))
    return t


def term_vars(t: Term) -> Iterator[Var]:
    if isinstance(t, Var):
        yield t
    elif isinstance(t, Struct):
        for a in t.args:
            yield from term_vars(a)


def is_ground(t: Term, s: Optional[Subst] = None) -> bool:
    if s is not None:
        t = walk(t, s)
    if isinstance(t, Var):
        return False
    if isinstance(t, Struct):
        return all(is_ground(a, s) for a in t.args)
    return True


def canonical(t: Term, numbering: Optional[dict] = None) -> object:
    """Structure of ``t`` with variables renamed 0,1,2,... in first-occurrence
    order.  Two terms are variants iff their canonical forms are equal."""
    if numbering is None:
        numbering = {}

    def go(t):
        if isinstance(t, Var):
            n = numbering.get(t.id)
            if n is None:
                n = len(numbering)
                numbering[t.id] = n
            return ("?", n)
        if isinstance(t, Struct):
            return (t.functor, tuple(go(a) for a in t.args))
        return t

    return go(t)


def format_num(q: Fraction) -> str:
    """Exact rational rendering: ``681/2``, never a decimal."""
    if q.denominator == 1:
        return str(q.numerator)
    return f"{q.numerator}/{q.denominator}"


def format_term(t: Term, s: Optional[Subst] = None) -> str:
    if s is not None:
        t = walk(t, s)
    if isinstance(t, Var):
        return t.name if t.name != "_" else f"_V{t.id}"
    if isinstance(t, Fraction):
        return format_num(t)
    if isinstance(t, Struct):
        args = ", ".join(format_term(a, s) for a in t.args)
        return f"{t.functor}({args})"
    return t
