"""Incremental linear-arithmetic constraint store over exact rationals.

The store keeps a satisfiable conjunction of linear constraints at all times:
an insertion that would make it unsatisfiable is rejected and the store is
left untouched.  Solving strategy is bounds propagation for unary constraints
plus Fourier-Motzkin elimination for full satisfiability, entailment and
interval extraction -- sound and complete for linear rational arithmetic.

Disequality is kept convex: a ``!=`` constraint is stored verbatim and only
case-split into its two strict sides when a decision (satisfiability,
entailment, endpoint openness) actually needs it.

The store is undoable: :meth:`Store.mark` / :meth:`Store.undo_to` restore a
previous state in time proportional to the changes made since the mark.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Optional

from .terms import format_num

ZERO = Fraction(0)

# relations accepted by assert_c / entails; expressions are normalized to
# "expr REL 0" with REL in {EQ, LE, LT, NE}
EQ, LE, LT, NE = "=", "=<", "<", "<>"


class LinExpr:
    """Sum of rational-coefficient variables plus a rational constant."""

    __slots__ = ("coeffs", "const")

    def __init__(self, coeffs: Optional[dict] = None, const: Fraction = ZERO):
        self.coeffs = coeffs or {}
        self.const = const

    @staticmethod
    def of_var(v: int) -> "LinExpr":
        return LinExpr({v: Fraction(1)}, ZERO)

    @staticmethod
    def of_const(c: Fraction) -> "LinExpr":
        return LinExpr({}, Fraction(c))

    def copy(self) -> "LinExpr":
        return LinExpr(dict(self.coeffs), self.const)

    def is_const(self) -> bool:
        return not self.coeffs

    def add(self, other: "LinExpr") -> "LinExpr":
        coeffs = dict(self.coeffs)
        for v, c in other.coeffs.items():
            nc = coeffs.get(v, ZERO) + c
            if nc == 0:
                coeffs.pop(v, None)
            else:
                coeffs[v] = nc
        return LinExpr(coeffs, self.const + other.const)

    def scale(self, k: Fraction) -> "LinExpr":
        if k == 0:
            return LinExpr({}, ZERO)
        return LinExpr({v: c * k for v, c in self.coeffs.items()}, self.const * k)

    def sub(self, other: "LinExpr") -> "LinExpr":
        return self.add(other.scale(Fraction(-1)))

    def subst(self, v: int, repl: "LinExpr") -> "LinExpr":
        c = self.coeffs.get(v)
        if c is None:
            return self
        coeffs = dict(self.coeffs)
        del coeffs[v]
        out = LinExpr(coeffs, self.const).add(repl.scale(c))
        return out

    def key(self):
        return (tuple(sorted(self.coeffs.items())), self.const)

    def render(self, names: Optional[dict] = None) -> str:
        parts = []
        for v, c in sorted(self.coeffs.items()):
            name = names.get(v, f"_V{v}") if names else f"_V{v}"
            if c == 1:
                parts.append(name)
            elif c == -1:
                parts.append(f"-{name}")
            else:
                parts.append(f"{format_num(c)}*{name}")
        if self.const != 0 or not parts:
            parts.append(format_num(self.const))
        return " + ".join(parts).replace("+ -", "- ")


class Interval:
    """Rational interval with open/closed endpoints; ``None`` = unbounded."""

    __slots__ = ("lo", "lo_closed", "hi", "hi_closed")

    def __init__(self, lo, lo_closed, hi, hi_closed):
        self.lo = lo
        self.lo_closed = lo_closed
        self.hi = hi
        self.hi_closed = hi_closed

    def is_point(self) -> bool:
        return self.lo is not None and self.lo == self.hi

    def is_empty(self) -> bool:
        if self.lo is None or self.hi is None:
            return False
        if self.lo > self.hi:
            return True
        if self.lo == self.hi:
            return not (self.lo_closed and self.hi_closed)
        return False

    def contains(self, q: Fraction) -> bool:
        if self.lo is not None:
            if q < self.lo or (q == self.lo and not self.lo_closed):
                return False
        if self.hi is not None:
            if q > self.hi or (q == self.hi and not self.hi_closed):
                return False
        return True

    def interior_point(self) -> Optional[Fraction]:
        """A deterministic point inside the interval (midpoint-flavoured;
        for half-open intervals the returned point is interior)."""
        if self.is_empty():
            return None
        if self.lo is not None and self.hi is not None:
            if self.lo == self.hi:
                return self.lo
            return (self.lo + self.hi) / 2
        if self.lo is not None:
            return self.lo + 1 if not self.lo_closed else self.lo
        if self.hi is not None:
            return self.hi - 1 if not self.hi_closed else self.hi
        return ZERO

    def sample_points(self, count: int = 8):
        """Deterministic interior samples: midpoint first, then quartile
        subdivision.  Used for witness extraction retries."""
        if self.is_empty():
            return
        if self.lo is None or self.hi is None or self.lo == self.hi:
            p = self.interior_point()
            if p is not None:
                yield p
            return
        seen = set()
        emitted = 0
        denom = 2
        while emitted < count:
            for num in range(1, denom):
                q = self.lo + (self.hi - self.lo) * Fraction(num, denom)
                if q in seen:
                    continue
                seen.add(q)
                yield q
                emitted += 1
                if emitted >= count:
                    return
            denom *= 2

    def key(self):
        return (self.lo, self.lo_closed, self.hi, self.hi_closed)

    def __eq__(self, other):
        return isinstance(other, Interval) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return self.render()

    def render(self) -> str:
        if self.is_point():
            return format_num(self.lo)
        lo = "(-inf" if self.lo is None else ("[" if self.lo_closed else "(") + format_num(self.lo)
        hi = "+inf)" if self.hi is None else format_num(self.hi) + ("]" if self.hi_closed else ")")
        return f"{lo}, {hi}"


TOP = Interval(None, False, None, False)


def intersect(a: Interval, b: Interval) -> Interval:
    lo, loc = a.lo, a.lo_closed
    if b.lo is not None and (lo is None or b.lo > lo or (b.lo == lo and not b.lo_closed)):
        lo, loc = b.lo, b.lo_closed
    hi, hic = a.hi, a.hi_closed
    if b.hi is not None and (hi is None or b.hi < hi or (b.hi == hi and not b.hi_closed)):
        hi, hic = b.hi, b.hi_closed
    return Interval(lo, loc, hi, hic)


# ---------------------------------------------------------------------------
# Fourier-Motzkin core.  An inequality is (strict, LinExpr) meaning
# expr < 0 (strict) or expr <= 0.


def _fm_eliminate(ineqs: list, var: int) -> list:
    pos, neg, rest = [], [], []
    for strict, e in ineqs:
        c = e.coeffs.get(var)
        if c is None or c == 0:
            rest.append((strict, e))
        elif c > 0:
            pos.append((strict, e, c))
        else:
            neg.append((strict, e, c))
    for s1, e1, c1 in pos:
        for s2, e2, c2 in neg:
            # c1 > 0, c2 < 0: combine to cancel var
            comb = e1.scale(Fraction(1, c1)).add(e2.scale(Fraction(-1, c2)))
            comb.coeffs.pop(var, None)
            rest.append((s1 or s2, comb))
    return rest


def _fm_pick_var(ineqs: list) -> Optional[int]:
    counts = {}
    for _, e in ineqs:
        for v, c in e.coeffs.items():
            lo, hi = counts.get(v, (0, 0))
            if c > 0:
                counts[v] = (lo + 1, hi)
            else:
                counts[v] = (lo, hi + 1)
    if not counts:
        return None
    return min(counts, key=lambda v: (counts[v][0] * counts[v][1], v))


def fm_satisfiable(ineqs: list) -> bool:
    """Exact satisfiability of a conjunction of (strict, expr REL 0) over Q."""
    work = list(ineqs)
    while True:
        ground = []
        pending = []
        for strict, e in work:
            if e.is_const():
                ground.append((strict, e))
            else:
                pending.append((strict, e))
        for strict, e in ground:
            if strict and not e.const < 0:
                return False
            if not strict and not e.const <= 0:
                return False
        if not pending:
            return True
        var = _fm_pick_var(pending)
        work = _fm_eliminate(pending, var)


def fm_project(ineqs: list, keep: set) -> list:
    """Eliminate every variable not in ``keep``; exact projection."""
    work = list(ineqs)
    while True:
        var = None
        for _, e in work:
            for v in e.coeffs:
                if v not in keep:
                    var = v
                    break
            if var is not None:
                break
        if var is None:
            return work
        work = _fm_eliminate(work, var)


def fm_bounds(ineqs: list, var: int) -> Interval:
    """Tightest interval for ``var`` implied by the inequalities."""
    projected = fm_project(ineqs, {var})
    lo, loc, hi, hic = None, False, None, False
    for strict, e in projected:
        c = e.coeffs.get(var)
        if c is None or c == 0:
            if (strict and not e.const < 0) or (not strict and not e.const <= 0):
                return Interval(Fraction(1), True, ZERO, True)  # empty
            continue
        bound = -e.const / c
        if c > 0:  # var <= bound (or <)
            if hi is None or bound < hi or (bound == hi and strict):
                hi, hic = bound, not strict
        else:  # var >= bound
            if lo is None or bound > lo or (bound == lo and strict):
                lo, loc = bound, not strict
    return Interval(lo, loc, hi, hic)


# ---------------------------------------------------------------------------


class Store:
    """Satisfiable conjunction of linear rational constraints, undoable.

    Internal representation: solved-form equalities (var -> expr over free
    variables), inequalities and disequalities over free variables, plus
    cached per-variable bounds used for fast pruning.
    """

    def __init__(self):
        self.solved = {}  # var -> LinExpr
        self.ineqs = []  # (strict, LinExpr)  meaning expr {<,<=} 0
        self.neqs = []  # LinExpr, meaning expr != 0
        self.bounds_cache = {}  # var -> Interval (implied unary bounds)
        self.names = {}  # var -> display name
        self._trail = []

    # -- undo machinery ----------------------------------------------------

    def mark(self) -> int:
        return len(self._trail)

    def undo_to(self, mark: int) -> None:
        while len(self._trail) > mark:
            kind, payload = self._trail.pop()
            if kind == "bound":
                var, old = payload
                if old is None:
                    self.bounds_cache.pop(var, None)
                else:
                    self.bounds_cache[var] = old
            elif kind == "ineqs":
                self.ineqs = payload
            elif kind == "neqs":
                self.neqs = payload
            elif kind == "solved_add":
                del self.solved[payload]
            elif kind == "solved_mod":
                var, old = payload
                self.solved[var] = old
            elif kind == "name":
                self.names.pop(payload, None)

    def name_var(self, var: int, name: str) -> None:
        if var not in self.names:
            self.names[var] = name
            self._trail.append(("name", var))

    # -- normalization -----------------------------------------------------

    def resolve_expr(self, e: LinExpr) -> LinExpr:
        out = e
        for v in list(e.coeffs):
            if v in self.solved:
                out = out.subst(v, self.solved[v])
        # solved forms are kept fully substituted, one pass suffices
        return out

    def _set_bound(self, var: int, itv: Interval) -> bool:
        old = self.bounds_cache.get(var)
        merged = intersect(old, itv) if old is not None else itv
        if merged.is_empty():
            return False
        if old is None or merged.key() != old.key():
            self._trail.append(("bound", (var, old)))
            self.bounds_cache[var] = merged
        return True

    def _unary_bounds_as_ineqs(self, vars_: Iterable[int]) -> list:
        out = []
        for v in vars_:
            itv = self.bounds_cache.get(v)
            if itv is None:
                continue
            if itv.lo is not None:
                e = LinExpr({v: Fraction(-1)}, itv.lo)
                out.append((not itv.lo_closed, e))
            if itv.hi is not None:
                e = LinExpr({v: Fraction(1)}, -itv.hi)
                out.append((not itv.hi_closed, e))
        return out

    def _component(self, seed: Iterable[int]) -> set:
        """Variables transitively linked to ``seed`` through inequalities."""
        comp = set(seed)
        changed = True
        while changed:
            changed = False
            for _, e in self.ineqs:
                vs = e.coeffs.keys()
                if comp & vs and not vs <= comp:
                    comp |= vs
                    changed = True
            for e in self.neqs:
                vs = e.coeffs.keys()
                if comp & vs and not vs <= comp:
                    comp |= vs
                    changed = True
        return comp

    def _system(self, comp: set) -> list:
        sys = [iq for iq in self.ineqs if comp & iq[1].coeffs.keys()]
        sys.extend(self._unary_bounds_as_ineqs(comp))
        return sys

    def _sat(self, extra: list, comp: set, neqs: Optional[list] = None) -> bool:
        """Complete satisfiability of component + extra constraints; neq
        constraints are case-split lazily here."""
        sys = self._system(comp) + extra
        if neqs is None:
            neqs = [e for e in self.neqs if comp & e.coeffs.keys()]
        if not fm_satisfiable(sys):
            return False
        if not neqs:
            return True
        first, rest = neqs[0], neqs[1:]
        for side in ((True, first), (True, first.scale(Fraction(-1)))):
            if self._sat(extra + [side], comp, rest):
                return True
        return False

    # -- public operations ---------------------------------------------------

    def assert_c(self, rel: str, expr: LinExpr) -> bool:
        """Add ``expr REL 0``; returns False (store untouched) if the result
        would be unsatisfiable over the rationals."""
        m = self.mark()
        if self._assert(rel, expr):
            return True
        self.undo_to(m)
        return False

    def _assert(self, rel: str, expr: LinExpr) -> bool:
        e = self.resolve_expr(expr)
        if e.is_const():
            if rel == EQ:
                return e.const == 0
            if rel == LE:
                return e.const <= 0
            if rel == LT:
                return e.const < 0
            return e.const != 0

        if rel == EQ:
            return self._assert_eq(e)
        if rel == NE:
            self._trail.append(("neqs", self.neqs))
            self.neqs = self.neqs + [e]
            comp = self._component(e.coeffs.keys())
            return self._sat([], comp)

        strict = rel == LT
        if len(e.coeffs) == 1:
            (v, c), = e.coeffs.items()
            bound = -e.const / c
            itv = (
                Interval(None, False, bound, not strict)
                if c > 0
                else Interval(bound, not strict, None, False)
            )
            if not self._set_bound(v, itv):
                return False
            # unary update cannot make a satisfiable multivariate system
            # inconsistent without the bound itself shrinking to empty, but
            # linked constraints can: re-check the component when linked
            if any(v in iq[1].coeffs for iq in self.ineqs) or any(
                v in nq.coeffs for nq in self.neqs
            ):
                return self._sat([], self._component({v}))
            return True

        self._trail.append(("ineqs", self.ineqs))
        self.ineqs = self.ineqs + [(strict, e)]
        comp = self._component(e.coeffs.keys())
        if not self._sat([], comp):
            return False
        self._refresh_bounds(comp)
        return True

    def _assert_eq(self, e: LinExpr) -> bool:
        # pick the most recently created variable as pivot: older variables
        # tend to be longer-lived, keeping solved forms stable
        pivot = max(e.coeffs)
        c = e.coeffs[pivot]
        rest = e.copy()
        del rest.coeffs[pivot]
        repl = rest.scale(Fraction(-1, c))

        # fold the pivot's accumulated unary bounds back in as constraints
        pivot_bounds = self.bounds_cache.get(pivot)

        self._trail.append(("solved_add", pivot))
        self.solved[pivot] = repl
        for v, prev in list(self.solved.items()):
            if v == pivot:
                continue
            if pivot in prev.coeffs:
                self._trail.append(("solved_mod", (v, prev)))
                self.solved[v] = prev.subst(pivot, repl)

        new_ineqs = []
        changed = False
        for strict, iq in self.ineqs:
            if pivot in iq.coeffs:
                new_ineqs.append((strict, iq.subst(pivot, repl)))
                changed = True
            else:
                new_ineqs.append((strict, iq))
        if changed:
            self._trail.append(("ineqs", self.ineqs))
            self.ineqs = new_ineqs
        new_neqs = []
        changed = False
        for nq in self.neqs:
            if pivot in nq.coeffs:
                new_neqs.append(nq.subst(pivot, repl))
                changed = True
            else:
                new_neqs.append(nq)
        if changed:
            self._trail.append(("neqs", self.neqs))
            self.neqs = new_neqs

        ok = True
        if pivot_bounds is not None:
            if pivot_bounds.lo is not None:
                lo_e = repl.scale(Fraction(-1)).add(LinExpr.of_const(pivot_bounds.lo))
                ok = ok and self._assert(LT if not pivot_bounds.lo_closed else LE, lo_e)
            if ok and pivot_bounds.hi is not None:
                hi_e = repl.add(LinExpr.of_const(-pivot_bounds.hi))
                ok = ok and self._assert(LT if not pivot_bounds.hi_closed else LE, hi_e)
        if not ok:
            return False

        # ground or linked consequences may contradict
        comp = self._component(set(repl.coeffs) or set())
        for strict, iq in self.ineqs:
            if iq.is_const():
                if (strict and not iq.const < 0) or (not strict and not iq.const <= 0):
                    return False
        for nq in self.neqs:
            if nq.is_const() and nq.const == 0:
                return False
        if repl.coeffs and not self._sat([], comp):
            return False
        if repl.coeffs:
            self._refresh_bounds(comp)
        return True

    def _refresh_bounds(self, comp: set) -> None:
        # keep the unary cache implied-by-the-conjunction after multivariate
        # additions so fast pruning stays strong
        sys = self._system(comp)
        for v in comp:
            itv = fm_bounds(sys, v)
            if itv.is_empty():
                continue
            self._set_bound(v, itv)

    def bounds(self, var: int) -> Interval:
        """Tightest implied interval for ``var`` (exact)."""
        e = self.solved.get(var)
        if e is not None:
            return self.bounds_expr(e)
        return self.bounds_expr(LinExpr.of_var(var))

    def bounds_expr(self, expr: LinExpr) -> Interval:
        e = self.resolve_expr(expr)
        if e.is_const():
            return Interval(e.const, True, e.const, True)
        comp = self._component(e.coeffs.keys())
        t = -1  # synthetic target id, disjoint from real vars (ids >= 0)
        sys = self._system(comp)
        sys.append((False, e.copy().add(LinExpr({t: Fraction(-1)}, ZERO))))
        sys.append((False, e.scale(Fraction(-1)).add(LinExpr({t: Fraction(1)}, ZERO))))
        itv = fm_bounds(sys, t)
        # disequalities may open an otherwise attained endpoint
        for endpoint in ("lo", "hi"):
            val = getattr(itv, endpoint)
            closed = getattr(itv, endpoint + "_closed")
            if val is None or not closed:
                continue
            if self.neqs:
                pin = e.copy().add(LinExpr.of_const(-val))
                if not self._sat([(False, pin), (False, pin.scale(Fraction(-1)))], comp):
                    setattr(itv, endpoint + "_closed", False)
        return itv

    def entails(self, rel: str, expr: LinExpr) -> bool:
        """True iff every rational solution of the store satisfies expr REL 0."""
        e = self.resolve_expr(expr)
        comp = self._component(e.coeffs.keys())
        if rel == LE:  # negation: e > 0
            return not self._sat([(True, e.scale(Fraction(-1)))], comp)
        if rel == LT:
            return not self._sat([(False, e.scale(Fraction(-1)))], comp)
        if rel == EQ:
            return not self._sat([(True, e)], comp) and not self._sat(
                [(True, e.scale(Fraction(-1)))], comp
            )
        if rel == NE:
            return not self._sat([(False, e), (False, e.scale(Fraction(-1)))], comp)
        raise ValueError(rel)

    def satisfiable_with(self, constraints: list) -> bool:
        """Satisfiability of the store extended with (rel, expr) pairs,
        without mutating the store."""
        m = self.mark()
        ok = True
        for rel, e in constraints:
            if not self._assert(rel, e):
                ok = False
                break
        self.undo_to(m)
        return ok

    def project(self, keep: set) -> list:
        """Exact projection of the store onto ``keep``: returns a list of
        (rel, LinExpr) whose conjunction has the same solutions over those
        variables.  Redundant inequalities are pruned."""
        out = []
        pool = []
        comp_seed = set(keep)
        for v in keep:
            sf = self.solved.get(v)
            if sf is None:
                continue
            if set(sf.coeffs) <= keep:
                out.append((EQ, LinExpr.of_var(v).sub(sf)))
            else:
                pool.append((False, LinExpr.of_var(v).sub(sf)))
                pool.append((False, sf.sub(LinExpr.of_var(v))))
                comp_seed |= sf.coeffs.keys()
        comp = self._component(comp_seed)
        pool.extend(self._system(comp))
        projected = fm_project(pool, keep)
        # dedupe + drop redundancies
        seen = set()
        cleaned = []
        for strict, e in projected:
            if e.is_const():
                continue
            k = (strict, e.key())
            if k in seen:
                continue
            seen.add(k)
            cleaned.append((strict, e))
        kept = []
        for i, (strict, e) in enumerate(cleaned):
            others = [c for j, c in enumerate(cleaned) if j != i and (j > i or c in kept)]
            if not fm_satisfiable(others + [(not strict, e.scale(Fraction(-1)))]):
                continue  # entailed by the rest
            kept.append((strict, e))
        out.extend((LT if strict else LE, e) for strict, e in kept)
        for nq in self.neqs:
            if nq.coeffs and set(nq.coeffs) <= keep:
                out.append((NE, nq))
        return out

    def render_constraint(self, rel: str, e: LinExpr) -> str:
        return f"{e.render(self.names)} {rel} 0"
