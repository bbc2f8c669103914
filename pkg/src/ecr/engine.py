"""Goal-directed, top-down resolution with constraint propagation.

Literal selection is strictly left-to-right with source clause order; the
engine never reorders bodies (the body order of trigger and axiom rules is
what makes fixed-narrative evaluation terminate).  Features:

* rational linear constraints pushed into an undoable store,
* designated negation ``not_p`` computed by constructive negation
  (enumerate the positive solutions under the current store, project them
  onto the call's external variables, and emit the complement regions),
* default negation ``not g`` as negation-as-finite-failure over ground g,
* ``#abducible`` choice points with guard constraints and a shared
  assumption registry (repeated calls see the same assumption literal but
  carry per-occurrence parameter variables),
* ground-subgoal tabling (success and failure caching) for ``#table_once``
  predicates, invalidated whenever the assumption set changes,
* ancestor-subsumption loop pruning plus a depth cutoff,
* proof trees and exact deterministic counters.
"""

from __future__ import annotations

import os
import sys
from fractions import Fraction
from typing import Iterator, Optional

sys.setrecursionlimit(max(sys.getrecursionlimit(), 200_000))

from . import clp
from .clp import Interval, LinExpr, Store
from .syntax import Clause, ConstraintLit, NotLit, Pos, Program
from .terms import (
    FreshVars,
    Struct,
    Term,
    Var,
    canonical,
    format_term,
    is_ground,
    rename_term,
    term_vars,
    walk,
)

DEFAULT_CUTOFF = 100_000


class EngineError(Exception):
    pass


class NonlinearConstraint(EngineError):
    pass


class NonGroundNegation(EngineError):
    pass


class NonDualizable(EngineError):
    pass


class EngineOptions:
    def __init__(
        self,
        cutoff: Optional[int] = None,
        tabling: bool = True,
        answer_limit: Optional[int] = None,
        proof: bool = False,
        dual_enum_limit: int = 200_000,
        occurrence_memo: bool = True,
    ):
        if cutoff is None:
            cutoff = int(os.environ.get("ECR_CUTOFF", DEFAULT_CUTOFF))
        self.cutoff = cutoff
        self.tabling = tabling
        self.answer_limit = answer_limit
        self.proof = proof
        self.dual_enum_limit = dual_enum_limit
        # the fixed-narrative occurrence memo is evaluation discipline, not
        # the #table_once cache; it stays available when tabling is off
        self.occurrence_memo = occurrence_memo


class Stats:
    __slots__ = ("resolution_calls", "cache_hits", "cache_stores", "pruned_loops", "pruned_depth")

    def __init__(self):
        self.resolution_calls = 0
        self.cache_hits = 0
        self.cache_stores = 0
        self.pruned_loops = 0
        self.pruned_depth = 0

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__slots__}


class ProofNode:
    __slots__ = ("kind", "label", "children")

    def __init__(self, kind: str, label: str, children=()):
        self.kind = kind  # rule | fact | constraint | cache | assume | dual | naf
        self.label = label
        self.children = list(children)

    def render(self, indent: int = 0) -> str:
        lines = ["  " * indent + f"[{self.kind}] {self.label}"]
        for c in self.children:
            lines.append(c.render(indent + 1))
        return "\n".join(lines)


class Answer:
    """One solution: substitution for the query variables, per-variable
    intervals, residual multi-variable constraints, the partial model
    (abducible assumptions), and an optional proof tree."""

    def __init__(self, bindings, intervals, residual, model, assumptions, proof=None):
        self.bindings = bindings  # var name -> rendered term (or None if free/numeric)
        self.intervals = intervals  # var name -> Interval
        self.residual = residual  # list of rendered constraints
        self.model = model  # list of rendered model literals
        self.assumptions = assumptions  # list of AssumptionView
        self.proof = proof

    def key(self):
        return (
            tuple(sorted(self.bindings.items())),
            tuple(sorted((n, i.key()) for n, i in self.intervals.items())),
            tuple(sorted(self.residual)),
            tuple(sorted(self.model)),
        )

    def describe(self) -> str:
        parts = []
        for name in sorted(set(self.bindings) | set(self.intervals)):
            if name in self.intervals:
                itv = self.intervals[name]
                parts.append(f"{name} = {itv.render()}" if itv.is_point() else f"{name} in {itv.render()}")
            else:
                parts.append(f"{name} = {self.bindings[name]}")
        out = ", ".join(parts) if parts else "yes"
        if self.residual:
            out += " | " + " , ".join(self.residual)
        if self.model:
            out += " { " + ", ".join(self.model) + " }"
        return out


class AssumptionView:
    """Answer-side snapshot of one abducible decision."""

    def __init__(self, positive: bool, literal: str, occurrences):
        self.positive = positive
        self.literal = literal
        # list of per-occurrence dicts: param name -> Interval
        self.occurrences = occurrences


class CompiledClause:
    __slots__ = ("head", "body", "synthetic", "first_key", "vars", "forall_sets", "text")

    def __init__(self, clause: Clause):
        self.head = clause.head
        self.body = clause.body
        self.synthetic = clause.synthetic
        self.first_key = _index_key_of(clause.head)
        vars_ = {}
        counts = {}

        def see(t, where):
            for v in term_vars(t):
                vars_[v.id] = v
                counts.setdefault(v.id, set()).add(where)

        see(clause.head, -1)
        for i, lit in enumerate(clause.body):
            if isinstance(lit, (Pos, NotLit)):
                see(lit.term, i)
            else:
                see(lit.lhs, i)
                see(lit.rhs, i)
        self.vars = list(vars_.values())
        # variables occurring in exactly one body literal (and not the head)
        # are universally quantified inside a designated-negation call there
        self.forall_sets = {}
        for i, lit in enumerate(clause.body):
            if isinstance(lit, Pos):
                only_here = {
                    v.id
                    for v in term_vars(lit.term)
                    if counts[v.id] == {i}
                }
                if only_here:
                    self.forall_sets[i] = only_here
        from .syntax import render_clause

        self.text = render_clause(clause)


def _index_key_of(head: Term):
    if isinstance(head, Struct) and head.args:
        a = head.args[0]
        if isinstance(a, str):
            return ("a", a)
        if isinstance(a, Fraction):
            return ("n", a)
        if isinstance(a, Struct):
            return ("s", a.functor, len(a.args))
    return None


def _call_key(arg, bindings):
    a = walk(arg, bindings)
    if isinstance(a, str):
        return ("a", a)
    if isinstance(a, Fraction):
        return ("n", a)
    if isinstance(a, Struct):
        return ("s", a.functor, len(a.args))
    return None


class AbduciblePattern:
    def __init__(self, pattern: Term):
        self.pattern = pattern  # e.g. Struct('initiallyP', (Struct('vtbi_...', (V, P)),))
        self.params = list(term_vars(pattern))  # declaration order
        self.key = canonical(pattern)
        pred = pattern.functor if isinstance(pattern, Struct) else pattern
        arity = len(pattern.args) if isinstance(pattern, Struct) else 0
        self.pred = (pred, arity)

    def render(self):
        return format_term(self.pattern)


class CompiledProgram:
    def __init__(self, program: Program):
        self.source = program
        self.index: dict = {}
        max_id = 0
        for clause in program.clauses:
            cc = CompiledClause(clause)
            head = clause.head
            name = head.functor if isinstance(head, Struct) else head
            arity = len(head.args) if isinstance(head, Struct) else 0
            self.index.setdefault((name, arity), []).append(cc)
            for v in cc.vars:
                max_id = max(max_id, v.id)
        for q in program.queries:
            for lit in q:
                terms = (
                    (lit.term,) if isinstance(lit, (Pos, NotLit)) else (lit.lhs, lit.rhs)
                )
                for t in terms:
                    for v in term_vars(t):
                        max_id = max(max_id, v.id)
        self.max_var_id = max_id
        self.tabled = program.tabled()
        self.duals = program.duals()
        self.flags = program.flags()
        # ground event terms with happens/2 clauses, in first-appearance
        # order: the domain of the fixed-narrative occurrence table
        self.ground_events = []
        seen_events = set()
        for clause in program.clauses:
            h = clause.head
            if (
                isinstance(h, Struct)
                and h.functor == "happens"
                and len(h.args) == 2
                and is_ground(h.args[0])
            ):
                key = canonical(h.args[0])
                if key not in seen_events:
                    seen_events.add(key)
                    self.ground_events.append(h.args[0])
        self.abducibles = []
        for spec in program.abducibles():
            if isinstance(spec, tuple):
                # whole-predicate form: pattern p(X1..Xn)
                pred, arity = spec
                fresh = [Var(-(i + 1), f"A{i}") for i in range(arity)]
                pattern = Struct(pred, tuple(fresh)) if arity else pred
            else:
                pattern = spec
            self.abducibles.append(AbduciblePattern(pattern))

    def clauses_for(self, pred: str, arity: int):
        return self.index.get((pred, arity), ())

    def is_dual_pred(self, name: str, arity: int):
        if not name.startswith("not_"):
            return None
        base = name[4:]
        if (base, arity) in self.duals:
            return base
        return None


def compile_program(program: Program) -> CompiledProgram:
    return CompiledProgram(program)


# ---------------------------------------------------------------------------


class _Frame:
    __slots__ = ("pred", "arity", "args", "parent")

    def __init__(self, pred, arity, args, parent):
        self.pred = pred
        self.arity = arity
        self.args = args
        self.parent = parent


class _Decision:
    __slots__ = ("value", "occurrences")

    def __init__(self, value: bool):
        self.value = value
        self.occurrences = []  # list of (instance_term, [param Var ...])


class Solver:
    """One solver instance per query; single-threaded internally."""

    def __init__(self, prog: CompiledProgram, opts: Optional[EngineOptions] = None):
        self.prog = prog
        self.opts = opts or EngineOptions()
        self.bindings: dict = {}
        self._btrail: list = []
        self.store = Store()
        self.fresh = FreshVars(prog.max_var_id + 1)
        self.stats = Stats()
        self.table: dict = {}
        self.decisions: dict = {}  # pattern key -> _Decision
        self.assumption_version = 0
        self._dtrail: list = []  # decision undo records
        self.diagnostics: list = []
        # abduction-driver hooks: per-parameter restriction intervals and
        # pinned values, applied at every occurrence
        self.param_restrictions: dict = {}  # pattern key -> list[Interval|None]
        self.param_pins: dict = {}  # pattern key -> list[Fraction|None]
        # fixed-narrative occurrence table: for every ground event term, the
        # complete list of determined occurrence times, computed by a global
        # fixpoint iteration (each round re-enumerates every event against
        # the previous rounds' table).  This is the evaluation semantics for
        # fixed narratives and stays on in both tabling modes; it cuts the
        # self-supporting derivations of value-dependent triggered events.
        # Disabled when abducibles are declared (assumptions change what
        # happens) or by the occurrence_memo option.
        self._occ_table: Optional[dict] = None

    # -- state marks --------------------------------------------------------

    def mark(self):
        return (len(self._btrail), self.store.mark(), len(self._dtrail))

    def undo_to(self, m):
        nb, ns, nd = m
        while len(self._btrail) > nb:
            vid = self._btrail.pop()
            del self.bindings[vid]
        self.store.undo_to(ns)
        while len(self._dtrail) > nd:
            kind, payload = self._dtrail.pop()
            if kind == "decision":
                del self.decisions[payload]
                self.assumption_version += 1
            elif kind == "occ":
                key = payload
                self.decisions[key].occurrences.pop()

    def _bind(self, var: Var, t: Term) -> None:
        self.bindings[var.id] = t
        self._btrail.append(var.id)

    # -- unification with store integration ----------------------------------

    def unify(self, a: Term, b: Term) -> bool:
        a = walk(a, self.bindings)
        b = walk(b, self.bindings)
        if isinstance(a, Var):
            if isinstance(b, Var):
                if a.id == b.id:
                    return True
                a_known = a.id in self.store.names
                b_known = b.id in self.store.names
                if a_known and b_known:
                    e = LinExpr({a.id: Fraction(1), b.id: Fraction(-1)}, Fraction(0))
                    if not self.store.assert_c(clp.EQ, e):
                        return False
                    self._bind(a, b)
                elif a_known:
                    # keep the store-constrained variable as representative
                    self._bind(b, a)
                else:
                    self._bind(a, b)
                return True
            return self._bind_nonvar(a, b)
        if isinstance(b, Var):
            return self._bind_nonvar(b, a)
        if isinstance(a, Fraction) and isinstance(b, Fraction):
            return a == b
        if isinstance(a, str) and isinstance(b, str):
            return a == b
        if isinstance(a, Struct) and isinstance(b, Struct):
            if a.functor != b.functor or len(a.args) != len(b.args):
                return False
            return all(self.unify(x, y) for x, y in zip(a.args, b.args))
        return False

    def _bind_nonvar(self, v: Var, t: Term) -> bool:
        if self._occurs(v, t):
            return False
        if v.id in self.store.names:
            if isinstance(t, Fraction):
                e = LinExpr({v.id: Fraction(1)}, -t)
                if not self.store.assert_c(clp.EQ, e):
                    return False
            else:
                return False  # constrained numeric variable vs non-numeric term
        self._bind(v, t)
        return True

    def _occurs(self, v: Var, t: Term) -> bool:
        t = walk(t, self.bindings)
        if isinstance(t, Var):
            return t.id == v.id
        if isinstance(t, Struct):
            return any(self._occurs(v, a) for a in t.args)
        return False

    def resolve(self, t: Term) -> Term:
        t = walk(t, self.bindings)
        if isinstance(t, Struct):
            return Struct(t.functor, tuple(self.resolve(a) for a in t.args))
        return t

    # -- linear expression lowering ------------------------------------------

    def lin_of(self, t: Term) -> LinExpr:
        t = walk(t, self.bindings)
        if isinstance(t, Fraction):
            return LinExpr.of_const(t)
        if isinstance(t, Var):
            self.store.name_var(t.id, t.name)
            return LinExpr.of_var(t.id)
        if isinstance(t, Struct) and len(t.args) == 2 and t.functor in "+-*/":
            lhs = self.lin_of(t.args[0])
            rhs = self.lin_of(t.args[1])
            if t.functor == "+":
                return lhs.add(rhs)
            if t.functor == "-":
                return lhs.sub(rhs)
            # variables already determined by store equalities act as
            # constants; flow rates are derived this way, which is what
            # keeps products like (T2 - T1) * FlowRate linear
            if not lhs.is_const():
                lhs = self.store.resolve_expr(lhs)
            if not rhs.is_const():
                rhs = self.store.resolve_expr(rhs)
            if t.functor == "*":
                if lhs.is_const():
                    return rhs.scale(lhs.const)
                if rhs.is_const():
                    return lhs.scale(rhs.const)
                raise NonlinearConstraint(
                    f"nonlinear product in constraint: {format_term(t, self.bindings)}"
                )
            if rhs.is_const():
                if rhs.const == 0:
                    raise NonlinearConstraint("division by zero in constraint")
                return lhs.scale(Fraction(1) / rhs.const)
            raise NonlinearConstraint(
                f"nonlinear quotient in constraint: {format_term(t, self.bindings)}"
            )
        raise NonlinearConstraint(
            f"non-numeric term in constraint: {format_term(t, self.bindings)}"
        )

    def post(self, op: str, lhs: Term, rhs: Term) -> bool:
        le, re_ = self.lin_of(lhs), self.lin_of(rhs)
        if op == "<":
            return self.store.assert_c(clp.LT, le.sub(re_))
        if op == ">":
            return self.store.assert_c(clp.LT, re_.sub(le))
        if op == "=<":
            return self.store.assert_c(clp.LE, le.sub(re_))
        if op == ">=":
            return self.store.assert_c(clp.LE, re_.sub(le))
        if op == "=":
            return self.store.assert_c(clp.EQ, le.sub(re_))
        if op == "<>":
            return self.store.assert_c(clp.NE, le.sub(re_))
        raise EngineError(f"unknown constraint operator {op}")

    # -- main resolution ------------------------------------------------------

    def solve(self, literals) -> Iterator[Answer]:
        qvars = {}
        for lit in literals:
            terms = (lit.term,) if isinstance(lit, (Pos, NotLit)) else (lit.lhs, lit.rhs)
            for t in terms:
                for v in term_vars(t):
                    if v.name != "_" and v.name not in qvars:
                        qvars[v.name] = v
        count = 0
        proof_acc = [] if self.opts.proof else None
        for _ in self._solve_seq(tuple(literals), 0, 0, None, proof_acc):
            yield self._make_answer(qvars, proof_acc)
            count += 1
            if self.opts.answer_limit is not None and count >= self.opts.answer_limit:
                return

    def _solve_seq(self, lits, i, depth, frame, proof_acc, forall_sets=None):
        if i == len(lits):
            yield True
            return
        fa = forall_sets.get(i) if forall_sets else None
        for _ in self._solve_lit(lits[i], depth, frame, proof_acc, fa):
            yield from self._solve_seq(lits, i + 1, depth, frame, proof_acc, forall_sets)

    def _solve_lit(self, lit, depth, frame, proof_acc, forall_vars=None):
        if isinstance(lit, ConstraintLit):
            m = self.mark()
            try:
                if self.post(lit.op, lit.lhs, lit.rhs):
                    if proof_acc is not None:
                        proof_acc.append(
                            ProofNode("constraint", self._render_goal_constraint(lit))
                        )
                        yield True
                        proof_acc.pop()
                    else:
                        yield True
            finally:
                self.undo_to(m)
            return
        if isinstance(lit, NotLit):
            yield from self._solve_naf(lit.term, depth, frame, proof_acc)
            return
        yield from self._solve_pos(lit.term, depth, frame, proof_acc, forall_vars)

    def _render_goal_constraint(self, lit: ConstraintLit) -> str:
        from .syntax import OP_RENDER

        return (
            f"{format_term(lit.lhs, self.bindings)} {OP_RENDER[lit.op]} "
            f"{format_term(lit.rhs, self.bindings)}"
        )

    def _split_call(self, t: Term):
        t = walk(t, self.bindings)
        if isinstance(t, Struct):
            return t.functor, t.args
        if isinstance(t, str):
            return t, ()
        raise EngineError(f"callable expected, got {format_term(t, self.bindings)}")

    def _solve_pos(self, term, depth, frame, proof_acc, forall_vars=None):
        pred, args = self._split_call(term)
        if pred == "true" and not args:
            self.stats.resolution_calls += 1
            yield True
            return
        if pred in ("fail", "false") and not args:
            self.stats.resolution_calls += 1
            return
        base = self.prog.is_dual_pred(pred, len(args))
        if base is not None:
            yield from self._solve_dual(base, args, depth, frame, proof_acc, forall_vars)
            return
        yield from self._solve_call(pred, args, depth, frame, proof_acc)

    # positive predicate call: clauses then abducible assumption
    def _solve_call(self, pred, args, depth, frame, proof_acc):
        self.stats.resolution_calls += 1
        if depth > self.opts.cutoff:
            self.stats.pruned_depth += 1
            self.diagnostics.append(f"depth cutoff {self.opts.cutoff} reached at {pred}/{len(args)}")
            return
        if self._loop_detected(pred, args, frame):
            self.stats.pruned_loops += 1
            return

        if (
            pred == "happens"
            and len(args) == 2
            and self.opts.occurrence_memo
            and not self.prog.abducibles
        ):
            ev = self.resolve(args[0])
            if is_ground(ev):
                memo = self._happens_times(ev, depth)
                if memo is not None:
                    for tau in memo:
                        m = self.mark()
                        try:
                            if self.unify(args[0], ev) and self.unify(args[1], tau):
                                if proof_acc is not None:
                                    proof_acc.append(
                                        ProofNode(
                                            "cache",
                                            f"happens({format_term(ev)}, {format_term(tau)})",
                                        )
                                    )
                                    yield True
                                    proof_acc.pop()
                                else:
                                    yield True
                        finally:
                            self.undo_to(m)
                    return

        key = None
        if (
            self.opts.tabling
            and (pred, len(args)) in self.prog.tabled
            and all(is_ground(a, self.bindings) for a in args)
        ):
            key = ("+", pred, canonical(self.resolve(Struct(pred, args) if args else pred)))
            cached = self.table.get(key)
            if cached is not None and cached[0] == self.assumption_version:
                self.stats.cache_hits += 1
                if cached[1]:
                    if proof_acc is not None:
                        proof_acc.append(
                            ProofNode("cache", format_term(Struct(pred, args) if args else pred, self.bindings))
                        )
                        yield True
                        proof_acc.pop()
                    else:
                        yield True
                return
            aver = self.assumption_version
            got = False
            for _ in self._resolve_clauses(pred, args, depth, frame, proof_acc):
                got = True
                yield True
                break  # a ground call yields one distinguishable answer
            if self.assumption_version == aver:
                self.table[key] = (aver, got)
                self.stats.cache_stores += 1
            return

        yield from self._resolve_clauses(pred, args, depth, frame, proof_acc)

    def _happens_times(self, ev, depth):
        """Occurrence times of a ground event from the fixpoint table; None
        when the event's occurrences are not determined points (resolution
        then proceeds normally)."""
        self._ensure_occurrence_table(depth)
        return self._occ_table.get(canonical(ev))

    def _ensure_occurrence_table(self, depth):
        if self._occ_table is not None:
            return
        self._occ_table = {}
        events = self.prog.ground_events
        for ev in events:
            self._occ_table[canonical(ev)] = []
        limit = len(events) + 8
        for _round in range(limit):
            changed = False
            for ev in events:
                times = self._enumerate_event(ev, depth)
                key = canonical(ev)
                if times != self._occ_table[key]:
                    self._occ_table[key] = times
                    changed = True
            if not changed:
                return
        self.diagnostics.append("occurrence table did not stabilize; memo disabled")
        for key in list(self._occ_table):
            self._occ_table[key] = None

    def _enumerate_event(self, ev, depth):
        """All solutions of happens(ev, T) against the current table; None
        when some occurrence time is not a determined point."""
        m = self.mark()
        times = []
        ok = True
        depth_prunes_before = self.stats.pruned_depth
        try:
            tv = self.fresh.fresh("T")
            for _ in self._resolve_clauses("happens", (ev, tv), depth, None, None):
                r = walk(tv, self.bindings)
                if isinstance(r, Var):
                    itv = self.store.bounds(r.id) if r.id in self.store.names else None
                    if itv is not None and itv.is_point():
                        r = itv.lo
                    else:
                        ok = False
                        break
                if not isinstance(r, Fraction):
                    ok = False
                    break
                if r not in times:
                    times.append(r)
        finally:
            self.undo_to(m)
        if self.stats.pruned_depth != depth_prunes_before:
            ok = False  # enumeration may be incomplete under the cutoff
        return times if ok else None

    def _resolve_clauses(self, pred, args, depth, frame, proof_acc):
        arity = len(args)
        call_key = _call_key(args[0], self.bindings) if args else None
        newframe = _Frame(pred, arity, args, frame)
        for cc in self.prog.clauses_for(pred, arity):
            if (
                call_key is not None
                and cc.first_key is not None
                and call_key != cc.first_key
            ):
                continue
            m = self.mark()
            try:
                mapping = {}
                head = rename_term(cc.head, mapping, self.fresh)
                hargs = head.args if isinstance(head, Struct) else ()
                ok = True
                for ha, ca in zip(hargs, args):
                    if not self.unify(ha, ca):
                        ok = False
                        break
                if ok:
                    if not cc.body:
                        if proof_acc is not None:
                            kind = "fact" if cc.synthetic is None else cc.synthetic
                            proof_acc.append(ProofNode(kind, cc.text))
                            yield True
                            proof_acc.pop()
                        else:
                            yield True
                    else:
                        body = tuple(_rename_lit(lit, mapping, self.fresh) for lit in cc.body)
                        fsets = None
                        if cc.forall_sets:
                            fsets = {
                                i: {mapping[vid].id for vid in ids if vid in mapping}
                                for i, ids in cc.forall_sets.items()
                            }
                        if proof_acc is not None:
                            sub_acc = []
                            for _ in self._solve_seq(body, 0, depth + 1, newframe, sub_acc, fsets):
                                proof_acc.append(ProofNode("rule", cc.text, list(sub_acc)))
                                yield True
                                proof_acc.pop()
                        else:
                            yield from self._solve_seq(body, 0, depth + 1, newframe, None, fsets)
            finally:
                self.undo_to(m)
        yield from self._abducible_branch(pred, args, depth, proof_acc)

    # -- abducibles -----------------------------------------------------------

    def _matching_abducible(self, pred, args):
        for ab in self.prog.abducibles:
            if ab.pred == (pred, len(args)):
                return ab
        return None

    def _abducible_branch(self, pred, args, depth, proof_acc):
        ab = self._matching_abducible(pred, args)
        if ab is None:
            return
        dec = self.decisions.get(ab.key)
        if dec is not None and dec.value is False:
            return
        m = self.mark()
        try:
            if dec is None:
                self.decisions[ab.key] = _Decision(True)
                self._dtrail.append(("decision", ab.key))
                self.assumption_version += 1
            call = Struct(pred, args) if args else pred
            for instance, _params in self._occurrence_branches(ab, depth):
                if self.unify(instance, call):
                    if proof_acc is not None:
                        proof_acc.append(
                            ProofNode("assume", format_term(instance, self.bindings))
                        )
                        yield True
                        proof_acc.pop()
                    else:
                        yield True
                break  # one occurrence per encounter; guards are checks
        finally:
            self.undo_to(m)

    def _occurrence_branches(self, ab: AbduciblePattern, depth: int):
        """Instantiate the abducible pattern with fresh parameter variables,
        apply guard clauses plus driver restrictions/pins, and record the
        occurrence.  Yields with all effects live so the guard constraints
        stay attached to the parameters."""
        mapping = {}
        instance = rename_term(ab.pattern, mapping, self.fresh)
        params = [mapping[v.id] for v in ab.params]
        for p, v in zip(params, ab.params):
            self.store.name_var(p.id, v.name)
        if self.prog.clauses_for("abducible_guard", 1):
            for _ in self._solve_call("abducible_guard", (instance,), depth, None, None):
                if self._finalize_occurrence(ab, instance, params):
                    yield instance, params
                return  # guard branches are constraint checks, not choices
        else:
            if self._finalize_occurrence(ab, instance, params):
                yield instance, params

    def _finalize_occurrence(self, ab, instance, params) -> bool:
        restr = self.param_restrictions.get(ab.key)
        if restr:
            for p, itv in zip(params, restr):
                if itv is not None and not self._assert_interval(p, itv):
                    return False
        pins = self.param_pins.get(ab.key)
        if pins:
            for p, val in zip(params, pins):
                if val is None:
                    continue
                e = LinExpr({p.id: Fraction(1)}, -val)
                if not self.store.assert_c(clp.EQ, e):
                    return False
        dec = self.decisions[ab.key]
        dec.occurrences.append((instance, params))
        self._dtrail.append(("occ", ab.key))
        return True

    def _assert_interval(self, var: Var, itv: Interval) -> bool:
        if itv.lo is not None:
            e = LinExpr({var.id: Fraction(-1)}, itv.lo)
            rel = clp.LE if itv.lo_closed else clp.LT
            if not self.store.assert_c(rel, e):
                return False
        if itv.hi is not None:
            e = LinExpr({var.id: Fraction(1)}, -itv.hi)
            rel = clp.LE if itv.hi_closed else clp.LT
            if not self.store.assert_c(rel, e):
                return False
        return True

    # -- default negation -------------------------------------------------------

    def _solve_naf(self, term, depth, frame, proof_acc):
        t = self.resolve(term)
        if not is_ground(t):
            raise NonGroundNegation(
                f"default negation requires a ground goal, got {format_term(t)}; "
                "use a designated dual (not_*) for non-ground negative reasoning"
            )
        pred, args = self._split_call(t)
        ab = self._matching_abducible(pred, args)
        if ab is not None:
            dec = self.decisions.get(ab.key)
            if dec is not None and dec.value is False:
                # already assumed false: the consistency probe ran at
                # decision time; nested negations trust the assumption
                # (this is what closes even loops through the abducible)
                if proof_acc is not None:
                    proof_acc.append(ProofNode("naf", f"not {format_term(t, self.bindings)}"))
                    yield True
                    proof_acc.pop()
                else:
                    yield True
                return
            if dec is None:
                # assume the abducible false so the negation is supported,
                # then check no ordinary clause still proves the goal
                m = self.mark()
                try:
                    self.decisions[ab.key] = _Decision(False)
                    self._dtrail.append(("decision", ab.key))
                    self.assumption_version += 1
                    yield from self._naf_check(t, depth, frame, proof_acc)
                finally:
                    self.undo_to(m)
                return
        yield from self._naf_check(t, depth, frame, proof_acc)

    def _naf_check(self, t, depth, frame, proof_acc):
        # the probe is a separate proof context: ancestor-subsumption must
        # not treat a recursion through negation as a positive loop
        m = self.mark()
        found = False
        for _ in self._solve_lit(Pos(t), depth + 1, None, None):
            found = True
            break
        self.undo_to(m)
        if not found:
            if proof_acc is not None:
                proof_acc.append(ProofNode("naf", f"not {format_term(t, self.bindings)}"))
                yield True
                proof_acc.pop()
            else:
                yield True

    # -- loop pruning -------------------------------------------------------------

    def _loop_detected(self, pred, args, frame) -> bool:
        cur_shape = None
        cur_store_part = None
        f = frame
        while f is not None:
            if f.pred == pred and f.arity == len(args):
                if cur_shape is None:
                    cur_shape = self._arg_shape(args)
                anc_shape = self._arg_shape(f.args)
                if anc_shape[0] == cur_shape[0]:
                    if cur_store_part is None:
                        cur_store_part = self._store_part(cur_shape[1])
                        if cur_store_part is None:
                            return False  # externally linked: progress possible
                    anc_store_part = self._store_part(anc_shape[1])
                    if anc_store_part == cur_store_part:
                        return True
            f = f.parent
        return False

    def _arg_shape(self, args):
        """Canonical argument structure plus the goal's free variables in
        first-occurrence order (so two variant goals align positionally)."""
        numbering: dict = {}
        shape = tuple(canonical(self.resolve(a), numbering) for a in args)
        ordered = sorted(numbering, key=lambda v: numbering[v])
        return shape, ordered

    def _store_part(self, fv_ordered):
        """Projected-store form over the goal's variables, renumbered by
        position.  None when those variables are constrained together with
        outside variables: pruning then risks cutting real progress."""
        if not fv_ordered:
            return ()
        fv = set(fv_ordered)
        comp = self.store._component(fv)
        if not comp <= fv:
            return None
        numbering = {v: i for i, v in enumerate(fv_ordered)}
        proj = self.store.project(fv)
        rendered = []
        for rel, e in proj:
            coeffs = tuple(sorted((numbering[v], c) for v, c in e.coeffs.items()))
            rendered.append((rel, coeffs, e.const))
        bnds = []
        for v in fv_ordered:
            itv = self.store.bounds_cache.get(v)
            bnds.append(itv.key() if itv is not None else None)
        return (tuple(sorted(rendered)), tuple(bnds))

    # -- constructive negation (designated duals) ----------------------------------

    def _solve_dual(self, base, args, depth, frame, proof_acc, forall_vars=None):
        self.stats.resolution_calls += 1
        if depth > self.opts.cutoff:
            self.stats.pruned_depth += 1
            return
        call = Struct(base, args) if args else base

        key = None
        if (
            self.opts.tabling
            and (base, len(args)) in self.prog.tabled
            and all(is_ground(a, self.bindings) for a in args)
        ):
            key = ("-", base, canonical(self.resolve(call)))
            cached = self.table.get(key)
            if cached is not None and cached[0] == self.assumption_version:
                self.stats.cache_hits += 1
                if cached[1]:
                    yield True
                return

        forall_vars = forall_vars or set()
        external = []
        for v in term_vars(self.resolve(call)):
            if v.id not in forall_vars and v.id not in (x.id for x in external):
                external.append(v)
                self.store.name_var(v.id, v.name)

        sols, deps_list, failed = self._enumerate_solutions(call, external, depth, frame)
        if failed:
            return

        aver = self.assumption_version
        got = [False]

        def emit():
            got[0] = True
            if proof_acc is not None:
                proof_acc.append(
                    ProofNode("dual", f"not_{format_term(call, self.bindings)}")
                )
                yield True
                proof_acc.pop()
            else:
                yield True

        dep_keys = sorted({k for deps in deps_list for k in deps}, key=repr)
        for _ in self._dual_assumption_branches(dep_keys, 0, sols, deps_list, {}, depth):
            yield from emit()
        if key is not None and self.assumption_version == aver:
            self.table[key] = (aver, got[0])
            self.stats.cache_stores += 1

    def _enumerate_solutions(self, call, external, depth, frame):
        """All solutions of the positive call under the current store, each
        projected onto the external variables plus any abducible-parameter
        variables introduced by that solution."""
        sols = []
        deps_list = []
        base_occ_counts = {k: len(d.occurrences) for k, d in self.decisions.items()}
        m = self.mark()
        count = 0
        # fresh ancestor chain: the enumeration is its own proof context
        for _ in self._solve_pos(call, depth + 1, None, None):
            count += 1
            if count > self.opts.dual_enum_limit:
                self.undo_to(m)
                raise EngineError(
                    f"constructive negation enumeration exceeded "
                    f"{self.opts.dual_enum_limit} solutions for {format_term(call, self.bindings)}"
                )
            deps = {}
            occ_params = []
            for k, dec in self.decisions.items():
                base_n = base_occ_counts.get(k)
                if base_n is None:
                    if dec.value:
                        pvars = [p for (_, ps) in dec.occurrences for p in ps]
                        deps[k] = (True, [p.id for p in pvars])
                        occ_params.extend(pvars)
                    else:
                        deps[k] = (False, [])
                elif dec.value and len(dec.occurrences) > base_n:
                    extra = dec.occurrences[base_n:]
                    pvars = [p for (_, ps) in extra for p in ps]
                    deps[k] = (True, [p.id for p in pvars])
                    occ_params.extend(pvars)
            keep = {v.id for v in external} | {p.id for p in occ_params}
            for k, base_n in base_occ_counts.items():
                # live ambient occurrences keep their ids; constraints on them
                # are part of the shared assumption and stay complementable
                for _, ps in self.decisions[k].occurrences[:base_n]:
                    keep.update(p.id for p in ps)
            constraints = []
            bad = None
            for v in external:
                r = self.resolve(v)
                if isinstance(r, Var):
                    continue
                if isinstance(r, Fraction):
                    constraints.append(
                        (clp.EQ, LinExpr({v.id: Fraction(1)}, -r))
                    )
                elif is_ground(r):
                    bad = (v, r)
                else:
                    bad = (v, r)
            if bad is not None:
                self.undo_to(m)
                raise NonDualizable(
                    f"cannot complement non-numeric binding {bad[0].name} = "
                    f"{format_term(bad[1])} while negating {format_term(call, self.bindings)}"
                )
            for rel, e in self.store.project(keep):
                constraints.append((rel, e))
            sols.append(constraints)
            deps_list.append(deps)
        # effects of the enumeration are unwound branch-by-branch by the
        # generators themselves; nothing to undo here beyond safety
        self.undo_to(m)
        return sols, deps_list, False

    def _dual_assumption_branches(self, dep_keys, i, sols, deps_list, chosen, depth):
        """Branch over truth values for abducible patterns the enumeration
        touched, re-anchor parameter variables on live occurrences, then
        emit the complement of every applicable solution."""
        if i == len(dep_keys):
            applicable = []
            for sol, deps in zip(sols, deps_list):
                ok = True
                rename = {}
                for k, (val, pvar_ids) in deps.items():
                    if k in chosen:
                        cval, cmap = chosen[k]
                    else:
                        cdec = self.decisions.get(k)
                        cval, cmap = (cdec.value if cdec else None), None
                    if cval != val:
                        ok = False
                        break
                    if val and cmap is not None:
                        for old, new in zip(pvar_ids, cmap):
                            rename[old] = new
                    elif val:
                        live = self.decisions[k].occurrences[-1][1]
                        n_params = len(live)
                        for j, old in enumerate(pvar_ids):
                            rename[old] = live[j % n_params].id
                if ok:
                    applicable.append(_rename_constraints(sol, rename))
            yield from self._complement_all(applicable, 0)
            return
        k = dep_keys[i]
        existing = self.decisions.get(k)
        values = (
            [existing.value] if existing is not None else [False, True]
        )
        for val in values:
            m = self.mark()
            try:
                cmap = None
                if existing is None:
                    self.decisions[k] = _Decision(val)
                    self._dtrail.append(("decision", k))
                    self.assumption_version += 1
                if val:
                    ab = next(a for a in self.prog.abducibles if a.key == k)
                    instance, params = self._new_occurrence(ab, depth)
                    if instance is None:
                        continue
                    cmap = [p.id for p in params]
                new_chosen = dict(chosen)
                new_chosen[k] = (val, cmap)
                yield from self._dual_assumption_branches(
                    dep_keys, i + 1, sols, deps_list, new_chosen, depth
                )
            finally:
                self.undo_to(m)

    def _complement_all(self, sols, i):
        if i == len(sols):
            yield True
            return
        for _ in self._complement_one(sols[i]):
            yield from self._complement_all(sols, i + 1)

    def _complement_one(self, constraints):
        # disjoint complement: c0..c_{j-1} hold and c_j is violated
        for j, (rel, e) in enumerate(constraints):
            prefix = constraints[:j]
            for nrel, ne in _negate(rel, e):
                m = self.mark()
                try:
                    ok = True
                    for prel, pe in prefix:
                        if not self.store.assert_c(prel, pe):
                            ok = False
                            break
                    if ok and self.store.assert_c(nrel, ne):
                        yield True
                finally:
                    self.undo_to(m)

    # -- answers -----------------------------------------------------------------

    def _make_answer(self, qvars, proof_acc) -> Answer:
        bindings = {}
        intervals = {}
        free_numeric = []
        for name, v in qvars.items():
            r = walk(v, self.bindings)
            if isinstance(r, Fraction):
                intervals[name] = Interval(r, True, r, True)
            elif isinstance(r, Var):
                if r.id in self.store.names or r.id in self.store.solved:
                    itv = self.store.bounds(r.id)
                    intervals[name] = itv
                    free_numeric.append((name, r))
                else:
                    bindings[name] = format_term(r)
            else:
                rr = self.resolve(r)
                if is_ground(rr):
                    bindings[name] = format_term(rr)
                else:
                    bindings[name] = format_term(rr, self.bindings)
        residual = []
        keep = {v.id for _, v in free_numeric}
        if keep:
            names = {v.id: n for n, v in free_numeric}
            for rel, e in self.store.project(keep):
                if len(e.coeffs) <= 1:
                    continue  # unary facts are already shown as intervals
                residual.append(f"{e.render(names)} {rel} 0")
        model = []
        assumptions = []
        for ab in self.prog.abducibles:
            dec = self.decisions.get(ab.key)
            if dec is None:
                continue
            if not dec.value:
                model.append(f"not {ab.render()}")
                assumptions.append(AssumptionView(False, ab.render(), []))
                continue
            occs = []
            for _, params in dec.occurrences:
                occs.append(
                    {
                        pv.name: self.store.bounds(p.id)
                        for pv, p in zip(ab.params, params)
                    }
                )
            model.append(ab.render())
            assumptions.append(AssumptionView(True, ab.render(), occs))
        proof = None
        if proof_acc is not None:
            proof = ProofNode("query", "?-", list(proof_acc))
        return Answer(bindings, intervals, sorted(residual), sorted(model), assumptions, proof)


def _rename_lit(lit, mapping, fresh):
    if isinstance(lit, Pos):
        return Pos(rename_term(lit.term, mapping, fresh))
    if isinstance(lit, NotLit):
        return NotLit(rename_term(lit.term, mapping, fresh))
    return ConstraintLit(
        lit.op,
        rename_term(lit.lhs, mapping, fresh),
        rename_term(lit.rhs, mapping, fresh),
    )


def _rename_constraints(constraints, rename):
    if not rename:
        return constraints
    out = []
    for rel, e in constraints:
        coeffs = {}
        for v, c in e.coeffs.items():
            nv = rename.get(v, v)
            coeffs[nv] = coeffs.get(nv, Fraction(0)) + c
        coeffs = {v: c for v, c in coeffs.items() if c != 0}
        out.append((rel, LinExpr(coeffs, e.const)))
    return out


def _negate(rel, e: LinExpr):
    neg = e.scale(Fraction(-1))
    if rel == clp.LE:
        return [(clp.LT, neg)]
    if rel == clp.LT:
        return [(clp.LE, neg)]
    if rel == clp.EQ:
        return [(clp.LT, e), (clp.LT, neg)]
    if rel == clp.NE:
        return [(clp.EQ, e)]
    raise ValueError(rel)


# ---------------------------------------------------------------------------


def solve(prog: CompiledProgram, query, opts: Optional[EngineOptions] = None):
    """Lazily enumerate answers to ``query`` (a tuple of literals)."""
    return Solver(prog, opts).solve(query)


def solve_counted(prog: CompiledProgram, query, opts: Optional[EngineOptions] = None):
    """Run to exhaustion (or the answer limit); returns (answers, stats)."""
    s = Solver(prog, opts)
    answers = list(s.solve(query))
    return answers, s.stats
