"""Source-to-source preprocessing passes.

Three passes run between parsing and execution:

1. trigger/effect decoupling for ``#decouple e.`` events,
2. ``can_*`` index-fact generation for initiates/terminates/releases/
   trajectory clause heads,
3. dual-predicate registration checks for ``#dual p/n.`` directives.

Synthetic clauses carry a provenance tag so proof trees can show
"via can-index" steps distinctly.
"""

from __future__ import annotations

from .syntax import Clause, ConstraintLit, NotLit, Pos, Program
from .terms import Struct, Term, canonical

EFFECT_HEADS = {"initiates": 3, "terminates": 3, "releases": 3}
TRAJECTORY_ARITY = 4


class PassError(Exception):
    pass


def generate_can_facts(program: Program) -> Program:
    """Add one synthetic ``can_initiates(E, F)`` fact per distinct (up to
    renaming) initiates/terminates/releases clause head, and
    ``can_trajectory/4`` for trajectory heads.  Body variables are left free
    in the emitted fact."""
    out = program.copy()
    seen = set()
    synth = []
    for clause in program.clauses:
        head = clause.head
        if not isinstance(head, Struct):
            continue
        name, arity = head.functor, len(head.args)
        if name in EFFECT_HEADS and arity == EFFECT_HEADS[name]:
            fact = Struct(f"can_{name}", head.args[:2])
        elif name == "trajectory" and arity == TRAJECTORY_ARITY:
            fact = Struct("can_trajectory", head.args)
        else:
            continue
        key = canonical(fact)
        if key in seen:
            continue
        seen.add(key)
        synth.append(Clause(fact, (), synthetic="can"))
    out.clauses = out.clauses + synth
    return out


def decouple_event(program: Program, event: str) -> Program:
    """Split triggered event ``event`` into trigger and ``<event>_EFFECT``:

    * effect clauses (initiates/terminates/releases on the event) move to the
      new event,
    * consequence rules ``happens(x,T) :- ..., happens(event,T), ...`` are
      rewritten to depend on the effect event,
    * trigger rules for the event itself are kept unchanged,
    * a re-enable bridge restores single-run semantics when the
      ``full_<event>_reasoning_enabled`` fact is asserted.
    """
    declared = any(
        c.is_fact
        and isinstance(c.head, Struct)
        and c.head.functor == "event"
        and c.head.args == (event,)
        for c in program.clauses
    )
    if not declared:
        raise PassError(f"cannot decouple unknown event {event!r}")
    has_trigger = any(
        isinstance(c.head, Struct)
        and c.head.functor == "happens"
        and len(c.head.args) == 2
        and c.head.args[0] == event
        for c in program.clauses
    )
    if not has_trigger:
        raise PassError(f"event {event!r} has no trigger rule to decouple")

    effect = f"{event}_EFFECT"
    out = program.copy()
    rewritten = []
    for clause in out.clauses:
        head = clause.head
        if isinstance(head, Struct):
            name, arity = head.functor, len(head.args)
            if name in EFFECT_HEADS and arity == 3 and _event_matches(head.args[0], event):
                new_head = Struct(name, (_rename_event(head.args[0], effect),) + head.args[1:])
                rewritten.append(Clause(new_head, clause.body, clause.synthetic))
                continue
            if name == "happens" and arity == 2 and not _event_matches(head.args[0], event):
                new_body = tuple(_rewrite_body_lit(lit, event, effect) for lit in clause.body)
                if new_body != clause.body:
                    rewritten.append(Clause(head, new_body, clause.synthetic))
                    continue
        rewritten.append(clause)
    out.clauses = rewritten
    out.clauses.append(Clause(Struct("event", (effect,)), (), synthetic="decouple"))
    bridge_t = _fresh_bridge_var()
    out.clauses.append(
        Clause(
            Struct("happens", (effect, bridge_t)),
            (
                Pos(f"full_{event}_reasoning_enabled"),
                Pos(Struct("happens", (event, bridge_t))),
            ),
            synthetic="decouple",
        )
    )
    return out


_bridge_counter = [0]


def _fresh_bridge_var():
    from .terms import Var

    _bridge_counter[0] -= 1
    return Var(_bridge_counter[0] - 10_000_000, "T")


def _event_matches(arg: Term, event: str) -> bool:
    if isinstance(arg, str):
        return arg == event
    if isinstance(arg, Struct):
        return arg.functor == event
    return False


def _rename_event(arg: Term, effect: str) -> Term:
    if isinstance(arg, str):
        return effect
    if isinstance(arg, Struct):
        return Struct(effect, arg.args)
    return arg


def _rewrite_body_lit(lit, event: str, effect: str):
    if isinstance(lit, Pos) and isinstance(lit.term, Struct):
        t = lit.term
        if t.functor == "happens" and len(t.args) == 2 and _event_matches(t.args[0], event):
            return Pos(Struct("happens", (_rename_event(t.args[0], effect),) + t.args[1:]))
    return lit


def validate_duals(program: Program) -> None:
    """A dualized predicate must not also carry hand-written not_* clauses."""
    dualized = program.duals()
    for clause in program.clauses:
        head = clause.head
        name = head.functor if isinstance(head, Struct) else head
        if isinstance(name, str) and name.startswith("not_"):
            base = name[4:]
            arity = len(head.args) if isinstance(head, Struct) else 0
            if (base, arity) in dualized:
                raise PassError(
                    f"predicate {base}/{arity} is #dual-generated but "
                    f"{name} also has explicit clauses"
                )


def preprocess(program: Program) -> Program:
    """Run all passes in order: decoupling, can-fact generation, dual checks."""
    out = program
    for event in program.decoupled():
        out = decouple_event(out, event)
    out = generate_can_facts(out)
    validate_duals(out)
    return out
