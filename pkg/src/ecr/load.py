"""Program assembly: file loading, theory inclusion, horizon injection.

Multiple source files concatenate (model + narrative + query files); the
axiom library is prepended unless disabled.  The narrative horizon used by
``holdsAfter/2`` is computed as the maximum ground event time plus a
configurable margin and injected as a ``narrative_horizon/1`` fact unless
the program supplies its own.
"""

from __future__ import annotations

from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

from .engine import CompiledProgram
from .passes import preprocess
from .syntax import Clause, Program, parse
from .terms import Struct

DEFAULT_HORIZON_MARGIN = Fraction(10_000)


def theory_text() -> str:
    return (resources.files("ecr") / "theory" / "bec.pl").read_text()


def assemble(
    texts: Iterable[str],
    include_theory: bool = True,
    horizon_margin: Fraction = DEFAULT_HORIZON_MARGIN,
) -> Program:
    """Parse and concatenate program texts, add the axiom library and the
    horizon fact, and run the preprocessing passes."""
    prog = Program()
    if include_theory:
        prog.extend(parse(theory_text()))
    for text in texts:
        prog.extend(parse(text))
    _inject_horizon(prog, horizon_margin)
    prog.validate_directives()
    return preprocess(prog)


def load_files(
    paths: Iterable,
    include_theory: bool = True,
    horizon_margin: Fraction = DEFAULT_HORIZON_MARGIN,
) -> Program:
    return assemble(
        [Path(p).read_text() for p in paths],
        include_theory=include_theory,
        horizon_margin=horizon_margin,
    )


def compile_texts(texts, **kw) -> CompiledProgram:
    return CompiledProgram(assemble(texts, **kw))


def _inject_horizon(prog: Program, margin: Fraction) -> None:
    for c in prog.clauses:
        h = c.head
        if isinstance(h, Struct) and h.functor == "narrative_horizon" and len(h.args) == 1:
            return
    latest = Fraction(0)
    for c in prog.clauses:
        h = c.head
        if (
            c.is_fact
            and isinstance(h, Struct)
            and h.functor == "happens"
            and len(h.args) == 2
            and isinstance(h.args[1], Fraction)
        ):
            latest = max(latest, h.args[1])
    prog.clauses.append(
        Clause(Struct("narrative_horizon", (latest + margin,)), (), synthetic="horizon")
    )
