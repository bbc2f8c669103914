"""Goal-directed Event Calculus reasoning over rational time with linear
constraints: deduction, abduction, tabling and multi-run decoupling, plus
the PCA-pump requirements model as a validation corpus."""

from .engine import Answer, EngineOptions, Solver, compile_program, solve, solve_counted
from .load import assemble, compile_texts, load_files
from .syntax import parse, parse_literals

__all__ = [
    "Answer",
    "EngineOptions",
    "Solver",
    "assemble",
    "compile_program",
    "compile_texts",
    "load_files",
    "parse",
    "parse_literals",
    "solve",
    "solve_counted",
]
