"""Toolchain for the brts state-oriented language: parser, dependent
typechecker backed by a linear-arithmetic solver, big-step interpreter,
and counter-machine analyses."""

__version__ = "0.1.0"
