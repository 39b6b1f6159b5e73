"""Biharmonic layer potentials (placeholder during bring-up)."""

from dataclasses import dataclass


@dataclass
class DirichletPair:
    pass


@dataclass
class NeumannPair:
    pass


@dataclass
class WhitneyArray:
    pass


@dataclass
class BiharmonicTraceOperators:
    pass


def assemble_biharmonic_traces(*a, **k):
    raise NotImplementedError


def eval_biharmonic_double_layer(*a, **k):
    raise NotImplementedError


def eval_biharmonic_single_layer(*a, **k):
    raise NotImplementedError


def neumann_pair_from_function(*a, **k):
    raise NotImplementedError


def whitney_pair(*a, **k):
    raise NotImplementedError
