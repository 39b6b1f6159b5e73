"""Layer potentials: evaluation off the boundary and calibrated trace operators."""

from .second_order import (
    BoundaryOperator,
    DensityField,
    JumpReport,
    assemble_adjoint_double_layer,
    assemble_double_layer,
    eval_double_layer,
    eval_single_layer,
    single_layer_trace_matrix,
    trace_jump_residuals,
)
from .biharmonic import (
    BiharmonicTraceOperators,
    DirichletPair,
    NeumannPair,
    WhitneyArray,
    assemble_biharmonic_traces,
    eval_biharmonic_double_layer,
    eval_biharmonic_single_layer,
    neumann_pair_from_function,
    whitney_pair,
)

__all__ = [
    "BoundaryOperator",
    "DensityField",
    "JumpReport",
    "assemble_adjoint_double_layer",
    "assemble_double_layer",
    "eval_double_layer",
    "eval_single_layer",
    "single_layer_trace_matrix",
    "trace_jump_residuals",
    "BiharmonicTraceOperators",
    "DirichletPair",
    "NeumannPair",
    "WhitneyArray",
    "assemble_biharmonic_traces",
    "eval_biharmonic_double_layer",
    "eval_biharmonic_single_layer",
    "neumann_pair_from_function",
    "whitney_pair",
]
