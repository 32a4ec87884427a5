"""Closed-form field algebra: expression trees, mollification, norms and grid I/O."""

from .domain import Domain, Rect, lattice_axes, lattice_points
from .expr import (
    Expr, X1, X2, add, affine, as_expr, const, cos, diff, differentiate, evaluate,
    evaluate_array, evaluate_many, exp, extend, grad, hessian, mul, power, restrict,
    scale, sin, sqrt,
)
from .gridio import Grid, read_grid, write_grid, write_grid_csv
from .mollifier import DEFAULT_QUAD_ORDER, mollifier_constant, mollify
from .norms import NormEstimate, commutator_gap, norm_estimate, sample_grid, sup_sym, sup_vec
from .sym import SymField, defect_field, induced, min_eig, op_norm, sym_grad, sym_outer

__all__ = [
    "Domain", "Rect", "lattice_axes", "lattice_points",
    "Expr", "X1", "X2", "add", "affine", "as_expr", "const", "cos", "diff", "differentiate",
    "evaluate", "evaluate_array", "evaluate_many", "exp", "extend", "grad", "hessian", "mul",
    "power", "restrict", "scale", "sin", "sqrt",
    "Grid", "read_grid", "write_grid", "write_grid_csv",
    "DEFAULT_QUAD_ORDER", "mollifier_constant", "mollify",
    "NormEstimate", "commutator_gap", "norm_estimate", "sample_grid", "sup_sym", "sup_vec",
    "SymField", "defect_field", "induced", "min_eig", "op_norm", "sym_grad", "sym_outer",
]
