"""Asymptotic-preserving Q2 FEM solver for a nonlinear anisotropic heat equation."""

from .assembly import (assemble_boundary_source, assemble_load, assemble_mass,
                       assemble_par, assemble_par_nl, assemble_perp,
                       assemble_robin, l2_norm, l2_norm_error,
                       NonpositiveStateError)
from .fields import (AnisotropyField, ExactSolution, MmsParams, bfield_eval,
                     boundary_residual, divergence_check, exact_u, forcing,
                     gaussian_initial, limit_constancy_check)
from .grid import Grid, QuadRule, build_grid, classify_boundary, gauss_rule_2d, shape_eval
from .linalg import BlockSystem, SingularMatrixError, compose, finalize, lu_solve
from .schemes import (NegativeStateError, RK_LAMBDA, RunDiagnostics,
                      SchemeConfig, TimeState, run, step, step_cn_ap,
                      step_e_ap, step_p, step_rk_ap)

__all__ = [name for name in dir() if not name.startswith("_")]
