"""Assembly of the mass/stiffness/boundary forms over the Q2 grid.

All volume forms use the 9-point tensor Gauss rule (exact through degree 5),
all boundary forms its 3-point trace. Assembly is vectorized over elements;
local contributions are merged through COO triplets.
"""

import numpy as np
import scipy.sparse as sparse

from .grid import (Grid, QuadRule, gauss_rule_2d, tabulate_basis,
                   edge_quadrature, _lagrange_1d)
from .linalg import finalize


class NonpositiveStateError(ValueError):
    """Raised when a coefficient state is nonpositive at a quadrature point."""

    def __init__(self, message, location=None, value=None):
        super().__init__(message)
        self.location = location
        self.value = value


class _ElementCache:
    """Basis tables and physical quadrature geometry shared by all forms."""

    def __init__(self, grid: Grid, rule: QuadRule):
        self.rule = rule
        self.phi, dphi = tabulate_basis(rule.points)        # (nq,9), (nq,9,2)
        self.gradx = dphi[:, :, 0] * (2.0 / grid.hx)         # physical gradients
        self.grady = dphi[:, :, 1] * (2.0 / grid.hy)
        self.jac = grid.hx * grid.hy / 4.0
        self.wj = rule.weights * self.jac                    # (nq,)
        self.xq, self.yq = grid.quad_points_physical(rule)   # (nelem, nq)


def element_cache(grid: Grid) -> _ElementCache:
    # stored on the grid itself so the cache dies with it (a global map keyed
    # by id() can hand a recycled id the previous grid's tables)
    cache = getattr(grid, "_basis_cache", None)
    if cache is None:
        cache = _ElementCache(grid, gauss_rule_2d())
        grid._basis_cache = cache
    return cache


def _fine_rule(n: int = 5) -> QuadRule:
    """Tensor Gauss rule with n^2 points, used only for error integrals.

    The 3x3 assembly points sit close to superconvergence points of the Q2
    error and understate the L2 distance by ~15%, so error norms use a finer
    rule than the bilinear forms.
    """
    s, w = np.polynomial.legendre.leggauss(n)
    xi, eta = np.meshgrid(s, s, indexing="ij")
    wx, wy = np.meshgrid(w, w, indexing="ij")
    return QuadRule(points=np.column_stack([xi.ravel(), eta.ravel()]),
                    weights=(wx * wy).ravel())


def _error_cache(grid: Grid) -> _ElementCache:
    cache = getattr(grid, "_error_basis_cache", None)
    if cache is None:
        cache = _ElementCache(grid, _fine_rule())
        grid._error_basis_cache = cache
    return cache


def _scatter(grid: Grid, local: np.ndarray) -> sparse.csr_matrix:
    """Sum (nelem, 9, 9) local matrices into the global sparse matrix."""
    conn = grid.connectivity
    rows = np.repeat(conn, 9, axis=1).ravel()
    cols = np.tile(conn, (1, 9)).ravel()
    return finalize(rows, cols, local.ravel(), (grid.ndof, grid.ndof))


def quad_values(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    """Q2 interpolant of a nodal vector at the quadrature points, (nelem, nq)."""
    cache = element_cache(grid)
    return coeffs[grid.connectivity] @ cache.phi.T


def _coef_at_quad(grid: Grid, coef) -> np.ndarray | float:
    """Evaluate a scalar coefficient field (callable or constant) at quad points."""
    if coef is None:
        return 1.0
    if callable(coef):
        cache = element_cache(grid)
        return np.asarray(coef(cache.xq, cache.yq), dtype=float)
    return float(coef)


def _check_unit_b(bx, by, tol=1e-10):
    dev = np.abs(np.hypot(bx, by) - 1.0)
    if np.max(dev) > tol:
        raise ValueError(f"direction field not unit length (max deviation {np.max(dev):.2e})")


def assemble_mass(grid: Grid) -> sparse.csr_matrix:
    """Symmetric positive-definite L2 mass matrix."""
    cache = element_cache(grid)
    loc = np.einsum("q,ql,qm->lm", cache.wj, cache.phi, cache.phi)
    local = np.broadcast_to(loc, (grid.nelem, 9, 9))
    return _scatter(grid, local)


def assemble_perp(grid: Grid, field, aperp=None) -> sparse.csr_matrix:
    """Perpendicular stiffness: integral of A_perp grad_perp u . grad_perp v."""
    cache = element_cache(grid)
    bx, by = field.b(cache.xq, cache.yq)                 # (nelem, nq)
    _check_unit_b(bx, by)
    # projected gradients (Id - b b^T) grad theta_l, per element/point/basis
    d = bx[:, :, None] * cache.gradx[None] + by[:, :, None] * cache.grady[None]
    gpx = cache.gradx[None] - d * bx[:, :, None]
    gpy = cache.grady[None] - d * by[:, :, None]
    if aperp is None:
        agx, agy = gpx, gpy
    else:
        a = np.asarray(aperp(cache.xq, cache.yq), dtype=float)  # (nelem, nq, 2, 2)
        agx = a[..., 0, 0, None] * gpx + a[..., 0, 1, None] * gpy
        agy = a[..., 1, 0, None] * gpx + a[..., 1, 1, None] * gpy
    local = np.einsum("q,eql,eqm->elm", cache.wj, gpx, agx)
    local += np.einsum("q,eql,eqm->elm", cache.wj, gpy, agy)
    return _scatter(grid, local)


def _parallel_directional(grid: Grid, field):
    cache = element_cache(grid)
    bx, by = field.b(cache.xq, cache.yq)
    _check_unit_b(bx, by)
    return bx[:, :, None] * cache.gradx[None] + by[:, :, None] * cache.grady[None]


def assemble_par(grid: Grid, field, apar=None) -> sparse.csr_matrix:
    """Parallel stiffness: integral of A_par (b.grad u)(b.grad v)."""
    cache = element_cache(grid)
    d = _parallel_directional(grid, field)
    coef = _coef_at_quad(grid, apar)
    w = cache.wj * np.ones((grid.nelem, 1)) * coef
    local = np.einsum("eq,eql,eqm->elm", w, d, d)
    return _scatter(grid, local)


def assemble_par_nl(grid: Grid, field, state: np.ndarray, exponent: float = 2.5,
                    apar=None) -> sparse.csr_matrix:
    """Linearized nonlinear parallel form with coefficient state^exponent.

    The state is interpolated to the quadrature points before the power is
    applied; a nonpositive interpolated value aborts with the offending
    location attached (the expected failure mode of non-L-stable stepping).
    """
    cache = element_cache(grid)
    psi = quad_values(grid, np.asarray(state, dtype=float))
    if np.any(psi <= 0.0):
        e, q = np.unravel_index(np.argmin(psi), psi.shape)
        raise NonpositiveStateError(
            f"coefficient state nonpositive at quadrature point "
            f"({cache.xq[e, q]:.4f}, {cache.yq[e, q]:.4f}): {psi[e, q]:.4e}",
            location=(float(cache.xq[e, q]), float(cache.yq[e, q])),
            value=float(psi[e, q]))
    d = _parallel_directional(grid, field)
    coef = psi ** exponent * _coef_at_quad(grid, apar)
    w = cache.wj * coef
    local = np.einsum("eq,eql,eqm->elm", w, d, d)
    return _scatter(grid, local)


def assemble_robin(grid: Grid, gamma: float) -> sparse.csr_matrix:
    """Boundary mass on the in/out portion, scaled by the Robin coefficient."""
    if not grid.classified:
        raise RuntimeError("boundary not classified; call classify_boundary first")
    rows, cols, vals = [], [], []
    trace = _lagrange_1d(np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)]))  # (3 pts, 3 fn)
    for edge in grid.boundary_edges:
        if edge.tag not in ("in", "out"):
            continue
        _, _, w = edge_quadrature(edge)
        loc = gamma * np.einsum("q,ql,qm->lm", w, trace, trace)
        rows.append(np.repeat(edge.nodes, 3))
        cols.append(np.tile(edge.nodes, 3))
        vals.append(loc.ravel())
    if not rows:
        return sparse.csr_matrix((grid.ndof, grid.ndof))
    return finalize(np.concatenate(rows), np.concatenate(cols),
                    np.concatenate(vals), (grid.ndof, grid.ndof))


def assemble_load(grid: Grid, f, t: float) -> np.ndarray:
    """Load vector with entries integral of f(t, .) theta_i."""
    cache = element_cache(grid)
    fq = np.asarray(f(t, cache.xq, cache.yq), dtype=float)
    fq = np.broadcast_to(fq, cache.xq.shape)
    local = (cache.wj * fq) @ cache.phi                    # (nelem, 9)
    out = np.zeros(grid.ndof)
    np.add.at(out, grid.connectivity.ravel(), local.ravel())
    return out


def assemble_boundary_source(grid: Grid, source, t: float) -> np.ndarray:
    """Weak boundary source: integral over the boundary of g theta_i ds.

    ``source(t, x, y, nx, ny, tag)`` is evaluated at the edge Gauss points.
    """
    if not grid.classified:
        raise RuntimeError("boundary not classified; call classify_boundary first")
    trace = _lagrange_1d(np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)]))
    out = np.zeros(grid.ndof)
    for edge in grid.boundary_edges:
        x, y, w = edge_quadrature(edge)
        g = np.asarray(source(t, x, y, edge.normal[0], edge.normal[1], edge.tag),
                       dtype=float)
        np.add.at(out, edge.nodes, (w * g) @ trace)
    return out


def l2_norm(grid: Grid, coeffs: np.ndarray) -> float:
    """L2 norm of the Q2 interpolant with the given nodal coefficients."""
    cache = element_cache(grid)
    vals = quad_values(grid, coeffs)
    return float(np.sqrt(np.einsum("q,eq->", cache.wj, vals**2)))


def l2_norm_error(grid: Grid, uh: np.ndarray, exact, t: float,
                  mode: str = "absolute") -> float:
    """L2 distance between a discrete field and an exact solution at time t.

    Integrated with the 5x5 tensor Gauss rule (see :func:`_fine_rule`).
    """
    if mode not in ("absolute", "relative"):
        raise ValueError(f"mode must be 'absolute' or 'relative', got {mode!r}")
    cache = _error_cache(grid)
    vals = np.asarray(uh, dtype=float)[grid.connectivity] @ cache.phi.T
    ex = np.asarray(exact(t, cache.xq, cache.yq), dtype=float)
    err = float(np.sqrt(np.einsum("q,eq->", cache.wj, (vals - ex) ** 2)))
    if mode == "absolute":
        return err
    denom = float(np.sqrt(np.einsum("q,eq->", cache.wj, ex**2)))
    if denom == 0.0:
        raise ValueError("relative error undefined: exact solution has zero L2 norm")
    return err / denom
