"""Cartesian Q2 grid on the unit square: lattice, connectivity, boundary edges.

The mesh has ``nx`` x ``ny`` quadrilateral elements; each element carries the
9 biquadratic (Q2) nodes of the doubled lattice, so the global degree-of-freedom
lattice is (2*nx+1) x (2*ny+1).
"""

from dataclasses import dataclass, field

import numpy as np

# sides of an element that can lie on the domain boundary
SIDE_LEFT, SIDE_RIGHT, SIDE_BOTTOM, SIDE_TOP = "left", "right", "bottom", "top"

_SIDE_NORMALS = {
    SIDE_LEFT: (-1.0, 0.0),
    SIDE_RIGHT: (1.0, 0.0),
    SIDE_BOTTOM: (0.0, -1.0),
    SIDE_TOP: (0.0, 1.0),
}

# 3-point Gauss-Legendre rule on [-1, 1]; the tensor product integrates
# bivariate polynomials of degree 5 exactly.
GAUSS_1D_POINTS = np.array([-np.sqrt(3.0 / 5.0), 0.0, np.sqrt(3.0 / 5.0)])
GAUSS_1D_WEIGHTS = np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])


@dataclass(frozen=True)
class QuadRule:
    """Tensor-product Gauss rule on the reference square [-1,1]^2."""

    points: np.ndarray   # (9, 2)
    weights: np.ndarray  # (9,)


def gauss_rule_2d() -> QuadRule:
    xi, eta = np.meshgrid(GAUSS_1D_POINTS, GAUSS_1D_POINTS, indexing="ij")
    wx, wy = np.meshgrid(GAUSS_1D_WEIGHTS, GAUSS_1D_WEIGHTS, indexing="ij")
    points = np.column_stack([xi.ravel(), eta.ravel()])
    weights = (wx * wy).ravel()
    return QuadRule(points=points, weights=weights)


def _lagrange_1d(s):
    """Values of the three 1D quadratic Lagrange basis functions at s in [-1,1]."""
    s = np.asarray(s, dtype=float)
    return np.stack([0.5 * s * (s - 1.0), 1.0 - s * s, 0.5 * s * (s + 1.0)], axis=-1)


def _lagrange_1d_deriv(s):
    s = np.asarray(s, dtype=float)
    one = np.ones_like(s)
    return np.stack([s - 0.5 * one, -2.0 * s, s + 0.5 * one], axis=-1)


def shape_eval(basis_index: int, point) -> tuple[float, np.ndarray]:
    """Value and reference gradient of one of the 9 local Q2 basis functions.

    Local numbering is lexicographic: ``basis_index = 3*iy + ix`` with
    ``ix, iy in {0,1,2}`` indexing the lattice nodes of the reference square.
    """
    if not 0 <= basis_index <= 8:
        raise ValueError(f"local Q2 basis index must be in 0..8, got {basis_index}")
    xi, eta = float(point[0]), float(point[1])
    if not (-1.0 - 1e-12 <= xi <= 1.0 + 1e-12 and -1.0 - 1e-12 <= eta <= 1.0 + 1e-12):
        raise ValueError(f"point {point} outside the reference square")
    ix, iy = basis_index % 3, basis_index // 3
    nx, ny = _lagrange_1d(xi), _lagrange_1d(eta)
    dnx, dny = _lagrange_1d_deriv(xi), _lagrange_1d_deriv(eta)
    value = float(nx[ix] * ny[iy])
    grad = np.array([dnx[ix] * ny[iy], nx[ix] * dny[iy]])
    return value, grad


def tabulate_basis(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tabulate all 9 local basis values/reference gradients at reference points.

    Returns ``(phi, dphi)`` with shapes (npts, 9) and (npts, 9, 2).
    """
    pts = np.asarray(points, dtype=float)
    nx = _lagrange_1d(pts[:, 0])        # (npts, 3)
    ny = _lagrange_1d(pts[:, 1])
    dnx = _lagrange_1d_deriv(pts[:, 0])
    dny = _lagrange_1d_deriv(pts[:, 1])
    # local index l = 3*iy + ix
    phi = (ny[:, :, None] * nx[:, None, :]).reshape(len(pts), 9)
    dphi = np.empty((len(pts), 9, 2))
    dphi[:, :, 0] = (ny[:, :, None] * dnx[:, None, :]).reshape(len(pts), 9)
    dphi[:, :, 1] = (dny[:, :, None] * nx[:, None, :]).reshape(len(pts), 9)
    return phi, dphi


@dataclass(eq=False)
class BoundaryEdge:
    element: int
    side: str
    nodes: np.ndarray          # the 3 DOFs on the edge, ordered along it
    normal: np.ndarray         # outward unit normal
    midpoint: np.ndarray
    length: float
    tag: str | None = None     # "in" | "out" | "parallel" after classification


@dataclass(eq=False)
class Grid:
    """Uniform Q2 mesh of the unit square with nx x ny elements."""

    nx: int
    ny: int
    hx: float
    hy: float
    node_x: np.ndarray         # (ndof,) lattice x-coordinates
    node_y: np.ndarray
    connectivity: np.ndarray   # (nelem, 9) element -> global DOF
    boundary_edges: list[BoundaryEdge] = field(default_factory=list)

    @property
    def ndof(self) -> int:
        return (2 * self.nx + 1) * (2 * self.ny + 1)

    @property
    def nelem(self) -> int:
        return self.nx * self.ny

    @property
    def classified(self) -> bool:
        return all(e.tag is not None for e in self.boundary_edges)

    def element_origin(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower-left corner coordinates of every element, shape (nelem,)."""
        ey, ex = np.divmod(np.arange(self.nelem), self.nx)
        return ex * self.hx, ey * self.hy

    def quad_points_physical(self, rule: QuadRule) -> tuple[np.ndarray, np.ndarray]:
        """Physical coordinates of the quadrature points, shape (nelem, nq)."""
        x0, y0 = self.element_origin()
        xq = x0[:, None] + (rule.points[None, :, 0] + 1.0) * 0.5 * self.hx
        yq = y0[:, None] + (rule.points[None, :, 1] + 1.0) * 0.5 * self.hy
        return xq, yq

    def inflow_dofs(self) -> np.ndarray:
        """Sorted DOFs lying on edges tagged 'in'. Requires classification."""
        if not self.classified:
            raise RuntimeError("boundary not classified; call classify_boundary first")
        dofs = [e.nodes for e in self.boundary_edges if e.tag == "in"]
        if not dofs:
            return np.empty(0, dtype=int)
        return np.unique(np.concatenate(dofs))

    def interpolate(self, fn, t: float | None = None) -> np.ndarray:
        """Nodal interpolant of ``fn(x, y)`` or ``fn(t, x, y)`` on the Q2 lattice."""
        if t is None:
            return np.asarray(fn(self.node_x, self.node_y), dtype=float)
        return np.asarray(fn(t, self.node_x, self.node_y), dtype=float)


def build_grid(nx: int, ny: int, allow_odd: bool = False) -> Grid:
    """Build the Q2 grid with ``nx`` x ``ny`` elements (both even, >= 2).

    ``allow_odd`` lifts the evenness requirement; the benchmark sweeps need it
    because their mesh sizes are stated on the doubled lattice, whose interval
    count is even even when the element count is odd.
    """
    for name, n in (("nx", nx), ("ny", ny)):
        if n < 2 or (n % 2 != 0 and not allow_odd):
            raise ValueError(f"{name} must be an even element count >= 2, got {n}")
    hx, hy = 1.0 / nx, 1.0 / ny
    mx, my = 2 * nx + 1, 2 * ny + 1
    gx = np.arange(mx) * (hx / 2.0)
    gy = np.arange(my) * (hy / 2.0)
    node_x = np.tile(gx, my)
    node_y = np.repeat(gy, mx)

    conn = np.empty((nx * ny, 9), dtype=int)
    for ey in range(ny):
        for ex in range(nx):
            e = ey * nx + ex
            for ly in range(3):
                for lx in range(3):
                    gi = 2 * ex + lx
                    gj = 2 * ey + ly
                    conn[e, 3 * ly + lx] = gj * mx + gi

    edges: list[BoundaryEdge] = []

    def edge_nodes(e, side):
        local = {
            SIDE_LEFT: [0, 3, 6],
            SIDE_RIGHT: [2, 5, 8],
            SIDE_BOTTOM: [0, 1, 2],
            SIDE_TOP: [6, 7, 8],
        }[side]
        return conn[e, local]

    for ey in range(ny):
        for ex in range(nx):
            e = ey * nx + ex
            x0, y0 = ex * hx, ey * hy
            sides = []
            if ex == 0:
                sides.append((SIDE_LEFT, (0.0, y0 + hy / 2), hy))
            if ex == nx - 1:
                sides.append((SIDE_RIGHT, (1.0, y0 + hy / 2), hy))
            if ey == 0:
                sides.append((SIDE_BOTTOM, (x0 + hx / 2, 0.0), hx))
            if ey == ny - 1:
                sides.append((SIDE_TOP, (x0 + hx / 2, 1.0), hx))
            for side, mid, length in sides:
                edges.append(BoundaryEdge(
                    element=e,
                    side=side,
                    nodes=edge_nodes(e, side),
                    normal=np.array(_SIDE_NORMALS[side]),
                    midpoint=np.array(mid),
                    length=length,
                ))

    return Grid(nx=nx, ny=ny, hx=hx, hy=hy, node_x=node_x, node_y=node_y,
                connectivity=conn, boundary_edges=edges)


def edge_quadrature(edge: BoundaryEdge) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """3-point Gauss points along a boundary edge.

    Returns ``(x, y, w)`` with physical coordinates and weights including the
    edge Jacobian ``length/2``; the edge trace of the Q2 basis at parameter s
    is given by :func:`_lagrange_1d`.
    """
    s = GAUSS_1D_POINTS
    half = 0.5 * edge.length
    if edge.side in (SIDE_LEFT, SIDE_RIGHT):
        x = np.full(3, edge.midpoint[0])
        y = edge.midpoint[1] + half * s
    else:
        x = edge.midpoint[0] + half * s
        y = np.full(3, edge.midpoint[1])
    w = GAUSS_1D_WEIGHTS * half
    return x, y, w


def classify_boundary(grid: Grid, bfield, tol: float = 1e-12) -> Grid:
    """Tag every boundary edge as 'in', 'out' or 'parallel' by the sign of b.n.

    The sign is taken at the edge midpoint; the three edge Gauss points must
    agree with it, otherwise the mesh is too coarse to resolve the field and
    an error is raised.
    """
    for edge in grid.boundary_edges:
        bx, by = bfield.b(edge.midpoint[0], edge.midpoint[1])
        bn = bx * edge.normal[0] + by * edge.normal[1]
        if abs(bn) <= tol:
            tag = "parallel"
        else:
            tag = "in" if bn < 0 else "out"
        qx, qy, _ = edge_quadrature(edge)
        bqx, bqy = bfield.b(qx, qy)
        bnq = bqx * edge.normal[0] + bqy * edge.normal[1]
        if tag == "parallel":
            ok = np.all(np.abs(bnq) <= 10 * tol)
        elif tag == "in":
            ok = np.all(bnq < 0)
        else:
            ok = np.all(bnq > 0)
        if not ok:
            raise ValueError(
                f"b.n changes sign across edge at {edge.midpoint}; "
                "mesh too coarse to resolve the anisotropy field")
        edge.tag = tag
    return grid
