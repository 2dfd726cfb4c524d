"""One-step advance operators for the four time discretizations.

P is the standard linearized implicit Euler discretization of the singularly
perturbed problem; E_AP, CN_AP and RK_AP act on the reformulated coupled
(u, q) system. CN_AP is kept deliberately fragile: a nonpositive state is an
error, never clamped, because its blow-up for large steps is part of what the
harness demonstrates.
"""

import math
from dataclasses import dataclass

import numpy as np

from .assembly import (NonpositiveStateError, assemble_boundary_source,
                       assemble_load, assemble_mass, assemble_par,
                       assemble_par_nl, assemble_perp, assemble_robin,
                       element_cache, l2_norm, quad_values)
from .grid import Grid
from .linalg import BlockSystem, compose, lu_solve

RK_LAMBDA = 1.0 - 1.0 / math.sqrt(2.0)

SCHEME_KINDS = ("P", "E_AP", "CN_AP", "RK_AP")


class NegativeStateError(RuntimeError):
    """A scheme produced or was fed a nonpositive state at a quadrature point."""

    def __init__(self, message, location=None, value=None, step=None):
        super().__init__(message)
        self.location = location
        self.value = value
        self.step = step


@dataclass(frozen=True)
class SchemeConfig:
    kind: str
    eps: float
    tau: float
    gamma: float = 1.0
    exponent: float = 2.5
    lam: float = RK_LAMBDA
    forcing: object = None           # f(t, x, y), vectorized
    boundary_source: object = None   # g(t, x, y, nx, ny, tag), vectorized

    def __post_init__(self):
        if self.kind not in SCHEME_KINDS:
            raise ValueError(f"unknown scheme {self.kind!r}; expected one of {SCHEME_KINDS}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.kind == "RK_AP" and abs(self.lam - RK_LAMBDA) > 1e-15:
            raise ValueError("RK_AP requires lambda = 1 - 1/sqrt(2)")


@dataclass
class TimeState:
    t: float
    u_curr: np.ndarray
    u_prev: np.ndarray | None = None
    q_curr: np.ndarray | None = None
    stage1_u: np.ndarray | None = None   # diagnostic: first RK stage


@dataclass
class RunDiagnostics:
    times: np.ndarray
    min_u: np.ndarray
    max_u: np.ndarray
    l2_u: np.ndarray
    errors: np.ndarray | None = None
    final_state: TimeState | None = None


class _Operators:
    """Time-independent matrices for one (grid, field, gamma) combination."""

    def __init__(self, grid: Grid, field_, gamma: float):
        self.mass = assemble_mass(grid)
        self.perp = assemble_perp(grid, field_)
        self.par = assemble_par(grid, field_)
        self.robin = assemble_robin(grid, gamma)
        self.q_fixed = grid.inflow_dofs()


def _operators(grid: Grid, field_, gamma: float) -> _Operators:
    # cached on the grid so it cannot outlive it; the direction field is a
    # frozen dataclass, hence a usable key
    store = getattr(grid, "_operator_cache", None)
    if store is None:
        store = {}
        grid._operator_cache = store
    key = (field_, float(gamma))
    ops = store.get(key)
    if ops is None:
        ops = _Operators(grid, field_, gamma)
        store[key] = ops
    return ops


def _source(config: SchemeConfig, grid: Grid, t: float) -> np.ndarray:
    rhs = np.zeros(grid.ndof)
    if config.forcing is not None:
        rhs += assemble_load(grid, config.forcing, t)
    if config.boundary_source is not None:
        rhs += assemble_boundary_source(grid, config.boundary_source, t)
    return rhs


def _nonlinear(grid, field_, state, config) -> "np.ndarray":
    try:
        return assemble_par_nl(grid, field_, state, exponent=config.exponent)
    except NonpositiveStateError as exc:
        raise NegativeStateError(str(exc), location=exc.location, value=exc.value) from exc


def _check_new_state(grid: Grid, u_new: np.ndarray):
    psi = quad_values(grid, u_new)
    if np.any(psi <= 0.0):
        cache = element_cache(grid)
        e, q = np.unravel_index(np.argmin(psi), psi.shape)
        raise NegativeStateError(
            f"new state nonpositive at quadrature point "
            f"({cache.xq[e, q]:.4f}, {cache.yq[e, q]:.4f}): {psi[e, q]:.4e}",
            location=(float(cache.xq[e, q]), float(cache.yq[e, q])),
            value=float(psi[e, q]))


def step_p(state: TimeState, config: SchemeConfig, grid: Grid, field_) -> TimeState:
    """Implicit Euler on the singularly perturbed problem (no reformulation)."""
    ops = _operators(grid, field_, config.gamma)
    tau = config.tau
    nl = _nonlinear(grid, field_, state.u_curr, config)
    mat = ops.mass + tau * (ops.perp + ops.robin + nl / config.eps)
    rhs = ops.mass @ state.u_curr + tau * _source(config, grid, state.t + tau)
    u_new = lu_solve(mat, rhs)
    return TimeState(t=state.t + tau, u_curr=u_new, u_prev=state.u_curr)


def _solve_block(ops, uu, uq, qu, qq, rhs_u, rhs_q):
    system = BlockSystem(uu=uu, uq=uq, qu=qu, qq=qq,
                         rhs_u=rhs_u, rhs_q=rhs_q, q_fixed=ops.q_fixed)
    mat, rhs = compose(system)
    sol = lu_solve(mat, rhs)
    n = uu.shape[0]
    return sol[:n], sol[n:]


def step_e_ap(state: TimeState, config: SchemeConfig, grid: Grid, field_) -> TimeState:
    """Implicit Euler on the AP-reformulated coupled (u, q) system."""
    ops = _operators(grid, field_, config.gamma)
    tau = config.tau
    nl = _nonlinear(grid, field_, state.u_curr, config)
    u_new, q_new = _solve_block(
        ops,
        uu=ops.mass + tau * (ops.perp + ops.robin),
        uq=tau * ops.par,
        qu=nl,
        qq=-config.eps * ops.par,
        rhs_u=ops.mass @ state.u_curr + tau * _source(config, grid, state.t + tau),
        rhs_q=np.zeros(grid.ndof),
    )
    return TimeState(t=state.t + tau, u_curr=u_new, u_prev=state.u_curr, q_curr=q_new)


def step_cn_ap(state: TimeState, config: SchemeConfig, grid: Grid, field_) -> TimeState:
    """Linearized Crank-Nicolson on the coupled system (not AP; may blow up)."""
    ops = _operators(grid, field_, config.gamma)
    tau = config.tau
    u, up = state.u_curr, state.u_prev if state.u_prev is not None else state.u_curr
    extrapolant = 0.5 * (3.0 * u - up)
    nl = _nonlinear(grid, field_, extrapolant, config)
    half = 0.5 * tau * (ops.perp + ops.robin)
    load = 0.5 * tau * (_source(config, grid, state.t)
                        + _source(config, grid, state.t + tau))
    u_new, q_new = _solve_block(
        ops,
        uu=ops.mass + half,
        uq=tau * ops.par,
        qu=0.5 * nl,
        qq=-config.eps * ops.par,
        rhs_u=ops.mass @ u - half @ u + load,
        rhs_q=-0.5 * (nl @ u),
    )
    _check_new_state(grid, u_new)
    return TimeState(t=state.t + tau, u_curr=u_new, u_prev=u, q_curr=q_new)


def step_rk_ap(state: TimeState, config: SchemeConfig, grid: Grid, field_) -> TimeState:
    """Two-stage L-stable DIRK on the coupled system (second order, AP)."""
    ops = _operators(grid, field_, config.gamma)
    tau, lam = config.tau, config.lam
    u, up = state.u_curr, state.u_prev if state.u_prev is not None else state.u_curr
    mu = ops.mass @ u

    def stage(extrapolant, t_stage, rhs_extra):
        nl = _nonlinear(grid, field_, extrapolant, config)
        return _solve_block(
            ops,
            uu=ops.mass + tau * lam * (ops.perp + ops.robin),
            uq=tau * lam * ops.par,
            qu=nl,
            qq=-config.eps * ops.par,
            rhs_u=mu + rhs_extra + tau * lam * _source(config, grid, t_stage),
            rhs_q=np.zeros(grid.ndof),
        )

    u1, _ = stage(u + lam * (u - up), state.t + lam * tau, 0.0)
    u2, q2 = stage(u + (u - up), state.t + tau,
                   (1.0 - lam) / lam * (ops.mass @ u1 - mu))
    _check_new_state(grid, u2)
    return TimeState(t=state.t + tau, u_curr=u2, u_prev=u, q_curr=q2, stage1_u=u1)


_STEPPERS = {"P": step_p, "E_AP": step_e_ap, "CN_AP": step_cn_ap, "RK_AP": step_rk_ap}


def step(state: TimeState, config: SchemeConfig, grid: Grid, field_) -> TimeState:
    return _STEPPERS[config.kind](state, config, grid, field_)


def run(initial: np.ndarray, config: SchemeConfig, grid: Grid, field_,
        t_end: float, callbacks=None, exact=None) -> RunDiagnostics:
    """Advance from t=0 to t_end, recording per-step diagnostics.

    ``t_end`` must be an integer multiple of the time step. The multi-level
    schemes bootstrap their history with u^{-1} := u^0 on the first step.
    ``exact(t, x, y)``, when given, adds an absolute L2 error series.
    ``callbacks`` are called as cb(step_index, state) after every record.
    """
    nsteps_f = t_end / config.tau
    nsteps = int(round(nsteps_f))
    if abs(nsteps_f - nsteps) > 1e-12 * max(1.0, abs(nsteps_f)):
        raise ValueError(f"t_end={t_end} is not an integer multiple of tau={config.tau}")

    state = TimeState(t=0.0, u_curr=np.asarray(initial, dtype=float))
    times, mins, maxs, norms, errs = [], [], [], [], []

    def record(st):
        times.append(st.t)
        mins.append(float(np.min(st.u_curr)))
        maxs.append(float(np.max(st.u_curr)))
        norms.append(l2_norm(grid, st.u_curr))
        if exact is not None:
            from .assembly import l2_norm_error
            errs.append(l2_norm_error(grid, st.u_curr, exact, st.t))

    record(state)
    if callbacks:
        for cb in callbacks:
            cb(0, state)

    for n in range(nsteps):
        try:
            state = step(state, config, grid, field_)
        except NegativeStateError as exc:
            exc.step = n + 1
            raise
        record(state)
        if callbacks:
            for cb in callbacks:
                cb(n + 1, state)

    return RunDiagnostics(
        times=np.array(times), min_u=np.array(mins), max_u=np.array(maxs),
        l2_u=np.array(norms),
        errors=np.array(errs) if exact is not None else None,
        final_state=state)
