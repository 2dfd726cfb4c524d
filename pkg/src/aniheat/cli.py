"""Command-line harness: convergence tables, Gaussian-peak runs and field dumps.

Every experiment writes deterministic, self-describing CSV with the fixed
column order (experiment, scheme, eps, h, tau, t_end, abs_l2, rel_l2,
observed_order, status); field dumps are plain text with a 3-line header.
"""

import argparse
import csv
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .assembly import l2_norm_error
from .fields import AnisotropyField, ExactSolution, MmsParams, gaussian_initial
from .grid import Grid, build_grid, classify_boundary
from .linalg import SingularMatrixError
from .schemes import NegativeStateError, RunDiagnostics, SchemeConfig, run, step, TimeState

CSV_COLUMNS = ["experiment", "scheme", "eps", "h", "tau", "t_end",
               "abs_l2", "rel_l2", "observed_order", "status"]

DEFAULT_H_SWEEP = [0.1, 0.05, 0.025, 0.0125, 0.00625]
DEFAULT_TAU_SWEEP = [0.1, 0.05, 0.025, 0.0125, 0.00625, 0.003125, 0.0015625]
GAUSSIAN_SNAPSHOT_TIMES = [0.0, 0.01, 4.5, 4.75, 5.0, 6.0]

MAX_DOFS = 2_000_000  # memory budget guard for sweep grids


@dataclass
class ExperimentSpec:
    experiment: str
    schemes: list = field(default_factory=lambda: ["P", "E_AP", "RK_AP"])
    eps_list: list = field(default_factory=lambda: [1.0, 1e-10])
    h_list: list = field(default_factory=lambda: list(DEFAULT_H_SWEEP))
    tau_list: list = field(default_factory=lambda: list(DEFAULT_TAU_SWEEP))
    tm: float = 1.0
    t_end: float | None = None
    tau: float | None = None
    grid: tuple | None = None
    steps: int | None = None
    out: str | None = None
    boundary_sources: bool = True
    init: str = "mms"
    eps: float = 1.0
    scheme: str = "E_AP"


def _grid_from_h(h: float) -> Grid:
    """Grid whose Q2 node lattice has spacing h.

    The benchmark tables quote the mesh size on the full node lattice, so an
    element spans two lattice intervals and has size 2h; h=0.1 therefore means
    a 5x5-element grid with an 11x11 node lattice.
    """
    n = int(round(1.0 / h))
    if abs(n * h - 1.0) > 1e-9 or n % 2 != 0:
        raise ValueError(f"h={h} must split the unit square into an even "
                         "number of lattice intervals")
    return _checked_grid(n // 2, n // 2, allow_odd=True)


def _checked_grid(nx: int, ny: int, allow_odd: bool = False) -> Grid:
    if (2 * nx + 1) * (2 * ny + 1) > MAX_DOFS:
        raise ValueError(f"grid {nx}x{ny} exceeds the DOF budget of {MAX_DOFS}")
    return build_grid(nx, ny, allow_odd=allow_odd)


def _mms_setup(grid: Grid, eps: float, tm: float, scheme: str, tau: float,
               boundary_sources: bool = True):
    """Classified grid, field, exact solution and scheme config for the MMS test."""
    params = MmsParams(alpha=1.0, Tm=tm, eps=eps, gamma=1.0)
    sol = ExactSolution(params)
    bfield = AnisotropyField(params.alpha)
    classify_boundary(grid, bfield)
    config = SchemeConfig(
        kind=scheme, eps=eps, tau=tau, gamma=params.gamma,
        forcing=sol.forcing,
        boundary_source=sol.boundary_source if boundary_sources else None)
    return bfield, sol, config


def _observed_orders(errors, spacings):
    """log-ratio orders between consecutive sweep rows; None where undefined."""
    orders = [None]
    for i in range(1, len(errors)):
        e0, e1 = errors[i - 1], errors[i]
        if e0 is None or e1 is None or e0 <= 0 or e1 <= 0:
            orders.append(None)
        else:
            orders.append(math.log(e0 / e1) / math.log(spacings[i - 1] / spacings[i]))
    return orders


def _mms_cell(grid: Grid, eps: float, tm: float, scheme: str, tau: float,
              t_end: float, boundary_sources: bool):
    """Run one MMS sweep cell; returns (abs_l2, rel_l2, status)."""
    bfield, sol, config = _mms_setup(grid, eps, tm, scheme, tau, boundary_sources)
    initial = grid.interpolate(sol.u, t=0.0)
    try:
        diag = run(initial, config, grid, bfield, t_end)
    except (NegativeStateError, SingularMatrixError) as exc:
        return None, None, f"FAILED({type(exc).__name__})"
    uh = diag.final_state.u_curr
    abs_err = l2_norm_error(grid, uh, sol.u, t_end, mode="absolute")
    rel_err = l2_norm_error(grid, uh, sol.u, t_end, mode="relative")
    return abs_err, rel_err, "OK"


def converge_space(spec: ExperimentSpec) -> list[dict]:
    """Spatial MMS convergence sweep (fixed small time step)."""
    tau = spec.tau if spec.tau is not None else 1e-6
    steps = spec.steps if spec.steps is not None else 100
    t_end = spec.t_end if spec.t_end is not None else steps * tau
    rows = []
    for scheme in spec.schemes:
        for eps in spec.eps_list:
            errors = []
            for h in spec.h_list:
                grid = _grid_from_h(h)
                abs_err, rel_err, status = _mms_cell(
                    grid, eps, spec.tm, scheme, tau, t_end, spec.boundary_sources)
                errors.append(abs_err)
                rows.append({"experiment": "converge-space", "scheme": scheme,
                             "eps": eps, "h": h, "tau": tau, "t_end": t_end,
                             "abs_l2": abs_err, "rel_l2": rel_err,
                             "observed_order": None, "status": status})
            for row, order in zip(rows[-len(spec.h_list):],
                                  _observed_orders(errors, spec.h_list)):
                row["observed_order"] = order
    return rows


def converge_time(spec: ExperimentSpec) -> list[dict]:
    """Temporal MMS convergence sweep on a fixed grid."""
    nx, ny = spec.grid if spec.grid is not None else (100, 100)
    t_end = spec.t_end if spec.t_end is not None else 0.1
    grid = _checked_grid(nx, ny)
    h = 0.5 / nx  # lattice spacing, matching the spatial sweep convention
    rows = []
    for scheme in spec.schemes:
        for eps in spec.eps_list:
            errors = []
            for tau in spec.tau_list:
                abs_err, rel_err, status = _mms_cell(
                    grid, eps, spec.tm, scheme, tau, t_end, spec.boundary_sources)
                errors.append(abs_err)
                rows.append({"experiment": "converge-time", "scheme": scheme,
                             "eps": eps, "h": h, "tau": tau, "t_end": t_end,
                             "abs_l2": abs_err, "rel_l2": rel_err,
                             "observed_order": None, "status": status})
            for row, order in zip(rows[-len(spec.tau_list):],
                                  _observed_orders(errors, spec.tau_list)):
                row["observed_order"] = order
    return rows


def gaussian(spec: ExperimentSpec) -> dict[str, RunDiagnostics]:
    """Gaussian-peak decay experiment; per-step min/max/L2 series per scheme.

    The default 25x25-element grid is the benchmark's 50x50 node lattice.
    """
    nx, ny = spec.grid if spec.grid is not None else (25, 25)
    tau = spec.tau if spec.tau is not None else 0.01
    t_end = spec.t_end if spec.t_end is not None else 15.0
    tm = spec.tm if spec.tm != 1.0 else 1e5
    grid = _checked_grid(nx, ny, allow_odd=True)
    bfield = AnisotropyField(1.0)
    classify_boundary(grid, bfield)
    initial = grid.interpolate(lambda x, y: gaussian_initial(tm, (x, y)))
    snapshot_steps = {int(round(t / tau)) for t in GAUSSIAN_SNAPSHOT_TIMES
                      if t <= t_end + 1e-12}
    results = {}
    for scheme in spec.schemes:
        config = SchemeConfig(kind=scheme, eps=spec.eps, tau=tau, gamma=1.0)
        snapshots = {}

        def keep(step_index, state, _snap=snapshots):
            if step_index in snapshot_steps:
                _snap[step_index] = state.u_curr.copy()

        diag = run(initial, config, grid, bfield, t_end, callbacks=[keep])
        results[scheme] = diag
        if spec.out:
            base = Path(spec.out)
            _write_series_csv(base.with_name(f"{base.stem}_{scheme}.csv"), scheme, diag)
            for step_index, values in sorted(snapshots.items()):
                path = base.with_name(f"{base.stem}_{scheme}_t{step_index * tau:g}.dat")
                write_field_dump(path, grid, step_index * tau, values)
    return results


def cn_failure(spec: ExperimentSpec) -> list[dict]:
    """Demonstrate the Crank-Nicolson breakdown for large steps, with a control."""
    nx, ny = spec.grid if spec.grid is not None else (25, 25)
    tm = spec.tm if spec.tm != 1.0 else 1e5
    steps = spec.steps if spec.steps is not None else 100
    grid = _checked_grid(nx, ny, allow_odd=True)
    bfield = AnisotropyField(1.0)
    classify_boundary(grid, bfield)
    initial = grid.interpolate(lambda x, y: gaussian_initial(tm, (x, y)))
    taus = spec.tau_list if spec.tau_list != DEFAULT_TAU_SWEEP else [0.1, 1e-16]
    report = []
    for scheme in spec.schemes if spec.schemes != ["P", "E_AP", "RK_AP"] \
            else ["CN_AP", "E_AP"]:
        for tau in taus:
            config = SchemeConfig(kind=scheme, eps=spec.eps, tau=tau, gamma=1.0)
            state = TimeState(t=0.0, u_curr=initial.copy())
            mins = [float(initial.min())]
            status, failed_step = "OK", None
            for n in range(steps):
                try:
                    state = step(state, config, grid, bfield)
                except NegativeStateError as exc:
                    status, failed_step = "NEGATIVE_STATE", n + 1
                    if exc.value is not None:
                        mins.append(exc.value)
                    break
                mins.append(float(state.u_curr.min()))
            report.append({"scheme": scheme, "tau": tau, "status": status,
                           "failed_step": failed_step, "steps_completed":
                           len(mins) - 1 if status == "OK" else failed_step - 1,
                           "min_u": mins})
    return report


def solve(spec: ExperimentSpec) -> dict:
    """Single run with a final-state field dump and optional error report."""
    nx, ny = spec.grid if spec.grid is not None else (10, 10)
    tau = spec.tau if spec.tau is not None else 1e-6
    t_end = spec.t_end if spec.t_end is not None else 100 * tau
    grid = _checked_grid(nx, ny)
    bfield = AnisotropyField(1.0)
    classify_boundary(grid, bfield)

    sol = None
    if spec.init == "mms":
        params = MmsParams(alpha=1.0, Tm=spec.tm, eps=spec.eps, gamma=1.0)
        sol = ExactSolution(params)
        initial = grid.interpolate(sol.u, t=0.0)
        config = SchemeConfig(
            kind=spec.scheme, eps=spec.eps, tau=tau, gamma=1.0,
            forcing=sol.forcing,
            boundary_source=sol.boundary_source if spec.boundary_sources else None)
    elif spec.init == "gaussian":
        initial = grid.interpolate(lambda x, y: gaussian_initial(spec.tm, (x, y)))
        config = SchemeConfig(kind=spec.scheme, eps=spec.eps, tau=tau, gamma=1.0)
    else:
        raise ValueError(f"unknown initial condition {spec.init!r}")

    diag = run(initial, config, grid, bfield, t_end,
               exact=sol.u if sol is not None else None)
    result = {"diagnostics": diag, "grid": grid,
              "final": diag.final_state.u_curr, "t_end": t_end}
    if sol is not None:
        result["abs_l2"] = l2_norm_error(grid, diag.final_state.u_curr, sol.u, t_end)
    if spec.out:
        out = Path(spec.out)
        write_field_dump(out, grid, t_end, diag.final_state.u_curr)
        _write_series_csv(out.with_suffix(".series.csv"), spec.scheme, diag)
    return result


def write_field_dump(path, grid: Grid, t: float, values: np.ndarray):
    """Row-major nodal dump: 3-line header (Nx, Ny, t), then one value per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(f"{grid.nx}\n{grid.ny}\n{t:.17g}\n")
        for v in values:
            fh.write(f"{v:.17g}\n")


def read_field_dump(path):
    with open(path) as fh:
        nx = int(fh.readline())
        ny = int(fh.readline())
        t = float(fh.readline())
        values = np.array([float(line) for line in fh if line.strip()])
    return nx, ny, t, values


def _write_series_csv(path, scheme: str, diag: RunDiagnostics):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["scheme", "t", "min_u", "max_u", "l2_u"]
        if diag.errors is not None:
            header.append("abs_l2")
        writer.writerow(header)
        for i in range(len(diag.times)):
            row = [scheme, f"{diag.times[i]:.17g}", f"{diag.min_u[i]:.17g}",
                   f"{diag.max_u[i]:.17g}", f"{diag.l2_u[i]:.17g}"]
            if diag.errors is not None:
                row.append(f"{diag.errors[i]:.17g}")
            writer.writerow(row)


def write_table_csv(path, rows: list[dict]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            out = dict(row)
            for key in ("abs_l2", "rel_l2", "observed_order"):
                val = out.get(key)
                out[key] = "" if val is None else f"{val:.17g}"
            writer.writerow({k: out.get(k, "") for k in CSV_COLUMNS})


def _parse_list(text: str) -> list[float]:
    return [float(part) for part in text.replace(",", " ").split()]


def _parse_grid(text: str) -> tuple:
    nx, ny = text.lower().split("x")
    return int(nx), int(ny)


def load_config(path) -> dict:
    """Flat key=value config file; '#' starts a comment."""
    values = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    return values


def _spec_from_args(args) -> ExperimentSpec:
    spec = ExperimentSpec(experiment=args.command)
    if args.config:
        cfg = load_config(args.config)
        mapping = {
            "scheme": lambda v: {"schemes": v.split(",") if "," in v else [v],
                                 "scheme": v.split(",")[0]},
            "eps": lambda v: {"eps_list": _parse_list(v), "eps": _parse_list(v)[0]},
            "h": lambda v: {"h_list": _parse_list(v)},
            "tau": lambda v: {"tau_list": _parse_list(v), "tau": _parse_list(v)[0]},
            "tm": lambda v: {"tm": float(v)},
            "tend": lambda v: {"t_end": float(v)},
            "t_end": lambda v: {"t_end": float(v)},
            "out": lambda v: {"out": v},
            "grid": lambda v: {"grid": _parse_grid(v)},
            "steps": lambda v: {"steps": int(v)},
            "init": lambda v: {"init": v},
            "boundary_sources": lambda v: {"boundary_sources":
                                           v.lower() not in ("0", "false", "no")},
        }
        for key, val in cfg.items():
            if key not in mapping:
                raise ValueError(f"unknown config key {key!r}")
            for attr, parsed in mapping[key](val).items():
                spec = replace(spec, **{attr: parsed})
    if args.scheme:
        spec = replace(spec, schemes=args.scheme, scheme=args.scheme[0])
    if args.eps:
        spec = replace(spec, eps_list=args.eps, eps=args.eps[0])
    if args.h:
        spec = replace(spec, h_list=args.h)
    if args.tau:
        spec = replace(spec, tau_list=args.tau, tau=args.tau[0])
    if args.tm is not None:
        spec = replace(spec, tm=args.tm)
    if args.tend is not None:
        spec = replace(spec, t_end=args.tend)
    if args.out:
        spec = replace(spec, out=args.out)
    if args.grid:
        spec = replace(spec, grid=_parse_grid(args.grid))
    if args.steps is not None:
        spec = replace(spec, steps=args.steps)
    if args.init:
        spec = replace(spec, init=args.init)
    if args.no_boundary_sources:
        spec = replace(spec, boundary_sources=False)
    return spec


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aniheat",
        description="Anisotropic nonlinear heat equation: AP schemes and experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
            ("converge-space", "spatial MMS convergence table"),
            ("converge-time", "temporal MMS convergence table"),
            ("gaussian", "Gaussian-peak decay experiment"),
            ("cn-failure", "Crank-Nicolson breakdown demonstration"),
            ("solve", "single run with field dump")]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--scheme", action="append", default=None,
                       choices=["P", "E_AP", "CN_AP", "RK_AP"])
        p.add_argument("--eps", type=_parse_list, default=None)
        p.add_argument("--h", type=_parse_list, default=None)
        p.add_argument("--tau", type=_parse_list, default=None)
        p.add_argument("--tm", type=float, default=None)
        p.add_argument("--tend", type=float, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--grid", default=None, help="NxM element counts")
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--init", default=None, choices=["mms", "gaussian"])
        p.add_argument("--no-boundary-sources", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.eps:
        args.eps = [v for part in args.eps for v in (part if isinstance(part, list) else [part])]
    for key in ("h", "tau"):
        val = getattr(args, key)
        if val:
            setattr(args, key, [v for part in val
                                for v in (part if isinstance(part, list) else [part])])
    spec = _spec_from_args(args)
    command = args.command

    if command in ("converge-space", "converge-time"):
        rows = converge_space(spec) if command == "converge-space" else converge_time(spec)
        if spec.out:
            write_table_csv(spec.out, rows)
        writer = csv.DictWriter(sys.stdout, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row.get(k))
                             for k in CSV_COLUMNS})
    elif command == "gaussian":
        results = gaussian(spec)
        for scheme, diag in results.items():
            print(f"{scheme}: {len(diag.times) - 1} steps, "
                  f"final min={diag.min_u[-1]:.6g} max={diag.max_u[-1]:.6g} "
                  f"l2={diag.l2_u[-1]:.6g}")
    elif command == "cn-failure":
        for entry in cn_failure(spec):
            tail = (f"failed at step {entry['failed_step']} "
                    f"(min u = {entry['min_u'][-1]:.4g})"
                    if entry["status"] == "NEGATIVE_STATE"
                    else f"completed {entry['steps_completed']} steps "
                         f"(min u = {entry['min_u'][-1]:.4g})")
            print(f"{entry['scheme']} tau={entry['tau']:g}: {entry['status']}, {tail}")
    elif command == "solve":
        result = solve(spec)
        if "abs_l2" in result:
            print(f"abs_l2 = {result['abs_l2']:.10g}")
        print(f"final state at t={result['t_end']:g}: "
              f"min={result['final'].min():.6g} max={result['final'].max():.6g}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
