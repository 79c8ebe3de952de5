"""Phase-field minimisation for fixed potential and the alternating saddle solver.

For fixed ``psi`` the energy is affine in ``u`` plus the surface term,

    F_psi(u) = const + int f_psi u + gamma r^-2 TV(u),

so the binary minimiser is obtained exactly: by thresholding when
``gamma = 0`` and by an s-t minimum cut on the 6-neighbour grid graph
otherwise.  Ghost cells are solvent (``u = 1``).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import maxflow
import numpy as np

from .grid import (Grid3D, PhaseField, ScalarField, cell_gradient_sq, face_jumps,
                   tv_anisotropic, write_structured_grid)
from .model import (BModel, ModelParams, SoluteConfiguration, assemble_charge_density,
                    assemble_lj_potential)
from .pbsolver import CG_TOL, PotentialSolution, electric_functional, solve_potential

__all__ = [
    "EnergyBreakdown",
    "SaddleSolution",
    "MaxflowOverflowError",
    "unary_cost_field",
    "phase_energy",
    "minimize_phase_field",
    "relaxed_phase_minimizer",
    "energy_breakdown",
    "solve_saddle",
    "write_saddle_report",
]

FREE = -1


class MaxflowOverflowError(ArithmeticError):
    pass


@dataclass
class EnergyBreakdown:
    term_rho: float
    term_pressure: float
    term_surface: float
    term_lj: float
    term_electric: float
    total: float = field(init=False)

    def __post_init__(self):
        self.total = (self.term_rho + self.term_pressure + self.term_surface
                      + self.term_lj + self.term_electric)

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class SaddleSolution:
    u: PhaseField
    psi: ScalarField
    breakdown: EnergyBreakdown
    outer_iterations: int
    converged: bool
    history: list = field(default_factory=list, repr=False)
    potential: PotentialSolution | None = field(default=None, repr=False)

    @property
    def total(self) -> float:
        return self.breakdown.total


# -- unary costs and the binary subproblem -----------------------------------

def unary_cost_field(psi: ScalarField, U_field: ScalarField, params: ModelParams,
                     r: float, B: BModel | None = None) -> ScalarField:
    """Per-volume coefficient of ``u`` in the energy at fixed ``psi``.

    The dielectric and ionic parts carry a minus sign: the energy contains
    ``-eps(u)/(2r)|grad psi|^2 - u r^-3 B(psi)``, so solvent is favoured where
    the field is strong.
    """
    f = (-params.beta + U_field.values) / r ** 3
    if params.eps1 != params.eps0:
        f = f - (params.eps1 - params.eps0) / (2 * r) * cell_gradient_sq(psi).values
    if B is not None and not B.is_zero:
        f = f - B.value(psi.values) / r ** 3
    return ScalarField(psi.grid, f)


def _ghost_face_counts(dims) -> np.ndarray:
    """Number of faces each cell shares with the ghost layer."""
    c = np.zeros(dims, dtype=np.int64)
    for a in range(3):
        idx = [slice(None)] * 3
        idx[a] = 0
        c[tuple(idx)] += 1
        idx[a] = -1
        c[tuple(idx)] += 1
    return c


def phase_energy(u, f: ScalarField, gamma: float, r: float) -> float:
    """``int f u + gamma r^-2 TV(u)`` for binary or relaxed ``u``."""
    h3 = f.grid.cell_volume
    return float(np.sum(f.values * np.asarray(u.values, dtype=float))) * h3 \
        + gamma / r ** 2 * tv_anisotropic(u)


def _threshold(f: np.ndarray) -> np.ndarray:
    return (f <= 0).astype(np.uint8)


def minimize_phase_field(f: ScalarField, gamma: float, r: float, grid: Grid3D | None = None,
                         fixed: np.ndarray | None = None) -> PhaseField:
    """Exact binary minimiser of ``int f u + gamma r^-2 TV_aniso(u)``.

    ``fixed`` optionally pins cells (values 0/1; ``-1`` = free).  Ties go to
    ``u = 1``.  Only the bounding box of cells with ``f > 0`` (plus one layer)
    enters the graph: clipping a cavity to an axis-aligned box never increases
    its l1 perimeter and removes only cells where ``u = 0`` cannot pay.
    """
    grid = f.grid if grid is None else grid
    fv = f.values
    if not np.all(np.isfinite(fv)):
        raise ValueError("unary cost field is not finite")
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    free = np.ones(grid.dims, bool) if fixed is None else (fixed == FREE)
    if gamma == 0:
        u = _threshold(fv)
        if fixed is not None:
            u = np.where(free, u, fixed).astype(np.uint8)
        return PhaseField(grid, u)

    cand = (fv > 0) & free
    if fixed is not None:
        cand |= fixed == 0
    u = np.ones(grid.dims, dtype=np.uint8)
    if fixed is not None:
        u[~free] = fixed[~free]
    if not cand.any():
        return PhaseField(grid, u)
    lo = [max(int(ix.min()) - 1, 0) for ix in np.nonzero(cand)]
    hi = [min(int(ix.max()) + 2, n) for ix, n in zip(np.nonzero(cand), grid.dims)]
    box = tuple(slice(a, b) for a, b in zip(lo, hi))
    sub = _mincut(fv[box], grid.spacing, gamma / r ** 2,
                  None if fixed is None else fixed[box],
                  _outside_faces(grid.dims, lo, hi))
    u[box] = sub
    return PhaseField(grid, u)


def _outside_faces(dims, lo, hi) -> np.ndarray:
    """Faces of each box cell touching the ghost layer or cells outside the box.

    Cells outside the box are solvent, so they act exactly like ghosts.
    """
    shape = tuple(b - a for a, b in zip(lo, hi))
    return _ghost_face_counts(shape)


def _mincut(f: np.ndarray, h: float, w_per_area: float, fixed, outside) -> np.ndarray:
    h3, w = h ** 3, w_per_area * h * h
    scale = float(np.max(np.abs(f))) * h3 + 6 * w
    if not math.isfinite(scale) or scale > 1e300:
        raise MaxflowOverflowError(
            "capacities overflow; rescale energies (e.g. larger r units) before the cut")
    big = 1e3 * (scale * f.size + 1.0)
    src = np.maximum(-f, 0.0) * h3 + w * outside
    snk = np.maximum(f, 0.0) * h3
    if fixed is not None:
        src = np.where(fixed == 1, big, src)
        snk = np.where(fixed == 0, big, snk)
        src = np.where(fixed == 0, 0.0, src)
        snk = np.where(fixed == 1, 0.0, snk)
    g = maxflow.Graph[float]()
    ids = g.add_grid_nodes(f.shape)
    if w > 0:
        for a in range(3):
            st = np.zeros((3, 3, 3))
            st[tuple(2 if k == a else 1 for k in range(3))] = 1
            g.add_grid_edges(ids, weights=w, structure=st, symmetric=True)
    g.add_grid_tedges(ids, src, snk)
    flow = g.maxflow()
    if not math.isfinite(flow):
        raise MaxflowOverflowError("max-flow value is not finite")
    sink_side = g.get_grid_segments(ids)
    return (~sink_side).astype(np.uint8)


def relaxed_phase_minimizer(f: ScalarField, gamma: float, r: float, n_iter: int = 500,
                            tau: float | None = None, keep_iterates: int = 0):
    """Primal-dual (Chambolle-Pock) iterations for the convex relaxation.

    Minimises ``int f u + gamma r^-2 TV(u)`` over ``0 <= u <= 1`` with ghost
    ``u = 1``.  Returns the final relaxed field and, if requested, every
    ``keep_iterates``-th iterate.
    """
    grid = f.grid
    h = grid.spacing
    # work in units of cell energies: sum h^3 f u + w sum |jump|
    c = f.values * h ** 3
    w = gamma / r ** 2 * h * h
    u = np.ones(grid.dims)
    ubar = u.copy()
    p = [np.zeros(tuple(n + (1 if k == a else 0) for k, n in enumerate(grid.dims)))
         for a in range(3)]
    L = math.sqrt(12.0)
    tau = tau or 1.0 / L
    sigma = 1.0 / (tau * L * L)
    kept = []

    def jumps(v):
        q = np.pad(v, 1, constant_values=1.0)
        return [np.diff(q[:, 1:-1, 1:-1], axis=0), np.diff(q[1:-1, :, 1:-1], axis=1),
                np.diff(q[1:-1, 1:-1, :], axis=2)]

    for k in range(n_iter):
        dj = jumps(ubar)
        for a in range(3):
            np.clip(p[a] + sigma * dj[a], -w, w, out=p[a])
        div = (p[0][1:] - p[0][:-1]) + (p[1][:, 1:] - p[1][:, :-1]) \
            + (p[2][:, :, 1:] - p[2][:, :, :-1])
        unew = np.clip(u + tau * (div - c), 0.0, 1.0)
        ubar = 2 * unew - u
        u = unew
        if keep_iterates and (k + 1) % keep_iterates == 0:
            kept.append(u.copy())
    return ScalarField(grid, u), [ScalarField(grid, v) for v in kept]


def best_threshold(urel: ScalarField, f: ScalarField, gamma: float, r: float):
    """Best binary level set ``1_{u > t}`` over all distinct levels of ``urel``."""
    v = urel.values
    g = f.grid
    levels = np.unique(np.concatenate(([0.0, 1.0], v.ravel())))
    mids = 0.5 * (levels[:-1] + levels[1:])
    # unary part: sum of f h^3 over cells with v > t
    order = np.argsort(v.ravel(), kind="stable")
    vs = v.ravel()[order]
    tail = np.concatenate((np.cumsum((f.values.ravel()[order] * g.cell_volume)[::-1])[::-1],
                           [0.0]))
    unary = tail[np.searchsorted(vs, mids, side="right")]
    # a face jumps at level t iff min <= t < max of its two values (ghosts are 1)
    q = np.pad(v, 1, constant_values=1.0)
    lo, hi = [], []
    for a in range(3):
        x = q[tuple(slice(None) if k == a else slice(1, -1) for k in range(3))]
        s0 = np.take(x, np.arange(x.shape[a] - 1), axis=a)
        s1 = np.take(x, np.arange(1, x.shape[a]), axis=a)
        lo.append(np.minimum(s0, s1).ravel())
        hi.append(np.maximum(s0, s1).ravel())
    lo, hi = np.sort(np.concatenate(lo)), np.sort(np.concatenate(hi))
    jumps = np.searchsorted(lo, mids, side="right") - np.searchsorted(hi, mids, side="right")
    energies = unary + gamma / r ** 2 * g.spacing ** 2 * jumps
    k = int(np.argmin(energies))
    t = float(mids[k])
    cand = PhaseField(g, (v > t).astype(np.uint8))
    # report the directly evaluated energy of the chosen level set
    return phase_energy(cand, f, gamma, r), t, cand


# -- energy ----------------------------------------------------------------

def energy_breakdown(config: SoluteConfiguration, u: PhaseField, psi: ScalarField,
                     B: BModel, params: ModelParams, grid: Grid3D,
                     Q: ScalarField | None = None, U: ScalarField | None = None
                     ) -> EnergyBreakdown:
    r = config.r
    if Q is None:
        Q = assemble_charge_density(config, grid)
    if U is None:
        U = assemble_lj_potential(config, grid)
    h3 = grid.cell_volume
    uval = u.values.astype(float)
    return EnergyBreakdown(
        term_rho=params.a * config.mass,
        term_pressure=params.beta / r ** 3 * float(np.sum(1.0 - uval)) * h3,
        term_surface=params.gamma / r ** 2 * grid.spacing ** 2 * face_jumps(u),
        term_lj=float(np.sum(U.values * uval)) * h3 / r ** 3,
        term_electric=electric_functional(psi, u, Q, B, r, params),
    )


# -- saddle ----------------------------------------------------------------

def solve_saddle(config: SoluteConfiguration, B: BModel, params: ModelParams, grid: Grid3D,
                 tol: float = 1e-8, max_outer: int = 50, u0: PhaseField | None = None,
                 solver_tol: float = CG_TOL, Q: ScalarField | None = None,
                 U: ScalarField | None = None) -> SaddleSolution:
    """Alternate the potential maximisation and the exact phase minimisation.

    Starts from ``u0`` (default all solvent).  Converged means the phase
    field did not change in one round and the total moved by at most
    ``tol * (1 + |total|)``.  If a phase field repeats without meeting that
    test the run is cycling and the best iterate is returned unconverged.
    """
    r = config.r
    if Q is None:
        Q = assemble_charge_density(config, grid)
    if U is None:
        U = assemble_lj_potential(config, grid)
    u = PhaseField.solvent(grid) if u0 is None else PhaseField(grid, u0.values.copy())
    seen = set()
    history = []
    best = None
    prev_total = None
    psi_prev = None
    for it in range(1, max_outer + 1):
        sol = solve_potential(u, Q, B, r, params, tol=solver_tol, psi0=psi_prev)
        psi_prev = sol.psi
        bd = energy_breakdown(config, u, sol.psi, B, params, grid, Q, U)
        history.append(bd.total)
        cur = SaddleSolution(u, sol.psi, bd, it, False, history, sol)
        if best is None or bd.total < best.breakdown.total:
            best = cur
        f = unary_cost_field(sol.psi, U, params, r, B)
        unew = minimize_phase_field(f, params.gamma, r, grid)
        if unew == u:
            if prev_total is not None and abs(bd.total - prev_total) <= tol * (1 + abs(bd.total)):
                cur.converged = True
                return cur
        elif unew.values.tobytes() in seen:
            best.history = history
            return best
        seen.add(u.values.tobytes())
        prev_total = bd.total
        u = unew
    best.history = history
    return best


def write_saddle_report(path, sol: SaddleSolution, extra: dict | None = None,
                        fields_dir=None) -> Path:
    path = Path(path)
    rep = {
        "breakdown": sol.breakdown.as_dict(),
        "outer_iterations": sol.outer_iterations,
        "converged": sol.converged,
        "history": list(map(float, sol.history)),
        "excluded_volume": sol.u.excluded_volume,
    }
    if sol.potential is not None:
        rep["potential"] = {"iterations": sol.potential.iterations,
                            "residual_norm": sol.potential.residual_norm,
                            "method": sol.potential.method}
    if extra:
        rep.update(extra)
    if fields_dir is not None:
        d = Path(fields_dir)
        d.mkdir(parents=True, exist_ok=True)
        write_structured_grid(d / "u.sg", sol.u, "u")
        write_structured_grid(d / "psi.sg", sol.psi, "psi")
    path.write_text(json.dumps(rep, indent=2, sort_keys=True))
    return path
