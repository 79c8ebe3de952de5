"""Maximisation of the electrostatic functional for a fixed phase field.

For fixed ``u`` the potential maximises

    J_u(psi) = int Q psi - eps(u) / (2 r) |grad psi|^2 - u r^-3 B(psi)

over grid functions with zero ghost values.  Discretely the Dirichlet part is
``h / (2 r) * sum_faces eps_f (jump psi)^2`` with face coefficients equal to the
arithmetic mean of ``eps(u)`` in the two adjacent cells (ghost cells count as
solvent).  The arithmetic mean keeps ``J`` affine in ``u``, which the exact
min-cut step in :mod:`sharpsolv.interface` relies on.

Linear problems (``B`` zero or quadratic) are solved by Jacobi-preconditioned
CG, or by a fast sine transform when the coefficients are uniform.  The ionic
penalty is handled by damped Newton iterations with Armijo backtracking.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft

from . import _kernels
from .grid import Grid3D, PhaseField, ScalarField, integrate
from .model import BModel, BOverflowError, ModelParams

__all__ = [
    "PotentialSolution",
    "SolverDidNotConverge",
    "face_coefficients",
    "electric_functional",
    "dirichlet_energy",
    "solve_potential",
    "solve_uniform_dst",
    "comparison_bound",
    "verify_comparison",
    "dual_bound_check",
    "write_trace_csv",
]

CG_TOL = 1e-8
NEWTON_C1 = 1e-4


class SolverDidNotConverge(RuntimeError):
    """Raised when an iteration limit is hit; ``best`` holds the last iterate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass
class PotentialSolution:
    psi: ScalarField
    electric_energy: float
    residual_norm: float
    iterations: int
    converged: bool = True
    method: str = "cg"
    trace: list = field(default_factory=list, repr=False)


# -- discrete functional ---------------------------------------------------

def face_coefficients(u: PhaseField | None, params: ModelParams, grid: Grid3D):
    """Face permittivities: arithmetic mean of eps(u) over the two sides."""
    if u is None:
        uval = np.ones(grid.dims)
    else:
        uval = u.values.astype(float)
    eps = params.eps(np.pad(uval, 1, constant_values=1.0))
    ex = 0.5 * (eps[1:, 1:-1, 1:-1] + eps[:-1, 1:-1, 1:-1])
    ey = 0.5 * (eps[1:-1, 1:, 1:-1] + eps[1:-1, :-1, 1:-1])
    ez = 0.5 * (eps[1:-1, 1:-1, 1:] + eps[1:-1, 1:-1, :-1])
    return ex, ey, ez


def _is_uniform(u: PhaseField | None, params: ModelParams) -> bool:
    return params.eps0 == params.eps1 or u is None or bool(np.all(u.values == 1))


def _uvalues(u: PhaseField | None, grid: Grid3D) -> np.ndarray:
    return np.ones(grid.dims) if u is None else u.values.astype(float)


def dirichlet_energy(psi: ScalarField, u: PhaseField | None, params: ModelParams,
                     r: float) -> float:
    """``int eps(u) / (2 r) |grad psi|^2`` on the face-staggered stencil."""
    g = psi.grid
    p = np.ascontiguousarray(psi.values)
    if _is_uniform(u, params):
        e = params.eps1 if u is None or np.all(u.values == 1) else params.eps0
        s = e * _kernels.uniform_face_energy_sum(p)
    else:
        s = _kernels.face_energy_sum(p, *face_coefficients(u, params, g))
    return g.spacing * s / (2.0 * r)


def ionic_energy(psi: ScalarField, u: PhaseField | None, B: BModel, r: float) -> float:
    """``r^-3 int u B(psi)``."""
    if B.is_zero:
        return 0.0
    uval = _uvalues(u, psi.grid)
    return float(np.sum(uval * B.value(psi.values))) * psi.grid.cell_volume / r ** 3


def electric_functional(psi: ScalarField, u: PhaseField | None, Q: ScalarField,
                        B: BModel, r: float, params: ModelParams) -> float:
    """Value of ``J_u(psi)`` (the electric term of the energy at this psi)."""
    return (float(np.sum(Q.values * psi.values)) * psi.grid.cell_volume
            - dirichlet_energy(psi, u, params, r) - ionic_energy(psi, u, B, r))


# -- linear solvers --------------------------------------------------------

def _dst_eigenvalues(n: int) -> np.ndarray:
    k = np.arange(1, n + 1)
    return 2.0 - 2.0 * np.cos(np.pi * k / (n + 1))


def solve_uniform_dst(rhs: np.ndarray, coef: float, shift: float = 0.0,
                      workers: int | None = None) -> np.ndarray:
    """Direct solve of ``(coef * L + shift) psi = rhs`` with zero ghosts.

    ``L`` is the unscaled 7-point Dirichlet stencil (6 on the diagonal), so
    ``coef`` carries the ``1 / h^2``.

    The discrete Dirichlet Laplacian is diagonal in the type-I sine basis, so
    three transforms each way suffice.  Works in place on a copy of ``rhs``.
    """
    x = np.array(rhs, dtype=float, order="C", copy=True)
    for a in range(3):
        x = scipy.fft.dst(x, type=1, axis=a, overwrite_x=True, workers=workers)
    lam = [_dst_eigenvalues(n) for n in x.shape]
    denom = coef * (lam[0][:, None] + lam[1][None, :]) + shift
    for k in range(x.shape[2]):
        # slab-wise to avoid a full-size temporary
        x[:, :, k] /= denom + coef * lam[2][k]
    for a in range(3):
        x = scipy.fft.dst(x, type=1, axis=a, overwrite_x=True, workers=workers)
    x *= 1.0 / np.prod([2.0 * (n + 1) for n in x.shape])
    return x


def _linear_shift(u: PhaseField | None, B: BModel, r: float, grid: Grid3D,
                  psi: np.ndarray | None = None) -> np.ndarray:
    if B.is_zero:
        return np.zeros(grid.dims)
    curv = B.second_derivative(psi) if psi is not None else B.stiffness
    return _uvalues(u, grid) * curv / r ** 3


def _cg(rhs, x0, faces, shift, coef, tol, maxiter):
    trace = np.zeros(maxiter + 1)
    x = np.ascontiguousarray(x0, dtype=float).copy()
    it, res = _kernels.pcg(np.ascontiguousarray(rhs, dtype=float), x, *faces,
                           np.ascontiguousarray(shift, dtype=float), coef, tol,
                           maxiter, trace)
    return x, int(it), float(res), trace[: it + 1]


def _gradient(psi, Q, faces, coef, u, B, r):
    """Ascent direction of J per unit volume: Q - A_eps psi - u r^-3 B'(psi)."""
    out = np.empty_like(psi)
    _kernels.apply_operator(psi, *faces, np.zeros_like(psi), coef, out)
    g = Q - out
    if not B.is_zero:
        g -= u * B.derivative(psi) / r ** 3
    return g


# -- public solver ---------------------------------------------------------

def solve_potential(u: PhaseField | None, Q: ScalarField, B: BModel, r: float,
                    params: ModelParams, tol: float = CG_TOL, psi0=None,
                    maxiter: int = 20000, max_newton: int = 100,
                    method: str = "auto", workers: int | None = None) -> PotentialSolution:
    """Maximise ``J_u`` for fixed ``u``.

    ``method`` is ``"auto"``, ``"cg"`` or ``"dst"`` (uniform coefficients
    only).  For the ionic model ``tol`` scales the Newton stopping rule
    ``||grad J|| <= tol * (1 + ||Q||)``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    grid = Q.grid
    if u is not None and u.grid != grid:
        raise ValueError("u and Q live on different grids")
    if not Q.is_finite():
        raise FloatingPointError("charge density contains NaN/inf")
    h = grid.spacing
    coef = 1.0 / (r * h * h)
    uval = _uvalues(u, grid)
    Qv = Q.values

    uniform_eps = _is_uniform(u, params)
    uniform_shift = B.is_zero or (B.variant == "quadratic" and np.all(uval == uval.flat[0]))
    if method == "dst" and not (uniform_eps and uniform_shift and B.is_linear):
        raise ValueError("dst method needs uniform coefficients and a linear B")

    if not np.any(Qv):
        # B >= 0 with B(0) = 0 makes psi = 0 the maximiser
        psi = ScalarField(grid, np.zeros(grid.dims))
        return PotentialSolution(psi, 0.0, 0.0, 0, True, "trivial",
                                 [(0, 0.0, 0.0)])

    if B.is_linear:
        if method == "dst" or (method == "auto" and uniform_eps and uniform_shift
                               and psi0 is None):
            eps = params.eps1 if np.all(uval == 1) else params.eps0
            shift = float(_linear_shift(u, B, r, grid).flat[0]) if not B.is_zero else 0.0
            x = solve_uniform_dst(Qv, coef * eps, shift, workers)
            res = math.sqrt(_kernels.uniform_residual_sq(x, Qv, coef * eps, shift))
            res /= max(float(np.linalg.norm(Qv)), 1e-300)
            psi = ScalarField(grid, x)
            E = electric_functional(psi, u, Q, B, r, params)
            return PotentialSolution(psi, E, res, 1, res <= max(tol, 1e-10), "dst",
                                     [(1, res, E)])
        faces = face_coefficients(u, params, grid)
        shift = _linear_shift(u, B, r, grid)
        x0 = np.zeros(grid.dims) if psi0 is None else _values(psi0)
        x, it, res, tr = _cg(Qv, x0, faces, shift, coef, tol, maxiter)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError("CG produced non-finite values")
        psi = ScalarField(grid, x)
        E = electric_functional(psi, u, Q, B, r, params)
        trace = [(i, float(t), math.nan) for i, t in enumerate(tr)]
        trace[-1] = (it, res, E)
        sol = PotentialSolution(psi, E, res, it, res <= tol, "cg", trace)
        if not sol.converged:
            raise SolverDidNotConverge(
                f"CG stopped at relative residual {res:.3e} after {it} iterations", sol)
        return sol

    return _newton(u, Q, B, r, params, tol, psi0, maxiter, max_newton)


def _values(psi0):
    return np.asarray(psi0.values if isinstance(psi0, ScalarField) else psi0, dtype=float)


def _newton(u, Q, B, r, params, tol, psi0, maxiter, max_newton):
    grid = Q.grid
    h = grid.spacing
    coef = 1.0 / (r * h * h)
    uval = _uvalues(u, grid)
    Qv = Q.values
    faces = face_coefficients(u, params, grid)
    qnorm = float(np.linalg.norm(Qv))
    target = tol * (1.0 + qnorm)

    if psi0 is None:
        # Debye-Hueckel start: linearisation of B at 0
        shift0 = uval * B.second_derivative(np.zeros(1))[0] / r ** 3
        x, _, _, _ = _cg(Qv, np.zeros(grid.dims), faces, shift0, coef, 1e-6, maxiter)
        try:
            B.value(x)
        except BOverflowError:
            x = np.zeros(grid.dims)
    else:
        x = _values(psi0).copy()

    def J(v):
        return electric_functional(ScalarField(grid, v), u, Q, B, r, params)

    E = J(x)
    g = _gradient(x, Qv, faces, coef, uval, B, r)
    gnorm = float(np.linalg.norm(g))
    trace = [(0, gnorm, E)]
    total_cg = 0
    for k in range(1, max_newton + 1):
        if gnorm <= target:
            break
        shift = uval * B.second_derivative(x) / r ** 3
        inner = min(1e-2, max(1e-12, 0.1 * gnorm / (1.0 + qnorm)))
        d, it, _, _ = _cg(g, np.zeros(grid.dims), faces, shift, coef, inner, maxiter)
        total_cg += it
        slope = float(np.sum(g * d)) * grid.cell_volume
        t = 1.0
        while True:
            trial = x + t * d
            try:
                Et = J(trial)
            except BOverflowError:
                Et = -math.inf
            if Et >= E + NEWTON_C1 * t * slope:
                break
            t *= 0.5
            if t < 1e-12:
                raise SolverDidNotConverge("Newton line search failed",
                                           PotentialSolution(ScalarField(grid, x), E, gnorm,
                                                             k, False, "newton", trace))
        x, E = trial, Et
        if not np.all(np.isfinite(x)):
            raise FloatingPointError("Newton produced non-finite values")
        g = _gradient(x, Qv, faces, coef, uval, B, r)
        gnorm = float(np.linalg.norm(g))
        trace.append((k, gnorm, E))
    converged = gnorm <= target
    sol = PotentialSolution(ScalarField(grid, x), E, gnorm / (1.0 + qnorm),
                            len(trace) - 1, converged, "newton", trace)
    if not converged:
        raise SolverDidNotConverge(
            f"Newton stopped with gradient norm {gnorm:.3e} > {target:.3e}", sol)
    return sol


# -- certificates ----------------------------------------------------------

def comparison_bound(u: PhaseField | None, Q_plus: ScalarField, r: float,
                     params: ModelParams, tol: float = 1e-10) -> ScalarField:
    """Potential of the positive charge alone with no ionic penalty."""
    if np.any(Q_plus.values < 0):
        raise ValueError("comparison_bound expects a nonnegative charge density")
    return solve_potential(u, Q_plus, BModel.zero(), r, params, tol=tol).psi


def verify_comparison(psi: ScalarField, psi_bar: ScalarField, rel: float = 1e-10) -> bool:
    scale = float(np.max(np.abs(psi_bar.values))) if psi_bar.values.size else 0.0
    return bool(np.all(psi.values <= psi_bar.values + rel * scale))


def dual_bound_check(sol: PotentialSolution, u: PhaseField | None, Q: ScalarField,
                     B: BModel, r: float, params: ModelParams, c: float):
    """Dirichlet plus ionic energy of the maximiser against ``E / min(c, 1)``."""
    lhs = dirichlet_energy(sol.psi, u, params, r) + ionic_energy(sol.psi, u, B, r)
    rhs = sol.electric_energy / min(c, 1.0)
    return lhs, rhs, bool(lhs <= rhs * (1 + 1e-6) + 1e-300)


def write_trace_csv(path, sol: PotentialSolution) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "residual", "energy"])
        for row in sol.trace:
            w.writerow([row[0], repr(float(row[1])), repr(float(row[2]))])
    return path
