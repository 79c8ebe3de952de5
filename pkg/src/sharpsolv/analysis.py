"""Analytical objects of the asymptotic theory evaluated numerically.

* cell self-energies ``E_1`` on truncated domains and their ``R -> inf`` fit,
* an upper estimator for the self-energy density ``phi`` from a cluster library,
* ``H^-1`` norms of charge distributions (PDE and kernel evaluations),
* the cube-clustering construction with a re-checked certificate,
* the regime limit functionals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.optimize
import scipy.signal

from .grid import Grid3D, PhaseField, ScalarField
from .interface import SaddleSolution, solve_saddle
from .model import (BModel, ModelParams, SoluteConfiguration, SoluteSpecies)
from .pbsolver import solve_uniform_dst

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

__all__ = [
    "MADELUNG_NACL",
    "cube_integral",
    "SelfEnergyEstimate",
    "self_energy_box",
    "self_energy_truncated",
    "self_energy_sweep",
    "fit_tail",
    "phi_upper",
    "PhiEntry",
    "write_phi_table",
    "read_phi_table",
    "AtomicMeasure",
    "Hminus1Value",
    "SingularSelfTermError",
    "hminus1_norm_sq",
    "CubePartition",
    "SearchExhaustedError",
    "cluster_cubes",
    "MissingDirectionError",
    "limit_energy",
]

# Madelung constant of rock salt: the potential at a site of the alternating
# image lattice that enforces zero Dirichlet data on a cube.
MADELUNG_NACL = 1.74756459463318219


def cube_integral(order: int = 48) -> float:
    """``int_[0,1]^3 int_[0,1]^3 dx dy / |x - y|`` by a Duffy-type reduction.

    Writing the difference ``d = x - y`` the integral is
    ``8 int_[0,1]^3 prod(1 - d_i) / |d| dd``; splitting the cube into the six
    orderings of the coordinates and substituting ``d = s (1, a, a b)``
    removes the singularity and leaves a smooth integrand for Gauss-Legendre.
    """
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1)
    w = 0.5 * w
    S, A, Bq = np.meshgrid(x, x, x, indexing="ij")
    W = w[:, None, None] * w[None, :, None] * w[None, None, :]
    f = (1 - S) * (1 - S * A) * (1 - S * A * Bq) * S * A / np.sqrt(1 + A * A + (A * Bq) ** 2)
    return float(48.0 * np.sum(f * W))


# -- self-energy ---------------------------------------------------------

@dataclass
class SelfEnergyEstimate:
    xi: np.ndarray
    radii: list
    energies: list
    extrapolated: float
    fit_residual: float
    tail_exponent: float = math.nan
    tail_constant: float = math.nan
    solutions: list = field(default_factory=list, repr=False)


def self_energy_box(R: float, h: float = 0.25, multiple: int = 4):
    """Cube inscribed in ``B_R``: side ``n h`` with ``n`` a multiple of 4.

    Returns the grid and the effective radius ``sqrt(3)/2 (n + 1) h`` (the
    Dirichlet data sit at ghost centres, half a cell outside).
    """
    n = multiple * int(math.floor(2 * R / (math.sqrt(3) * h) / multiple))
    grid = Grid3D.cube(n * h, n)
    return grid, math.sqrt(3) / 2 * (n + 1) * h


def self_energy_truncated(species: SoluteSpecies, R: float, params: ModelParams,
                          B: BModel | None = None, r: float = 1.0, h: float = 0.25,
                          return_solution: bool = False, **saddle_kw):
    """``E_1(e_i delta_0; B_R)``: saddle energy of one solute at the centre."""
    need = 4 * max(species.charge_profile.support_radius, species.lj.cutoff_radius)
    if R < need:
        raise ValueError(f"R = {R} is below 4 * max(profile radius, LJ cutoff) = {need}")
    B = BModel.zero() if B is None else B
    grid, _ = self_energy_box(R, h)
    cfg = SoluteConfiguration.for_grid(grid, r, {species.id: species},
                                       [(species.id, (0.0, 0.0, 0.0))])
    sol = solve_saddle(cfg, B, params, grid, **saddle_kw)
    return (sol.total, sol) if return_solution else sol.total


def fit_tail(radii, energies):
    """Least squares ``E(R) = E_inf + C / R``; also the three-point tail exponent.

    Returns ``(E_inf, C, residual, exponent)``; ``residual`` is the largest
    absolute misfit.  The exponent solves
    ``(E1 - E2) / (E2 - E3) = (R1^-p - R2^-p) / (R2^-p - R3^-p)``
    on the last three radii.
    """
    R = np.asarray(radii, dtype=float)
    E = np.asarray(energies, dtype=float)
    A = np.column_stack([np.ones_like(R), 1.0 / R])
    (e_inf, c), *_ = np.linalg.lstsq(A, E, rcond=None)
    resid = float(np.max(np.abs(A @ np.array([e_inf, c]) - E)))
    p = math.nan
    if len(R) >= 3:
        R1, R2, R3 = R[-3:]
        E1, E2, E3 = E[-3:]
        if (E2 - E3) != 0 and (E1 - E2) / (E2 - E3) > 0:
            target = (E1 - E2) / (E2 - E3)

            def g(q):
                return (R1 ** -q - R2 ** -q) / (R2 ** -q - R3 ** -q) - target

            try:
                p = scipy.optimize.brentq(g, 1e-3, 10.0)
            except ValueError:
                p = math.nan
    return float(e_inf), float(c), resid, p


def self_energy_sweep(species: SoluteSpecies, radii, params: ModelParams,
                      B: BModel | None = None, h: float = 0.25, **saddle_kw
                      ) -> SelfEnergyEstimate:
    energies, eff, sols = [], [], []
    for R in radii:
        e, sol = self_energy_truncated(species, R, params, B, h=h, return_solution=True,
                                       **saddle_kw)
        energies.append(e)
        eff.append(self_energy_box(R, h)[1])
        sols.append(sol)
    e_inf, c, resid, p = fit_tail(eff, energies)
    xi = np.zeros(species.id)
    xi[species.id - 1] = 1.0
    return SelfEnergyEstimate(xi, list(eff), energies, e_inf, resid, p, c, sols)


# -- phi upper estimator -----------------------------------------------------

def _as_vec(v, n):
    out = np.zeros(n)
    v = np.asarray(v, dtype=float).ravel()
    out[: v.size] = v
    return out


def phi_upper(xi, cluster_library, weights=None, energies=None, energy_fn=None,
              rtol: float = 1e-12) -> float:
    """Library upper estimate ``min E_1(rho_k) / z_k`` over ``rho_k(R^3)/z_k = xi``.

    ``energies`` may hold precomputed cluster energies; otherwise
    ``energy_fn(config)`` is called.  ``weights`` are the normalisations
    ``z_k`` (default 1).
    """
    if not cluster_library:
        raise ValueError("empty cluster library")
    if weights is None:
        weights = [1.0] * len(cluster_library)
    comps = [c.composition() if isinstance(c, SoluteConfiguration) else np.asarray(c, float)
             for c in cluster_library]
    n = max(max(len(c) for c in comps), np.asarray(xi).size)
    xi = _as_vec(xi, n)
    best = math.inf
    for k, (cfg, comp, z) in enumerate(zip(cluster_library, comps, weights)):
        d = _as_vec(comp, n) / z
        if np.max(np.abs(d - xi)) > rtol * max(1.0, np.max(np.abs(xi))):
            continue
        if energies is not None:
            e = energies[k]
        elif energy_fn is not None:
            e = energy_fn(cfg)
        else:
            raise ValueError("phi_upper needs energies or an energy_fn")
        best = min(best, e / z)
    if best == math.inf:
        raise ValueError(f"no library entry has composition direction {xi.tolist()}")
    return best


@dataclass
class PhiEntry:
    direction: list
    estimate: float
    radii: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    residual: float = 0.0


def write_phi_table(path, entries) -> Path:
    """Persist estimates as TOML (an array of ``[[entry]]`` tables)."""
    def fl(x):
        return repr(float(x))

    lines = ["schema_version = 1", ""]
    for e in entries:
        lines += [
            "[[entry]]",
            "direction = [" + ", ".join(fl(x) for x in e.direction) + "]",
            f"estimate = {fl(e.estimate)}",
            "radii = [" + ", ".join(fl(x) for x in e.radii) + "]",
            "energies = [" + ", ".join(fl(x) for x in e.energies) + "]",
            f"residual = {fl(e.residual)}",
            "",
        ]
    path = Path(path)
    path.write_text("\n".join(lines))
    return path


def read_phi_table(path) -> list[PhiEntry]:
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    return [PhiEntry(list(e["direction"]), float(e["estimate"]), list(e.get("radii", [])),
                     list(e.get("energies", [])), float(e.get("residual", 0.0)))
            for e in doc.get("entry", [])]


# -- H^-1 norms ------------------------------------------------------------

@dataclass
class AtomicMeasure:
    positions: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.masses = np.asarray(self.masses, dtype=float).ravel()
        if len(self.masses) != len(self.positions):
            raise ValueError("one mass per position required")


@dataclass
class Hminus1Value:
    value: float
    method: str
    constant_convention: str
    domain: str = "free"


class SingularSelfTermError(ValueError):
    pass


def _convention(value: float, paper_convention: bool):
    # default Green's function 1/(4 pi |x|); the paper convention drops the 4 pi
    return (value * 4 * math.pi, "paper") if paper_convention else (value, "green-1/4pi")


def hminus1_norm_sq(mu, method: str = "pde", domain: str = "free",
                    paper_convention: bool = False, pad: int | None = None,
                    self_energies=None) -> Hminus1Value:
    """``||mu||^2_{H^-1} = <mu, (-Delta)^-1 mu>``.

    ``mu`` is a :class:`ScalarField` density or an :class:`AtomicMeasure`.

    * ``pde``: zero-Dirichlet solve on the field's box enlarged by ``pad``
      cells per side.  With ``domain="free"`` the monopole image energy
      ``q^2 M / (4 pi s)`` of the rock-salt image lattice is added back
      (``s`` the effective side); this is exact for centred balls and a close
      approximation for other compact, centred densities.
    * ``kernel``: pair sum with ``1/(4 pi |x - y|)``; for grid densities the
      cell self-interaction uses the exact cube integral.
    """
    if isinstance(mu, AtomicMeasure):
        if method != "kernel":
            raise ValueError("atomic measures need method='kernel'")
        x, m = mu.positions, mu.masses
        d = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=-1)
        off = ~np.eye(len(m), dtype=bool)
        if np.any(d[off] == 0):
            raise SingularSelfTermError("coincident atoms have an infinite self term")
        with np.errstate(divide="ignore"):
            K = np.where(off, 1.0 / (4 * math.pi * np.where(off, d, 1.0)), 0.0)
        val = float(m @ K @ m)
        if self_energies is not None:
            val += float(np.sum(np.asarray(self_energies, dtype=float)))
        v, conv = _convention(val, paper_convention)
        return Hminus1Value(v, "kernel", conv, "free")

    if not isinstance(mu, ScalarField):
        raise TypeError("mu must be a ScalarField or an AtomicMeasure")
    g = mu.grid
    h = g.spacing
    if not np.any(mu.values):
        v, conv = _convention(0.0, paper_convention)
        return Hminus1Value(v, method, conv, domain)

    if method == "pde":
        p = (max(g.dims) // 2 if pad is None else pad) if domain == "free" else (pad or 0)
        rho = np.pad(mu.values, p)
        psi = solve_uniform_dst(rho, 1.0 / (h * h))
        val = float(np.sum(rho * psi)) * h ** 3
        if domain == "free":
            q = float(np.sum(mu.values)) * h ** 3
            s = (max(rho.shape) + 1) * h
            val += q * q * MADELUNG_NACL / (4 * math.pi * s)
        v, conv = _convention(val, paper_convention)
        return Hminus1Value(v, "pde", conv, domain)

    if method == "kernel":
        if domain != "free":
            raise ValueError("kernel method evaluates the free-space norm only")
        m = mu.values * h ** 3
        nx, ny, nz = m.shape
        ix = np.arange(-nx + 1, nx)[:, None, None]
        iy = np.arange(-ny + 1, ny)[None, :, None]
        iz = np.arange(-nz + 1, nz)[None, None, :]
        dist = np.sqrt(ix * ix + iy * iy + iz * iz) * h
        with np.errstate(divide="ignore"):
            K = 1.0 / (4 * math.pi * dist)
        K[nx - 1, ny - 1, nz - 1] = cube_integral() / (4 * math.pi * h)
        conv_field = scipy.signal.fftconvolve(m, K, mode="valid")
        val = float(np.sum(m * conv_field))
        v, conv = _convention(val, paper_convention)
        return Hminus1Value(v, "kernel", conv, "free")
    raise ValueError(f"unknown method {method!r}")


# -- cube clustering -------------------------------------------------------

@dataclass
class CubePartition:
    delta: float
    offset: np.ndarray
    assignment: np.ndarray
    cross_interaction: float
    ring_cost: float
    interaction_bound: float
    ring_bound: float
    candidates_tried: int
    total_local_cost: float = 0.0

    @property
    def n_cubes(self) -> int:
        return len({tuple(a) for a in self.assignment})

    def certified(self) -> bool:
        return (self.cross_interaction <= self.interaction_bound
                and self.ring_cost <= self.ring_bound)


class SearchExhaustedError(RuntimeError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


# averaging over offsets: a cell lies in the frame with probability <= 6 L r / delta;
# Markov's inequality with factor 8 leaves room for the interaction bound too
FRAME_CONSTANT = 48.0


def cube_assignment(points: np.ndarray, offset, delta: float) -> np.ndarray:
    """Integer cube index of each point for cubes ``offset + k delta + [0, delta)^3``."""
    return np.floor((np.asarray(points) - np.asarray(offset)) / delta).astype(np.int64)


def split_interaction(points, masses, assignment) -> float:
    """``sum_{x in Q_k, x' not in Q_k} m m' / |x - x'|`` over ordered pairs."""
    pts = np.asarray(points, dtype=float)
    m = np.asarray(masses, dtype=float)
    if len(pts) < 2:
        return 0.0
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    split = np.any(assignment[:, None, :] != assignment[None, :, :], axis=-1)
    with np.errstate(divide="ignore"):
        inv = np.where(split, 1.0 / np.where(split, d, 1.0), 0.0)
    return float(m @ inv @ m)


def local_cost_density(u: PhaseField, params: ModelParams, r: float) -> np.ndarray:
    """Per-cell share of ``r^-2 gamma |Du| + r^-3 beta (1 - u)``.

    Each interior jump face is split between its two cells; a jump against
    the solvent ghost counts fully for the boundary cell.
    """
    g = u.grid
    h = g.spacing
    v = np.pad(u.values.astype(np.int8), 1, constant_values=1)
    faces = np.zeros(g.dims)
    c = v[1:-1, 1:-1, 1:-1]
    for a in range(3):
        for s in (-1, 1):
            nb = np.roll(v, -s, axis=a)[1:-1, 1:-1, 1:-1]
            jump = (nb != c).astype(float)
            edge = [slice(None)] * 3
            edge[a] = 0 if s == -1 else -1
            weight = np.full(g.dims, 0.5)
            weight[tuple(edge)] = 1.0
            faces += jump * weight
    return params.gamma / r ** 2 * h * h * faces + params.beta / r ** 3 * (1 - c) * h ** 3


def frame_mask(grid: Grid3D, offset, delta: float, width: float) -> np.ndarray:
    """Cells whose centre is within ``width`` of a cube face."""
    masks = []
    for a in range(3):
        t = np.mod(grid.axis_centers(a) - offset[a], delta)
        masks.append((t < width) | (t >= delta - width))
    return masks[0][:, None, None] | masks[1][None, :, None] | masks[2][None, None, :]


def cluster_cubes(points, masses=None, delta: float = 1.0, L: float = 1.0, r: float = 1.0,
                  u: PhaseField | None = None, params: ModelParams | None = None,
                  sublattice: int = 4, max_candidates: int = 128, seed: int = 0
                  ) -> CubePartition:
    """Find an offset whose cube partition meets both averaging bounds.

    Offsets are tried on a ``sublattice^3`` grid of ``[0, delta)^3`` and then
    uniformly at random.  The interaction bound is ``4 M^2 / delta``; when ``u``
    is given the frame (cells within ``L r`` of a cube face) must carry at
    most ``48 L r / delta`` of the total local cost.  Bounds are evaluated
    afresh for every candidate.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    m = np.ones(len(pts)) if masses is None else np.asarray(masses, dtype=float)
    if not delta > 2 * L * r:
        raise ValueError("need delta > 2 L r")
    Mtot = float(np.sum(np.abs(m)))
    ibound = 4 * Mtot ** 2 / delta
    cost = None
    if u is not None:
        params = params or ModelParams()
        cost = local_cost_density(u, params, r)
        total_cost = float(cost.sum())
        rbound = FRAME_CONSTANT * L * r / delta * total_cost
    else:
        total_cost, rbound = 0.0, math.inf
    rng = np.random.default_rng(seed)
    grid_offsets = (np.arange(sublattice) + 0.5) / sublattice * delta
    candidates = [np.array(o) for o in np.stack(np.meshgrid(
        grid_offsets, grid_offsets, grid_offsets, indexing="ij"), -1).reshape(-1, 3)]
    best = None
    for k in range(max_candidates):
        z0 = candidates[k] if k < len(candidates) else rng.uniform(0, delta, 3)
        asg = cube_assignment(pts, z0, delta)
        cross = split_interaction(pts, m, asg)
        ring = float(cost[frame_mask(u.grid, z0, delta, L * r)].sum()) if cost is not None else 0.0
        part = CubePartition(delta, z0, asg, cross, ring, ibound, rbound, k + 1, total_cost)
        if part.certified():
            return part
        if best is None or cross / ibound + ring / max(rbound, 1e-300) < \
                best.cross_interaction / ibound + best.ring_cost / max(rbound, 1e-300):
            best = part
    raise SearchExhaustedError(f"no certified offset among {max_candidates} candidates", best)


# -- limit functionals -----------------------------------------------------

class MissingDirectionError(KeyError):
    pass


def _phi_lookup(v, table, rtol=1e-9) -> float:
    """``phi(v)`` from the table using positive 1-homogeneity."""
    v = np.asarray(v, dtype=float)
    if not np.any(v):
        return 0.0
    for e in table:
        d = _as_vec(e.direction, max(len(e.direction), v.size))
        vv = _as_vec(v, d.size)
        k = int(np.argmax(np.abs(d)))
        lam = vv[k] / d[k]
        if lam > 0 and np.allclose(vv, lam * d, rtol=rtol, atol=rtol * np.abs(vv).max()):
            return lam * e.estimate
    raise MissingDirectionError(f"phi table has no direction parallel to {v.tolist()}")


def limit_energy(rho, regime: str, phi_table, alpha: float = 1.0, eps1: float = 1.0,
                 charges=None, paper_convention: bool = False, pde_pad: int | None = None
                 ) -> float:
    """Evaluate a regime's limit functional on a (rescaled) solute density.

    ``rho`` is either a list of atoms ``(composition_vector, position)`` or a
    list of per-species :class:`ScalarField` densities.  ``charges[i]`` is the
    total charge of species ``i + 1`` (default: all 1), so that
    ``Q_0 rho = sum_i charges[i] rho^i``.
    """
    if regime not in ("sub", "crit", "super"):
        raise ValueError("regime must be 'sub', 'crit' or 'super'")
    atoms = isinstance(rho, (list, tuple)) and rho and not isinstance(rho[0], ScalarField)
    if atoms:
        comps = [np.asarray(c, dtype=float) for c, _ in rho]
        n = max(c.size for c in comps)
        charges = np.ones(n) if charges is None else np.asarray(charges, dtype=float)
        local_sub = sum(_phi_lookup(c, phi_table) for c in comps)
        local_crit = sum(sum(ci * _phi_lookup(np.eye(n)[i], phi_table)
                             for i, ci in enumerate(_as_vec(c, n)) if ci)
                         for c in comps)
        q = np.array([_as_vec(c, n) @ charges for c in comps])
        if not np.any(q):
            coul = 0.0
        else:
            coul = hminus1_norm_sq(AtomicMeasure([p for _, p in rho], q), "kernel",
                                   paper_convention=paper_convention).value
    else:
        fields = list(rho)
        g = fields[0].grid
        n = len(fields)
        charges = np.ones(n) if charges is None else np.asarray(charges, dtype=float)
        dens = np.stack([f.values for f in fields], axis=-1) * g.cell_volume
        local_sub = 0.0
        if regime == "sub":
            for vec in dens.reshape(-1, n):
                if np.any(vec):
                    local_sub += _phi_lookup(vec, phi_table)
        totals = dens.reshape(-1, n).sum(axis=0)
        local_crit = sum(t * _phi_lookup(np.eye(n)[i], phi_table)
                         for i, t in enumerate(totals) if t)
        qfield = ScalarField(g, sum(c * f.values for c, f in zip(charges, fields)))
        coul = 0.0 if not np.any(qfield.values) else hminus1_norm_sq(
            qfield, "pde", paper_convention=paper_convention, pad=pde_pad).value
    if regime == "sub":
        return float(local_sub)
    if regime == "crit":
        return float(local_crit + alpha / (2 * eps1) * coul)
    return float(coul / (2 * eps1))
