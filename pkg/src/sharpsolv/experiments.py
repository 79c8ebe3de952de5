"""Named experiments: saddle solves, cell energies, scaling sweeps, screening
probes and cube-clustering checks, with CSV/JSON reports.

Every experiment is described by one TOML document (see
``docs/config_schema.md``).  Reports are deterministic for a fixed document
and seed: numbers are written with ``repr`` and rows keep schedule order.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .analysis import (PhiEntry, cluster_cubes, cube_integral, self_energy_sweep,
                       write_phi_table, SearchExhaustedError)
from .grid import Grid3D, write_structured_grid
from .interface import solve_saddle
from .model import (BModel, ModelParams, SoluteConfiguration, SoluteSpecies,
                    check_admissible, assemble_charge_density)
from .pbsolver import solve_potential

__all__ = [
    "KINDS",
    "ExperimentSpec",
    "ScalingReport",
    "InadmissibleConfiguration",
    "lattice_points",
    "scaling_sweep",
    "screening_probe",
    "decay_fit",
    "run",
    "write_csv",
]

KINDS = ("solve", "cell-energy", "scaling-sweep", "screening-probe", "cluster-check")


class InadmissibleConfiguration(RuntimeError):
    pass


@dataclass
class ExperimentSpec:
    kind: str
    doc: dict
    seed: int = 0
    experiment_id: str = "experiment"
    write_fields: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise cfgmod.ConfigError(f"unknown experiment kind {self.kind!r}")
        sw = self.doc.get("sweep")
        if self.kind == "scaling-sweep":
            if sw is None:
                raise cfgmod.ConfigError("scaling-sweep needs a [sweep] table")
            rs = sweep_schedule(self.doc)[0]
            # equal neighbours are allowed so K can vary at fixed r
            if any(x <= 0 for x in rs) or any(b > a for a, b in zip(rs, rs[1:])):
                raise cfgmod.ConfigError("r schedule must be positive and non-increasing")

    @classmethod
    def from_file(cls, path, seed: int | None = None) -> "ExperimentSpec":
        doc = cfgmod.load_document(path)
        return cls.from_document(doc, seed)

    @classmethod
    def from_document(cls, doc: dict, seed: int | None = None) -> "ExperimentSpec":
        if "_units" not in doc:
            doc = cfgmod.parse_units(doc)
        if "kind" not in doc:
            raise cfgmod.ConfigError("missing top-level key 'kind'")
        return cls(doc["kind"], doc, int(doc.get("seed", 0) if seed is None else seed),
                   str(doc.get("id", doc["kind"])),
                   bool(doc.get("outputs", {}).get("fields", False)))


# -- reports ---------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(_fmt(x) for x in v)
    return str(v)


def write_csv(path, rows: list[dict]) -> Path:
    """RFC-4180 CSV; the header is the union of row keys in first-seen order."""
    keys = []
    for row in rows:
        for k in row:
            if k not in keys:
                keys.append(k)
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(keys)
    for row in rows:
        w.writerow([_fmt(row[k]) if k in row else "" for k in keys])
    path = Path(path)
    path.write_bytes(buf.getvalue().encode())
    return path


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if math.isfinite(f) else repr(f)
    return v


def write_json(path, spec: ExperimentSpec, rows, summary: dict) -> Path:
    obj = {
        "experiment_id": spec.experiment_id,
        "kind": spec.kind,
        "seed": spec.seed,
        "version": __version__,
        "rows": rows,
        "summary": summary,
    }
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True))
    return path


# -- kind: solve -------------------------------------------------------------

def _run_solve(spec: ExperimentSpec, out: Path, **_):
    doc = spec.doc
    cfg, grid = cfgmod.configuration(doc)
    params, B = cfgmod.model_params(doc), cfgmod.b_model(doc)
    rep = check_admissible(cfg)
    if not rep.concentration_ok:
        raise InadmissibleConfiguration(
            f"concentration bound violated: ball mass {rep.max_ball_mass} > {cfg.concentration_bound}")
    s = doc.get("solve", {})
    sol = solve_saddle(cfg, B, params, grid, tol=float(s.get("tol", 1e-8)),
                       max_outer=int(s.get("max_outer", 50)))
    row = {"experiment_id": spec.experiment_id, "n_solutes": len(cfg.solutes)}
    row.update(sol.breakdown.as_dict())
    row.update({"outer_iterations": sol.outer_iterations, "converged": sol.converged,
                "excluded_volume": sol.u.excluded_volume,
                "psi_residual": sol.potential.residual_norm if sol.potential else 0.0})
    if spec.write_fields:
        d = out / "fields"
        d.mkdir(parents=True, exist_ok=True)
        write_structured_grid(d / "u.sg", sol.u, "u")
        write_structured_grid(d / "psi.sg", sol.psi, "psi")
    return [row], {"converged": sol.converged}, sol.converged


# -- kind: cell-energy -------------------------------------------------------

def _run_cell_energy(spec: ExperimentSpec, out: Path, **_):
    doc = spec.doc
    c = doc.get("cell", {})
    species = cfgmod.species_table(doc)
    sid = int(c.get("species", min(species) if species else 1))
    params, B = cfgmod.model_params(doc), cfgmod.b_model(doc)
    radii = [float(x) for x in c.get("radii", [8.0, 16.0, 32.0])]
    est = self_energy_sweep(species[sid], radii, params, B, h=float(c.get("h", 0.25)))
    rows = []
    for R, Reff, e, sol in zip(radii, est.radii, est.energies, est.solutions):
        rows.append({"experiment_id": spec.experiment_id, "species": sid, "R": R,
                     "R_effective": Reff, "energy": e,
                     "converged": sol.converged, **{k: v for k, v in
                                                      sol.breakdown.as_dict().items()
                                                      if k != "total"}})
    summary = {"extrapolated": est.extrapolated, "fit_residual": est.fit_residual,
               "tail_exponent": est.tail_exponent, "tail_constant": est.tail_constant}
    direction = [0.0] * max(species)
    direction[sid - 1] = 1.0
    write_phi_table(out / "phi_table.toml",
                    [PhiEntry(direction, est.extrapolated, est.radii, est.energies,
                              est.fit_residual)])
    return rows, summary, all(s.converged for s in est.solutions)


# -- kind: scaling-sweep -----------------------------------------------------

@dataclass
class ScalingReport:
    regime: str
    rows: list
    slope: float = math.nan
    slope_residual: float = math.nan
    normalized_spread: float = math.nan
    heuristic_ratio_last: float = math.nan
    model_ratio_last: float = math.nan
    max_neighbor_share: float = math.nan
    verdict: str = "inconclusive"
    summary: dict = field(default_factory=dict)


def lattice_points(K: int) -> np.ndarray:
    """Centres ``(j + 1/2) / K`` of the K^3 sub-cubes of the unit cube."""
    t = (np.arange(K) + 0.5) / K
    return np.stack(np.meshgrid(t, t, t, indexing="ij"), -1).reshape(-1, 3)


def lattice_pair_sum(K: int) -> float:
    """``sum_{z != z'} 1/|z - z'|`` over the lattice (ordered pairs)."""
    p = lattice_points(K)
    d = np.linalg.norm(p[:, None] - p[None], axis=-1)
    np.fill_diagonal(d, np.inf)
    return float(np.sum(1.0 / d))


def sweep_schedule(doc: dict):
    sw = doc["sweep"]
    rs = [cfgmod.length(doc, x, "sweep.r") for x in sw["r"]]
    if "K" in sw:
        Ks = [int(k) for k in sw["K"]]
        if len(Ks) != len(rs):
            raise cfgmod.ConfigError("sweep.K and sweep.r must have equal length")
    else:
        law = sw.get("alpha_law", {})
        p = float(law.get("p", 0.0))
        if law.get("kind", "power") != "power" or not p > 0:
            raise cfgmod.ConfigError("alpha_law must be {kind='power', p>0} or give sweep.K")
        Ks = [max(1, int(round(r ** (-p / 3.0)))) for r in rs]
    return rs, Ks


def _lattice_instance(doc: dict, species: SoluteSpecies, K: int, r: float,
                      single: bool = False):
    """Grid and configuration for one schedule point.

    The spacing is the largest ``h <= r / cells_per_r`` with ``1 / (K h)`` an
    integer, so every lattice site sits at the same sub-cell offset; the
    single-solute baseline uses the site nearest the cube centre, which
    therefore sees exactly the same discretisation as each lattice solute.
    """
    sw = doc["sweep"]
    margin = cfgmod.length(doc, sw.get("margin", 0.5), "sweep.margin")
    cells_per_r = float(sw.get("cells_per_r", 4))
    per_site = int(math.ceil(cells_per_r / (K * r) - 1e-9))
    h = 1.0 / (K * per_site)
    pad = int(math.ceil(margin / h - 1e-9))
    n = K * per_site + 2 * pad
    cap = int(sw.get("max_cells", 160))
    if n > cap:
        raise cfgmod.ConfigError(f"grid of {n}^3 cells exceeds max_cells = {cap}")
    grid = Grid3D((-pad * h,) * 3, h, (n, n, n))
    sites = lattice_points(K)
    if single:
        centre = sites[np.argmin(np.linalg.norm(sites - 0.5, axis=1))]
        pts = [tuple(centre)]
    else:
        pts = [tuple(p) for p in sites]
    M = float(doc.get("model", {}).get("M", 1.0))
    cfg = SoluteConfiguration.for_grid(grid, r, {species.id: species},
                                       [(species.id, p) for p in pts], M)
    return cfg, grid


def _sweep_point(doc, species, params, B, K, r, tol):
    cfg, grid = _lattice_instance(doc, species, K, r)
    rep = check_admissible(cfg)
    if not rep.concentration_ok:
        raise InadmissibleConfiguration(f"K={K}, r={r}: ball mass {rep.max_ball_mass}")
    sol = solve_saddle(cfg, B, params, grid, tol=tol)
    cfg1, grid1 = _lattice_instance(doc, species, K, r, single=True)
    one = solve_saddle(cfg1, B, params, grid1, tol=tol)
    return sol, one


def scaling_sweep(spec: ExperimentSpec, threads: int = 1) -> ScalingReport:
    """Run the lattice schedule and fit the regime scalings.

    Each point also solves a single solute at the cube centre in the same
    box; its electric term serves as ``e0`` and its total as the isolated
    cell energy for the neighbour-interaction share.
    """
    doc = spec.doc
    sw = doc["sweep"]
    regime = sw.get("regime", "sub")
    species = cfgmod.species_table(doc)
    sp = species[int(sw.get("species", min(species)))]
    params, B = cfgmod.model_params(doc), cfgmod.b_model(doc)
    tol = float(sw.get("tol", 1e-8))
    rs, Ks = sweep_schedule(doc)
    q = sp.total_charge
    Icube = cube_integral()

    def work(i):
        return _sweep_point(doc, sp, params, B, Ks[i], rs[i], tol)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        results = list(pool.map(work, range(len(rs))))

    rows = []
    for r, K, (sol, one) in zip(rs, Ks, results):
        M = K ** 3
        E = sol.total
        e0 = one.breakdown.term_electric
        heur = M * e0 + 2 * math.pi / (3 * params.eps1) * r * M * M * Icube
        model = M * one.total + r * q * q / (8 * math.pi * params.eps1) * lattice_pair_sum(K)
        row = {"experiment_id": spec.experiment_id, "r": r, "alpha": float(M), "K": K,
               "r_alpha": r * M}
        row.update(sol.breakdown.as_dict())
        row.update({
            "E_over_alpha": E / M,
            "E_over_r_alpha2": E / (r * M * M),
            "e0": e0,
            "E_single": one.total,
            "neighbor_share": (E - M * one.total) / E if E != 0 else 0.0,
            "heuristic": heur,
            "heuristic_ratio": E / heur if heur else math.nan,
            "model_prediction": model,
            "model_ratio": E / model if model else math.nan,
            "converged": sol.converged and one.converged,
        })
        rows.append(row)

    rep = ScalingReport(regime, rows)
    alphas = np.array([row["alpha"] for row in rows])
    Es = np.array([row["total"] for row in rows])
    if len(rows) >= 2 and np.all(Es > 0) and len(set(alphas)) > 1:
        coeffs, res, *_ = np.polyfit(np.log(alphas), np.log(Es), 1, full=True)
        rep.slope = float(coeffs[0])
        rep.slope_residual = float(math.sqrt(res[0] / len(rows))) if len(res) else 0.0
    if len(rows) >= 2:
        a, b = rows[-2]["E_over_r_alpha2"], rows[-1]["E_over_r_alpha2"]
        rep.normalized_spread = abs(a - b) / (0.5 * abs(a + b))
    rep.heuristic_ratio_last = rows[-1]["heuristic_ratio"]
    rep.model_ratio_last = rows[-1]["model_ratio"]
    rep.max_neighbor_share = max(abs(row["neighbor_share"]) for row in rows)
    if regime == "sub":
        ok = abs(rep.slope - 1) <= 0.15
        rep.verdict = "subcritical-consistent" if ok else "subcritical-violated"
    elif regime == "super":
        ok = rep.normalized_spread <= 0.10
        rep.verdict = "supercritical-consistent" if ok else "supercritical-violated"
    elif regime == "screened":
        ok = rep.max_neighbor_share <= 0.05
        rep.verdict = "screened-local" if ok else "screened-nonlocal"
    rep.summary = {"regime": regime, "slope": rep.slope, "slope_residual": rep.slope_residual,
                   "normalized_spread": rep.normalized_spread,
                   "heuristic_ratio_last": rep.heuristic_ratio_last,
                   "model_ratio_last": rep.model_ratio_last,
                   "max_neighbor_share": rep.max_neighbor_share,
                   "I_cube": Icube, "verdict": rep.verdict}
    # supercritical limit (1 / 2 eps1) ||Q_0 rho||^2 for rho / alpha -> uniform unit cube
    paper = bool(doc.get("options", {}).get("paper_convention", False))
    h1 = q * q * Icube / (4 * math.pi)
    rep.summary["hminus1_cube"] = h1 * 4 * math.pi if paper else h1
    rep.summary["hminus1_convention"] = "paper" if paper else "green-1/4pi"
    rep.summary["super_limit"] = rep.summary["hminus1_cube"] / (2 * params.eps1)
    return rep


def _run_sweep(spec: ExperimentSpec, out: Path, threads: int = 1, **_):
    rep = scaling_sweep(spec, threads)
    return rep.rows, rep.summary, all(r["converged"] for r in rep.rows)


# -- kind: screening-probe ---------------------------------------------------

def decay_fit(psi_line: np.ndarray, dist: np.ndarray, lo: float, hi: float):
    """Fit ``log(psi d) = c - d / lambda`` and ``log psi = c + s log d`` on [lo, hi]."""
    m = (dist >= lo) & (dist <= hi) & (psi_line > 0)
    if m.sum() < 3:
        raise ValueError("not enough positive samples in the fit window")
    d, p = dist[m], psi_line[m]
    s_exp, _ = np.polyfit(d, np.log(p * d), 1)
    s_pow, _ = np.polyfit(np.log(d), np.log(p), 1)
    return (-1.0 / s_exp if s_exp < 0 else math.inf), float(s_pow)


def screening_probe(spec: ExperimentSpec):
    """Potential of one solute with ``u = 1`` and the fitted decay along +x."""
    doc = spec.doc
    p = doc.get("probe", {})
    species = cfgmod.species_table(doc)
    sp = species[int(p.get("species", min(species)))]
    params, B = cfgmod.model_params(doc), cfgmod.b_model(doc)
    r = cfgmod.length(doc, p.get("r", 1.0), "probe.r")
    n = int(p.get("cells", 127))
    h = r / float(p.get("cells_per_r", 4))
    grid = Grid3D.cube(n * h, n)
    cfg = SoluteConfiguration.for_grid(grid, r, {sp.id: sp}, [(sp.id, (0.0, 0.0, 0.0))])
    Q = assemble_charge_density(cfg, grid)
    sol = solve_potential(None, Q, B, r, params)
    c = n // 2
    line = sol.psi.values[c:, c, c]
    off = grid.axis_centers(0)[c:]
    lo = float(p.get("fit_min", 2.0)) * r
    hi = float(p.get("fit_max", 10.0)) * r
    length_fit, slope = decay_fit(line, np.abs(off), lo, hi)
    if B.is_zero:
        expected = math.inf
    else:
        curv = float(B.second_derivative(np.zeros(1))[0])
        expected = math.sqrt(params.eps1 / curv) * r
    row = {"experiment_id": spec.experiment_id, "B": B.variant, "r": r, "cells": n,
           "decay_length": length_fit, "expected_length": expected,
           "length_rel_error": (length_fit / expected - 1) if math.isfinite(expected)
           else math.nan,
           "loglog_slope": slope, "electric_energy": sol.electric_energy,
           "method": sol.method}
    return row, sol


def _run_probe(spec: ExperimentSpec, out: Path, **_):
    row, sol = screening_probe(spec)
    if spec.write_fields:
        d = out / "fields"
        d.mkdir(parents=True, exist_ok=True)
        write_structured_grid(d / "psi.sg", sol.psi, "psi")
    return [row], {"decay_length": row["decay_length"], "loglog_slope": row["loglog_slope"]}, True


# -- kind: cluster-check -----------------------------------------------------

def _run_cluster(spec: ExperimentSpec, out: Path, **_):
    c = spec.doc.get("cluster", {})
    n_sets = int(c.get("n_sets", 20))
    max_points = int(c.get("max_points", 200))
    side = float(c.get("side", 10.0))
    delta = float(c.get("delta", 2.0))
    L = float(c.get("L", 1.0))
    r = float(c.get("r", 0.1))
    rng = np.random.default_rng(spec.seed)
    rows, ok = [], True
    for k in range(n_sets):
        npts = int(rng.integers(1, max_points + 1))
        pts = rng.uniform(0, side, (npts, 3))
        try:
            part = cluster_cubes(pts, None, delta, L, r, seed=spec.seed + k)
            certified = part.certified()
        except SearchExhaustedError as exc:
            part, certified = exc.best, False
        ok &= certified
        rows.append({"experiment_id": spec.experiment_id, "set": k, "points": npts,
                     "delta": delta, "offset": part.offset,
                     "cross_interaction": part.cross_interaction,
                     "interaction_bound": part.interaction_bound,
                     "candidates": part.candidates_tried, "cubes": part.n_cubes,
                     "certified": certified})
    return rows, {"all_certified": ok}, ok


RUNNERS = {"solve": _run_solve, "cell-energy": _run_cell_energy,
           "scaling-sweep": _run_sweep, "screening-probe": _run_probe,
           "cluster-check": _run_cluster}


def run(spec: ExperimentSpec, out_dir, threads: int = 1) -> int:
    """Execute ``spec`` and write ``report.csv`` and ``report.json``; 0 on success."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, summary, ok = RUNNERS[spec.kind](spec, out, threads=threads)
    write_csv(out / "report.csv", rows)
    write_json(out / "report.json", spec, rows, summary)
    return 0 if ok else 1
