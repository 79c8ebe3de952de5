import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sharpsolv import (BModel, Grid3D, ModelParams, PhaseField, ScalarField,
                       SoluteConfiguration, assemble_lj_potential, default_species,
                       solve_potential)
from sharpsolv.grid import coarea_tv, tv_anisotropic
from sharpsolv.interface import (FREE, best_threshold, energy_breakdown, minimize_phase_field,
                                 phase_energy, relaxed_phase_minimizer, solve_saddle,
                                 unary_cost_field, write_saddle_report)

import _support


def _single(n=32, side=8.0, **sp):
    g = Grid3D.cube(side, n)
    cfg = SoluteConfiguration.for_grid(g, 1.0, {1: default_species(1, **sp)}, [(1, (0, 0, 0))])
    return cfg, g


# -- unary cost --------------------------------------------------------------

def test_unary_pure_pressure():
    g = Grid3D.cube(2.0, 8)
    p = ModelParams(beta=0.3, gamma=0.2, eps0=1, eps1=4)
    f = unary_cost_field(ScalarField.zeros(g), ScalarField.zeros(g), p, 0.5, BModel.zero())
    assert np.allclose(f.values, -0.3 / 0.125)
    assert np.all(minimize_phase_field(f, p.gamma, 0.5).values == 1)


def test_unary_core_forms_pocket():
    cfg, g = _single(well_depth=0.2)
    U = assemble_lj_potential(cfg, g)
    p = ModelParams(beta=0.1, gamma=0.0)
    f = unary_cost_field(ScalarField.zeros(g), U, p, 1.0)
    assert f.values[16, 16, 16] > 0
    u = minimize_phase_field(f, 0.0, 1.0)
    assert u.values[16, 16, 16] == 0 and u.values[0, 0, 0] == 1


def test_unary_additive_in_U():
    g = Grid3D.cube(12.0, 48)
    sp = {1: default_species(1)}
    a = SoluteConfiguration.for_grid(g, 1.0, sp, [(1, (-3, 0, 0))])
    b = SoluteConfiguration.for_grid(g, 1.0, sp, [(1, (3, 0, 0))])
    p = ModelParams(beta=0.5)
    z = ScalarField.zeros(g)
    fa = unary_cost_field(z, assemble_lj_potential(a, g), p, 1.0).values
    fb = unary_cost_field(z, assemble_lj_potential(b, g), p, 1.0).values
    fab = unary_cost_field(z, assemble_lj_potential(a.concat(b), g), p, 1.0).values
    assert np.array_equal(fab - fa, fb - unary_cost_field(z, z, p, 1.0).values)


def test_unary_dielectric_sign():
    # a strong field should favour solvent (more negative cost) when eps1 > eps0
    g = Grid3D.cube(2.0, 8)
    psi = ScalarField(g, g.centers()[..., 0])
    p = ModelParams(beta=0.1, eps0=1, eps1=5)
    f = unary_cost_field(psi, ScalarField.zeros(g), p, 1.0)
    assert np.all(f.values < -0.1 + 1e-15)


# -- binary minimisation ------------------------------------------------------

def test_phase_all_negative():
    g = Grid3D.cube(2.0, 6)
    f = ScalarField(g, -np.ones(g.dims))
    for gamma in (0.0, 0.1, 10.0):
        assert np.all(minimize_phase_field(f, gamma, 1.0).values == 1)


@pytest.mark.parametrize("gamma,expect", [(0.0, 0), (0.2, 1), (0.1, 0)])
def test_single_positive_cell(gamma, expect):
    # h = 1, r = 1: six faces cost 6 gamma, unary gain is 1
    g = Grid3D((0, 0, 0), 1.0, (5, 5, 5))
    fv = -np.ones(g.dims)
    fv[2, 2, 2] = 1.0
    u = minimize_phase_field(ScalarField(g, fv), gamma, 1.0)
    assert u.values[2, 2, 2] == expect
    assert u.values.sum() == g.size - (1 - expect)


def test_threshold_ties_to_solvent():
    g = Grid3D.cube(1.0, 4)
    assert np.all(minimize_phase_field(ScalarField.zeros(g), 0.0, 1.0).values == 1)


def test_invalid_inputs():
    g = Grid3D.cube(1.0, 4)
    bad = np.zeros(g.dims)
    bad[0, 0, 0] = np.inf
    with pytest.raises(ValueError):
        minimize_phase_field(ScalarField(g, bad), 0.1, 1.0)
    with pytest.raises(ValueError):
        minimize_phase_field(ScalarField.zeros(g), -0.1, 1.0)


def brute_force(f, gamma, r, fixed):
    """Exhaustive minimum over the free cells (the oracle)."""
    free = np.flatnonzero(fixed == FREE)
    best = np.inf
    base = np.where(fixed == FREE, 0, fixed).astype(np.uint8)
    for bits in itertools.product((0, 1), repeat=len(free)):
        u = base.copy()
        u.flat[free] = bits
        best = min(best, phase_energy(PhaseField(f.grid, u), f, gamma, r))
    return best


def mincut_instance(seed, n_free=12):
    rng = np.random.default_rng(seed)
    g = Grid3D((0, 0, 0), rng.uniform(0.2, 1.0), (4, 4, 4))
    f = ScalarField(g, rng.normal(scale=rng.uniform(0.5, 5.0), size=g.dims))
    fixed = rng.integers(0, 2, g.dims).astype(np.int64)
    fixed.flat[rng.choice(g.size, n_free, replace=False)] = FREE
    gamma, r = rng.uniform(0.0, 2.0), rng.uniform(0.5, 2.0)
    return f, gamma, r, fixed


@pytest.mark.parametrize("seed", range(8))
def test_mincut_matches_brute_force(seed):
    f, gamma, r, fixed = mincut_instance(seed)
    u = minimize_phase_field(f, gamma, r, fixed=fixed)
    pinned = fixed != FREE
    assert np.array_equal(u.values[pinned], fixed[pinned])
    assert phase_energy(u, f, gamma, r) == brute_force(f, gamma, r, fixed)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_gamma0_beats_random_and_rounded(seed):
    rng = np.random.default_rng(seed)
    g = Grid3D.cube(1.0, 5)
    f = ScalarField(g, rng.normal(size=g.dims))
    u = minimize_phase_field(f, 0.0, 1.0)
    E = phase_energy(u, f, 0.0, 1.0)
    for _ in range(100):
        v = PhaseField(g, rng.integers(0, 2, g.dims).astype(np.uint8))
        assert E <= phase_energy(v, f, 0.0, 1.0)
    rel = ScalarField(g, rng.random(g.dims))
    for t in rng.random(10):
        assert E <= phase_energy(PhaseField(g, (rel.values > t).astype(np.uint8)), f, 0.0, 1.0)


def test_relaxed_threshold_never_beats_mincut():
    rng = np.random.default_rng(4)
    g = Grid3D.cube(4.0, 16)
    X = g.centers()
    fv = np.where(np.linalg.norm(X, axis=-1) < 1.0, 3.0, -0.5) + 0.3 * rng.normal(size=g.dims)
    f = ScalarField(g, fv)
    gamma, r = 0.15, 1.0
    E = phase_energy(minimize_phase_field(f, gamma, r), f, gamma, r)
    final, kept = relaxed_phase_minimizer(f, gamma, r, n_iter=300, keep_iterates=50)
    assert len(kept) == 6
    for v in kept + [final]:
        e, t, _ = best_threshold(v, f, gamma, r)
        assert e >= E - 1e-8 * abs(E)
        # coarea: relaxed TV is the integral of level-set perimeters
        assert coarea_tv(v) == pytest.approx(tv_anisotropic(v), rel=1e-10)
    # and the relaxation converges towards the binary optimum
    assert phase_energy(final, f, gamma, r) == pytest.approx(E, rel=1e-3)


# -- energies and saddle -----------------------------------------------------

def test_breakdown_trivial_cases():
    g = Grid3D.cube(2.0, 16)
    cfg = SoluteConfiguration.for_grid(g, 0.5, {1: default_species(1)})
    p = ModelParams(beta=0.3, gamma=0.2, a=1.0)
    z = ScalarField.zeros(g)
    bd = energy_breakdown(cfg, PhaseField.solvent(g), z, BModel.zero(), p, g)
    assert bd.total == 0.0 and all(v == 0.0 for v in bd.as_dict().values())
    bd = energy_breakdown(cfg, PhaseField(g, np.zeros(g.dims, np.uint8)), z, BModel.zero(), p, g)
    assert bd.term_pressure == pytest.approx(0.3 / 0.125 * 8.0)
    assert bd.term_surface == pytest.approx(0.2 / 0.25 * 24.0)
    assert bd.term_lj == 0 and bd.term_electric == 0 and bd.term_rho == 0
    assert bd.total == (bd.term_rho + bd.term_pressure + bd.term_surface
                        + bd.term_lj + bd.term_electric)


def test_empty_saddle():
    g = Grid3D.cube(4.0, 16)
    cfg = SoluteConfiguration.for_grid(g, 1.0, {1: default_species(1)})
    sol = solve_saddle(cfg, BModel.zero(), _support.default_params(), g)
    assert sol.converged and sol.total == 0.0
    assert np.all(sol.u.values == 1) and not np.any(sol.psi.values)


@pytest.mark.parametrize("B", [BModel.zero(), _support.IONIC], ids=["zero", "ionic"])
def test_single_solute_saddle(B):
    cfg, g = _single()
    p = _support.default_params()
    sol = solve_saddle(cfg, B, p, g)
    assert sol.converged
    assert sol.u.values[16, 16, 16] == 0 and sol.u.values[0, 0, 0] == 1
    d = sol.breakdown.as_dict()
    assert all(np.isfinite(v) for v in d.values())
    assert sol.total == sum(d[k] for k in ("term_rho", "term_pressure", "term_surface",
                                           "term_lj", "term_electric"))
    # saddle consistency
    f = unary_cost_field(sol.psi, assemble_lj_potential(cfg, g), p, 1.0, B)
    assert minimize_phase_field(f, p.gamma, 1.0) == sol.u
    resolved = energy_breakdown(cfg, sol.u,
                                solve_potential(sol.u, _Q(cfg, g), B, 1.0, p).psi, B, p, g)
    assert abs(resolved.total - sol.total) <= 1e-8 * (1 + abs(sol.total))


def _Q(cfg, g):
    from sharpsolv import assemble_charge_density
    return assemble_charge_density(cfg, g)


def test_two_start_agreement_single():
    cfg, g = _single()
    p = _support.default_params()
    a = solve_saddle(cfg, BModel.zero(), p, g)
    X = g.centers()
    pocket = PhaseField(g, (np.linalg.norm(X, axis=-1) >= 1.4).astype(np.uint8))
    b = solve_saddle(cfg, BModel.zero(), p, g, u0=pocket)
    assert a.converged and b.converged
    assert a.u == b.u
    assert b.total == pytest.approx(a.total, rel=1e-8)


def test_saddle_perturbation_is_max_in_psi():
    cfg, g = _support.random_config(2, n_cells=24)
    p = _support.default_params()
    sol = solve_saddle(cfg, _support.IONIC, p, g, solver_tol=1e-10)
    rng = np.random.default_rng(0)
    Q = _Q(cfg, g)
    for _ in range(20):
        d = rng.normal(size=g.dims) * 1e-4
        pert = energy_breakdown(cfg, sol.u, ScalarField(g, sol.psi.values + d),
                                _support.IONIC, p, g, Q)
        assert pert.total <= sol.total + 1e-8 * abs(sol.total)


def test_pressure_monotone():
    cfg, g = _single(n=24, side=6.0)
    vols = []
    for beta in (0.02, 0.05, 0.1, 0.3, 1.0):
        sol = solve_saddle(cfg, BModel.zero(), _support.default_params(beta=beta), g)
        vols.append(sol.u.excluded_volume)
    assert all(b <= a for a, b in zip(vols, vols[1:]))
    assert vols[0] > vols[-1]


def test_report(tmp_path):
    cfg, g = _single(n=24, side=6.0)
    sol = solve_saddle(cfg, BModel.zero(), _support.default_params(), g)
    path = write_saddle_report(tmp_path / "r.json", sol, {"note": 1}, tmp_path / "fields")
    rep = json.loads(path.read_text())
    assert rep["converged"] is True and rep["note"] == 1
    assert set(rep["breakdown"]) >= {"term_rho", "term_pressure", "term_surface", "term_lj",
                                     "term_electric", "total"}
    assert (tmp_path / "fields").is_dir() and any((tmp_path / "fields").iterdir())


@pytest.mark.parametrize("seed", range(5))
def test_best_threshold_matches_level_scan(seed):
    rng = np.random.default_rng(seed)
    g = Grid3D.cube(2.0, 6)
    f = ScalarField(g, rng.normal(size=g.dims))
    v = ScalarField(g, np.round(rng.random(g.dims), 2))
    gamma = rng.uniform(0, 2)
    levels = np.unique(np.concatenate(([0.0, 1.0], v.values.ravel())))
    mids = 0.5 * (levels[:-1] + levels[1:])
    scan = min(phase_energy(PhaseField(g, (v.values > t).astype(np.uint8)), f, gamma, 1.0)
               for t in mids)
    assert best_threshold(v, f, gamma, 1.0)[0] == pytest.approx(scan, rel=1e-12, abs=1e-12)
