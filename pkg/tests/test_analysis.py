import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sharpsolv import (BModel, ChargeProfile, Grid3D, LennardJones, ModelParams, PhaseField,
                       ScalarField, SoluteConfiguration, SoluteSpecies, default_species)
from sharpsolv.analysis import (FRAME_CONSTANT, MADELUNG_NACL, AtomicMeasure,
                                MissingDirectionError, PhiEntry, SearchExhaustedError,
                                SingularSelfTermError, cluster_cubes, cube_assignment, cube_integral,
                                fit_tail, hminus1_norm_sq, limit_energy, phi_upper,
                                read_phi_table, self_energy_box, self_energy_truncated,
                                split_interaction, write_phi_table)

# Frozen oracle: the cube double integral int int dx dy / |x - y| over [0,1]^3,
# computed independently by 10^7-sample Monte Carlo (1.88229 +- 2e-4) and by
# the closed form of the mean inverse distance in a unit cube (see below).
I_CUBE = 1.8823126443896707


def test_cube_integral_closed_form():
    s2, s3 = math.sqrt(2), math.sqrt(3)
    closed = 2 * ((1 + s2 - 2 * s3) / 5 - math.pi / 3 + math.log((1 + s2) * (2 + s3)))
    assert closed == pytest.approx(I_CUBE, rel=1e-13)


def test_cube_integral_matches_oracle():
    assert cube_integral() == pytest.approx(I_CUBE, rel=1e-10)
    assert cube_integral(24) == pytest.approx(I_CUBE, rel=1e-6)


def test_cube_integral_monte_carlo():
    rng = np.random.default_rng(0)
    x, y = rng.random((2, 400_000, 3))
    mc = np.mean(1.0 / np.linalg.norm(x - y, axis=1))
    assert mc == pytest.approx(cube_integral(), rel=1e-2)


# -- H^-1 --------------------------------------------------------------------

def test_hminus1_zero():
    g = Grid3D.cube(1.0, 8)
    for method in ("pde", "kernel"):
        assert hminus1_norm_sq(ScalarField.zeros(g), method).value == 0.0


def test_hminus1_two_atoms():
    d = 2.5
    v = hminus1_norm_sq(AtomicMeasure([[0, 0, 0], [d, 0, 0]], [1, 1]), "kernel")
    assert v.value == pytest.approx(2 / (4 * math.pi * d), rel=1e-14)
    assert v.constant_convention == "green-1/4pi"
    pv = hminus1_norm_sq(AtomicMeasure([[0, 0, 0], [d, 0, 0]], [1, 1]), "kernel",
                         paper_convention=True)
    assert pv.value == pytest.approx(2 / d, rel=1e-14) and pv.constant_convention == "paper"


def test_hminus1_self_energies_added():
    mu = AtomicMeasure([[0, 0, 0], [1, 0, 0]], [1, -1])
    base = hminus1_norm_sq(mu, "kernel").value
    assert hminus1_norm_sq(mu, "kernel", self_energies=[0.5, 0.25]).value == \
        pytest.approx(base + 0.75)


def test_hminus1_errors():
    with pytest.raises(SingularSelfTermError):
        hminus1_norm_sq(AtomicMeasure([[0, 0, 0], [0, 0, 0]], [1, 1]), "kernel")
    with pytest.raises(ValueError):
        hminus1_norm_sq(AtomicMeasure([[0, 0, 0]], [1]), "pde")
    with pytest.raises(ValueError):
        hminus1_norm_sq(ScalarField.zeros(Grid3D.cube(1, 4)) + ScalarField(
            Grid3D.cube(1, 4), np.ones((4, 4, 4))), "nope")


def test_hminus1_unit_cube_both_methods():
    g = Grid3D.cube(1.0, 24)
    mu = ScalarField(g, np.ones(g.dims))
    target = I_CUBE / (4 * math.pi)
    k = hminus1_norm_sq(mu, "kernel").value
    p = hminus1_norm_sq(mu, "pde").value
    assert k == pytest.approx(target, rel=2e-3)
    assert p == pytest.approx(k, rel=0.03)


def test_hminus1_ball_pde_matches_analytic():
    # uniform ball of charge 1, radius a: int int = 6 / (5 a), times 1 / (4 pi)
    g = Grid3D.cube(2.0, 40)
    X = g.centers()
    a = 0.6
    m = (np.linalg.norm(X, axis=-1) < a).astype(float)
    m /= m.sum() * g.cell_volume
    p = hminus1_norm_sq(ScalarField(g, m), "pde").value
    assert p == pytest.approx(6 / (5 * a) / (4 * math.pi), rel=0.03)


# -- phi estimator -----------------------------------------------------------

def test_phi_upper_single_entry_and_errors():
    lib = [np.array([1.0, 0.0])]
    assert phi_upper([1, 0], lib, energies=[2.5]) == 2.5
    with pytest.raises(ValueError):
        phi_upper([1, 0], [], energies=[])
    with pytest.raises(ValueError):
        phi_upper([0, 1], lib, energies=[2.5])
    with pytest.raises(ValueError):
        phi_upper([1, 0], lib)


def test_phi_upper_energy_fn_and_configs():
    g = Grid3D.cube(8.0, 32)
    sp = {1: default_species(1)}
    cfg = SoluteConfiguration.for_grid(g, 1.0, sp, [(1, (0, 0, 0))])
    calls = []
    v = phi_upper([1.0], [cfg], energy_fn=lambda c: calls.append(c) or 1.25)
    assert v == 1.25 and calls == [cfg]


@given(st.integers(-4, 4), st.lists(st.floats(0.1, 10), min_size=3, max_size=3))
def test_phi_upper_homogeneity(k, energies):
    lam = 2.0 ** k
    lib = [np.array([1.0, 0.0]), np.array([2.0, 0.0]), np.array([1.0, 1.0])]
    w = [1.0, 2.0, 1.0]
    for xi in ([1.0, 0.0], [1.0, 1.0]):
        base = phi_upper(xi, lib, w, energies=energies)
        scaled = phi_upper(lam * np.array(xi), lib, [z / lam for z in w], energies=energies)
        assert scaled == lam * base


def test_phi_table_roundtrip(tmp_path):
    entries = [PhiEntry([1.0, 0.0], 1.3890333956, [8.0, 16.0], [1.3, 1.35], 1e-6),
               PhiEntry([0.0, 1.0], 0.1 + 0.2)]
    back = read_phi_table(write_phi_table(tmp_path / "phi.toml", entries))
    assert back == entries


# -- self-energy ------------------------------------------------------------

def test_fit_tail_exact_law():
    R = np.array([8.0, 16.0, 32.0, 64.0])
    E = 1.5 - 0.7 / R
    e_inf, c, resid, p = fit_tail(R, E)
    assert e_inf == pytest.approx(1.5, rel=1e-12) and c == pytest.approx(-0.7, rel=1e-10)
    assert resid < 1e-12 and p == pytest.approx(1.0, rel=1e-8)
    assert fit_tail(R, 2.0 + 3.0 / R ** 2)[3] == pytest.approx(2.0, rel=1e-8)


def test_self_energy_box():
    g, R_eff = self_energy_box(8.0, 0.25)
    assert g.dims == (36, 36, 36)
    assert R_eff == pytest.approx(math.sqrt(3) / 2 * 37 * 0.25)
    assert math.sqrt(3) / 2 * g.extents[0] <= 8.0


def test_self_energy_radius_precondition():
    with pytest.raises(ValueError):
        self_energy_truncated(default_species(1), 6.0, ModelParams())


def test_self_energy_neutral_species_independent_of_eps():
    sp = SoluteSpecies(1, ChargeProfile.neutral(), LennardJones(0.1, 1.0, 2.0))
    vals = [self_energy_truncated(sp, 8.0, ModelParams(beta=0.1, gamma=0.05, eps0=1, eps1=e))
            for e in (1.0, 10.0, 80.0)]
    assert vals[0] == vals[1] == vals[2]


def test_self_energy_lower_bound_with_large_a():
    sp = default_species(1)
    a = 2.0
    E = self_energy_truncated(sp, 8.0, ModelParams(beta=0.1, gamma=0.05, a=a, eps1=10))
    # c bounds -r^-3 int u U from above: the integral of the negative LJ part
    from scipy.integrate import quad
    c = quad(lambda d: 4 * math.pi * d * d * max(-float(sp.lj(d)), 0.0),
             2 ** (1 / 6), sp.lj.cutoff_radius, limit=200)[0]
    assert E >= a - c
    assert E >= 0


# -- cube clustering -------------------------------------------------------

def test_cluster_single_point():
    part = cluster_cubes([[0.3, 0.2, 0.1]], delta=1.0, L=1.0, r=0.1)
    assert part.n_cubes == 1 and part.cross_interaction == 0.0 and part.certified()


def test_cluster_two_close_points():
    pts = np.array([[0.1, 0.2, 0.3], [0.45, 0.5, 0.1]])
    part = cluster_cubes(pts, delta=1.0, L=1.0, r=0.1)
    assert part.certified()
    # pigeonhole: some sub-lattice offset puts both points in one cube
    offs = (np.arange(4) + 0.5) / 4
    zero = [split_interaction(pts, [1, 1], cube_assignment(pts, (a, b, c), 1.0))
            for a in offs for b in offs for c in offs]
    assert min(zero) == 0.0


def test_cluster_lattice_64():
    s = 1.0
    pts = np.stack(np.meshgrid(*[np.arange(4) * s] * 3, indexing="ij"), -1).reshape(-1, 3)
    part = cluster_cubes(pts, delta=4 * s, L=1.0, r=0.1)
    # re-evaluated, not trusted
    assert part.cross_interaction == split_interaction(pts, np.ones(64), part.assignment)
    assert part.cross_interaction <= 4 * 64 ** 2 / (4 * s)
    assert part.certified()


def test_cluster_frame_bound_with_phase_field():
    g = Grid3D((0, 0, 0), 0.25, (32, 32, 32))
    X = g.centers()
    rng = np.random.default_rng(1)
    pts = rng.uniform(1, 7, (20, 3))
    u = np.ones(g.dims, np.uint8)
    for p in pts:
        u[np.linalg.norm(X - p, axis=-1) < 0.5] = 0
    params = ModelParams(beta=0.2, gamma=0.1)
    part = cluster_cubes(pts, delta=3.0, L=1.0, r=0.5, u=PhaseField(g, u), params=params)
    assert part.certified()
    assert part.ring_bound == pytest.approx(FRAME_CONSTANT * 0.5 / 3.0 * part.total_local_cost)
    assert part.ring_cost <= part.ring_bound


def test_cluster_preconditions_and_exhaustion():
    with pytest.raises(ValueError):
        cluster_cubes([[0, 0, 0]], delta=0.1, L=1.0, r=0.1)
    # all local cost sits in the frame of the first candidate offset (x = 0.125)
    g = Grid3D((0, 0, 0), 0.005, (200, 4, 4))
    u = np.ones(g.dims, np.uint8)
    u[24:26] = 0
    with pytest.raises(SearchExhaustedError) as exc:
        cluster_cubes([[0.5, 0.01, 0.01]], delta=1.0, L=1.0, r=0.01,
                      u=PhaseField(g, u), params=ModelParams(beta=1.0, gamma=1.0),
                      max_candidates=1)
    assert exc.value.best is not None
    assert exc.value.best.ring_cost > exc.value.best.ring_bound


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(2, 60))
def test_cluster_bound_property(seed, n):
    pts = np.random.default_rng(seed).uniform(0, 6, (n, 3))
    part = cluster_cubes(pts, delta=1.5, L=1.0, r=0.2, seed=seed)
    assert part.cross_interaction <= 4 * n ** 2 / 1.5
    assert part.candidates_tried <= 128


# -- limit energies ---------------------------------------------------------

TABLE = [PhiEntry([1.0, 0.0], 1.4), PhiEntry([0.0, 1.0], 0.9), PhiEntry([1.0, 1.0], 2.0)]


def test_limit_sub_atom():
    assert limit_energy([([3.0, 0.0], (0, 0, 0))], "sub", TABLE) == pytest.approx(3 * 1.4)
    assert limit_energy([([2.0, 2.0], (0, 0, 0))], "sub", TABLE) == pytest.approx(4.0)


def test_limit_crit_neutral():
    v = limit_energy([([1.0, 1.0], (0, 0, 0))], "crit", TABLE, alpha=0.7, eps1=2.0,
                     charges=[1.0, -1.0])
    assert v == 1.4 + 0.9


def test_limit_crit_charged_atoms():
    rho = [([1.0, 0.0], (0, 0, 0)), ([0.0, 1.0], (1.0, 0, 0))]
    v = limit_energy(rho, "crit", TABLE, alpha=0.5, eps1=2.0, charges=[1.0, -1.0])
    coul = -2 / (4 * math.pi)
    assert v == pytest.approx(1.4 + 0.9 + 0.5 / 4.0 * coul)


def test_limit_super_cube():
    g = Grid3D.cube(1.0, 16)
    f = ScalarField(g, np.ones(g.dims))
    v = limit_energy([f], "super", TABLE, eps1=4.0)
    assert v == pytest.approx(hminus1_norm_sq(f, "pde").value / 8.0, rel=1e-14)
    vp = limit_energy([f], "super", TABLE, eps1=4.0, paper_convention=True)
    assert vp == pytest.approx(4 * math.pi * v, rel=1e-12)


def test_limit_missing_direction():
    with pytest.raises(MissingDirectionError):
        limit_energy([([1.0, 2.0], (0, 0, 0))], "sub", TABLE)
    with pytest.raises(ValueError):
        limit_energy([([1.0, 0.0], (0, 0, 0))], "hyper", TABLE)


def test_madelung_constant():
    assert MADELUNG_NACL == pytest.approx(1.747564594633, rel=1e-12)
