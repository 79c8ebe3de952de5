"""Seeded instance generators shared by the module tests and the acceptance suite."""

import numpy as np

from sharpsolv import (BModel, ChargeProfile, Grid3D, LennardJones, ModelParams,
                       SoluteConfiguration, SoluteSpecies, check_admissible)

R_MICRO = 1.0


def two_species(well_depth=0.1, spacing=1 / 8):
    """Species 1: +1 ball, species 2: -1 ball; both unit radius with a 12-6 shell."""
    lj = LennardJones(well_depth, 1.0, 2.0)
    return {
        1: SoluteSpecies(1, ChargeProfile.uniform_ball(1.0, 1.0, spacing), lj, "cation"),
        2: SoluteSpecies(2, ChargeProfile.uniform_ball(1.0, -1.0, spacing), lj, "anion"),
    }


def random_config(seed, n_cells=32, h=0.25, max_solutes=3, species=None, r=R_MICRO):
    """Admissible random configuration (M = 1) on an ``n_cells^3`` grid.

    Positions stay 2.5 r inside the box so charge and LJ supports fit.
    """
    rng = np.random.default_rng(seed)
    grid = Grid3D.cube(n_cells * h, n_cells)
    species = species or two_species()
    half = n_cells * h / 2 - 2.5 * r
    while True:
        k = int(rng.integers(1, max_solutes + 1))
        pts = rng.uniform(-half, half, (k, 3))
        ids = rng.integers(1, len(species) + 1, k)
        cfg = SoluteConfiguration.for_grid(grid, r, species,
                                           [(int(i), tuple(p)) for i, p in zip(ids, pts)], 1.0)
        if check_admissible(cfg).concentration_ok:
            return cfg, grid


def default_params(**kw):
    base = dict(beta=0.1, gamma=0.05, a=0.0, eps0=1.0, eps1=10.0, M=1.0)
    base.update(kw)
    return ModelParams(**base)


IONIC = BModel.symmetric_salt(0.5, 1.0, 1.0)
QUADRATIC = BModel.quadratic(1.0)
