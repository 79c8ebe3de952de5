# %% [markdown]
# # Cell energies and the upper envelope phi
#
# An isolated solute in a ball of radius R carries an energy that settles
# down as R grows; the tail decays like 1/R.  These single-solute energies,
# together with small clusters, give an upper envelope phi on charge
# vectors, which is positively 1-homogeneous and subadditive.

# %%
import numpy as np

from sharpsolv import ModelParams, default_species
from sharpsolv.analysis import fit_tail, self_energy_sweep

params = ModelParams(beta=0.1, gamma=0.05, a=1.0, eps0=1.0, eps1=10.0)
est = self_energy_sweep(default_species(1), [8.0, 16.0, 32.0], params)
# the fit uses the effective radius of the inscribed box, not the nominal R
for R, Reff, E in zip([8, 16, 32], est.radii, est.energies):
    print(f"R = {R:2d} (effective {Reff:6.3f})   E = {E:.7f}")
print(f"extrapolated {est.extrapolated:.7f}, tail exponent {est.tail_exponent:.3f}")

# %% [markdown]
# `fit_tail` is the extrapolation on its own.  Feeding it exact
# E_inf + c / R data returns the exponent 1 and the constant.

# %%
R = np.array([8.0, 16.0, 32.0])
print(fit_tail(R, 2.0 + 0.5 / R))

# %% [markdown]
# ## phi from a small library
#
# Each library entry is a configuration whose charge vector counts solutes
# by species.  phi(xi) is the cheapest non-negative combination of library
# energies that reproduces xi.  Scaling all weights by lambda scales phi
# exactly.

# %%
from sharpsolv import (BModel, ChargeProfile, Grid3D, LennardJones, SoluteConfiguration,
                       SoluteSpecies)
from sharpsolv.analysis import phi_upper
from sharpsolv.interface import solve_saddle

species = {s: SoluteSpecies(s, ChargeProfile.uniform_ball(1.0, q), LennardJones(0.1, 1.0, 2.0))
           for s, q in ((1, 1.0), (2, -1.0))}
grid = Grid3D((-8.0, -4.0, -4.0), 0.25, (64, 32, 32))
lib, E = [], []
for solutes in ([(1, (0.0, 0, 0))], [(2, (0.0, 0, 0))], [(1, (-4.0, 0, 0)), (2, (4.0, 0, 0))]):
    cfg = SoluteConfiguration.for_grid(grid, 1.0, species, solutes)
    lib.append(cfg)
    E.append(solve_saddle(cfg, BModel.zero(), params, grid).total)
xi = np.array([1.0, 1.0])
print("phi(1,1) =", phi_upper(xi, lib, energies=E))
print("phi(4,4) =", phi_upper(4 * xi, lib, [0.25] * 3, energies=E))
