# %% [markdown]
# # Lattices of shrinking solutes, and cube partitions
#
# The `scaling-sweep` experiment puts K^3 solutes of size r on a lattice in
# the unit cube and tracks the total energy as r shrinks.  With few solutes
# the total is the sum of the single-cell energies, so it grows linearly in
# the solute count.  With many it is dominated by the collective Coulomb
# energy of the smeared charge.  This script runs the subcritical schedule
# and the cluster check, which are the quick ones.

# %%
from pathlib import Path

from sharpsolv.analysis import cube_integral, hminus1_norm_sq
from sharpsolv.experiments import ExperimentSpec, scaling_sweep

configs = Path(__file__).resolve().parents[1] / "configs"
rep = scaling_sweep(ExperimentSpec.from_file(configs / "sweep_sub.toml"))
for row in rep.rows:
    print(f"r={row['r']:.3f} K={row['K']}  E={row['total']:.5f}  "
          f"neighbour share {row['neighbor_share']:.1e}")
print("log-log slope of E against the solute count:", round(rep.slope, 4))

# %% [markdown]
# The supercritical limit involves the H^-1 norm of the unit cube.  The
# six-dimensional integral has a closed form, and the library computes it
# by quadrature as well as from a grid solve.

# %%
import math

import numpy as np

from sharpsolv import Grid3D, ScalarField

g = Grid3D((0.0, 0.0, 0.0), 1 / 32, (32, 32, 32))
mu = ScalarField(g, np.ones(g.dims))
print("quadrature :", cube_integral() / (4 * math.pi))
print("kernel sum :", hminus1_norm_sq(mu, "kernel").value)
print("grid solve :", hminus1_norm_sq(mu, "pde").value)

# %% [markdown]
# ## Cube partitions
#
# For a point cloud, `cluster_cubes` looks for a shift of the delta-grid
# whose cubes cut few close pairs.  Averaging over shifts shows that such a
# shift always exists.

# %%
from sharpsolv.analysis import cluster_cubes

rng = np.random.default_rng(0)
pts = rng.uniform(0, 10, (150, 3))
part = cluster_cubes(pts, delta=2.0, L=1.0, r=0.1)
print(f"offset {np.round(part.offset, 3)}, {part.n_cubes} cubes, "
      f"cross interaction {part.cross_interaction:.1f} <= {part.interaction_bound:.1f}")
