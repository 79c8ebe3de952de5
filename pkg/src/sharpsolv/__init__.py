"""Grid laboratory for a sharp-interface implicit-solvent energy of charged solutes."""

__version__ = "0.1.0"

from .grid import (Grid3D, PhaseField, ScalarField, VectorField, coarea_tv, divergence,
                   gradient, integrate, integrate_masked, read_structured_grid,
                   tv_anisotropic, write_structured_grid)
from .model import (BModel, ChargeProfile, Ion, LennardJones, ModelParams, SoluteConfiguration,
                    SoluteSpecies, assemble_charge_density, assemble_lj_potential, b_subgradient,
                    b_value, check_B2, check_admissible, default_species)
from .pbsolver import (PotentialSolution, comparison_bound, dual_bound_check, solve_potential,
                       verify_comparison)

