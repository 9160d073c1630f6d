"""poroscale: a desk-scale laboratory for periodic homogenization of
compressible flow in perforated domains and its Darcy / porous-medium limit.

The library side is organized around the constructive objects of the
quantitative homogenization argument: the gamma-law pressure and its
relative entropy, the punctured-cell Stokes problem and permeability
tensor, the perforated-grid compressible Navier-Stokes solver, the limit
porous-medium solver, the corrector pair with its boundary correction, and
the relative-energy analysis that measures the convergence rate in eps.
"""

__version__ = "0.1.0"

from .pressure_law import (PressureLaw, pressure_eval, pressure_inverse,
                           potential_H, entropy_h, check_entropy_lower_bound)
from .geometry import (Obstacle, CellGrid, PerforatedGrid, Domain,
                       make_obstacle, build_reference_cell,
                       build_perforated_grid)
from .cell_problem import (CellSolution, solve_cell, permeability,
                           check_cell_average_identity, solve_vector_potential,
                           vector_potential_defect)
from .limit_solver import (LimitState, darcy_velocity, step_limit, solve_limit,
                           suggest_dt, barenblatt)
from .nse_solver import (FlowState, initialize_flow, step_nse, solve_nse,
                         acoustic_dt)
from .correctors import (CorrectorPair, CorrectorBuilder, build_correctors,
                         build_boundary_corrector, verify_corrector_bounds,
                         duality_defect)
from .analysis import (relative_energy, remainder, check_relen_inequality,
                       norm_neg_sobolev, poincare_constant,
                       thickened_trace_constant, error_functional, fit_rate,
                       theoretical_rate, EnergyReport, RateReport)
