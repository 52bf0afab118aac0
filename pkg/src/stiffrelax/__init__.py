"""Controlled stiff relaxation systems, their reduction and value functions."""

from .errors import *  # noqa: F401,F403
from .system import (ControlBox, CostSpec, MatrixField, StabilityReport, ThreeScaleSystem,
                     TwoScaleSystem, box_sup, hamiltonian_full, hamiltonian_three_scale,
                     two_scale, validate_controllability, validate_stability)
from .reduction import (ReducedSystem, build_reduced, cascade_reduce, effective_hamiltonian,
                        lambda1_closed_form, lambda2_closed_form, solve_micro_static,
                        solve_static)
from .integrate import (ControlSignal, Trajectory, integrate_reduced, integrate_stiff,
                        integrate_three_scale, trajectory_error)
from .hjb import (CellResult, Grid, GridValueFunction, expansion_check, solve_cell,
                  solve_hjb_effective, solve_hjb_full, solve_hjb_multiscale_effective,
                  solve_micro_cell)
from .models import (ModelInstance, get_model, jin_xin_diagonalize, list_models,
                     local_equilibrium_residual, make_upwind)
from .experiments import (ExperimentConfig, OccupationalHistogram, estimate_occupational_measure,
                          load_config, parse_config)

__version__ = "0.1.0"
