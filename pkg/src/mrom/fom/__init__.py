"""Full-order models, linear multistep schemes and the implicit FOM solver."""
from .burgers import (BURGERS_DOMAIN, BURGERS_TEST_POINTS, BurgersModel, burgers_training_grid,
                      godunov_flux, godunov_flux_derivs)
from .core import (FomModel, NewtonOptions, OdeResidual, SolveInfo, StepFailure, Trajectory,
                   fom_step, newton_solve, simulate_fom)
from .linear import LinearModel
from .reacting import (REACTING_DOMAIN, REACTING_TEST_POINTS, FlameConstants, ReactingFlowModel,
                       reacting_training_grid)
from .scheme import LinearMultistepScheme, backward_euler, bdf2, scheme_by_name

__all__ = [
    "BURGERS_DOMAIN", "BURGERS_TEST_POINTS", "BurgersModel", "burgers_training_grid",
    "godunov_flux", "godunov_flux_derivs", "FomModel", "NewtonOptions", "OdeResidual",
    "SolveInfo", "StepFailure", "Trajectory", "fom_step", "newton_solve", "simulate_fom",
    "LinearModel", "REACTING_DOMAIN", "REACTING_TEST_POINTS", "FlameConstants",
    "ReactingFlowModel", "reacting_training_grid", "LinearMultistepScheme", "backward_euler",
    "bdf2", "scheme_by_name",
]
