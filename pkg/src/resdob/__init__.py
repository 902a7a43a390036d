"""Safe RL with a learned-residual, disturbance-observer robust CBF filter.

Subpackages are imported lazily by the caller; the top level re-exports the
objects most scripts need.
"""
from resdob.cbf import CbfConfig, ModelSnapshot, build_constraints
from resdob.config import FILTER_MODES, RunConfig, load_config, parse_ini
from resdob.dob import DisturbanceObserver
from resdob.dynamics import ModelParams, nominal_deriv, plant_step, true_plant_deriv
from resdob.env import Env, TaskConfig, preset
from resdob.harness import RunLog, SafetyLayer, evaluate, random_policy_rollout, train
from resdob.kernels import BACKEND
from resdob.qpfilter import FilterProblem, solve
from resdob.residual import ResidualModel

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "FILTER_MODES",
    "CbfConfig",
    "DisturbanceObserver",
    "Env",
    "FilterProblem",
    "ModelParams",
    "ModelSnapshot",
    "ResidualModel",
    "RunConfig",
    "RunLog",
    "SafetyLayer",
    "TaskConfig",
    "build_constraints",
    "evaluate",
    "load_config",
    "nominal_deriv",
    "parse_ini",
    "plant_step",
    "preset",
    "random_policy_rollout",
    "solve",
    "train",
    "true_plant_deriv",
]
