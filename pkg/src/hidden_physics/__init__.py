"""Recover the state and hidden dynamics of autonomous ODE systems.

A state network maps time to the state vector and a dynamics network maps
(candidate features of) the state to its time derivative; both are trained
jointly on sparse, possibly partial, trajectory data.
"""
__version__ = "0.1.0"

from .autodiff import MlpNetwork, ParamGradient, Tape, backward, forward, init_params, input_time_derivative
from .dynamics import PRESETS, AutonomousSystem, Trajectory, get_system, integrate_reference, uniform_grid
from .features import CandidateMap, candidate_features
from .metrics import ExperimentReport, rel_l2_error
from .sampling import RngStream, lhs_sample
from .scaling import ScalingSpec, nondimensionalize
from .training import LossBreakdown, TrainingConfig, preset_config, train

__all__ = [
    "AutonomousSystem", "CandidateMap", "ExperimentReport", "LossBreakdown", "MlpNetwork",
    "PRESETS", "ParamGradient", "RngStream", "ScalingSpec", "Tape", "Trajectory",
    "TrainingConfig", "backward", "candidate_features", "forward", "get_system",
    "init_params", "input_time_derivative", "integrate_reference", "lhs_sample",
    "nondimensionalize", "preset_config", "rel_l2_error", "train", "uniform_grid",
]
