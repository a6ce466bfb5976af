"""Robust multi-stage fitting of the body model to landmark observations."""

from .config import ConfigError, FitConfig, StageConfig, load_fit_config
from .energy import EnergyBreakdown, FrameObjective, PriorWeights, energy_landmarks, energy_total
from .lbfgs import LbfgsOptions, LbfgsResult, NonFiniteObjectiveError, lbfgs_minimize
from .pipeline import (
    FitDivergenceError,
    FitResult,
    InitializationError,
    PersonFit,
    fit_person,
    fit_sequence,
    init_pose,
    init_translation,
    initial_params,
)
from .robust import RobustEstimator, robust, robust_derivative, robust_weight
