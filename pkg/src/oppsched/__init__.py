"""Threshold-based distributed scheduling over time-varying channels: capacity
asymptotics, analytic queueing approximations and a slotted simulator."""
from .channel import ChannelModel, UserState, mixture_cdf, mixture_quantile, stationary_state_probs
from .dsched import (ThresholdPlan, expected_capacity_distributed, threshold_asymptotic,
                     threshold_exact)
from .errors import (ConvergenceError, DomainError, EvaluationLimitError, InstabilityError,
                     ModelError, NonErgodicChainError, NotApplicableError)
from .evt import GumbelNorm, expected_capacity_centralized, norm_constants_mixture
from .groups import expected_capacity_by_state, transition_matrix
from .qmodel1 import metrics_model1, solve_model1, symmetric_params
from .qmodel2 import decoupled_queue, metrics_model2, solve_p_coll
from .qmodel3 import TDQueueParams, solve_model3
from .sim import ArrivalKind, CapacityMode, SimConfig, run_slotted

__version__ = "0.1.0"

__all__ = [
    "ChannelModel", "UserState", "mixture_cdf", "mixture_quantile", "stationary_state_probs",
    "ThresholdPlan", "expected_capacity_distributed", "threshold_asymptotic", "threshold_exact",
    "ConvergenceError", "DomainError", "EvaluationLimitError", "InstabilityError", "ModelError",
    "NonErgodicChainError", "NotApplicableError", "GumbelNorm", "expected_capacity_centralized",
    "norm_constants_mixture", "expected_capacity_by_state", "transition_matrix", "metrics_model1",
    "solve_model1", "symmetric_params", "decoupled_queue", "metrics_model2", "solve_p_coll",
    "TDQueueParams", "solve_model3", "ArrivalKind", "CapacityMode", "SimConfig", "run_slotted",
]
