"""Differentiable point processes and variational training of spiking networks."""

from .concrete import ConcreteParams, concrete_log_density, concrete_sample, pi_bar_compose
from .dpp import DiffTrain, DppConfig, dpp_conditional_intensity, dpp_log_density, dpp_sample
from .errors import ContractViolation, DomainError
from .learning import TrainConfig, adagrad_step, evaluate, train
from .numerics import log1mexp
from .point_process import IntensityModel, SpikeTrain, log_likelihood, thinning_sample
from .snn import HiddenSNNModel, SNNModel, SNNParams, init_params

__all__ = [
    "ConcreteParams", "concrete_log_density", "concrete_sample", "pi_bar_compose",
    "DiffTrain", "DppConfig", "dpp_conditional_intensity", "dpp_log_density", "dpp_sample",
    "ContractViolation", "DomainError", "TrainConfig", "adagrad_step", "evaluate", "train",
    "log1mexp", "IntensityModel", "SpikeTrain", "log_likelihood", "thinning_sample",
    "HiddenSNNModel", "SNNModel", "SNNParams", "init_params",
]
