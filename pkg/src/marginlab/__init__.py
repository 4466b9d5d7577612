"""Importance-weighted ERM and the implicit bias of gradient descent, checked numerically."""

from .core import (Dataset, DomainError, LossKind, NumericError, RiskValue, StructuralError, WeightVector,
                   generalized_kl, weighted_risk, weighted_risk_gradient)
from .predictors import HomogeneousMLP, LinearPredictor, frobenius_rebalance, normalized_margin
from .geometry import max_margin_linear, maximal_separable_subset, nonsep_optimum, project_span
from .trainer import Schedule, TrainConfig, boosting_envelope_check, train, weak_reg_path

__version__ = "0.1.0"
