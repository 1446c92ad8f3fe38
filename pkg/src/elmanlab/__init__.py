"""elmanlab: a numerical laboratory for wide recurrent ReLU networks.

Implements the Elman recurrence with ReLU activations at large hidden
width, trains it by GD/SGD, and measures the landscape and stability
quantities that make the training dynamics benign: forward/backward norm
control, separability of hidden states, perturbation stability, gradient
dominance, semi-smoothness, and the supporting concentration bounds.
"""

from .data import (Dataset, InfeasibleDataError, dataset_from_json,
                   dataset_to_json, generate_dataset, generate_inputs,
                   generate_labels, verify_separability)
from .linalg import (OrthonormalBasis, gaussian_matrix, gram_schmidt,
                     project_complement, row_lp_norm, spectral_norm)
from .network import (ForwardTrace, NetworkParams, back_operator,
                      backward_sums, fake_gradient, forward, gradient,
                      gradient_per_sample, init_params, max_loss_norm,
                      objective)
from .reporting import (ProbeRecord, ProbeReport, ScaleParams, ScalingFit,
                        scaling_fit)
from .rng import SeededRng
from .training import (TrainConfig, TrainLog, default_learning_rate,
                       gd_train, movement_check, sgd_train,
                       tune_learning_rate)

__all__ = [
    "Dataset", "InfeasibleDataError", "dataset_from_json", "dataset_to_json",
    "generate_dataset", "generate_inputs", "generate_labels",
    "verify_separability",
    "OrthonormalBasis", "gaussian_matrix", "gram_schmidt",
    "project_complement", "row_lp_norm", "spectral_norm",
    "ForwardTrace", "NetworkParams", "back_operator", "backward_sums",
    "fake_gradient", "forward", "gradient", "gradient_per_sample",
    "init_params", "max_loss_norm", "objective",
    "ProbeRecord", "ProbeReport", "ScaleParams", "ScalingFit", "scaling_fit",
    "SeededRng",
    "TrainConfig", "TrainLog", "default_learning_rate", "gd_train",
    "movement_check", "sgd_train", "tune_learning_rate",
]

__version__ = "0.1.0"
