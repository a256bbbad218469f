"""Few-shot Gaussian-process classification with a discriminant-plugin
Laplace head, differentiable end to end for episodic meta-training.

Public surface: episode data handling (`data`), the feature extractor
(`backbone`), the plugin posterior and its Monte Carlo predictive
(`head`), baseline heads (`baselines`, `heads`), the meta-trainer
(`trainer`), metrics (`evaluation`), and the reverse-mode tape they all
share (`tensor`).
"""

from .backbone import ArchSpec, forward, init_params, wrap_params
from .data import (Dataset, DatasetSplit, Episode, LabeledSet,
                   SyntheticTaskConfig, generate_synthetic_pool, load_dataset,
                   sample_episode)
from .errors import (CapacityError, ConfigError, ContractError, GpldlaError,
                     NumericsError, ParseError, ShapeError, ValidationError)
from .head import (GpPrior, LaplacePosterior, LdaEstimates,
                   PredictiveDistribution, adapt, center_biases,
                   laplace_variances, lda_ml_estimates, log_posterior,
                   predictive, prior_norm_adjust)
from .heads import HEADS, get_head
from .kernels import BACKEND
from .rng import Rng
from .tensor import Tensor, backward, finite_diff_grad, finite_diff_hessian_diag
from .trainer import TrainConfig, TrainResult, adam_step, lr_schedule, train

__version__ = "0.1.0"

__all__ = [
    "ArchSpec", "BACKEND", "CapacityError", "ConfigError", "ContractError",
    "Dataset", "DatasetSplit", "Episode", "GpPrior", "GpldlaError", "HEADS",
    "LabeledSet", "LaplacePosterior", "LdaEstimates", "NumericsError",
    "ParseError", "PredictiveDistribution", "Rng", "ShapeError",
    "SyntheticTaskConfig", "Tensor", "TrainConfig", "TrainResult",
    "ValidationError", "adapt", "adam_step", "backward", "center_biases",
    "finite_diff_grad", "finite_diff_hessian_diag", "forward",
    "generate_synthetic_pool", "get_head", "init_params",
    "laplace_variances", "lda_ml_estimates", "load_dataset", "log_posterior",
    "lr_schedule", "predictive", "prior_norm_adjust", "sample_episode",
    "train", "wrap_params",
]
