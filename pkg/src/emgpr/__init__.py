"""Multi-task Gaussian process regression with sum-of-Kronecker covariances.

Each task mixes all latent processes through learned weight vectors. Fitting
runs in two steps: independent per-task GP fits, then a joint fit of the
mixing weights. A strided mini-batch ensemble, a no-transfer baseline and an
ICM baseline are included.
"""

from .ensemble import EnsembleConfig, EnsembleModel, PartitionPlan, fit_ensemble, partition, predict_ensemble
from .exceptions import ConfigError, DataFormatError, EmgprError, NumericalError, TaskFitError
from .gp_single import FitConfig, FittedTaskGP, LatentProcessParams, fit_task, log_marginal, predict_task
from .kernels import KernelSpec, gram, kernel_eval
from .model import (
    EmgprModel,
    ModelConfig,
    MultiTaskPrediction,
    fit,
    fit_icm,
    fit_no_transfer,
    fit_step1,
    fit_step2,
    predict,
)
from .structured_cov import StructuredCovariance, WeightSet, assemble, cross_cov, log_marginal_joint

__version__ = "0.1.0"
