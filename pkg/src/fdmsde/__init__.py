"""Neural SDE generative modeling trained by matching two-time joint
distributions with a kernel scoring rule."""

from .estimator import FDMGenerator
from .processes import ReferenceProcess, brownian, gbm, ou
from .scoring import ScoreConfig, rbf_kernel, score_adjacent, score_concat, score_main
from .sde import NeuralSDEConfig, NeuralSDEParams, PathsBatch, init_params, simulate
from .training import TrainConfig, fdm_train

__version__ = "0.1.0"

__all__ = [
    "FDMGenerator",
    "NeuralSDEConfig",
    "NeuralSDEParams",
    "PathsBatch",
    "ReferenceProcess",
    "ScoreConfig",
    "TrainConfig",
    "brownian",
    "fdm_train",
    "gbm",
    "init_params",
    "ou",
    "rbf_kernel",
    "score_adjacent",
    "score_concat",
    "score_main",
    "simulate",
    "__version__",
]
