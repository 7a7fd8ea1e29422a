"""scikit-learn style front end.

`FDMGenerator` wraps the configuration, training loop, and sampler behind
the familiar fit/sample/score surface so the model composes with sklearn
tooling (get_params, set_params, clone).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .rng import stream
from .scoring import ScoreConfig, sample_pairs, score_main
from .sde import NeuralSDEConfig, PathsBatch, simulate
from .training import TrainConfig, fdm_train


class FDMGenerator(BaseEstimator):
    """Generative model for path-valued data.

    Fit on an array of paths shaped (n_paths, n_times, n_features) or
    (n_paths, n_times); sample new paths of the same shape.

    Parameters mirror the underlying training configuration; see
    `TrainConfig` and `NeuralSDEConfig` for their meaning.
    """

    def __init__(
        self,
        steps=2000,
        batch_size=128,
        learning_rate=1e-3,
        gamma=1.0,
        d_z=4,
        d_noise=2,
        hidden_sizes=(32,),
        activation="tanh",
        sigma_cap=1.0,
        seed=0,
    ):
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.gamma = gamma
        self.d_z = d_z
        self.d_noise = d_noise
        self.hidden_sizes = hidden_sizes
        self.activation = activation
        self.sigma_cap = sigma_cap
        self.seed = seed

    def _as_batch(self, X) -> PathsBatch:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[:, :, None]
        if X.ndim != 3:
            raise ValueError(f"X must be (n_paths, n_times[, n_features]), got shape {X.shape}")
        if X.shape[1] < 2:
            raise ValueError(f"paths need at least 2 timestamps, got {X.shape[1]}")
        if not np.all(np.isfinite(X)):
            raise ValueError("X contains non-finite values")
        return PathsBatch(np.linspace(0.0, 1.0, X.shape[1]), X)

    def fit(self, X, y=None):
        data = self._as_batch(X)
        self._squeeze_output_ = np.asarray(X).ndim == 2
        cfg = TrainConfig(
            steps=self.steps,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.seed,
            score=ScoreConfig(gamma=self.gamma),
            sde=NeuralSDEConfig(
                d_z=self.d_z,
                d_x=data.dim,
                d_noise=self.d_noise,
                hidden_sizes=list(self.hidden_sizes),
                num_steps=data.n_times - 1,
                activation=self.activation,
                sigma_cap=self.sigma_cap,
            ),
        )
        self.params_, self.train_log_ = fdm_train(cfg, data)
        self.sde_config_ = cfg.sde
        self.n_features_in_ = data.dim
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("this FDMGenerator instance is not fitted yet; call fit first")

    def sample(self, n_paths, seed=None):
        """Draw `n_paths` fresh trajectories from the fitted generator."""
        self._check_fitted()
        batch = simulate(self.params_, self.sde_config_, n_paths, self.seed if seed is None else seed)
        if self._squeeze_output_:
            return batch.values[:, :, 0]
        return batch.values

    def score(self, X, y=None, seed=None):
        """Empirical score of the fitted generator against `X`: the negated
        kernel discrepancy estimator, so higher is better."""
        self._check_fitted()
        data = self._as_batch(X)
        if data.dim != self.n_features_in_:
            raise ValueError(f"X has {data.dim} features, the model was fitted with {self.n_features_in_}")
        b = data.n_paths
        gen = simulate(self.params_, self.sde_config_, b, self.seed if seed is None else seed)
        pairs = sample_pairs(data.n_times, b, stream(self.seed if seed is None else seed, "score-pairs"))
        return -score_main(gen, data, pairs, ScoreConfig(gamma=self.gamma))
