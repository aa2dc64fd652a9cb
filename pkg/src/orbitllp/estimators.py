"""scikit-learn style wrappers around the chip models.

``fit(X, y)`` takes chip images ``X`` of shape ``(n, 100, 100, 3)`` and the
per-chip (commune-level, possibly blended) label proportions ``y`` of shape
``(n, n_classes)``. ``predict`` returns chip-level proportions.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import models as M
from .metrics import regression_to_mean
from .training import TrainConfig, fit_llp, mean_mae, predict_batches
from .validation import check_images, check_proportions


class _LLPRegressor(RegressorMixin, BaseEstimator):
    _kind = ""

    def _hyper(self) -> int:
        raise NotImplementedError

    def _config(self) -> TrainConfig:
        return TrainConfig(
            kind=self._kind,
            hyper=self._hyper(),
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            adam_beta1=self.beta1,
            adam_beta2=self.beta2,
            adam_eps=self.eps,
            seed=self.random_state,
            dtype=self.dtype,
        )

    def fit(self, X, y, X_val=None, y_val=None, verbose=False):
        """Train on commune-level targets.

        Parameters
        ----------
        X : array of shape (n, 100, 100, 3)
            Chip images, float in [0, 1] or uint8.
        y : array of shape (n, n_classes)
            Training target proportions for each chip.
        X_val, y_val : optional
            Validation chips and their chip-level ground-truth proportions,
            used to pick the epoch with the lowest MAE.
        """
        config = self._config()
        X = check_images(X, np.dtype(config.dtype).type)
        y = check_proportions(y, n_samples=len(X))
        if X_val is not None:
            X_val = check_images(X_val, np.dtype(config.dtype).type)
            y_val = check_proportions(y_val, len(X_val), y.shape[1])
        self.n_classes_ = y.shape[1]
        init = M.PARAM_TYPES[self._kind].initialize(config.hyper, self.n_classes_, seed=config.seed, dtype=config.dtype)
        log = (lambda r: print(f"epoch {r.epoch}: loss {r.train_loss:.5f} val_mae {r.val_mae:.4f}")) if verbose else None
        self.run_ = fit_llp(init, X, y.astype(config.dtype), config, X_val, y_val, log=log)
        self.params_ = self.run_.best_params
        return self

    @classmethod
    def from_params(cls, params, **kwargs):
        """Wrap already-trained parameters (e.g. loaded from a model file)."""
        if params.kind != cls._kind:
            raise ValueError(f"{cls.__name__} cannot hold {params.kind} parameters")
        est = cls(**kwargs)
        est.params_ = params
        est.n_classes_ = params.n_classes
        return est

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "params_")
        return predict_batches(self.params_, check_images(X, np.dtype(self.dtype).type), dtype=self.dtype)

    def predict_cell_probs(self, X) -> np.ndarray:
        """Coarse per-cell class probability maps, (n, S, S, n_classes)."""
        check_is_fitted(self, "params_")
        _, cells = predict_batches(self.params_, check_images(X, np.dtype(self.dtype).type), dtype=self.dtype, cells=True)
        return cells

    def score(self, X, y, sample_weight=None) -> float:
        """Negative chip-level MAE (greater is better)."""
        return -mean_mae(self.predict(X), check_proportions(y, len(X)))

    @property
    def n_params_(self) -> int:
        check_is_fitted(self, "params_")
        return M.param_count(self._kind, self.params_.hyper, self.n_classes_)


class DownconvLLP(_LLPRegressor):
    """Two strided convolutions with a softmax cell head (25 x 25 cells)."""

    _kind = "downconv"

    def __init__(self, n_filters=96, epochs=50, batch_size=32, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, random_state=0, dtype="float32"):
        self.n_filters = n_filters
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.random_state = random_state
        self.dtype = dtype

    def _hyper(self):
        return self.n_filters


class QkmLLP(_LLPRegressor):
    """Kernel mixture over 4 x 4 stride-2 patches (50 x 50 cells)."""

    _kind = "qkm"

    def __init__(self, n_components=64, epochs=50, batch_size=32, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, random_state=0, dtype="float32"):
        self.n_components = n_components
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.random_state = random_state
        self.dtype = dtype

    def _hyper(self):
        return self.n_components


class RegressionToMean(RegressorMixin, BaseEstimator):
    """Predicts the mean training proportions for every chip."""

    def fit(self, X, y):
        self.mean_ = regression_to_mean(check_proportions(y))
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "mean_")
        return np.tile(self.mean_, (len(X), 1))

    def score(self, X, y, sample_weight=None) -> float:
        return -mean_mae(self.predict(X), check_proportions(y, len(X)))


ESTIMATORS = {"downconv": DownconvLLP, "qkm": QkmLLP}
