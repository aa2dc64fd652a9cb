"""Input checks shared by the estimators and the CLI."""

import numpy as np

from .models import CHIP_SIZE

PROPORTION_TOL = 1e-5


def check_images(X, dtype=np.float32):
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[1:] != (CHIP_SIZE, CHIP_SIZE, 3):
        raise ValueError(f"expected images of shape (n, 100, 100, 3), got {X.shape}")
    if X.dtype == np.uint8:
        return X.astype(dtype) / dtype(255)
    X = X.astype(dtype, copy=False)
    if not np.all(np.isfinite(X)):
        raise ValueError("images contain NaN or infinite values")
    if X.size and (X.min() < 0 or X.max() > 1):
        raise ValueError("image values must lie in [0, 1]")
    return X


def check_proportions(y, n_samples=None, n_classes=None, tol=PROPORTION_TOL):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2:
        raise ValueError(f"expected a (n, n_classes) array of proportions, got shape {y.shape}")
    if n_samples is not None and y.shape[0] != n_samples:
        raise ValueError(f"{y.shape[0]} targets for {n_samples} images")
    if n_classes is not None and y.shape[1] != n_classes:
        raise ValueError(f"expected {n_classes} classes, got {y.shape[1]}")
    if np.any(y < 0) or np.any(np.abs(y.sum(axis=1) - 1) > tol):
        raise ValueError("each proportion vector must be nonnegative and sum to 1")
    return y
