"""Central finite differences, kept independent of the tape."""

import numpy as np

# Gradients below this magnitude are compared on an absolute scale: at a
# float64 step of 1e-4 the difference quotient carries ~1e-12 of roundoff.
REL_FLOOR = 1e-7


def rel_error(analytic, numeric):
    a, n = np.abs(analytic), np.abs(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(a, n), REL_FLOOR)


def max_rel_error(analytic, numeric) -> float:
    return float(np.max(rel_error(np.asarray(analytic), np.asarray(numeric)), initial=0.0))


def numeric_grad(f, x, step):
    """d f / d x for every element of ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + step
        fp = f(x.copy())
        x[idx] = orig - step
        fm = f(x.copy())
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * step)
    return g
