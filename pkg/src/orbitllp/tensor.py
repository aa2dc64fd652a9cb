"""Dense arrays with tape-based reverse-mode differentiation.

Only the primitives the two chip models need are provided. Arrays are
row-major and channel-last; image-like tensors are ``(H, W, C)`` or carry a
leading batch axis ``(N, H, W, C)``. There is no general broadcasting.

Usage::

    with Tape() as tape:
        y = softmax_channels(conv2d(x, k, b, stride=4))
        loss = mse_loss(reduce_mean_cells(y), target)
    dk, db = tape.gradient(loss, [k, b])
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DTYPES = (np.float32, np.float64)

_active_tape: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "orbitllp_tape", default=None
)


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    """A contiguous real array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "__weakref__")

    def __init__(self, data, dtype=None, requires_grad=False):
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in DTYPES else np.float32
        if np.dtype(dtype) not in DTYPES:
            raise TypeError(f"unsupported dtype {dtype}; use float32 or float64")
        self.data = np.asarray(arr, dtype=dtype, order="C")
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"


@dataclass
class _Node:
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    name: str


class Tape:
    """Records primitive applications while active as a context manager.

    A tape belongs to one training context; do not share it across threads.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc):
        _active_tape.reset(self._token)
        self._token = None
        return False

    def record(self, output, inputs, backward, name):
        self.nodes.append(_Node(output, tuple(inputs), backward, name))

    def gradient(self, output: Tensor, leaves: Sequence[Tensor]) -> list[np.ndarray]:
        """Return d(output)/d(leaf) for every leaf, in order.

        Leaves that do not influence ``output`` get a zero gradient.
        """
        if output.size != 1:
            raise ShapeError(f"gradient needs a scalar output, got shape {output.shape}")
        grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for inp, ig in zip(node.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig
        return [
            grads.get(id(leaf), np.zeros_like(leaf.data)).astype(leaf.dtype, copy=False)
            for leaf in leaves
        ]


def grad(tape: Tape, output: Tensor, leaves: Sequence[Tensor]) -> list[np.ndarray]:
    return tape.gradient(output, leaves)


def _finish(name, out_data, inputs, backward) -> Tensor:
    if not np.all(np.isfinite(out_data)):
        raise NonFiniteError(f"{name} produced non-finite values")
    out = Tensor(out_data, dtype=inputs[0].dtype)
    tape = _active_tape.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward, name)
    return out


def _check_dtypes(name, *tensors):
    dt = tensors[0].dtype
    for t in tensors[1:]:
        if t.dtype != dt:
            raise TypeError(f"{name}: mixed dtypes {dt} and {t.dtype}")


def _as_batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected (H, W, C) or (N, H, W, C), got shape {x.shape}")


# --- patch extraction ------------------------------------------------------


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _patches(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """(N, H, W, C) -> (N, H', W', kh*kw*C), patch flattened as (kh, kw, C)."""
    n, h, w, c = x.shape
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {h}x{w} (pad={pad})")
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    ho = conv_output_size(h, kh, stride, pad)
    wo = conv_output_size(w, kw, stride, pad)
    s = x.strides
    view = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, ho, wo, kh, kw, c),
        strides=(s[0], s[1] * stride, s[2] * stride, s[1], s[2], s[3]),
        writeable=False,
    )
    return view.reshape(n, ho, wo, kh * kw * c)


def _unpatch(g: np.ndarray, in_shape, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of ``_patches``: scatter-add patch gradients back onto the input."""
    n, h, w, c = in_shape
    ho, wo = g.shape[1], g.shape[2]
    g = g.reshape(n, ho, wo, kh, kw, c)
    out = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride, :] += g[
                :, :, :, i, j, :
            ]
    if pad:
        out = out[:, pad:-pad, pad:-pad, :]
    return np.ascontiguousarray(out)


def extract_patches(x: Tensor, size: int, stride: int, pad: int = 0) -> Tensor:
    """Square zero-padded patches flattened to the last axis."""
    xb, squeeze = _as_batched(x.data)
    out = _patches(xb, size, size, stride, pad)
    in_shape = xb.shape

    def backward(g):
        gx = _unpatch(g.reshape((in_shape[0],) + g.shape[-3:]), in_shape, size, size, stride, pad)
        return (gx[0] if squeeze else gx,)

    return _finish("extract_patches", out[0] if squeeze else out, (x,), backward)


# --- primitives --------------------------------------------------------------


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of ``(H, W, Cin)`` input with ``(kh, kw, Cin, Cout)`` kernels."""
    _check_dtypes("conv2d", x, kernels, bias)
    if stride < 1 or pad < 0:
        raise ValueError("stride must be positive and pad nonnegative")
    if kernels.data.ndim != 4:
        raise ShapeError(f"kernels must be (kh, kw, Cin, Cout), got {kernels.shape}")
    kh, kw, cin, cout = kernels.shape
    xb, squeeze = _as_batched(x.data)
    if xb.shape[-1] != cin:
        raise ShapeError(f"input has {xb.shape[-1]} channels, kernels expect {cin}")
    if bias.shape != (cout,):
        raise ShapeError(f"bias must have shape ({cout},), got {bias.shape}")
    cols = _patches(xb, kh, kw, stride, pad)
    kmat = kernels.data.reshape(kh * kw * cin, cout)
    out = cols @ kmat + bias.data
    in_shape = xb.shape

    def backward(g):
        gb = g.reshape(-1, cout)
        if squeeze:
            g = g[None]
        gk = (cols.reshape(-1, kh * kw * cin).T @ gb).reshape(kernels.shape)
        gbias = gb.sum(axis=0)
        gx = None
        if x.requires_grad:
            gx = _unpatch(g @ kmat.T, in_shape, kh, kw, stride, pad)
            if squeeze:
                gx = gx[0]
        return gx, gk, gbias

    return _finish("conv2d", out[0] if squeeze else out, (x, kernels, bias), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.maximum(x.data, x.dtype.type(0))  # propagates NaN
    return _finish("relu", out, (x,), lambda g: (g * mask,))


def _softmax(a: np.ndarray) -> np.ndarray:
    z = np.exp(a - a.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, max-subtracted."""
    y = _softmax(x.data)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _finish("softmax", y, (x,), backward)


def softmax_channels(x: Tensor) -> Tensor:
    """Per-cell softmax over the channel axis of a channel-last map."""
    return softmax(x)


def reduce_mean_cells(x: Tensor) -> Tensor:
    """Mean over the two spatial axes: (..., H, W, C) -> (..., C)."""
    if x.data.ndim < 3:
        raise ShapeError(f"expected a (H, W, C) map, got shape {x.shape}")
    h, w = x.shape[-3], x.shape[-2]
    # strided multi-axis sums accumulate sequentially; a float32 running sum
    # over 2500 near-equal cells drifts by ~1e-5, so accumulate in float64
    out = (x.data.sum(axis=(-3, -2), dtype=np.float64) / (h * w)).astype(x.dtype)

    def backward(g):
        gx = np.broadcast_to((g / x.dtype.type(h * w))[..., None, None, :], x.shape)
        return (np.array(gx),)

    return _finish("reduce_mean_cells", out, (x,), backward)


def l2_normalize(x: Tensor, eps: float = 1e-8) -> Tensor:
    """x / max(||x||, eps) along the last axis."""
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    big = norm > eps
    denom = np.where(big, norm, x.dtype.type(eps))
    y = x.data / denom

    def backward(g):
        proj = np.where(big, (g * y).sum(axis=-1, keepdims=True), 0)
        return ((g - y * proj) / denom,)

    return _finish("l2_normalize", y, (x,), backward)


def matmul_t(x: Tensor, w: Tensor) -> Tensor:
    """x @ w.T over the last axis: (..., d) x (m, d) -> (..., m)."""
    _check_dtypes("matmul_t", x, w)
    if w.data.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"matmul_t: cannot contract {x.shape} with {w.shape}")
    out = x.data @ w.data.T

    def backward(g):
        gx = g @ w.data
        gw = g.reshape(-1, w.shape[0]).T @ x.data.reshape(-1, w.shape[1])
        return gx, gw

    return _finish("matmul_t", out, (x, w), backward)


def softplus(x: Tensor) -> Tensor:
    out = np.logaddexp(0, x.data).astype(x.dtype)
    sig = (1 / (1 + np.exp(-x.data))).astype(x.dtype)
    return _finish("softplus", out, (x,), lambda g: (g * sig,))


def fidelity_kernel(sim: Tensor, gamma: Tensor) -> Tensor:
    """exp(-gamma * (1 - sim**2)) for a scalar bandwidth ``gamma``."""
    _check_dtypes("fidelity_kernel", sim, gamma)
    if gamma.size != 1:
        raise ShapeError("gamma must be a scalar")
    gam = gamma.data.reshape(())
    s2m1 = sim.data * sim.data - 1
    k = np.exp(gam * s2m1)

    def backward(g):
        gk = g * k
        return gk * (2 * gam) * sim.data, np.asarray((gk * s2m1).sum()).reshape(gamma.shape)

    return _finish("fidelity_kernel", k, (sim, gamma), backward)


def mixture_conditional(k: Tensor, alpha: Tensor, pi: Tensor) -> Tensor:
    """sum_j alpha_j k_j pi_j / sum_j alpha_j k_j over the last axis of ``k``.

    ``k`` is (..., m), ``alpha`` is (m,), ``pi`` is (m, n); result is (..., n).
    """
    _check_dtypes("mixture_conditional", k, alpha, pi)
    m = k.shape[-1]
    if alpha.shape != (m,) or pi.data.ndim != 2 or pi.shape[0] != m:
        raise ShapeError(f"mixture_conditional: k {k.shape}, alpha {alpha.shape}, pi {pi.shape}")
    w = k.data * alpha.data
    den = w.sum(axis=-1, keepdims=True)
    out = (w @ pi.data) / den

    def backward(g):
        gn = g / den
        gd = -(g * out).sum(axis=-1, keepdims=True) / den
        gw = gn @ pi.data.T + gd
        gk = gw * alpha.data
        galpha = (gw * k.data).reshape(-1, m).sum(axis=0)
        gpi = w.reshape(-1, m).T @ gn.reshape(-1, pi.shape[1])
        return gk, galpha, gpi

    return _finish("mixture_conditional", out, (k, alpha, pi), backward)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over all elements of (pred - target)**2.

    For a (B, n) batch this is the mean of the per-chip losses.
    """
    _check_dtypes("mse_loss", pred, target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: shapes {pred.shape} and {target.shape} differ")
    diff = pred.data - target.data
    count = pred.dtype.type(diff.size)
    out = np.asarray((diff * diff).sum() / count)

    def backward(g):
        gd = (2 / count) * g * diff
        return gd, -gd

    return _finish("mse_loss", out, (pred, target), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes("add", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return _finish("add", a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_dtypes("mul", a, b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    return _finish("mul", a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def total(x: Tensor) -> Tensor:
    return _finish("total", np.asarray(x.data.sum()), (x,), lambda g: (np.full(x.shape, g, dtype=x.dtype),))
