"""The two chip models: ``downconv`` and ``qkm``.

Both map a ``100 x 100 x 3`` chip (values in [0, 1]) to a coarse map of
per-cell class probabilities and the chip's class proportions, which are the
mean of the cell probabilities.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .tensor import Tensor

CHIP_SIZE = 100
PATCH = 4
DOWNCONV_STRIDE = 4
QKM_STRIDE = 2
QKM_PAD = 1
PATCH_DIM = PATCH * PATCH * 3
NORM_EPS = 1e-8

MODEL_MAGIC = b"LLPM"
MODEL_VERSION = 1
KIND_CODES = {"downconv": 0, "qkm": 1}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}


class ModelFormatError(ValueError):
    pass


class ChipPrediction(NamedTuple):
    cell_probs: Tensor
    proportions: Tensor


def _glorot(rng, shape, fan_in, fan_out, dtype):
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape).astype(dtype)


@dataclass
class DownconvParams:
    conv1_kernels: np.ndarray  # (4, 4, 3, F)
    conv1_bias: np.ndarray  # (F,)
    conv2_kernels: np.ndarray  # (1, 1, F, n)
    conv2_bias: np.ndarray  # (n,)

    kind = "downconv"

    @property
    def n_filters(self) -> int:
        return self.conv1_bias.shape[0]

    @property
    def n_classes(self) -> int:
        return self.conv2_bias.shape[0]

    @property
    def hyper(self) -> int:
        return self.n_filters

    @classmethod
    def shapes(cls, n_filters: int, n_classes: int):
        return {
            "conv1_kernels": (PATCH, PATCH, 3, n_filters),
            "conv1_bias": (n_filters,),
            "conv2_kernels": (1, 1, n_filters, n_classes),
            "conv2_bias": (n_classes,),
        }

    @classmethod
    def initialize(cls, n_filters=96, n_classes=5, seed=0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        return cls(
            conv1_kernels=_glorot(rng, (PATCH, PATCH, 3, n_filters), PATCH_DIM, n_filters, dtype),
            conv1_bias=np.zeros(n_filters, dtype),
            conv2_kernels=_glorot(rng, (1, 1, n_filters, n_classes), n_filters, n_classes, dtype),
            conv2_bias=np.zeros(n_classes, dtype),
        )


@dataclass
class QkmParams:
    prototypes: np.ndarray  # (m, 48)
    class_logits: np.ndarray  # (m, n)
    mixture_logits: np.ndarray  # (m,)
    bandwidth_raw: np.ndarray  # (), gamma = softplus(bandwidth_raw)

    kind = "qkm"

    @property
    def n_components(self) -> int:
        return self.prototypes.shape[0]

    @property
    def n_classes(self) -> int:
        return self.class_logits.shape[1]

    @property
    def hyper(self) -> int:
        return self.n_components

    @property
    def gamma(self) -> float:
        return float(np.logaddexp(0, self.bandwidth_raw))

    @classmethod
    def shapes(cls, n_components: int, n_classes: int):
        return {
            "prototypes": (n_components, PATCH_DIM),
            "class_logits": (n_components, n_classes),
            "mixture_logits": (n_components,),
            "bandwidth_raw": (),
        }

    @classmethod
    def initialize(cls, n_components=64, n_classes=5, seed=0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        return cls(
            prototypes=_glorot(rng, (n_components, PATCH_DIM), PATCH_DIM, n_components, dtype),
            class_logits=np.zeros((n_components, n_classes), dtype),
            mixture_logits=np.zeros(n_components, dtype),
            # softplus(log(e - 1)) == 1
            bandwidth_raw=np.asarray(np.log(np.e - 1), dtype=dtype),
        )


PARAM_TYPES = {"downconv": DownconvParams, "qkm": QkmParams}


def param_arrays(params) -> list[np.ndarray]:
    return [getattr(params, f.name) for f in fields(params)]


def replace_arrays(params, arrays):
    return type(params)(*[np.asarray(a) for a in arrays])


def param_count(kind: str, hyper: int, n_classes: int) -> int:
    """Closed-form parameter count; ``hyper`` is F for downconv, m for qkm."""
    if hyper < 1 or n_classes < 1:
        raise ValueError("hyperparameters must be positive")
    if kind == "downconv":
        return (PATCH_DIM + 1) * hyper + (hyper + 1) * n_classes
    if kind == "qkm":
        return hyper * (PATCH_DIM + n_classes + 1) + 1
    raise ValueError(f"unknown model kind {kind!r}")


def _check_image(image: Tensor):
    shape = image.shape[-3:]
    if shape != (CHIP_SIZE, CHIP_SIZE, 3) or image.data.ndim not in (3, 4):
        raise T.ShapeError(f"expected chip images of shape (100, 100, 3), got {image.shape}")


def downconv_forward(image: Tensor, params) -> ChipPrediction:
    """``params`` is a DownconvParams or a sequence of four Tensors in field order."""
    _check_image(image)
    k1, b1, k2, b2 = _as_tensors(params, image.dtype)
    h = T.relu(T.conv2d(image, k1, b1, stride=DOWNCONV_STRIDE, pad=0))
    cells = T.softmax_channels(T.conv2d(h, k2, b2, stride=1, pad=0))
    return ChipPrediction(cells, T.reduce_mean_cells(cells))


def qkm_forward(image: Tensor, params) -> ChipPrediction:
    """``params`` is a QkmParams or a sequence of four Tensors in field order."""
    _check_image(image)
    protos, class_logits, mix_logits, bw_raw = _as_tensors(params, image.dtype)
    if protos.shape[-1] != PATCH_DIM:
        raise T.ShapeError(f"prototypes must be (m, {PATCH_DIM}), got {protos.shape}")
    x = T.l2_normalize(T.extract_patches(image, PATCH, QKM_STRIDE, QKM_PAD), NORM_EPS)
    w = T.l2_normalize(protos, NORM_EPS)
    k = T.fidelity_kernel(T.matmul_t(x, w), T.softplus(bw_raw))
    cells = T.mixture_conditional(k, T.softmax(mix_logits), T.softmax(class_logits))
    return ChipPrediction(cells, T.reduce_mean_cells(cells))


FORWARDS = {"downconv": downconv_forward, "qkm": qkm_forward}


def forward(image: Tensor, params) -> ChipPrediction:
    return FORWARDS[params.kind](image, params)


def _as_tensors(params, dtype):
    if isinstance(params, (DownconvParams, QkmParams)):
        return [Tensor(a, dtype=dtype) for a in param_arrays(params)]
    return list(params)


# --- model file --------------------------------------------------------------


def model_to_bytes(params) -> bytes:
    header = MODEL_MAGIC + struct.pack("<BBBH", MODEL_VERSION, KIND_CODES[params.kind], params.n_classes, params.hyper)
    body = b"".join(np.asarray(a, dtype="<f4").tobytes() for a in param_arrays(params))
    return header + body


def model_from_bytes(buf: bytes, dtype=np.float32):
    if len(buf) < 9 or buf[:4] != MODEL_MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    version, kind_code, n, hyper = struct.unpack_from("<BBBH", buf, 4)
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model file version {version}")
    if kind_code not in KIND_NAMES:
        raise ModelFormatError(f"unknown model kind code {kind_code}")
    cls = PARAM_TYPES[KIND_NAMES[kind_code]]
    offset = 9
    arrays = []
    for shape in cls.shapes(hyper, n).values():
        count = int(np.prod(shape, dtype=np.int64))
        if offset + 4 * count > len(buf):
            raise ModelFormatError("model file truncated")
        arrays.append(np.frombuffer(buf, dtype="<f4", count=count, offset=offset).reshape(shape).astype(dtype))
        offset += 4 * count
    if offset != len(buf):
        raise ModelFormatError(f"{len(buf) - offset} trailing bytes in model file")
    return cls(*arrays)


def save_model(params, path) -> int:
    data = model_to_bytes(params)
    with open(path, "wb") as f:
        f.write(data)
    return len(data)


def load_model(path, dtype=np.float32):
    with open(path, "rb") as f:
        return model_from_bytes(f.read(), dtype)
