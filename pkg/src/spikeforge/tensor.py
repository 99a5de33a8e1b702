"""Dense tensor arithmetic for small MLP/CNN inference.

Values are numpy float64 arrays in row-major (C) order.  Operations are
pure functions; every public op validates shapes up front and checks the
result for non-finite entries.  Weight files store float32, widened to
float64 on load, so accumulation here is always 64-bit.
"""

from __future__ import annotations

import numpy as np


class DimensionError(ValueError):
    """Operand shapes do not compose."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared in an operation result."""


def as_tensor(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    return np.ascontiguousarray(a)


def check_finite(a: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"non-finite values in {what}")
    return a


def matmul(a, b) -> np.ndarray:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-d operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    return check_finite(a @ b, "matmul result")


def conv2d(x, w, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Direct cross-correlation (no kernel flip) with zero padding.

    x: (C_in, H, W), w: (C_out, C_in, kh, kw) -> (C_out, H', W').
    """
    x = as_tensor(x)
    w = as_tensor(w)
    if x.ndim != 3 or w.ndim != 4:
        raise DimensionError(f"conv2d expects 3-d input and 4-d kernel, got {x.shape}, {w.shape}")
    c_in, h, wid = x.shape
    c_out, c_in_w, kh, kw = w.shape
    if c_in != c_in_w:
        raise DimensionError(f"input channels {c_in} != kernel channels {c_in_w}")
    if stride < 1:
        raise DimensionError("stride must be >= 1")
    h_num = h + 2 * pad - kh
    w_num = wid + 2 * pad - kw
    if h_num < 0 or w_num < 0 or h_num % stride or w_num % stride:
        raise DimensionError(
            f"output size not a positive integer for input {x.shape}, "
            f"kernel {w.shape}, stride={stride}, pad={pad}"
        )
    h_out = h_num // stride + 1
    w_out = w_num // stride + 1

    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad))) if pad else x
    out = np.zeros((c_out, h_out, w_out))
    # accumulate one kernel offset at a time; desk-scale inputs keep this fast
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, i : i + h_out * stride : stride, j : j + w_out * stride : stride]
            out += np.einsum("oc,chw->ohw", w[:, :, i, j], patch)
    return check_finite(out, "conv2d result")


def avgpool2d(x, k: int, stride: int | None = None) -> np.ndarray:
    """Mean over each k x k window.  x: (C, H, W)."""
    x = as_tensor(x)
    if x.ndim != 3:
        raise DimensionError(f"avgpool2d expects 3-d input, got {x.shape}")
    if stride is None:
        stride = k
    c, h, w = x.shape
    if k > h or k > w:
        raise DimensionError(f"window {k} exceeds input {x.shape}")
    if (h - k) % stride or (w - k) % stride:
        raise DimensionError(f"window/stride do not tile input {x.shape}")
    h_out = (h - k) // stride + 1
    w_out = (w - k) // stride + 1
    out = np.zeros((c, h_out, w_out))
    for i in range(k):
        for j in range(k):
            out += x[:, i : i + h_out * stride : stride, j : j + w_out * stride : stride]
    return check_finite(out / (k * k), "avgpool2d result")


def _check_same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "add")
    return check_finite(a + b, "add result")


def sub(a, b) -> np.ndarray:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "sub")
    return check_finite(a - b, "sub result")


def scale(a, c: float) -> np.ndarray:
    return check_finite(as_tensor(a) * float(c), "scale result")


def relu(a) -> np.ndarray:
    return np.maximum(as_tensor(a), 0.0)


def clamp(a, lo: float, hi: float) -> np.ndarray:
    return np.clip(as_tensor(a), lo, hi)
