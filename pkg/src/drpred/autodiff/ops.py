"""Differentiable operations on Tensors.

Broadcasting is deliberately restricted to equal-shape and scalar cases
(plus the dedicated row-vector bias op) so every adjoint below can be
read and audited line by line. Segment ops accumulate in float64 before
casting back, keeping pooled values stable under row reordering.
"""

from __future__ import annotations

import numpy as np

from drpred.errors import DegenerateBatchError, DimensionError
from drpred.autodiff.tensor import Tensor, active_tape

__all__ = [
    "constant",
    "add",
    "sub",
    "mul",
    "add_bias",
    "scale_rows",
    "matmul",
    "relu",
    "sigmoid",
    "tanh",
    "prelu",
    "exp",
    "log",
    "square",
    "bce_elem",
    "sum_all",
    "mean_all",
    "gather_rows",
    "segment_sum",
    "segment_mean",
    "concat_cols",
    "concat_rows",
    "batchnorm",
    "BatchNormState",
]


def constant(values, dtype=None) -> Tensor:
    return Tensor(values, requires_grad=False, dtype=dtype)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype), requires_grad=False, dtype=like.dtype)


def _record(op, out, parents, backward_fn):
    tape = active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(op, out, parents, backward_fn)
    return out


def _check_elementwise(a: Tensor, b: Tensor, op: str):
    if a.values.shape == b.values.shape:
        return
    if a.values.size == 1 or b.values.size == 1:
        return
    raise DimensionError(f"{op}: shapes {a.values.shape} and {b.values.shape} are not equal or scalar")


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    # Collapse a broadcast gradient back onto a scalar operand.
    if t.values.shape == g.shape:
        return g
    return np.sum(g, dtype=g.dtype).reshape(t.values.shape)


def add(a, b):
    a = a if isinstance(a, Tensor) else _as_tensor(a, b)
    b = _as_tensor(b, a)
    _check_elementwise(a, b, "add")
    out = Tensor(a.values + b.values, dtype=a.dtype)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_reduce_to(g, a))
        if b.requires_grad:
            b.accumulate_grad(_reduce_to(g, b))

    return _record("add", out, (a, b), backward)


def sub(a, b):
    a = a if isinstance(a, Tensor) else _as_tensor(a, b)
    b = _as_tensor(b, a)
    _check_elementwise(a, b, "sub")
    out = Tensor(a.values - b.values, dtype=a.dtype)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_reduce_to(g, a))
        if b.requires_grad:
            b.accumulate_grad(_reduce_to(-g, b))

    return _record("sub", out, (a, b), backward)


def mul(a, b):
    a = a if isinstance(a, Tensor) else _as_tensor(a, b)
    b = _as_tensor(b, a)
    _check_elementwise(a, b, "mul")
    out = Tensor(a.values * b.values, dtype=a.dtype)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_reduce_to(g * b.values, a))
        if b.requires_grad:
            b.accumulate_grad(_reduce_to(g * a.values, b))

    return _record("mul", out, (a, b), backward)


def add_bias(x: Tensor, b: Tensor):
    """x[m,n] + b[n], broadcast over rows; d(b) sums over rows."""
    if x.values.ndim != 2 or b.values.ndim != 1 or x.values.shape[1] != b.values.shape[0]:
        raise DimensionError(f"add_bias: got {x.values.shape} and {b.values.shape}")
    out = Tensor(x.values + b.values, dtype=x.dtype)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g)
        if b.requires_grad:
            b.accumulate_grad(g.sum(axis=0, dtype=np.float64).astype(b.dtype))

    return _record("add_bias", out, (x, b), backward)


def scale_rows(x: Tensor, factors: np.ndarray):
    """Row i of x scaled by constant factors[i]."""
    f = np.asarray(factors, dtype=x.dtype)
    if x.values.ndim != 2 or f.shape != (x.values.shape[0],):
        raise DimensionError(f"scale_rows: got {x.values.shape} and {f.shape}")
    col = f[:, None]
    out = Tensor(x.values * col, dtype=x.dtype)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * col)

    return _record("scale_rows", out, (x,), backward)


def matmul(a: Tensor, b: Tensor):
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise DimensionError("matmul expects 2-D operands")
    if a.values.shape[1] != b.values.shape[0]:
        raise DimensionError(
            f"matmul: inner dimensions disagree: {a.values.shape} x {b.values.shape}"
        )
    out = Tensor(a.values @ b.values, dtype=a.dtype)

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g @ b.values.T)
        if b.requires_grad:
            b.accumulate_grad(a.values.T @ g)

    return _record("matmul", out, (a, b), backward)


# When set to a list, relu/prelu append the smallest |input| they see.
# Finite-difference gradient checks use this to verify the evaluation
# point sits safely away from the activation kinks.
kink_margin_log: list | None = None


def _log_kink_margin(values: np.ndarray):
    if kink_margin_log is not None and values.size:
        kink_margin_log.append(float(np.abs(values).min()))


def relu(x: Tensor):
    _log_kink_margin(x.values)
    mask = x.values > 0
    out = Tensor(np.where(mask, x.values, 0), dtype=x.dtype)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.where(mask, g, 0))

    return _record("relu", out, (x,), backward)


def sigmoid(x: Tensor):
    s = 1.0 / (1.0 + np.exp(-x.values))
    out = Tensor(s, dtype=x.dtype)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * s * (1.0 - s))

    return _record("sigmoid", out, (x,), backward)


def tanh(x: Tensor):
    t = np.tanh(x.values)
    out = Tensor(t, dtype=x.dtype)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * (1.0 - t * t))

    return _record("tanh", out, (x,), backward)


def prelu(x: Tensor, alpha: Tensor):
    """PReLU with a learnable scalar slope for the negative part."""
    if alpha.values.size != 1:
        raise DimensionError("prelu expects a scalar slope tensor")
    _log_kink_margin(x.values)
    pos = x.values > 0
    a = float(alpha.values.reshape(()))
    out = Tensor(np.where(pos, x.values, a * x.values), dtype=x.dtype)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.where(pos, g, a * g))
        if alpha.requires_grad:
            da = np.sum(g * np.where(pos, 0, x.values), dtype=np.float64)
            alpha.accumulate_grad(np.asarray(da, dtype=alpha.dtype).reshape(alpha.values.shape))

    return _record("prelu", out, (x, alpha), backward)


def exp(x: Tensor):
    e = np.exp(x.values)
    out = Tensor(e, dtype=x.dtype)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * e)

    return _record("exp", out, (x,), backward)


def log(x: Tensor):
    out = Tensor(np.log(x.values), dtype=x.dtype)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g / x.values)

    return _record("log", out, (x,), backward)


def square(x: Tensor):
    out = Tensor(x.values * x.values, dtype=x.dtype)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(2.0 * g * x.values)

    return _record("square", out, (x,), backward)


def bce_elem(pred: Tensor, target):
    """Elementwise binary cross-entropy against a constant target.

    Predictions are clamped away from {0,1} inside the logs only, so
    entries with pred == target contribute exactly the binary entropy of
    the target.
    """
    t = target.values if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if t.shape != pred.values.shape:
        raise DimensionError(f"bce_elem: shapes {pred.values.shape} and {t.shape} differ")
    eps = 1e-12 if pred.dtype == np.float64 else 1e-7
    p = np.clip(pred.values, eps, 1.0 - eps)
    out = Tensor(-(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)), dtype=pred.dtype)

    def backward(g):
        if pred.requires_grad:
            inside = (pred.values > eps) & (pred.values < 1.0 - eps)
            dp = (p - t) / (p * (1.0 - p))
            pred.accumulate_grad(np.where(inside, g * dp, 0))

    return _record("bce_elem", out, (pred,), backward)


def sum_all(x: Tensor):
    out = Tensor(np.sum(x.values, dtype=np.float64).astype(x.dtype), dtype=x.dtype)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.broadcast_to(g.reshape(()), x.values.shape).astype(x.dtype))

    return _record("sum_all", out, (x,), backward)


def mean_all(x: Tensor):
    n = x.values.size
    out = Tensor((np.sum(x.values, dtype=np.float64) / n).astype(x.dtype), dtype=x.dtype)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad((np.broadcast_to(g.reshape(()), x.values.shape) / n).astype(x.dtype))

    return _record("mean_all", out, (x,), backward)


def _scatter_matrix(idx: np.ndarray, n_rows: int, dtype) -> np.ndarray:
    """One-hot [n_rows x len(idx)]; scatter-add becomes a BLAS matmul,
    which beats np.add.at by an order of magnitude at our sizes."""
    m = np.zeros((n_rows, idx.size), dtype=dtype)
    m[idx, np.arange(idx.size)] = 1.0
    return m


def gather_rows(x: Tensor, indices):
    idx = np.asarray(indices, dtype=np.intp)
    if x.values.ndim != 2:
        raise DimensionError("gather_rows expects a 2-D tensor")
    if idx.size and (idx.min() < 0 or idx.max() >= x.values.shape[0]):
        raise DimensionError("gather_rows: index out of range")
    out = Tensor(x.values[idx], dtype=x.dtype)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(_scatter_matrix(idx, x.values.shape[0], x.dtype) @ g)

    return _record("gather_rows", out, (x,), backward)


def segment_sum(x: Tensor, segment_ids, num_segments: int):
    """Sum rows of x into `num_segments` buckets given by segment_ids."""
    seg = np.asarray(segment_ids, dtype=np.intp)
    if x.values.ndim != 2 or seg.shape != (x.values.shape[0],):
        raise DimensionError("segment_sum: ids must match the number of rows")
    if seg.size and (seg.min() < 0 or seg.max() >= num_segments):
        raise DimensionError("segment_sum: segment id out of range")
    scatter = _scatter_matrix(seg, num_segments, x.dtype)
    out = Tensor(scatter @ x.values, dtype=x.dtype)

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g[seg])

    return _record("segment_sum", out, (x,), backward)


def segment_mean(x: Tensor, segment_ids, num_segments: int):
    seg = np.asarray(segment_ids, dtype=np.intp)
    counts = np.bincount(seg, minlength=num_segments).astype(np.float64)
    if np.any(counts == 0):
        raise DimensionError("segment_mean: empty segment")
    total = segment_sum(x, seg, num_segments)
    return scale_rows(total, (1.0 / counts).astype(x.dtype))


def concat_cols(parts):
    parts = list(parts)
    if not parts:
        raise DimensionError("concat_cols needs at least one tensor")
    rows = parts[0].values.shape[0]
    for p in parts:
        if p.values.ndim != 2 or p.values.shape[0] != rows:
            raise DimensionError("concat_cols: row counts differ")
    out = Tensor(np.concatenate([p.values for p in parts], axis=1), dtype=parts[0].dtype)
    widths = [p.values.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p.accumulate_grad(np.ascontiguousarray(g[:, lo:hi]))

    return _record("concat_cols", out, tuple(parts), backward)


def concat_rows(parts):
    parts = list(parts)
    if not parts:
        raise DimensionError("concat_rows needs at least one tensor")
    cols = parts[0].values.shape[1]
    for p in parts:
        if p.values.ndim != 2 or p.values.shape[1] != cols:
            raise DimensionError("concat_rows: column counts differ")
    out = Tensor(np.concatenate([p.values for p in parts], axis=0), dtype=parts[0].dtype)
    heights = [p.values.shape[0] for p in parts]
    offsets = np.cumsum([0] + heights)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p.accumulate_grad(np.ascontiguousarray(g[lo:hi, :]))

    return _record("concat_rows", out, tuple(parts), backward)


class BatchNormState:
    """Running statistics for one batch-normalized layer."""

    def __init__(self, width: int, momentum=0.1, eps=1e-5, dtype=np.float32):
        self.running_mean = np.zeros(width, dtype=dtype)
        self.running_var = np.ones(width, dtype=dtype)
        self.momentum = momentum
        self.eps = eps

    def to_arrays(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def load_arrays(self, arrays, prefix=""):
        self.running_mean = arrays[prefix + "running_mean"].copy()
        self.running_var = arrays[prefix + "running_var"].copy()


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, training: bool):
    """Batch normalization over rows of x[m, n].

    Train mode normalizes by biased batch statistics and updates the
    running buffers; eval mode normalizes by the running buffers. The
    train-mode backward uses the compact whitened-gradient form.
    """
    if x.values.ndim != 2:
        raise DimensionError("batchnorm expects a 2-D tensor")
    n = x.values.shape[1]
    if gamma.values.shape != (n,) or beta.values.shape != (n,):
        raise DimensionError("batchnorm: gamma/beta width mismatch")
    m = x.values.shape[0]
    if training:
        if m < 2:
            raise DegenerateBatchError("batchnorm in train mode needs a batch of at least 2")
        mean = x.values.mean(axis=0, dtype=np.float64)
        var = x.values.var(axis=0, dtype=np.float64)
        mom = state.momentum
        state.running_mean = ((1 - mom) * state.running_mean + mom * mean).astype(x.dtype)
        state.running_var = ((1 - mom) * state.running_var + mom * var).astype(x.dtype)
    else:
        mean = state.running_mean.astype(np.float64)
        var = state.running_var.astype(np.float64)
    invstd = 1.0 / np.sqrt(var + state.eps)
    xhat = ((x.values - mean) * invstd).astype(x.dtype)
    out = Tensor(xhat * gamma.values + beta.values, dtype=x.dtype)

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate_grad(np.sum(g * xhat, axis=0, dtype=np.float64).astype(gamma.dtype))
        if beta.requires_grad:
            beta.accumulate_grad(np.sum(g, axis=0, dtype=np.float64).astype(beta.dtype))
        if x.requires_grad:
            dxhat = g * gamma.values
            if training:
                dx = (invstd / m) * (
                    m * dxhat
                    - dxhat.sum(axis=0, dtype=np.float64)
                    - xhat * np.sum(dxhat * xhat, axis=0, dtype=np.float64)
                )
            else:
                dx = dxhat * invstd
            x.accumulate_grad(dx.astype(x.dtype))

    return _record("batchnorm", out, (x, gamma, beta), backward)
