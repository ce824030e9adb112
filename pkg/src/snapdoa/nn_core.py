"""Minimal reverse-mode autodiff over dense float64 arrays.

Exactly the operator set the snapshot-transformer forward pass needs, plus an
MSE loss head, the one-cycle learning-rate schedule, and plain SGD.  Tensors
hold tokens along the last axis and features along the second-to-last, so a
batch of snapshot matrices is shaped (batch, features, snapshots); softmax /
layer norm / mean all act along a single column (one token) at a time.

Also home of the SNAPTF01 checkpoint format (binary, little-endian): magic
``SNAPTF01``; seven ``u32`` config fields (layers, d_model, d_attn, d_ff,
hidden_out, k_max, m); ``u32`` parameter count; then per parameter ``u16``
name length, UTF-8 name, ``u8`` ndim, ``ndim * u32`` shape, and the ``f64``
data in C order.  Parameter order is fixed by the writer.
"""

from __future__ import annotations

import struct
from typing import Iterable

import numpy as np

LAYERNORM_EPS = 1e-5

_CKPT_MAGIC = b"SNAPTF01"
CHECKPOINT_CONFIG_FIELDS = ("layers", "d_model", "d_attn", "d_ff",
                            "hidden_out", "k_max", "m")

PRIMITIVES = ("matmul", "add_broadcast", "relu", "softmax_cols",
              "layernorm_cols", "mean_cols", "scale", "mse")


class Tensor:
    """A float64 array with an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, g: np.ndarray) -> None:
        self.grad = g if self.grad is None else self.grad + g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` along the axes numpy broadcast over."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


class Tape:
    """Ordered record of primitive applications for one backward pass.

    ``record=False`` turns the tape into a pure-forward evaluator (used for
    inference), skipping both recording and gradient bookkeeping.
    """

    def __init__(self, record: bool = True):
        self.record = record
        self._records: list[tuple] = []

    # -- dispatch -----------------------------------------------------------

    def apply(self, name: str, *inputs, **kwargs) -> Tensor:
        if name not in PRIMITIVES:
            raise ValueError(f"unknown primitive {name!r}")
        return getattr(self, name if name != "add_broadcast" else "add")(*inputs, **kwargs)

    def _emit(self, name, inputs, out, saved) -> Tensor:
        result = Tensor(out, requires_grad=any(t.requires_grad for t in inputs))
        if self.record and result.requires_grad:
            self._records.append((name, inputs, result, saved))
        return result

    # -- primitives ---------------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor, transpose_a: bool = False) -> Tensor:
        if a.data.ndim < 2 or b.data.ndim < 2:
            raise ValueError("matmul operands must be at least 2-D")
        lhs = _swap(a.data) if transpose_a else a.data
        out = np.matmul(lhs, b.data)
        return self._emit("matmul", (a, b), out, (transpose_a,))

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        try:
            out = a.data + b.data
        except ValueError as exc:
            raise ValueError(f"add_broadcast shape mismatch: {a.shape} + {b.shape}") from exc
        return self._emit("add_broadcast", (a, b), out, None)

    def relu(self, x: Tensor) -> Tensor:
        return self._emit("relu", (x,), np.maximum(x.data, 0.0), None)

    def softmax_cols(self, x: Tensor) -> Tensor:
        if x.data.ndim < 2:
            raise ValueError("softmax_cols expects at least 2-D input")
        z = x.data - x.data.max(axis=-2, keepdims=True)
        e = np.exp(z)
        out = e / e.sum(axis=-2, keepdims=True)
        return self._emit("softmax_cols", (x,), out, (out,))

    def layernorm_cols(self, x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
        if x.data.ndim < 2:
            raise ValueError("layernorm_cols expects at least 2-D input")
        mu = x.data.mean(axis=-2, keepdims=True)
        var = np.mean((x.data - mu) ** 2, axis=-2, keepdims=True)
        inv = 1.0 / np.sqrt(var + LAYERNORM_EPS)
        xhat = (x.data - mu) * inv
        out = gain.data * xhat + bias.data
        return self._emit("layernorm_cols", (x, gain, bias), out, (xhat, inv))

    def mean_cols(self, x: Tensor) -> Tensor:
        if x.data.ndim < 2:
            raise ValueError("mean_cols expects at least 2-D input")
        return self._emit("mean_cols", (x,), x.data.mean(axis=-1, keepdims=True),
                          (x.data.shape[-1],))

    def scale(self, x: Tensor, c: float) -> Tensor:
        return self._emit("scale", (x,), float(c) * x.data, (float(c),))

    def mse(self, pred: Tensor, target: Tensor, weight=None) -> Tensor:
        """Mean of (pred - target)^2, optionally weighted elementwise."""
        if pred.shape != target.shape:
            raise ValueError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
        diff = pred.data - target.data
        sq = diff ** 2 if weight is None else np.asarray(weight, dtype=np.float64) * diff ** 2
        return self._emit("mse", (pred, target), np.float64(np.mean(sq)),
                          (diff, weight))

    # -- reverse pass -------------------------------------------------------

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ValueError("backward needs a scalar loss")
        if not self._records:
            raise ValueError("tape is empty")
        loss.grad = np.ones_like(loss.data)
        for name, inputs, out, saved in reversed(self._records):
            g = out.grad
            if g is None:
                continue
            grads = _BACKWARD[name](g, inputs, saved)
            for tensor, grad in zip(inputs, grads):
                if tensor.requires_grad and grad is not None:
                    tensor.accumulate(grad)


def _bw_matmul(g, inputs, saved):
    a, b = inputs
    (transpose_a,) = saved
    lhs = _swap(a.data) if transpose_a else a.data
    da = np.matmul(g, _swap(b.data))
    if transpose_a:
        da = _swap(da)
    db = np.matmul(_swap(lhs), g)
    return _unbroadcast(da, a.data.shape), _unbroadcast(db, b.data.shape)


def _bw_add(g, inputs, saved):
    a, b = inputs
    return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)


def _bw_relu(g, inputs, saved):
    (x,) = inputs
    return (g * (x.data > 0.0),)


def _bw_softmax_cols(g, inputs, saved):
    (y,) = saved
    dot = np.sum(g * y, axis=-2, keepdims=True)
    return (y * (g - dot),)


def _bw_layernorm_cols(g, inputs, saved):
    x, gain, bias = inputs
    xhat, inv = saved
    d = x.data.shape[-2]
    dxhat = g * gain.data
    dx = inv / d * (d * dxhat
                    - dxhat.sum(axis=-2, keepdims=True)
                    - xhat * np.sum(dxhat * xhat, axis=-2, keepdims=True))
    dgain = _unbroadcast(g * xhat, gain.data.shape)
    dbias = _unbroadcast(g, bias.data.shape)
    return dx, dgain, dbias


def _bw_mean_cols(g, inputs, saved):
    (x,) = inputs
    (t,) = saved
    return (np.broadcast_to(g / t, x.data.shape).copy(),)


def _bw_scale(g, inputs, saved):
    (c,) = saved
    return (c * g,)


def _bw_mse(g, inputs, saved):
    pred, target = inputs
    diff, weight = saved
    d = g * 2.0 * diff / diff.size
    if weight is not None:
        d = d * weight
    return d, -d


_BACKWARD = {
    "matmul": _bw_matmul,
    "add_broadcast": _bw_add,
    "relu": _bw_relu,
    "softmax_cols": _bw_softmax_cols,
    "layernorm_cols": _bw_layernorm_cols,
    "mean_cols": _bw_mean_cols,
    "scale": _bw_scale,
    "mse": _bw_mse,
}


def primitive_forward(tape: Tape, name: str, *inputs, **kwargs) -> Tensor:
    """Apply a named primitive on the tape (dispatch form of the methods)."""
    return tape.apply(name, *inputs, **kwargs)


# --------------------------------------------------------------------------
# Optimization
# --------------------------------------------------------------------------

def onecycle_lr(step: int, total_steps: int, lr_max: float) -> float:
    """One-cycle schedule: linear ramp from lr_max/25 over the first 30% of
    steps, then cosine decay to lr_max/2500 at the final step."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    warmup = 0.3 * total_steps
    start, end = lr_max / 25.0, lr_max / 2500.0
    if step <= warmup:
        return start + (lr_max - start) * (step / warmup if warmup > 0 else 1.0)
    span = (total_steps - 1) - warmup
    frac = (step - warmup) / span if span > 0 else 1.0
    return end + (lr_max - end) * 0.5 * (1.0 + np.cos(np.pi * frac))


def sgd_step(params: Iterable[Tensor], lr: float) -> None:
    """p <- p - lr * grad for every parameter; gradients are cleared."""
    params = list(params)
    for p in params:
        if p.grad is None:
            raise ValueError("sgd_step called with missing gradients")
    for p in params:
        p.data = p.data - lr * p.grad
        p.grad = None


# --------------------------------------------------------------------------
# SNAPTF01 checkpoints
# --------------------------------------------------------------------------

def save_checkpoint(path, config: dict, params: dict[str, Tensor]) -> None:
    """Write config ints and named parameter arrays in their dict order."""
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<7I", *(int(config[f]) for f in CHECKPOINT_CONFIG_FIELDS)))
        fh.write(struct.pack("<I", len(params)))
        for name, tensor in params.items():
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(tensor.data, dtype="<f8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _CKPT_MAGIC:
            raise ValueError(f"not a SNAPTF01 checkpoint: bad magic {magic!r}")
        config = dict(zip(CHECKPOINT_CONFIG_FIELDS, struct.unpack("<7I", fh.read(28))))
        (count,) = struct.unpack("<I", fh.read(4))
        params: dict[str, np.ndarray] = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            size = int(np.prod(shape)) if ndim else 1
            params[name] = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape).copy()
        if fh.read(1):
            raise ValueError("trailing bytes after last parameter")
    return config, params
