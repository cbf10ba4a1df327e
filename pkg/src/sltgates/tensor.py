"""A small dense-tensor engine with tape-based reverse-mode autodiff.

Operations executed while any input requires a gradient are appended to the
active :class:`Tape`. :func:`backward` walks that tape once, in reverse, and
accumulates gradients into the ``grad`` buffers of leaf tensors. The tape is
never cleared implicitly; training loops call :meth:`Tape.reset` per step.

Scalar reductions (cross-entropy, sums) are carried in float64 whatever the
working precision, so logged loss decompositions are exact.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import kernels

_DTYPES = {"float32": np.float32, "float64": np.float64}


class ShapeError(ValueError):
    """Operand shapes are incompatible for an operation."""


class NumericFault(FloatingPointError):
    """An operation produced NaN or Inf."""


class _State(threading.local):
    def __init__(self):
        self.dtype = np.dtype(np.float64)
        self.grad_enabled = True
        self.tapes: list[Tape] = []
        self.default_tape = Tape()


# ---------------------------------------------------------------------------
# precision


def get_default_dtype() -> np.dtype:
    return _state.dtype


def set_default_dtype(dtype) -> None:
    """Set the working float precision ("float32" or "float64") for this thread."""
    _state.dtype = _resolve_dtype(dtype)


@contextlib.contextmanager
def precision(dtype):
    old = _state.dtype
    _state.dtype = _resolve_dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = old


def _resolve_dtype(dtype) -> np.dtype:
    if isinstance(dtype, str):
        if dtype not in _DTYPES:
            raise ValueError(f"unsupported precision {dtype!r}; use float32 or float64")
        return np.dtype(_DTYPES[dtype])
    dt = np.dtype(dtype)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported precision {dt}")
    return dt


# ---------------------------------------------------------------------------
# tensor and tape


class Tensor:
    """Dense row-major float array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "_from_op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        dt = _resolve_dtype(dtype) if dtype is not None else _state.dtype
        self.data = np.array(data, dtype=dt, order="C", copy=True)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._from_op = False

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        arr.flags.writeable = False
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t._from_op = requires_grad
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self._from_op

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def zero_grad(self) -> None:
        if self.requires_grad:
            if self.grad is None or self.grad.shape != self.data.shape:
                self.grad = np.zeros_like(self.data)
            else:
                self.grad.fill(0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return elementwise_mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __add__(self, other):
        return add(self, other)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"


@dataclass
class _Node:
    out: Tensor
    inputs: tuple
    backward: Callable
    name: str


class Tape:
    """Ordered record of differentiable operations for one optimization step."""

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self):
        return len(self.nodes)

    def reset(self) -> None:
        self.nodes.clear()

    def __enter__(self):
        _state.tapes.append(self)
        return self

    def __exit__(self, *exc):
        _state.tapes.pop()
        return False


def current_tape() -> Tape:
    return _state.tapes[-1] if _state.tapes else _state.default_tape


def reset_tape() -> None:
    current_tape().reset()


@contextlib.contextmanager
def no_grad():
    old = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = old


def record(out: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable, name: str,
           check: bool = True) -> Tensor:
    """Wrap ``out`` as the result of op ``name`` and put it on the active tape.

    ``backward_fn(g)`` must return one gradient (or ``None``) per input.
    Ops that only move, select or clip finite inputs pass ``check=False``.
    """
    out = np.asarray(out)
    if check and not np.isfinite(np.sum(out, dtype=np.float64)):
        raise NumericFault(f"{name} produced a non-finite value")
    needs = _state.grad_enabled and any(t.requires_grad for t in inputs)
    t = Tensor._wrap(out, needs)
    if needs:
        current_tape().nodes.append(_Node(t, tuple(inputs), backward_fn, name))
    return t


_state = _State()


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Populate gradients of every leaf reachable from the scalar ``loss``.

    Gradients accumulate; callers zero them between steps.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor that requires grad")
    tape = tape if tape is not None else current_tape()
    if loss.is_leaf:
        loss.grad += 1.0
        return
    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node.out), None)
        if g is None:
            continue
        node.out.grad = g
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            if gi.shape != inp.shape:
                raise ShapeError(f"{node.name} backward produced {gi.shape} for input {inp.shape}")
            gi = gi.astype(inp.dtype, copy=False)
            if inp.is_leaf:
                inp.grad += gi
            else:
                key = id(inp)
                prev = pending.get(key)
                pending[key] = gi if prev is None else prev + gi
    if pending:
        raise ValueError("loss was not produced by operations on the given tape")


# ---------------------------------------------------------------------------
# operations


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return (g @ bd.T if a.requires_grad else None,
                ad.T @ g if b.requires_grad else None)

    return record(ad @ bd, (a, b), bw, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got {a.shape}")
    return record(a.data.T, (a,), lambda g: (g.T,), "transpose", check=False)


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return record(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "permute", check=False)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    src = a.shape
    return record(out, (a,), lambda g: (g.reshape(src),), "reshape", check=False)


def flatten(a: Tensor) -> Tensor:
    """Collapse all but the leading (batch) dimension."""
    return reshape(a, (a.shape[0], -1))


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "add")
    return record(a.data + b.data, (a, b), lambda g: (g, g), "add")


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "elementwise_mul")
    ad, bd = a.data, b.data

    def bw(g):
        return (g * bd if a.requires_grad else None,
                g * ad if b.requires_grad else None)

    return record(ad * bd, (a, b), bw, "elementwise_mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return record(a.data * a.dtype.type(c), (a,), lambda g: (g * c,), "scale")


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    src = a.shape
    out = np.asarray(np.sum(a.data, dtype=np.float64))
    return record(out, (a,), lambda g: (np.broadcast_to(g, src).copy(),), "sum")


def relu(a: Tensor) -> Tensor:
    ad = a.data
    out = np.maximum(ad, 0)
    return record(out, (a,), lambda g: (kernels.relu_grad(ad, g),), "relu",
                  check=False)


def hard_sigmoid_clamp(a: Tensor) -> Tensor:
    """max(0, min(1, a)); gradient 1 strictly inside (0, 1), 0 elsewhere."""
    ad = a.data
    return record(kernels.clamp01(ad), (a,), lambda g: (kernels.clamp01_grad(ad, g),),
                  "hard_sigmoid_clamp", check=False)


def im2col(x: Tensor, kh: int, kw: int, stride: int, padding: int) -> Tensor:
    xs = x.shape
    cols = kernels.im2col(x.data, kh, kw, stride, padding)
    return record(cols, (x,), lambda g: (kernels.col2im(g, xs, kh, kw, stride, padding),),
                  "im2col", check=False)


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of an NCHW batch with an OCkhkw kernel via im2col + matmul."""
    if x.ndim != 4 or kernel.ndim != 4 or x.shape[1] != kernel.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {kernel.shape}")
    if stride < 1 or padding < 0:
        raise ValueError("conv2d: stride must be >= 1 and padding >= 0")
    n, c, h, w = x.shape
    o, _, kh, kw = kernel.shape
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d: kernel {kernel.shape} larger than padded input {x.shape}")
    cols = im2col(x, kh, kw, stride, padding)
    kmat = reshape(kernel, (o, c * kh * kw))
    out = matmul(cols, transpose(kmat))
    return permute(reshape(out, (n, oh, ow, o)), (0, 3, 1, 2))


def maxpool2d(x: Tensor, k: int = 2) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects NCHW input, got {x.shape}")
    xs = x.shape
    out, arg = kernels.maxpool2d(x.data, k)
    return record(out, (x,), lambda g: (kernels.maxpool2d_grad(g, arg, xs, k),), "maxpool2d",
                  check=False)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    if logits.ndim != 2:
        raise ShapeError(f"softmax_cross_entropy expects N x K logits, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}); got range "
                         f"[{labels.min()}, {labels.max()}]")
    loss, probs = kernels.softmax_xent(logits.data, labels)

    def bw(g):
        d = probs.copy()
        d[np.arange(n), labels] -= 1.0
        return (d * (float(g) / n),)

    return record(np.asarray(loss), (logits,), bw, "softmax_cross_entropy")
