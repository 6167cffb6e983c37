"""Small reverse-mode autodiff engine over numpy arrays.

Only the handful of ops the desk-scale CNNs need are provided: conv2d,
linear, relu, global average pooling, elementwise add and a fused
softmax cross-entropy. Values are float32 by default; passing float64
arrays in keeps every op in float64, which is what the gradient checks use.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, StateError

_FLOATS = (np.float32, np.float64)


def _as_float(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype.type not in _FLOATS:
        arr = arr.astype(np.float32)
    return arr


def _check_finite(arr: np.ndarray, where: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values produced by {where}")


class Tensor:
    """Dense array with an optional gradient buffer and a link to its producer.

    ``grad_keep`` is an optional boolean vector over the leading axis. When it
    is set, gradient rows where it is False are forced to zero after every
    backward pass; pruned filters use this to stay frozen.
    """

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = _as_float(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self.grad_keep: Optional[np.ndarray] = None
        self._parents: Sequence[Tensor] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise StateError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=self.dtype)
        if grad.shape != self.shape:
            raise ShapeError(f"upstream gradient shape {grad.shape} != output shape {self.shape}")

        order: list[Tensor] = []
        seen: set[int] = set()

        def visit(node: Tensor) -> None:
            stack = [(node, False)]
            while stack:
                t, done = stack.pop()
                if done:
                    order.append(t)
                    continue
                if id(t) in seen:
                    continue
                seen.add(id(t))
                stack.append((t, True))
                for p in t._parents:
                    if id(p) not in seen:
                        stack.append((p, False))

        visit(self)
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    if node.grad_keep is not None:
                        g = g * node.grad_keep.reshape((-1,) + (1,) * (g.ndim - 1))
                    _check_finite(g, f"backward into {node!r}")
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not (p.requires_grad or p._backward is not None):
                    continue
                prev = grads.get(id(p))
                grads[id(p)] = pg if prev is None else prev + pg


def _result(data: np.ndarray, parents: Sequence[Tensor], backward, where: str) -> Tensor:
    _check_finite(data, where)
    out = Tensor(data)
    if any(p.requires_grad or p._backward is not None for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def parameter(data, name: Optional[str] = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


# ---------------------------------------------------------------- conv2d


@dataclass
class ConvState:
    """What conv2d_backward needs from the forward pass."""

    cols: np.ndarray  # (N, C*KH*KW, OH*OW)
    weight: np.ndarray
    input_shape: tuple
    stride: int
    pad: int
    out_hw: tuple
    has_bias: bool


def _out_extent(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: Optional[np.ndarray] = None,
                   stride: int = 1, pad: int = 0) -> tuple[np.ndarray, ConvState]:
    """NCHW x OIHW convolution via im2col. Returns (output NOHW, state)."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and weight, got {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if c != ci:
        raise ShapeError(f"input has {c} channels but weight expects {ci}")
    if stride < 1 or pad < 0:
        raise ShapeError(f"invalid stride={stride} / pad={pad}")
    if b is not None and b.shape != (o,):
        raise ShapeError(f"bias shape {b.shape} != ({o},)")
    oh, ow = _out_extent(h, kh, stride, pad), _out_extent(wd, kw, stride, pad)
    if oh < 1 or ow < 1:
        raise ShapeError(f"kernel {kh}x{kw} does not fit input {h}x{wd} with pad {pad}")

    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]
    # (N, C, OH, OW, KH, KW) -> (N, C, KH, KW, OH, OW): channel-major, then kernel row, then column
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(n, c * kh * kw, oh * ow)
    out = np.matmul(w.reshape(o, -1), cols)
    if b is not None:
        out += b[None, :, None]
    state = ConvState(cols, w, x.shape, stride, pad, (oh, ow), b is not None)
    return out.reshape(n, o, oh, ow), state


def conv2d_backward(state: Optional[ConvState], grad_out: np.ndarray):
    """Returns (grad_input, grad_weight, grad_bias); grad_bias is None without bias."""
    if state is None:
        raise StateError("conv2d_backward called before conv2d_forward")
    n, c, h, wd = state.input_shape
    o, _, kh, kw = state.weight.shape
    oh, ow = state.out_hw
    if grad_out.shape != (n, o, oh, ow):
        raise ShapeError(f"upstream gradient {grad_out.shape} != forward output {(n, o, oh, ow)}")
    g = grad_out.reshape(n, o, oh * ow)
    grad_w = np.tensordot(g, state.cols, axes=([0, 2], [0, 2])).reshape(state.weight.shape)
    grad_b = g.sum(axis=(0, 2)) if state.has_bias else None

    gcols = np.matmul(state.weight.reshape(o, -1).T, g).reshape(n, c, kh, kw, oh, ow)
    p, s = state.pad, state.stride
    gxp = np.zeros((n, c, h + 2 * p, wd + 2 * p), dtype=grad_out.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + s * oh:s, j:j + s * ow:s] += gcols[:, :, i, j]
    grad_x = gxp[:, :, p:p + h, p:p + wd] if p else gxp
    return grad_x, grad_w, grad_b


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    out, state = conv2d_forward(x.data, w.data, None if b is None else b.data, stride, pad)

    def backward(g):
        gx, gw, gb = conv2d_backward(state, g)
        return (gx, gw) if b is None else (gx, gw, gb)

    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, backward, "conv2d")


# ---------------------------------------------------------------- linear


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeError(f"linear: bias {b.shape} != ({w.shape[0]},)")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data

    def backward(g):
        gx = g @ w.data
        gw = g.T @ x.data
        return (gx, gw) if b is None else (gx, gw, g.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return _result(out, parents, backward, "linear")


# ---------------------------------------------------------------- elementwise / pooling


def relu(x: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    positive = x.data > 0
    return _result(np.where(positive, x.data, 0).astype(x.dtype), (x,),
                   lambda g: (g * positive,), "relu")


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def global_avg_pool(x: Tensor) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool expects NCHW, got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).astype(x.dtype),)

    return _result(out, (x,), backward, "global_avg_pool")


def mul_rows(x: Tensor, keep: np.ndarray, pass_grad: bool = False) -> Tensor:
    """Zero the rows (leading-axis slices) of ``x`` where ``keep`` is False.

    With ``pass_grad`` the backward pass ignores the mask, so masked rows still
    receive the gradient they would have had unmasked.
    """
    keep = np.asarray(keep, dtype=bool)
    if keep.shape != (x.shape[0],):
        raise ShapeError(f"row mask of length {keep.shape} does not match leading extent {x.shape[0]}")
    factor = keep.astype(x.dtype).reshape((-1,) + (1,) * (x.data.ndim - 1))
    if pass_grad:
        return _result(x.data * factor, (x,), lambda g: (g,), "mul_rows")
    return _result(x.data * factor, (x,), lambda g: (g * factor,), "mul_rows")


# ---------------------------------------------------------------- loss


def softmax_cross_entropy_forward(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    if logits.ndim != 2:
        raise ShapeError(f"logits must be N x C, got {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"labels must lie in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    loss = -log_p[np.arange(n), labels].mean()
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1
    grad /= n
    return float(loss), grad.astype(logits.dtype)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    loss, grad = softmax_cross_entropy_forward(logits.data, labels)
    return _result(np.asarray(loss, dtype=logits.dtype), (logits,),
                   lambda g: (grad * g,), "softmax_cross_entropy")
