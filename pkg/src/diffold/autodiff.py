"""Minimal reverse-mode autodiff over float64 numpy arrays.

Implements exactly the operation set the denoising network needs, each with
an analytic backward verified against central finite differences
(:func:`grad_check`).  Tensors form an implicit DAG through parent links;
``backward`` walks the exact reverse topological order.  Every op validates
shapes up front and checks its output for NaN/Inf, raising
:class:`NumericFault` on the first bad value.

Broadcasting is deliberately restricted to row-vector-over-matrix (a (1, d)
row against an (n, d) matrix) to keep the gradient rules auditable.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class NumericFault(ArithmeticError):
    """A non-finite value appeared in a forward or backward computation."""


class ShapeError(ValueError):
    """Operands have incompatible shapes; message reports both."""


class Tensor:
    """Array node in the compute graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar output."""
        if self.data.shape != ():
            raise ValueError(f"backward requires a scalar output, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"


def _result(data: np.ndarray, parents: Sequence[Tensor], op: str,
            backward: Callable[[np.ndarray], None]) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericFault(f"non-finite values produced by op {op!r}")
    out = Tensor(data)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _require_2d(x: Tensor, op: str) -> None:
    if x.data.ndim != 2:
        raise ShapeError(f"{op}: expected 2-D operand, got shape {x.shape}")


def _is_row_broadcast(a_shape, b_shape) -> bool:
    return (
        len(a_shape) == 2
        and len(b_shape) == 2
        and b_shape[0] == 1
        and a_shape[1] == b_shape[1]
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require_2d(a, "matmul")
    _require_2d(b, "matmul")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    return _result(a.data @ b.data, (a, b), "matmul", backward)


def transpose(x: Tensor) -> Tensor:
    _require_2d(x, "transpose")

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate(g.T)

    return _result(x.data.T.copy(), (x,), "transpose", backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape == b.shape:
        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a.accumulate(g)
            if b.requires_grad:
                b.accumulate(g)
    elif _is_row_broadcast(a.shape, b.shape):
        def backward(g: np.ndarray) -> None:
            if a.requires_grad:
                a.accumulate(g)
            if b.requires_grad:
                b.accumulate(g.sum(axis=0, keepdims=True))
    else:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} (row broadcast only)")
    return _result(a.data + b.data, (a, b), "add", backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes differ, {a.shape} vs {b.shape}")

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate(g * b.data)
        if b.requires_grad:
            b.accumulate(g * a.data)

    return _result(a.data * b.data, (a, b), "mul", backward)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate(g * c)

    return _result(x.data * c, (x,), "scale", backward)


def concat(parts: Iterable[Tensor]) -> Tensor:
    """Column-wise concatenation of 2-D tensors with equal row counts."""
    parts = list(parts)
    for p in parts:
        _require_2d(p, "concat")
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat: row counts differ, {[p.shape for p in parts]}")
    widths = [p.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def backward(g: np.ndarray) -> None:
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if p.requires_grad:
                p.accumulate(g[:, lo:hi])

    return _result(np.concatenate([p.data for p in parts], axis=1), parts, "concat", backward)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    _require_2d(x, "slice_cols")
    if not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"slice_cols: [{start}:{stop}] out of range for {x.shape}")

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[:, start:stop] = g
            x.accumulate(full)

    return _result(x.data[:, start:stop].copy(), (x,), "slice_cols", backward)


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Rows of ``x`` selected by an integer index vector."""
    _require_2d(x, "gather_rows")
    index = np.asarray(index, dtype=np.int64)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            full = np.zeros_like(x.data)
            np.add.at(full, index, g)
            x.accumulate(full)

    return _result(x.data[index].copy(), (x,), "gather_rows", backward)


def scatter_sum(messages: Tensor, dst: np.ndarray, n_rows: int) -> Tensor:
    """Segment sum: output row i is the sum of messages with dst == i."""
    _require_2d(messages, "scatter_sum")
    dst = np.asarray(dst, dtype=np.int64)
    if dst.shape != (messages.shape[0],):
        raise ShapeError(
            f"scatter_sum: dst shape {dst.shape} vs messages {messages.shape}"
        )
    out = np.zeros((n_rows, messages.shape[1]))
    np.add.at(out, dst, messages.data)

    def backward(g: np.ndarray) -> None:
        if messages.requires_grad:
            messages.accumulate(g[dst])

    return _result(out, (messages,), "scatter_sum", backward)


def repeat_rows(row: Tensor, n: int) -> Tensor:
    """Broadcast a (1, d) row to (n, d); gradient sums back over rows."""
    _require_2d(row, "repeat_rows")
    if row.shape[0] != 1:
        raise ShapeError(f"repeat_rows expects a (1, d) row, got {row.shape}")

    def backward(g: np.ndarray) -> None:
        if row.requires_grad:
            row.accumulate(g.sum(axis=0, keepdims=True))

    return _result(np.repeat(row.data, n, axis=0), (row,), "repeat_rows", backward)


def sigmoid(x: Tensor) -> Tensor:
    y = np.where(x.data >= 0, 1.0 / (1.0 + np.exp(-np.abs(x.data))),
                 np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))))

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate(g * y * (1.0 - y))

    return _result(y, (x,), "sigmoid", backward)


def relu(x: Tensor) -> Tensor:
    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate(g * (x.data > 0))

    return _result(np.maximum(x.data, 0.0), (x,), "relu", backward)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
            x.accumulate(g * (cdf + x.data * pdf))

    return _result(x.data * cdf, (x,), "gelu", backward)


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {"gelu": gelu, "relu": relu}


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax with max subtraction."""
    _require_2d(x, "softmax")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            dot = np.sum(g * y, axis=1, keepdims=True)
            x.accumulate(y * (g - dot))

    return _result(y, (x,), "softmax", backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization followed by a learnable affine map."""
    _require_2d(x, "layer_norm")
    if gain.shape != (1, x.shape[1]) or bias.shape != (1, x.shape[1]):
        raise ShapeError(
            f"layer_norm: gain/bias must be (1, {x.shape[1]}), got {gain.shape}, {bias.shape}"
        )
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv

    def backward(g: np.ndarray) -> None:
        if gain.requires_grad:
            gain.accumulate(np.sum(g * xhat, axis=0, keepdims=True))
        if bias.requires_grad:
            bias.accumulate(np.sum(g, axis=0, keepdims=True))
        if x.requires_grad:
            gh = g * gain.data
            m1 = gh.mean(axis=1, keepdims=True)
            m2 = (gh * xhat).mean(axis=1, keepdims=True)
            x.accumulate(inv * (gh - m1 - xhat * m2))

    return _result(xhat * gain.data + bias.data, (x, gain, bias), "layer_norm", backward)


def scale_shift(h: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    """Feature-wise affine conditioning: ``h * (gamma + 1) + beta``."""
    _require_2d(h, "scale_shift")
    if gamma.shape != (1, h.shape[1]) or beta.shape != (1, h.shape[1]):
        raise ShapeError(
            f"scale_shift: gamma/beta must be (1, {h.shape[1]}), got {gamma.shape}, {beta.shape}"
        )

    def backward(g: np.ndarray) -> None:
        if h.requires_grad:
            h.accumulate(g * (gamma.data + 1.0))
        if gamma.requires_grad:
            gamma.accumulate(np.sum(g * h.data, axis=0, keepdims=True))
        if beta.requires_grad:
            beta.accumulate(np.sum(g, axis=0, keepdims=True))

    return _result(h.data * (gamma.data + 1.0) + beta.data, (h, gamma, beta),
                   "scale_shift", backward)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean over rows of -log softmax(logits)[target]."""
    _require_2d(logits, "cross_entropy")
    targets = np.asarray(targets, dtype=np.int64)
    n = logits.shape[0]
    if targets.shape != (n,):
        raise ShapeError(f"cross_entropy: targets shape {targets.shape} vs logits {logits.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    loss = -logp[np.arange(n), targets].mean()

    def backward(g: np.ndarray) -> None:
        if logits.requires_grad:
            grad = np.exp(logp)
            grad[np.arange(n), targets] -= 1.0
            logits.accumulate(grad * (float(g) / n))

    return _result(np.asarray(loss), (logits,), "cross_entropy", backward)


def nll_from_probs(probs: Tensor, targets: np.ndarray, eps: float = 1e-12) -> Tensor:
    """Mean negative log of the target-class probabilities (log clamped at eps)."""
    _require_2d(probs, "nll_from_probs")
    targets = np.asarray(targets, dtype=np.int64)
    n = probs.shape[0]
    if targets.shape != (n,):
        raise ShapeError(f"nll_from_probs: targets shape {targets.shape} vs probs {probs.shape}")
    picked = probs.data[np.arange(n), targets]
    clamped = np.maximum(picked, eps)
    loss = -np.log(clamped).mean()

    def backward(g: np.ndarray) -> None:
        if probs.requires_grad:
            grad = np.zeros_like(probs.data)
            live = picked > eps
            grad[np.arange(n), targets] = np.where(live, -1.0 / clamped, 0.0)
            probs.accumulate(grad * (float(g) / n))

    return _result(np.asarray(loss), (probs,), "nll_from_probs", backward)


def sum_all(x: Tensor) -> Tensor:
    def backward(g: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate(np.full_like(x.data, float(g)))

    return _result(np.asarray(x.data.sum()), (x,), "sum_all", backward)


def grad_check(f: Callable[[], Tensor], tensors, eps: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    ``f`` rebuilds its compute graph on every call and must return a scalar
    Tensor depending on ``tensors`` (one Tensor or a sequence).  Relative
    error per coordinate is |a - n| / (|a| + |n| + 1e-12).
    """
    if isinstance(tensors, Tensor):
        tensors = [tensors]
    tensors = list(tensors)
    for t in tensors:
        t.zero_grad()
    out = f()
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    worst = 0.0
    for t, ana in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = f().item()
            flat[i] = orig - eps
            down = f().item()
            flat[i] = orig
            num = (up - down) / (2.0 * eps)
            a = ana.reshape(-1)[i]
            worst = max(worst, abs(a - num) / (abs(a) + abs(num) + 1e-12))
    for t in tensors:
        t.zero_grad()
    return worst
