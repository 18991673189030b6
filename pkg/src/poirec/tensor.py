"""Dense float64 tensors with reverse-mode differentiation.

Values live in numpy arrays.  Every operation records its local backward
rule on the output node, and :func:`Tensor.backward` on a scalar node
fills ``grad`` on all reachable nodes that require gradients.  Gradients
accumulate when a node feeds several consumers, and across backward
passes until the grads are cleared (``zero_grad``).

Stability policy: ``log`` clamps its argument at ``LOG_FLOOR`` (1e-12)
instead of raising, and softmax subtracts the per-axis max before
exponentiating.  Test oracles apply the same clamp so both sides agree.

The engine is deliberately small: dense arrays only, no implicit dtype
promotion, broadcasting limited to what the model needs (bias rows,
scalars, and column vectors against matrices).  Single-threaded use per
computation record; distinct records may live on distinct threads.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

LOG_FLOOR = 1e-12


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested operation."""


class Tensor:
    """One value in the differentiable computation record.

    ``parents`` holds ``(parent, vjp)`` pairs where ``vjp`` maps the
    output gradient to that parent's gradient contribution.  Only parents
    that require gradients are recorded, so backward traverses exactly
    the differentiable subgraph.
    """

    __slots__ = ("data", "grad", "requires_grad", "parents")

    def __init__(self, data, requires_grad: bool = False, parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.parents = tuple(parents)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def backward(self) -> None:
        """Populate ``grad`` on every requires-grad ancestor of a scalar node.

        Nodes are visited in reverse dependency order; a node used by
        several consumers receives the sum of their contributions.  The
        deposited arrays must be treated as read-only.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward: root must be scalar, got shape {self.data.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node.parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        flowing: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = flowing.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            for parent, vjp in node.parents:
                pg = vjp(g)
                pid = id(parent)
                if pid in flowing:
                    flowing[pid] = flowing[pid] + pg
                else:
                    flowing[pid] = pg

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def const(data) -> Tensor:
    """Wrap data as a non-differentiable tensor."""
    return Tensor(data, requires_grad=False)


def param(data) -> Tensor:
    """Wrap data as a trainable leaf tensor."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(out_data: np.ndarray, parents) -> Tensor:
    return Tensor(out_data, requires_grad=bool(parents), parents=parents)


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: shapes {a.data.shape} and {b.data.shape}") from exc
    parents = []
    if a.requires_grad:
        parents.append((a, lambda g, s=a.data.shape: _unbroadcast(g, s)))
    if b.requires_grad:
        parents.append((b, lambda g, s=b.data.shape: _unbroadcast(g, s)))
    return _make(out, parents)


def neg(a: Tensor) -> Tensor:
    parents = [(a, lambda g: -g)] if a.requires_grad else []
    return _make(-a.data, parents)


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    parents = [(a, lambda g: g * c)] if a.requires_grad else []
    return _make(a.data * c, parents)


def elementwise_mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"elementwise_mul: shapes {a.data.shape} and {b.data.shape}") from exc
    parents = []
    if a.requires_grad:
        parents.append((a, lambda g, o=b.data, s=a.data.shape: _unbroadcast(g * o, s)))
    if b.requires_grad:
        parents.append((b, lambda g, o=a.data, s=b.data.shape: _unbroadcast(g * o, s)))
    return _make(out, parents)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim == 0 or ad.ndim > 2 or bd.ndim > 2:
        raise ShapeError(f"matmul: shapes {ad.shape} and {bd.shape}")
    if ad.shape[-1] != bd.shape[0]:
        raise ShapeError(f"matmul: shapes {ad.shape} and {bd.shape}")
    out = ad @ bd
    parents = []
    if ad.ndim == 2 and bd.ndim == 2:
        if a.requires_grad:
            parents.append((a, lambda g, o=bd: g @ o.T))
        if b.requires_grad:
            parents.append((b, lambda g, o=ad: o.T @ g))
    elif ad.ndim == 2 and bd.ndim == 1:
        if a.requires_grad:
            parents.append((a, lambda g, o=bd: np.outer(g, o)))
        if b.requires_grad:
            parents.append((b, lambda g, o=ad: o.T @ g))
    elif ad.ndim == 1 and bd.ndim == 2:
        if a.requires_grad:
            parents.append((a, lambda g, o=bd: o @ g))
        if b.requires_grad:
            parents.append((b, lambda g, o=ad: np.outer(o, g)))
    else:  # 1-D dot product
        if a.requires_grad:
            parents.append((a, lambda g, o=bd: g * o))
        if b.requires_grad:
            parents.append((b, lambda g, o=ad: g * o))
    return _make(out, parents)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected 2-d, got shape {a.data.shape}")
    parents = [(a, lambda g: g.T)] if a.requires_grad else []
    return _make(a.data.T, parents)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: shape {a.data.shape} to {shape}") from exc
    parents = [(a, lambda g, s=a.data.shape: g.reshape(s))] if a.requires_grad else []
    return _make(out, parents)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat: empty input")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: shapes {[t.data.shape for t in tensors]} on axis {axis}") from exc
    parents = []
    offset = 0
    for t in tensors:
        n = t.data.shape[axis]
        if t.requires_grad:
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(offset, offset + n)
            parents.append((t, lambda g, sl=tuple(sl): g[sl]))
        offset += n
    return _make(out, parents)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    parents = [(a, lambda g, m=mask: g * m)] if a.requires_grad else []
    return _make(np.where(mask, a.data, 0.0), parents)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    factor = np.where(a.data > 0, 1.0, slope)
    parents = [(a, lambda g, f=factor: g * f)] if a.requires_grad else []
    return _make(a.data * factor, parents)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    parents = [(a, lambda g, o=out: g * o)] if a.requires_grad else []
    return _make(out, parents)


def log(a: Tensor) -> Tensor:
    """Natural log with the documented 1e-12 clamp on the argument."""
    clamped = np.maximum(a.data, LOG_FLOOR)
    out = np.log(clamped)
    if a.requires_grad:
        inv = np.where(a.data > LOG_FLOOR, 1.0 / clamped, 0.0)
        parents = [(a, lambda g, i=inv: g * i)]
    else:
        parents = []
    return _make(out, parents)


def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axis) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape).copy()
    return np.broadcast_to(np.expand_dims(g, axis), shape).copy()


def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    out = a.data.sum(axis=axis)
    parents = []
    if a.requires_grad:
        parents.append((a, lambda g, s=a.data.shape, ax=axis: _expand_reduced(g, s, ax)))
    return _make(out, parents)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    out = a.data.mean(axis=axis)
    n = a.data.size if axis is None else a.data.shape[axis]
    parents = []
    if a.requires_grad:
        parents.append((a, lambda g, s=a.data.shape, ax=axis, k=n: _expand_reduced(g, s, ax) / k))
    return _make(out, parents)


def softmax(a: Tensor, axis: int) -> Tensor:
    if not np.isfinite(a.data).all():
        raise ValueError("softmax: non-finite input")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    parents = []
    if a.requires_grad:
        def vjp(g, p=out, ax=axis):
            return p * (g - (g * p).sum(axis=ax, keepdims=True))
        parents.append((a, vjp))
    return _make(out, parents)


def gather_rows(table: Tensor, indices) -> Tensor:
    """Select rows of a 2-d table; backward scatter-adds into the table."""
    idx = np.asarray(indices, dtype=np.intp)
    if table.data.ndim != 2 or idx.ndim != 1:
        raise ShapeError(f"gather_rows: table shape {table.data.shape}, indices shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.data.shape[0]):
        raise IndexError(f"gather_rows: index out of range for table with {table.data.shape[0]} rows")
    out = table.data[idx]
    parents = []
    if table.requires_grad:
        def vjp(g, i=idx, s=table.data.shape):
            acc = np.zeros(s)
            np.add.at(acc, i, g)
            return acc
        parents.append((table, vjp))
    return _make(out, parents)


def segment_sum(a: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Sum rows (or scalars) of ``a`` into ``num_segments`` buckets."""
    seg = np.asarray(segment_ids, dtype=np.intp)
    if a.data.ndim not in (1, 2) or seg.shape != (a.data.shape[0],):
        raise ShapeError(f"segment_sum: data shape {a.data.shape}, segments shape {seg.shape}")
    out_shape = (num_segments,) + a.data.shape[1:]
    out = np.zeros(out_shape)
    np.add.at(out, seg, a.data)
    parents = []
    if a.requires_grad:
        parents.append((a, lambda g, i=seg: g[i]))
    return _make(out, parents)


def segment_softmax(a: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Softmax of a 1-d tensor within each segment (max-shifted per segment)."""
    seg = np.asarray(segment_ids, dtype=np.intp)
    if a.data.ndim != 1 or seg.shape != a.data.shape:
        raise ShapeError(f"segment_softmax: data shape {a.data.shape}, segments shape {seg.shape}")
    if not np.isfinite(a.data).all():
        raise ValueError("segment_softmax: non-finite input")
    m = np.full(num_segments, -np.inf)
    np.maximum.at(m, seg, a.data)
    e = np.exp(a.data - m[seg])
    denom = np.zeros(num_segments)
    np.add.at(denom, seg, e)
    out = e / denom[seg]
    parents = []
    if a.requires_grad:
        def vjp(g, p=out, i=seg, n=num_segments):
            t = g * p
            s = np.zeros(n)
            np.add.at(s, i, t)
            return p * (g - s[i])
        parents.append((a, vjp))
    return _make(out, parents)


def stack_scalars(scalars: Sequence[Tensor]) -> Tensor:
    """Concatenate scalar tensors into a 1-d vector (batch reductions)."""
    return concat([reshape(s, (1,)) for s in scalars], axis=0)


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def finite_diff_check(loss_fn: Callable[[], Tensor], params, eps: float = 1e-5) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``params`` is a mapping or sequence of leaf tensors; ``loss_fn``
    rebuilds the loss from their current values on every call and must be
    deterministic.  Falls back to absolute error when both gradients are
    below 1e-8.
    """
    if isinstance(params, dict):
        named = list(params.items())
    else:
        named = list(enumerate(params))
    tensors = [t for _, t in named]
    zero_grads(tensors)
    loss = loss_fn()
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    worst = 0.0
    for (name, t), ana in zip(named, analytic):
        flat_grad = ana.reshape(-1)
        for i in range(t.data.size):
            orig = t.data.flat[i]
            t.data.flat[i] = orig + eps
            f_plus = float(loss_fn().data)
            t.data.flat[i] = orig - eps
            f_minus = float(loss_fn().data)
            t.data.flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = flat_grad[i]
            if abs(a) < 1e-8 and abs(numeric) < 1e-8:
                err = abs(a - numeric)
            else:
                err = abs(a - numeric) / max(abs(a), abs(numeric))
            worst = max(worst, err)
    zero_grads(tensors)
    return worst
