"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything is a thin wrapper over numpy arrays. Ops build a graph of
parent links plus a vector-Jacobian closure; ``backward()`` on a scalar
walks the graph once in reverse topological order and accumulates
gradients additively across fan-out. Tensors created without tracked
parents carry no graph and are safe to share read-only.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class MaskError(ValueError):
    """An attention row has no allowed entries."""


_node_counter = 0


def _next_node_id() -> int:
    global _node_counter
    _node_counter += 1
    return _node_counter


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "node_id", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, op: str = "", parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.op = op
        self._parents = tuple(parents)
        self._vjp = None
        self.node_id = _next_node_id() if (requires_grad or parents) else None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" op={self.op}" if self.op else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    def backward(self):
        """Reverse-mode sweep from a scalar loss.

        Every tensor with requires_grad reachable from this node receives
        its exact gradient in ``.grad``; each graph node is visited once.
        """
        if self.data.size != 1:
            raise ValueError(f"backward: loss must be scalar, got shape {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise FloatingPointError("backward: loss is not finite")

        topo = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._vjp is None or node.grad is None:
                continue
            grads = node._vjp(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not (parent.requires_grad or parent._parents):
                    continue
                if parent.grad is None:
                    parent.grad = g
                else:
                    parent.grad = parent.grad + g

    # operator sugar; full definitions live at module level
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)


def _toposort(root: Tensor):
    """Iterative DFS topological order (graphs can exceed recursion depth)."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


_GRAD_ENABLED = [True]


class no_grad:
    """Skip graph construction inside the block (inference paths)."""

    def __enter__(self):
        self._prev = _GRAD_ENABLED[0]
        _GRAD_ENABLED[0] = False

    def __exit__(self, *exc):
        _GRAD_ENABLED[0] = self._prev
        return False


def _tracked(*tensors) -> bool:
    return _GRAD_ENABLED[0] and any(t.requires_grad or t._parents for t in tensors)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _make(data, op, parents, vjp) -> Tensor:
    parents = [p for p in parents]
    if _tracked(*parents):
        out = Tensor(data, requires_grad=False, op=op, parents=parents)
        out._vjp = vjp
        return out
    return Tensor(data)


# ---------------------------------------------------------------------------
# elementwise / shape suite
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out, "add", (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), -_unbroadcast(g, b.data.shape)

    return _make(out, "sub", (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _make(out, "mul", (a, b), vjp)


def matmul(a, b) -> Tensor:
    """Matrix product with numpy batch broadcasting over leading axes.

    Gradients: da = g @ b^T, db = a^T @ g (summed over broadcast axes).
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be >=2-d, got {a.shape} and {b.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(f"matmul: inner extents differ: {a.shape} vs {b.shape}")
    out = a.data @ b.data

    def vjp(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
        return ga, gb

    return _make(out, "matmul", (a, b), vjp)


def reshape(t: Tensor, shape) -> Tensor:
    t = _as_tensor(t)
    out = t.data.reshape(shape)

    def vjp(g):
        return (g.reshape(t.data.shape),)

    return _make(out, "reshape", (t,), vjp)


def transpose(t: Tensor, axes) -> Tensor:
    t = _as_tensor(t)
    axes = tuple(axes)
    out = t.data.transpose(axes)
    inv = tuple(np.argsort(axes))

    def vjp(g):
        return (g.transpose(inv),)

    return _make(out, "transpose", (t,), vjp)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, "concat", tensors, vjp)


def narrow(t: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice along ``axis`` with explicit bounds checking."""
    t = _as_tensor(t)
    n = t.data.shape[axis]
    if start < 0 or length < 0 or start + length > n:
        raise IndexError(f"narrow: [{start}, {start + length}) out of range for axis of size {n}")
    key = [slice(None)] * t.data.ndim
    key[axis] = slice(start, start + length)
    key = tuple(key)
    out = t.data[key]

    def vjp(g):
        full = np.zeros_like(t.data)
        full[key] = g
        return (full,)

    return _make(out, "narrow", (t,), vjp)


def take(t: Tensor, key) -> Tensor:
    """Basic (slice/int) indexing; integer indices raise on out-of-range."""
    t = _as_tensor(t)
    out = t.data[key]

    def vjp(g):
        full = np.zeros_like(t.data)
        np.add.at(full, key, g)
        return (full,)

    return _make(out, "take", (t,), vjp)


def mean(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    t = _as_tensor(t)
    out = t.data.mean(axis=axis, keepdims=keepdims)
    count = t.data.size if axis is None else t.data.shape[axis]

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, t.data.shape) / count,)

    return _make(out, "mean", (t,), vjp)


def tsum(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    t = _as_tensor(t)
    out = t.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, t.data.shape).copy(),)

    return _make(out, "sum", (t,), vjp)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(t: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    t = _as_tensor(t)
    x = t.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def vjp(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        dx = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * d_inner
        return (g * dx,)

    return _make(out, "gelu", (t,), vjp)


# ---------------------------------------------------------------------------
# fused ops with bespoke gradients
# ---------------------------------------------------------------------------


def masked_softmax(scores: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis with optional boolean allow-mask.

    Disallowed entries are forced to -inf before the (max-subtracted)
    softmax, so their probabilities are exactly 0 in both value and
    gradient. The mask broadcasts against the trailing axes of ``scores``.
    A row with no allowed entry is a degenerate attention row and raises.
    """
    scores = _as_tensor(scores)
    s = scores.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any(axis=-1).all():
            raise MaskError("masked_softmax: a row of the mask allows no entries")
        s = np.where(mask, s, -np.inf)
    m = s.max(axis=-1, keepdims=True)
    if not np.isfinite(m).all():
        raise MaskError("masked_softmax: a row has no finite scores")
    e = np.exp(s - m)
    p = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        return (p * (g - dot),)

    return _make(p, "masked_softmax", (scores,), vjp)


def softmax(t: Tensor) -> Tensor:
    return masked_softmax(t, None)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to mean 0 / variance 1, then affine."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    d = x.data.shape[-1]
    if d < 1:
        raise ShapeError("layer_norm: last axis must be nonempty")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma.data * xhat + beta.data

    def vjp(g):
        dxhat = g * gamma.data
        dx = inv / d * (d * dxhat - dxhat.sum(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        red = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=red)
        dbeta = g.sum(axis=red)
        return dx, dgamma, dbeta

    return _make(out, "layer_norm", (x, gamma, beta), vjp)


def replace_token_span(h: Tensor, start: int, stop: int, row: Tensor) -> Tensor:
    """Replace rows [start, stop) of the second-to-last axis with ``row``.

    Used for mask-token substitution: replaced rows receive ``row`` (not
    a sum), untouched rows pass through bit-identically.
    """
    h, row = _as_tensor(h), _as_tensor(row)
    n = h.data.shape[-2]
    if not (0 <= start < stop <= n):
        raise ValueError(f"replace_token_span: empty or out-of-range span [{start}, {stop}) for {n} rows")
    out = h.data.copy()
    out[..., start:stop, :] = row.data

    def vjp(g):
        gh = g.copy()
        gh[..., start:stop, :] = 0.0
        grow = _unbroadcast(g[..., start:stop, :], row.data.shape)
        return gh, grow

    return _make(out, "replace_token_span", (h, row), vjp)


def assert_finite(t: Tensor, what: str = "tensor") -> Tensor:
    """Debug guard: forward ops on finite inputs must stay finite."""
    if not np.isfinite(t.data).all():
        raise FloatingPointError(f"{what}: non-finite values in forward result")
    return t
