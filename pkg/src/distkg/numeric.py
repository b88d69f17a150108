"""Small reverse-mode autodiff engine over numpy arrays.

Every op builds a node holding its parents and a closure that pushes the
incoming gradient back to them. ``Tensor.backward`` walks the graph in
reverse topological order. Finite differences live in :func:`grad_check`
and are only meant as a test oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    """Raised when two composed operands have incompatible shapes."""

    def __init__(self, op, left, right):
        self.op = op
        super().__init__(
            f"{op}: incompatible operands {_describe(left)} and {_describe(right)}"
        )


class NonFiniteError(FloatingPointError):
    """Raised when a primitive produces NaN or Inf."""

    def __init__(self, op):
        self.op = op
        super().__init__(f"non-finite value produced by primitive '{op}'")


def _describe(x):
    if isinstance(x, Tensor):
        return f"{x.op}{list(x.shape)}"
    return f"array{list(np.shape(x))}"


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, op="leaf", _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = op
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={list(self.shape)}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True).reshape(self.shape)
        else:
            self.grad += g

    def backward(self, grad=None):
        if not self.requires_grad:
            return
        order = _topological(self)
        for node in order:
            if node._backward is not None:
                node.grad = None
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        self.grad = np.asarray(grad, dtype=np.float64).reshape(self.shape).copy()
        for node in reversed(order):
            if node.grad is not None and not np.all(np.isfinite(node.grad)):
                raise NonFiniteError(node.op)
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    __add__ = lambda self, other: add(self, other)
    __radd__ = lambda self, other: add(other, self)
    __sub__ = lambda self, other: sub(self, other)
    __rsub__ = lambda self, other: sub(other, self)
    __mul__ = lambda self, other: mul(self, other)
    __rmul__ = lambda self, other: mul(other, self)
    __matmul__ = lambda self, other: matmul(self, other)
    __neg__ = lambda self: scale(self, -1.0)


def _topological(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, op, parents, backward):
    data = np.asarray(data, dtype=np.float64)
    if not np.isfinite(data).all():
        raise NonFiniteError(op)
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, op=op, _parents=tuple(parents),
                  _backward=backward if req else None)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_elementwise(op, a, b):
    # Same shape, a trailing-dim row vector, or an (n, 1) column.
    sa, sb = a.shape, b.shape
    if sa == sb or sb == () or sa == ():
        return
    if len(sa) == 2 and (sb == (sa[1],) or sb == (sa[0], 1)):
        return
    if len(sb) == 2 and (sa == (sb[1],) or sa == (sb[0], 1)):
        return
    raise ShapeError(op, a, b)


# ---------------------------------------------------------------- primitives


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("add", a, b)

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _node(a.data + b.data, "add", (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("sub", a, b)

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(-g, b.shape))

    return _node(a.data - b.data, "sub", (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_elementwise("mul", a, b)

    def backward(g):
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, "mul", (a, b), backward)


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    return _node(a.data * c, "scale", (a,), lambda g: a._accumulate(g * c))


def matmul(a, b):
    """Matrix product for 2-D @ 2-D and 2-D @ 1-D operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a, b)

    def backward(g):
        if b.ndim == 1:
            a._accumulate(np.outer(g, b.data))
            b._accumulate(a.data.T @ g)
        else:
            a._accumulate(g @ b.data.T)
            b._accumulate(a.data.T @ g)

    return _node(a.data @ b.data, "matmul", (a, b), backward)


def transpose(a):
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("transpose", a, a)
    return _node(a.data.T, "transpose", (a,), lambda g: a._accumulate(g.T))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    a = as_tensor(a)
    s = _sigmoid(a.data)
    return _node(s, "sigmoid", (a,), lambda g: a._accumulate(g * s * (1.0 - s)))


def tanh(a):
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _node(t, "tanh", (a,), lambda g: a._accumulate(g * (1.0 - t * t)))


def relu(a):
    a = as_tensor(a)
    pos = a.data > 0
    return _node(np.where(pos, a.data, 0.0), "relu", (a,), lambda g: a._accumulate(g * pos))


def leaky_relu(a, slope=0.2):
    a = as_tensor(a)
    pos = a.data > 0
    factor = np.where(pos, 1.0, slope)
    return _node(a.data * factor, "leaky_relu", (a,), lambda g: a._accumulate(g * factor))


def softplus(a):
    """log(1 + exp(a)), computed without overflow."""
    a = as_tensor(a)
    x = a.data
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    s = _sigmoid(x)
    return _node(out, "softplus", (a,), lambda g: a._accumulate(g * s))


def tsum(a, axis=None):
    a = as_tensor(a)
    out = a.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape))
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.shape))

    return _node(out, "sum", (a,), backward)


def mean(a):
    a = as_tensor(a)
    return scale(tsum(a), 1.0 / a.data.size)


def frob_sq(a):
    """Sum of squared entries (squared Frobenius norm for matrices)."""
    a = as_tensor(a)
    return _node(np.sum(a.data * a.data), "frob_sq", (a,),
                 lambda g: a._accumulate(2.0 * g * a.data))


def masked(a, mask, op="mask"):
    """Multiply by a constant 0/1 mask; the mask receives no gradient."""
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != a.shape:
        raise ShapeError(op, a, mask)
    return _node(a.data * mask, op, (a,), lambda g: a._accumulate(g * mask))


def topk_mask(values, k, key=None):
    """0/1 mask of the ``k`` largest entries of ``key`` along the last axis.

    Ties go to the lower index. ``key`` defaults to ``values``.
    """
    values = np.asarray(values, dtype=np.float64)
    key = values if key is None else np.asarray(key, dtype=np.float64)
    d = key.shape[-1]
    if d == 0:
        raise ValueError("cannot take top-k of an empty vector")
    if not 1 <= k <= d:
        raise ValueError(f"k={k} out of range for dimension {d}")
    mask = np.zeros(key.shape, dtype=np.float64)
    if k == d:
        mask[...] = 1.0
        return mask
    # stable sort on the negated key keeps the lower index first among ties
    order = np.argsort(-key, axis=-1, kind="stable")[..., :k]
    np.put_along_axis(mask, order, 1.0, axis=-1)
    return mask


def topk(a, k, key=None):
    """Hard top-k along the last axis; masked entries get zero gradient."""
    a = as_tensor(a)
    return masked(a, topk_mask(a.data, k, key=key), op="topk")


def column(a):
    """Reshape a 1-D tensor into an (n, 1) column."""
    a = as_tensor(a)
    if a.ndim != 1:
        raise ShapeError("column", a, a)
    return _node(a.data[:, None], "column", (a,), lambda g: a._accumulate(g[:, 0]))


def gather(a, index):
    """Select entries along axis 0 (rows of a matrix, slices of a stack)."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    if index.ndim != 1:
        raise ShapeError("gather", a, index)
    n = a.shape[0]

    def backward(g):
        onehot = sp.csr_matrix(
            (np.ones(len(index)), (index, np.arange(len(index)))), shape=(n, len(index))
        )
        flat = g.reshape(len(index), -1)
        a._accumulate(np.asarray(onehot @ flat).reshape(a.shape))

    return _node(a.data[index], "gather", (a,), backward)


def spmm(matrix, a):
    """Product of a constant sparse matrix with a dense tensor."""
    a = as_tensor(a)
    if matrix.shape[1] != a.shape[0]:
        raise ShapeError("spmm", Tensor(np.zeros(matrix.shape)), a)
    # .T on csr is a free csc view; no conversion needed
    return _node(np.asarray(matrix @ a.data), "spmm", (a,),
                 lambda g: a._accumulate(np.asarray(matrix.T @ g)))


def segment_softmax(logits, segments, n_segments):
    """Softmax of a 1-D logit vector within each segment id."""
    logits = as_tensor(logits)
    segments = np.asarray(segments, dtype=np.int64)
    if logits.ndim != 1 or logits.shape[0] != segments.shape[0]:
        raise ShapeError("segment_softmax", logits, segments)
    x = logits.data
    peak = np.full(n_segments, -np.inf)
    np.maximum.at(peak, segments, x)
    ex = np.exp(x - peak[segments])
    denom = np.bincount(segments, weights=ex, minlength=n_segments)
    w = ex / denom[segments]

    def backward(g):
        dot = np.bincount(segments, weights=w * g, minlength=n_segments)
        logits._accumulate(w * (g - dot[segments]))

    return _node(w, "segment_softmax", (logits,), backward)


def row_norm(a):
    """Euclidean norm of each row; subgradient 0 at the origin."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("row_norm", a, a)
    n = np.sqrt(np.sum(a.data * a.data, axis=1))

    def backward(g):
        safe = np.where(n > 0, n, 1.0)
        a._accumulate((g / safe * (n > 0))[:, None] * a.data)

    return _node(n, "row_norm", (a,), backward)


def bilinear(left, mats, right):
    """Batched bilinear forms ``left[b] @ mats[b] @ right[b]``.

    left, right: (B, K); mats: (B, K, K). Returns shape (B,).
    """
    left, mats, right = as_tensor(left), as_tensor(mats), as_tensor(right)
    if left.ndim != 2 or right.shape != left.shape:
        raise ShapeError("bilinear", left, right)
    b, k = left.shape
    if mats.shape != (b, k, k):
        raise ShapeError("bilinear", left, mats)
    pr = np.einsum("bij,bj->bi", mats.data, right.data)
    out = np.einsum("bi,bi->b", left.data, pr)

    def backward(g):
        left._accumulate(g[:, None] * pr)
        if mats.requires_grad:
            mats._accumulate(g[:, None, None] * left.data[:, :, None] * right.data[:, None, :])
        if right.requires_grad:
            right._accumulate(g[:, None] * np.einsum("bij,bi->bj", mats.data, left.data))

    return _node(out, "bilinear", (left, mats, right), backward)


def grouped_bilinear(left, mats, groups, right):
    """``left[b] @ mats[groups[b]] @ right[b]`` without materializing (B, K, K).

    left, right: (B, K); mats: (G, K, K); groups: (B,) ints in [0, G).
    """
    left, mats, right = as_tensor(left), as_tensor(mats), as_tensor(right)
    groups = np.asarray(groups, dtype=np.int64)
    if left.ndim != 2 or right.shape != left.shape or groups.shape != (left.shape[0],):
        raise ShapeError("grouped_bilinear", left, right)
    k = left.shape[1]
    if mats.ndim != 3 or mats.shape[1:] != (k, k):
        raise ShapeError("grouped_bilinear", left, mats)
    members = [np.flatnonzero(groups == g) for g in range(mats.shape[0])]
    pr = np.empty_like(right.data)
    for g, idx in enumerate(members):
        if len(idx):
            pr[idx] = right.data[idx] @ mats.data[g].T
    out = np.einsum("bi,bi->b", left.data, pr)

    def backward(grad):
        left._accumulate(grad[:, None] * pr)
        need_m, need_r = mats.requires_grad, right.requires_grad
        dm = np.zeros_like(mats.data) if need_m else None
        dr = np.empty_like(right.data) if need_r else None
        for g, idx in enumerate(members):
            if not len(idx):
                continue
            gl = grad[idx, None] * left.data[idx]
            if need_m:
                dm[g] = gl.T @ right.data[idx]
            if need_r:
                dr[idx] = gl @ mats.data[g]
        if need_m:
            mats._accumulate(dm)
        if need_r:
            right._accumulate(dr)

    return _node(out, "grouped_bilinear", (left, mats, right), backward)


# ------------------------------------------------------------------- drivers


def forward_backward(fn: Callable[[dict], Tensor], inputs: Mapping, trainable=None):
    """Evaluate ``fn`` on fresh leaf tensors and return (value, gradients).

    ``inputs`` maps names to arrays or tensors; ``trainable`` limits which
    names get gradients (all of them by default).
    """
    names = list(inputs) if trainable is None else list(trainable)
    leaves = {
        k: Tensor(np.array(as_tensor(v).data, copy=True), requires_grad=k in names)
        for k, v in inputs.items()
    }
    out = fn(leaves)
    if out.data.size != 1:
        raise ValueError("expression graph must produce a scalar")
    out.backward()
    grads = {}
    for k in names:
        g = leaves[k].grad
        grads[k] = Tensor(np.zeros(leaves[k].shape) if g is None else g)
    return float(out.data.reshape(-1)[0]), grads


@dataclass
class GradReport:
    per_parameter_errors: dict = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def max_rel_error(self):
        return max(self.per_parameter_errors.values(), default=0.0)

    @property
    def passed(self):
        return self.max_rel_error <= self.tolerance


def grad_check(fn, inputs, epsilon=1e-5, tolerance=1e-4, trainable=None):
    """Compare reverse-mode gradients with central differences.

    Error per entry is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if epsilon <= 0 or tolerance <= 0:
        raise ValueError("epsilon and tolerance must be positive")
    base = {k: np.array(as_tensor(v).data, copy=True) for k, v in inputs.items()}
    _, grads = forward_backward(fn, base, trainable)

    def evaluate(values):
        leaves = {k: Tensor(v) for k, v in values.items()}
        return float(fn(leaves).data.reshape(-1)[0])

    report = GradReport(tolerance=tolerance)
    for name, g in grads.items():
        analytic = g.data.reshape(-1)
        worst = 0.0
        for i in range(analytic.size):
            plus = {k: v.copy() for k, v in base.items()}
            minus = {k: v.copy() for k, v in base.items()}
            plus[name].reshape(-1)[i] += epsilon
            minus[name].reshape(-1)[i] -= epsilon
            numeric = (evaluate(plus) - evaluate(minus)) / (2.0 * epsilon)
            err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]))
            worst = max(worst, err)
        report.per_parameter_errors[name] = worst
    return report


def xavier_normal_init(rows, cols, seed):
    """Xavier-normal matrix: N(0, 2 / (rows + cols)), deterministic per seed."""
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be >= 1")
    rng = np.random.default_rng(seed)
    std = math.sqrt(2.0 / (rows + cols))
    return Tensor(rng.normal(0.0, std, size=(rows, cols)), requires_grad=True)
