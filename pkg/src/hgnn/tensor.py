"""Dense 2-D tensors with reverse-mode automatic differentiation.

Everything is float64. A Tensor wraps a (rows, cols) numpy array plus an
optional gradient of the same shape; operations record a backward closure and
``backward()`` walks the graph in reverse topological order, accumulating
gradients additively (two backward passes without a reset give exactly twice
the gradient).

Conventions fixed here and relied on by the test suite:
  * relu / leaky_relu derivatives at exactly 0 take the negative-branch slope
    (0 and 0.01 respectively); elu uses alpha = 1.
  * gelu is the tanh approximation 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3))).
  * max reductions route the gradient to the first maximal row.
"""

import contextlib
import math

import numpy as np

from . import kernels

ACTIVATIONS = ("relu", "leaky_relu", "elu", "tanh", "softplus", "gelu")

LEAKY_SLOPE = 0.01
ELU_ALPHA = 1.0
_GELU_C = math.sqrt(2.0 / math.pi)


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (used for evaluation passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_matrix(data):
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise DimensionError(f"tensors are 2-D, got array of ndim {arr.ndim}")
    return np.ascontiguousarray(arr)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = _as_matrix(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self):
        if self.data.size != 1:
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.data.shape}")
        return float(self.data[0, 0])

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Backpropagate from a scalar (1x1) tensor.

        Gradients accumulate into ``.grad`` of every reachable tensor with
        requires_grad; call ``zero_grad`` between passes for fresh gradients.
        """
        if self.data.shape != (1, 1):
            raise DimensionError(
                f"backward() starts from a scalar 1x1 tensor, got {self.data.shape}"
            )
        order = _toposort(self)
        local = {id(self): np.ones((1, 1))}
        for node in order:
            g = local.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node._accumulate(g)
            if node._backward is None:
                continue
            for parent, contrib in zip(node._parents, node._backward(g)):
                if contrib is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in local:
                    local[key] = local[key] + contrib
                else:
                    local[key] = contrib

    # -- operator sugar used throughout model code ---------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _toposort(root):
    """Reverse-postorder over the recorded graph (iterative, dedup by id)."""
    order = []
    seen = set()
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
            if id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def _make(data, parents, backward):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _ensure(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# -- core arithmetic ---------------------------------------------------------

def matmul(a, b):
    a, b = _ensure(a), _ensure(b)
    if a.cols != b.rows:
        raise DimensionError(f"matmul shapes incompatible: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return g @ bd.T, ad.T @ g

    return _make(ad @ bd, (a, b), backward)


def _binary_broadcast(a, b, fwd, bwd_a, bwd_b, opname):
    a, b = _ensure(a), _ensure(b)
    if a.shape != b.shape and not (b.rows == 1 and b.cols == a.cols) \
            and not (b.shape == (1, 1)) and not (b.cols == 1 and b.rows == a.rows):
        raise DimensionError(f"{opname} shapes incompatible: {a.shape} vs {b.shape}")

    def backward(g):
        ga = bwd_a(g)
        gb = bwd_b(g)
        if b.shape != a.shape:
            if b.shape == (1, 1):
                gb = gb.sum().reshape(1, 1)
            elif b.rows == 1:
                gb = gb.sum(axis=0, keepdims=True)
            else:
                gb = gb.sum(axis=1, keepdims=True)
        return ga, gb

    return _make(fwd(a.data, b.data), (a, b), backward)


def add(a, b):
    """Elementwise a + b; b may be 1x1, a row vector, or a column vector."""
    return _binary_broadcast(a, b, lambda x, y: x + y,
                             lambda g: g, lambda g: g, "add")


def sub(a, b):
    return _binary_broadcast(a, b, lambda x, y: x - y,
                             lambda g: g, lambda g: -g, "sub")


def mul(a, b):
    a, b = _ensure(a), _ensure(b)
    ad, bd = a.data, b.data
    return _binary_broadcast(a, b, lambda x, y: x * y,
                             lambda g: g * bd, lambda g: g * ad, "mul")


def scale(a, c):
    a = _ensure(a)
    c = float(c)

    def backward(g):
        return (g * c,)

    return _make(a.data * c, (a,), backward)


def add_scalar(a, c):
    a = _ensure(a)

    def backward(g):
        return (g,)

    return _make(a.data + float(c), (a,), backward)


def rsqrt(a):
    """Elementwise 1/sqrt(x); inputs must be positive."""
    a = _ensure(a)
    out = 1.0 / np.sqrt(a.data)
    od = out

    def backward(g):
        return (g * (-0.5 * od ** 3),)

    return _make(out, (a,), backward)


def square(a):
    a = _ensure(a)
    ad = a.data

    def backward(g):
        return (g * (2.0 * ad),)

    return _make(ad * ad, (a,), backward)


def sum_all(a):
    a = _ensure(a)
    shape = a.shape

    def backward(g):
        return (np.full(shape, g[0, 0]),)

    return _make(a.data.sum().reshape(1, 1), (a,), backward)


def mean_all(a):
    a = _ensure(a)
    n = a.data.size
    shape = a.shape

    def backward(g):
        return (np.full(shape, g[0, 0] / n),)

    return _make(a.data.mean().reshape(1, 1), (a,), backward)


def col_mean(a):
    """Column means as a 1 x cols tensor."""
    a = _ensure(a)
    n = a.rows

    def backward(g):
        return (np.repeat(g / n, n, axis=0),)

    return _make(a.data.mean(axis=0, keepdims=True), (a,), backward)


def concat_cols(parts):
    """Concatenate tensors along columns (same row count)."""
    parts = [_ensure(p) for p in parts]
    rows = parts[0].rows
    for p in parts:
        if p.rows != rows:
            raise DimensionError(
                f"concat_cols row mismatch: {[p.shape for p in parts]}"
            )
    widths = [p.cols for p in parts]
    splits = np.cumsum(widths)[:-1]

    def backward(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=1))

    return _make(np.concatenate([p.data for p in parts], axis=1), parts, backward)


def take_rows(a, idx):
    """Gather rows by index; negative indices yield zero rows (padding)."""
    a = _ensure(a)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.max(initial=-1) >= a.rows):
        raise DimensionError(f"row index out of range for shape {a.shape}")
    pad = idx < 0
    out = a.data[np.where(pad, 0, idx)]
    if pad.any():
        out = out.copy()
        out[pad] = 0.0
    n_in = a.rows

    def backward(g):
        ga = np.zeros((n_in, g.shape[1]))
        kernels.scatter_add_rows(ga, idx, np.ascontiguousarray(g))
        return (ga,)

    return _make(out, (a,), backward)


def scale_rows(a, v):
    """Multiply row i by scalar v[i] (v is a plain array, no gradient)."""
    a = _ensure(a)
    v = np.asarray(v, dtype=np.float64).reshape(-1, 1)
    if v.shape[0] != a.rows:
        raise DimensionError(f"scale_rows needs {a.rows} factors, got {v.shape[0]}")

    def backward(g):
        return (g * v,)

    return _make(a.data * v, (a,), backward)


# -- activations -------------------------------------------------------------

def _sigmoid(x):
    # split by sign so neither exp() overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _act_forward(x, kind):
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "leaky_relu":
        return np.where(x > 0, x, LEAKY_SLOPE * x)
    if kind == "elu":
        return np.where(x > 0, x, ELU_ALPHA * np.expm1(np.minimum(x, 0.0)))
    if kind == "tanh":
        return np.tanh(x)
    if kind == "softplus":
        return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    if kind == "gelu":
        inner = _GELU_C * (x + 0.044715 * x ** 3)
        return 0.5 * x * (1.0 + np.tanh(inner))
    raise ValueError(f"unknown activation {kind!r}")


def _act_derivative(x, kind):
    if kind == "relu":
        return (x > 0).astype(np.float64)
    if kind == "leaky_relu":
        return np.where(x > 0, 1.0, LEAKY_SLOPE)
    if kind == "elu":
        return np.where(x > 0, 1.0, ELU_ALPHA * np.exp(np.minimum(x, 0.0)))
    if kind == "tanh":
        t = np.tanh(x)
        return 1.0 - t * t
    if kind == "softplus":
        return _sigmoid(x)
    if kind == "gelu":
        inner = _GELU_C * (x + 0.044715 * x ** 3)
        t = np.tanh(inner)
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
    raise ValueError(f"unknown activation {kind!r}")


def apply_activation(a, kind):
    """Apply one of the six activations elementwise; kind=None is identity."""
    a = _ensure(a)
    if kind is None:
        return a
    if kind not in ACTIVATIONS:
        raise ValueError(f"unknown activation {kind!r}")
    ad = a.data

    def backward(g):
        return (g * _act_derivative(ad, kind),)

    return _make(_act_forward(ad, kind), (a,), backward)


# -- grouped reductions -------------------------------------------------------

def rowwise_reduce(a, mode, groups, n_groups=None):
    """Reduce rows by group id (dense ids from 0). Modes: sum, mean, max.

    max routes the gradient to the first maximal row of each group/column.
    Every group must own at least one row.
    """
    a = _ensure(a)
    groups = np.asarray(groups, dtype=np.int64)
    if groups.shape[0] != a.rows:
        raise DimensionError(
            f"groups length {groups.shape[0]} != rows {a.rows}"
        )
    if n_groups is None:
        n_groups = int(groups.max()) + 1 if groups.size else 0
    counts = np.bincount(groups, minlength=n_groups)
    if (counts == 0).any():
        empty = int(np.flatnonzero(counts == 0)[0])
        raise ValueError(f"rowwise_reduce: group {empty} has no rows")
    ad = np.ascontiguousarray(a.data)
    n_rows, d = ad.shape

    if mode in ("sum", "mean"):
        out = np.zeros((n_groups, d))
        kernels.scatter_add_rows(out, groups, ad)
        if mode == "mean":
            out = out / counts[:, None]

        def backward(g):
            gg = g / counts[:, None] if mode == "mean" else g
            return (np.ascontiguousarray(gg)[groups],)

        return _make(out, (a,), backward)

    if mode == "max":
        row_ids = np.arange(n_rows, dtype=np.int64)
        out, arg = kernels.edge_max(row_ids, groups, ad, n_groups)

        def backward(g):
            return (kernels.edge_max_backward(arg, np.ascontiguousarray(g), n_rows),)

        return _make(out, (a,), backward)

    raise ValueError(f"unknown reduce mode {mode!r}")


# -- edge-indexed message passing ---------------------------------------------

def edge_aggregate(a, src, dst, w, n_out):
    """out[dst[e]] += w[e] * a[src[e]] (weighted neighbor sum)."""
    a = _ensure(a)
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    ad = np.ascontiguousarray(a.data)
    out = np.zeros((n_out, ad.shape[1]))
    kernels.edge_scatter_add(out, src, dst, w, ad)
    n_in = a.rows

    def backward(g):
        ga = np.zeros((n_in, g.shape[1]))
        # transpose the propagation: grad flows dst -> src with the same weight
        kernels.edge_scatter_add(ga, dst, src, w, np.ascontiguousarray(g))
        return (ga,)

    return _make(out, (a,), backward)


def edge_max_aggregate(a, src, dst, n_out):
    """Per-target elementwise max over incoming a[src] rows (weights ignored);
    targets with no incoming edge produce zero rows."""
    a = _ensure(a)
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    ad = np.ascontiguousarray(a.data)
    out, arg = kernels.edge_max(src, dst, ad, n_out)
    n_in = a.rows

    def backward(g):
        return (kernels.edge_max_backward(arg, np.ascontiguousarray(g), n_in),)

    return _make(out, (a,), backward)


# -- losses (fused for numerical stability) ------------------------------------

def cross_entropy_loss(logits, labels):
    """Mean over the batch of -log softmax(logits)[label], max-shifted."""
    logits = _ensure(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape[0] != n:
        raise DimensionError(f"{labels.shape[0]} labels for {n} logit rows")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= c:
        raise ValueError("label outside [0, n_classes)")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    sez = ez.sum(axis=1, keepdims=True)
    log_probs = (z - zmax) - np.log(sez)
    loss = -log_probs[np.arange(n), labels].mean()
    softmax = ez / sez

    def backward(g):
        grad = softmax.copy()
        grad[np.arange(n), labels] -= 1.0
        return (grad * (g[0, 0] / n),)

    return _make(np.array([[loss]]), (logits,), backward)


def multi_margin_loss(logits, labels, margin=1.0):
    """Mean over samples of (1/C) * sum_{j != y} max(0, margin - z_y + z_j)."""
    logits = _ensure(logits)
    labels = np.asarray(labels, dtype=np.int64)
    n, c = logits.shape
    if labels.shape[0] != n:
        raise DimensionError(f"{labels.shape[0]} labels for {n} logit rows")
    z = logits.data
    zy = z[np.arange(n), labels][:, None]
    viol = margin - zy + z
    viol[np.arange(n), labels] = 0.0
    active = viol > 0
    loss = np.where(active, viol, 0.0).sum() / (n * c)

    def backward(g):
        grad = active.astype(np.float64)
        grad[np.arange(n), labels] = -active.sum(axis=1)
        return (grad * (g[0, 0] / (n * c)),)

    return _make(np.array([[loss]]), (logits,), backward)


def dropout(a, rate, rng):
    """Inverted dropout: zero with probability rate, scale kept by 1/(1-rate)."""
    a = _ensure(a)
    if rate <= 0.0:
        return a
    mask = (rng.random(a.shape) >= rate) / (1.0 - rate)

    def backward(g):
        return (g * mask,)

    return _make(a.data * mask, (a,), backward)
