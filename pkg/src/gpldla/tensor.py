"""Reverse-mode autodiff over float64 numpy arrays.

A Tensor wraps an ndarray of rank <= 2.  Operations record their parents
and a vector-Jacobian closure; ``backward`` walks the graph once in
reverse topological order and accumulates gradients into ``.grad``.
Graphs are rebuilt per episode, so there is no retain/free bookkeeping.

``finite_diff_grad`` and ``finite_diff_hessian_diag`` are the numerical
oracles the test suites check the tape (and the closed-form posterior
curvatures) against.
"""

import numpy as np
import scipy.linalg

from . import kernels as _k
from .errors import ContractError, NumericsError, ShapeError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False):
        if isinstance(data, np.ndarray) and data.dtype == np.float64:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim > 2:
            raise ShapeError(f"tensors are rank <= 2, got shape {self.data.shape}")
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent):
        return pow_const(self, exponent)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data):
    """Leaf tensor that participates in gradient accumulation."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _result(data, parents, vjp):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic (numpy broadcasting, rank <= 2)

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _result(out, (a, b), vjp)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), -_unbroadcast(g, b.data.shape)

    return _result(out, (a, b), vjp)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad * bd

    def vjp(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _result(out, (a, b), vjp)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def vjp(g):
        ga = _unbroadcast(g / bd, ad.shape)
        gb = _unbroadcast(-g * ad / (bd * bd), bd.shape)
        return ga, gb

    return _result(out, (a, b), vjp)


def neg(a):
    a = as_tensor(a)

    def vjp(g):
        return (-g,)

    return _result(-a.data, (a,), vjp)


def pow_const(a, exponent):
    a = as_tensor(a)
    p = float(exponent)
    ad = a.data
    out = ad ** p

    def vjp(g):
        return (g * p * ad ** (p - 1.0),)

    return _result(out, (a,), vjp)


def square(a):
    return mul(a, a)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return _result(out, (a,), vjp)


def log(a):
    a = as_tensor(a)
    ad = a.data

    def vjp(g):
        return (g / ad,)

    return _result(np.log(ad), (a,), vjp)


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def vjp(g):
        return (g * 0.5 / out,)

    return _result(out, (a,), vjp)


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return _result(out, (a,), vjp)


def relu(a):
    a = as_tensor(a)
    ad = a.data
    if ad.ndim != 2:
        raise ShapeError(f"relu expects a matrix, got shape {ad.shape}")
    out = _k.relu(ad)

    def vjp(g):
        return (_k.relu_backward(ad, g),)

    return _result(out, (a,), vjp)


def clamp_min(a, floor):
    """max(a, floor) elementwise; gradient passes through where a > floor."""
    a = as_tensor(a)
    mask = a.data > floor
    out = np.where(mask, a.data, floor)

    def vjp(g):
        return (g * mask,)

    return _result(out, (a,), vjp)


# ---------------------------------------------------------------------------
# structural ops

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2 or ad.shape[1] != bd.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {ad.shape} and {bd.shape}")
    out = _k.matmul(ad, bd)

    def vjp(g):
        ga = _k.matmul_nt(g, bd) if a.requires_grad else None
        gb = _k.matmul_tn(ad, g) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), vjp)


def linear(x, w, b):
    """Fused x @ w + b with the bias broadcast across rows."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    xd, wd, bd = x.data, w.data, b.data
    if xd.ndim != 2 or wd.ndim != 2 or xd.shape[1] != wd.shape[0]:
        raise ShapeError(f"linear: incompatible shapes {xd.shape} and {wd.shape}")
    if bd.shape != (wd.shape[1],):
        raise ShapeError(f"linear: bias shape {bd.shape} does not match width {wd.shape[1]}")
    out = _k.matmul_bias(xd, wd, bd)

    def vjp(g):
        gx = _k.matmul_nt(g, wd) if x.requires_grad else None
        gw = _k.matmul_tn(xd, g) if w.requires_grad else None
        gb = g.sum(axis=0) if b.requires_grad else None
        return gx, gw, gb

    return _result(out, (x, w, b), vjp)


def transpose(a):
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.data.shape}")

    def vjp(g):
        return (g.T,)

    return _result(a.data.T.copy(), (a,), vjp)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.data.shape

    def vjp(g):
        return (g.reshape(old),)

    return _result(a.data.reshape(shape), (a,), vjp)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    ad = a.data
    out = ad.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, ad.shape).copy() if np.ndim(g) == 0
                    else np.full(ad.shape, float(g)),)
        ge = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(ge, ad.shape).copy(),)

    return _result(out, (a,), vjp)


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    ad = a.data
    n = ad.size if axis is None else ad.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def gather_rows(a, rows):
    """Select rows by index; duplicate indices accumulate in the backward."""
    a = as_tensor(a)
    idx = np.asarray(rows, dtype=np.intp)
    ad = a.data
    if ad.ndim != 2:
        raise ShapeError(f"gather_rows expects a matrix, got shape {ad.shape}")

    def vjp(g):
        out = np.zeros_like(ad)
        np.add.at(out, idx, g)
        return (out,)

    return _result(ad[idx], (a,), vjp)


def take_per_row(a, cols):
    """Pick one column per row: out[i] = a[i, cols[i]]."""
    a = as_tensor(a)
    idx = np.asarray(cols, dtype=np.intp)
    ad = a.data
    if ad.ndim != 2 or idx.shape != (ad.shape[0],):
        raise ShapeError(f"take_per_row: matrix {ad.shape} vs index {idx.shape}")
    rows = np.arange(ad.shape[0])

    def vjp(g):
        out = np.zeros_like(ad)
        out[rows, idx] = g
        return (out,)

    return _result(ad[rows, idx], (a,), vjp)


# ---------------------------------------------------------------------------
# row-structured ops used by the episode pipeline

def logsumexp_rows(a):
    a = as_tensor(a)
    ad = a.data
    if ad.ndim != 2 or ad.shape[1] == 0:
        raise ContractError(f"logsumexp_rows expects a non-empty matrix, got {ad.shape}")
    out = _k.logsumexp_rows(ad)

    def vjp(g):
        return (_k.softmax_rows(ad) * g[:, None],)

    return _result(out, (a,), vjp)


def softmax_rows(a):
    a = as_tensor(a)
    ad = a.data
    if ad.ndim != 2 or ad.shape[1] == 0:
        raise ContractError(f"softmax_rows expects a non-empty matrix, got {ad.shape}")
    out = _k.softmax_rows(ad)

    def vjp(g):
        return (_k.softmax_rows_backward(out, g),)

    return _result(out, (a,), vjp)


def log_sum_exp(v):
    """Stable log(sum(exp(v))) of a vector; gradient is softmax(v)."""
    v = as_tensor(v)
    if v.data.ndim != 1 or v.data.shape[0] == 0:
        raise ContractError(f"log_sum_exp expects a non-empty vector, got shape {v.data.shape}")
    return reshape(logsumexp_rows(reshape(v, (1, -1))), ())


def softmax(v):
    v = as_tensor(v)
    if v.data.ndim != 1 or v.data.shape[0] == 0:
        raise ContractError(f"softmax expects a non-empty vector, got shape {v.data.shape}")
    return reshape(softmax_rows(reshape(v, (1, -1))), (-1,))


def normalize_rows(a, eps=1e-12):
    """Rescale each row of a matrix to unit Euclidean norm (eps-guarded)."""
    a = as_tensor(a)
    ad = a.data
    if ad.ndim != 2:
        raise ShapeError(f"normalize_rows expects a matrix, got shape {ad.shape}")
    out, norms = _k.normalize_rows(ad, eps)

    def vjp(g):
        return (_k.normalize_rows_backward(ad, norms, eps, g),)

    return _result(out, (a,), vjp)


# ---------------------------------------------------------------------------
# dense linear algebra with custom adjoints (GP regression path)

def solve(a, b):
    """X = a^-1 b for a square nonsingular a; b may be a vector or matrix."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim != 2 or ad.shape[0] != ad.shape[1]:
        raise ShapeError(f"solve expects a square matrix, got {ad.shape}")
    try:
        x = np.linalg.solve(ad, bd)
    except np.linalg.LinAlgError as err:
        raise NumericsError(f"solve: singular system ({err})") from err

    def vjp(g):
        gb = np.linalg.solve(ad.T, g)
        if x.ndim == 1:
            ga = -np.outer(gb, x)
        else:
            ga = -gb @ x.T
        return (ga if a.requires_grad else None, gb if b.requires_grad else None)

    return _result(x, (a, b), vjp)


def logdet_psd(a):
    """log det of a symmetric positive-definite matrix via Cholesky."""
    a = as_tensor(a)
    ad = a.data
    if ad.ndim != 2 or ad.shape[0] != ad.shape[1]:
        raise ShapeError(f"logdet_psd expects a square matrix, got {ad.shape}")
    try:
        chol = np.linalg.cholesky(ad)
    except np.linalg.LinAlgError as err:
        raise NumericsError(f"logdet_psd: matrix not positive definite ({err})") from err
    out = 2.0 * np.sum(np.log(np.diag(chol)))

    def vjp(g):
        inv = scipy.linalg.cho_solve((chol, True), np.eye(ad.shape[0]))
        return (float(g) * inv,)

    return _result(np.asarray(out), (a,), vjp)


# ---------------------------------------------------------------------------
# backward pass

def backward(root):
    """Accumulate gradients of a scalar root into every reachable leaf.

    Leaves that do not lie on a path to the root keep ``grad is None``,
    which readers treat as an exact zero (see ``grad_or_zeros``).
    """
    if not isinstance(root, Tensor):
        raise ContractError("backward expects a Tensor root")
    if root.data.size != 1:
        raise ContractError(f"backward: root must be scalar, got shape {root.data.shape}")
    if not root.requires_grad:
        return

    topo = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node._vjp is None:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g


def grad_or_zeros(t):
    return t.grad if t.grad is not None else np.zeros_like(t.data)


# ---------------------------------------------------------------------------
# numerical differentiation oracles

def finite_diff_grad(f, x, h=1e-5):
    """Central-difference gradient of a scalar function of an ndarray."""
    if h <= 0:
        raise ContractError("finite_diff_grad: step must be positive")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(x))
        flat[i] = orig - h
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericsError(f"finite_diff_grad: non-finite evaluation at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def finite_diff_hessian_diag(f, x, h=1e-2):
    """Diagonal of the Hessian of a scalar function, 5-point stencil.

    The fourth-order stencil keeps truncation error far below the 1e-4
    relative tolerance the curvature checks run at.
    """
    if h <= 0:
        raise ContractError("finite_diff_hessian_diag: step must be positive")
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat = x.reshape(-1)
    oflat = out.reshape(-1)
    f0 = float(f(x))
    for i in range(flat.size):
        orig = flat[i]
        hi = h * max(1.0, abs(orig))
        vals = []
        for step in (-2.0, -1.0, 1.0, 2.0):
            flat[i] = orig + step * hi
            vals.append(float(f(x)))
        flat[i] = orig
        fm2, fm1, fp1, fp2 = vals
        if not all(np.isfinite(v) for v in vals):
            raise NumericsError(f"finite_diff_hessian_diag: non-finite evaluation at coordinate {i}")
        oflat[i] = (-fp2 + 16.0 * fp1 - 30.0 * f0 + 16.0 * fm1 - fm2) / (12.0 * hi * hi)
    return out
