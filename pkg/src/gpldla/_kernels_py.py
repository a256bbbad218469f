"""Pure-numpy implementations of the hot numeric kernels.

Same call signatures as the compiled backend in ``_ckernels.pyx``; the
dispatcher in ``kernels.py`` picks whichever is available.  All functions
take and return float64 C-order arrays.
"""

import numpy as np

BACKEND = "python"


def _c64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def matmul(a, b):
    return _c64(a) @ _c64(b)


def matmul_nt(a, b):
    """a @ b.T without materializing the transpose."""
    return _c64(a) @ _c64(b).T


def matmul_tn(a, b):
    """a.T @ b without materializing the transpose."""
    return _c64(a).T @ _c64(b)


def matmul_bias(a, b, bias):
    """Fused a @ b + bias with bias broadcast across rows."""
    return _c64(a) @ _c64(b) + _c64(bias)


def logsumexp_rows(x):
    x = _c64(x)
    m = np.max(x, axis=1)
    return m + np.log(np.sum(np.exp(x - m[:, None]), axis=1))


def softmax_rows(x):
    x = _c64(x)
    e = np.exp(x - np.max(x, axis=1, keepdims=True))
    return e / np.sum(e, axis=1, keepdims=True)


def softmax_rows_backward(p, grad_out):
    p = _c64(p)
    grad_out = _c64(grad_out)
    dot = np.sum(p * grad_out, axis=1, keepdims=True)
    return p * (grad_out - dot)


def normalize_rows(x, eps):
    """Rescale each row to unit norm with an eps guard on the divisor.

    Returns (normalized, row_norms); the norms are needed by the backward
    pass and by callers that want the original scales.
    """
    x = _c64(x)
    norms = np.sqrt(np.sum(x * x, axis=1))
    return x / (norms + eps)[:, None], norms


def normalize_rows_backward(x, norms, eps, grad_out):
    x = _c64(x)
    grad_out = _c64(grad_out)
    scale = norms + eps
    dot = np.sum(x * grad_out, axis=1)
    safe = np.where(norms > 0.0, norms, 1.0)
    dx = grad_out / scale[:, None] - x * (dot / (safe * scale * scale))[:, None]
    # zero rows: x/(|x|+eps) degenerates to x/eps, whose Jacobian is I/eps
    zero = norms == 0.0
    if np.any(zero):
        dx[zero] = grad_out[zero] / eps
    return dx


def relu(x):
    return np.maximum(_c64(x), 0.0)


def relu_backward(x, grad_out):
    return np.where(_c64(x) > 0.0, _c64(grad_out), 0.0)
