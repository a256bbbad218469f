"""Numeric kernel dispatch: compiled extension when available, numpy otherwise.

The kernels operate on 2-D float64 matrices (plus 1-D norms/bias vectors)
and carry no autodiff state; the tape in ``tensor.py`` builds on them.
Set ``GPLDLA_PURE_PYTHON=1`` to force the numpy backend, e.g. for
benchmark comparisons against the compiled core.
"""

import os

if os.environ.get("GPLDLA_PURE_PYTHON"):
    from . import _kernels_py as _impl
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _kernels_py as _impl

BACKEND = _impl.BACKEND

matmul = _impl.matmul
matmul_nt = _impl.matmul_nt
matmul_tn = _impl.matmul_tn
matmul_bias = _impl.matmul_bias
logsumexp_rows = _impl.logsumexp_rows
softmax_rows = _impl.softmax_rows
softmax_rows_backward = _impl.softmax_rows_backward
normalize_rows = _impl.normalize_rows
normalize_rows_backward = _impl.normalize_rows_backward
relu = _impl.relu
relu_backward = _impl.relu_backward
