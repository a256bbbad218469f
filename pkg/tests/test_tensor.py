"""Reverse-mode tape: every op's gradient against central differences."""

import numpy as np
import pytest

from gpldla import tensor as T
from gpldla.errors import ContractError, NumericsError, ShapeError


def scalarize(out, seed=0):
    """Contract any op output to a scalar with fixed random weights."""
    w = np.random.default_rng(seed).standard_normal(out.data.shape)
    return T.tsum(T.mul(out, w))


def gradcheck(build, x0, tol=1e-7, h=1e-5):
    """build(flat) -> (scalar tensor, leaf list); compares tape to FD."""
    loss, leaves = build(x0)
    T.backward(loss)
    tape = np.concatenate([np.asarray(leaf.grad).ravel() for leaf in leaves])
    fd = T.finite_diff_grad(lambda v: build(v)[0].data, x0, h=h)
    err = np.linalg.norm(tape - fd) / max(np.linalg.norm(fd), 1e-12)
    assert err < tol, f"gradient mismatch: rel err {err:.3e}"


def one_input(op, x0, seed=0):
    def build(flat):
        x = T.parameter(flat.reshape(x0.shape))
        return scalarize(op(x), seed), [x]
    gradcheck(build, x0.ravel())


def two_input(op, a0, b0, seed=0):
    na = a0.size

    def build(flat):
        a = T.parameter(flat[:na].reshape(a0.shape))
        b = T.parameter(flat[na:].reshape(b0.shape))
        return scalarize(op(a, b), seed), [a, b]
    gradcheck(build, np.concatenate([a0.ravel(), b0.ravel()]))


def rand(shape, seed):
    return np.random.default_rng(seed).standard_normal(shape)


# --- elementwise ---------------------------------------------------------

def test_add_sub_mul_div_grads():
    a, b = rand((3, 4), 1), rand((3, 4), 2) + 3.0
    two_input(T.add, a, b)
    two_input(T.sub, a, b)
    two_input(T.mul, a, b)
    two_input(T.div, a, b)    # denominator shifted away from 0


def test_broadcast_grads():
    two_input(T.add, rand((3, 4), 3), rand((4,), 4))
    two_input(T.mul, rand((3, 4), 5), rand((3, 1), 6))
    two_input(T.mul, rand((2, 5), 7), np.array(1.7))


def test_unary_grads():
    x = rand((4, 3), 8)
    one_input(T.neg, x)
    one_input(T.square, x)
    one_input(T.exp, x)
    one_input(T.tanh, x)
    one_input(lambda t: T.pow_const(t, 3.0), x)
    one_input(T.log, np.abs(x) + 0.5)
    one_input(T.sqrt, np.abs(x) + 0.5)


def test_relu_grad_off_kink():
    x = rand((5, 4), 9)
    x[np.abs(x) < 0.2] += 0.5    # keep FD away from the kink
    one_input(T.relu, x)


def test_clamp_min_grad_and_value():
    x = np.array([[-2.0, 0.5], [3.0, -0.1]])
    out = T.clamp_min(T.as_tensor(x), 0.0)
    assert np.array_equal(out.data, [[0.0, 0.5], [3.0, 0.0]])
    y = rand((3, 3), 10) + 2.0   # all strictly above the floor
    one_input(lambda t: T.clamp_min(t, 0.0), y)


# --- linear algebra ------------------------------------------------------

def test_matmul_grad():
    two_input(T.matmul, rand((3, 5), 11), rand((5, 2), 12))


def test_linear_grad():
    x0, w0, b0 = rand((4, 3), 13), rand((3, 2), 14), rand((2,), 15)

    def build(flat):
        x = T.parameter(flat[:12].reshape(4, 3))
        w = T.parameter(flat[12:18].reshape(3, 2))
        b = T.parameter(flat[18:])
        return scalarize(T.linear(x, w, b)), [x, w, b]
    gradcheck(build, np.concatenate([x0.ravel(), w0.ravel(), b0]))


def test_linear_matches_manual():
    x, w, b = rand((4, 3), 16), rand((3, 2), 17), rand((2,), 18)
    out = T.linear(T.as_tensor(x), T.as_tensor(w), T.as_tensor(b))
    assert np.allclose(out.data, x @ w + b)


def test_solve_value_and_grad():
    base = rand((4, 4), 19)
    a0 = base @ base.T + 4.0 * np.eye(4)
    b0 = rand((4, 2), 20)
    x = T.solve(T.as_tensor(a0), T.as_tensor(b0))
    assert np.allclose(x.data, np.linalg.solve(a0, b0), atol=1e-12)
    two_input(T.solve, a0, b0, seed=3)


def test_solve_singular_raises():
    with pytest.raises(NumericsError):
        T.solve(T.as_tensor(np.zeros((3, 3))), T.as_tensor(np.ones((3, 1))))


def test_logdet_value_and_grad():
    base = rand((5, 5), 21)
    a0 = base @ base.T + 3.0 * np.eye(5)
    out = T.logdet_psd(T.as_tensor(a0))
    assert np.allclose(out.data, np.linalg.slogdet(a0)[1])

    # the op is defined on symmetric matrices, so the finite-difference
    # check must perturb within that subspace: parameterize A = M + M^T + cI
    def build(flat):
        m = T.parameter(flat.reshape(5, 5))
        a = T.add(T.add(m, T.transpose(m)), 6.0 * np.eye(5))
        return T.logdet_psd(a), [m]
    gradcheck(build, rand((5, 5), 31).ravel())


def test_logdet_rejects_indefinite():
    with pytest.raises(NumericsError):
        T.logdet_psd(T.as_tensor(np.diag([1.0, -2.0])))


# --- structural ----------------------------------------------------------

def test_structural_grads():
    x = rand((4, 6), 22)
    one_input(T.transpose, x)
    one_input(lambda t: T.reshape(t, (8, 3)), x)
    one_input(T.tsum, x)
    one_input(lambda t: T.tsum(t, axis=0), x)
    one_input(lambda t: T.tsum(t, axis=1, keepdims=True), x)
    one_input(T.tmean, x)


def test_gather_rows_accumulates_repeats():
    x0 = rand((3, 4), 23)

    def build(flat):
        x = T.parameter(flat.reshape(3, 4))
        picked = T.gather_rows(x, np.array([0, 2, 0, 0]))   # row 0 thrice
        return scalarize(picked), [x]
    gradcheck(build, x0.ravel())


def test_take_per_row_grad():
    x0 = rand((5, 3), 24)
    cols = np.array([0, 2, 1, 1, 0])

    def build(flat):
        x = T.parameter(flat.reshape(5, 3))
        return scalarize(T.take_per_row(x, cols)), [x]
    gradcheck(build, x0.ravel())


def test_row_softmax_ops_grads():
    x = rand((6, 4), 25) * 2.0
    one_input(T.logsumexp_rows, x)
    one_input(T.softmax_rows, x)
    one_input(T.normalize_rows, x)


def test_vector_ops_grads():
    v = rand((5,), 26)
    one_input(T.log_sum_exp, v)
    one_input(T.softmax, v)


def test_softmax_rows_values():
    x = rand((4, 5), 27) * 3.0
    p = T.softmax_rows(T.as_tensor(x)).data
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(T.logsumexp_rows(T.as_tensor(x)).data,
                       np.log(np.exp(x).sum(axis=1)))


# --- tape mechanics ------------------------------------------------------

def test_backward_requires_scalar():
    x = T.parameter(rand((2, 2), 28))
    with pytest.raises(ContractError):
        T.backward(T.square(x))


def test_grad_accumulation_through_reuse():
    x = T.parameter(np.array(3.0))
    y = T.add(T.mul(x, 2.0), T.mul(x, 5.0))
    T.backward(y)
    assert np.allclose(x.grad, 7.0)


def test_constants_get_no_grad():
    x = T.parameter(np.array(2.0))
    c = T.as_tensor(np.array(4.0))
    T.backward(T.mul(x, c))
    assert np.allclose(x.grad, 4.0)
    assert c.grad is None


def test_deep_chain_is_iterative():
    x = T.parameter(np.array(1.0))
    y = x
    for _ in range(5000):
        y = T.add(y, 1.0)
    T.backward(y)    # must not hit the recursion limit
    assert np.allclose(x.grad, 1.0)


def test_rank_limit_and_dtype():
    with pytest.raises(ShapeError):
        T.as_tensor(np.zeros((2, 2, 2)))
    t = T.as_tensor([[1, 2], [3, 4]])
    assert t.data.dtype == np.float64


def test_finite_diff_hessian_diag_on_quartic():
    x0 = rand((6,), 29)

    def f(x):
        return float((x ** 4).sum())

    got = T.finite_diff_hessian_diag(f, x0)
    assert np.allclose(got, 12.0 * x0 ** 2, rtol=1e-6, atol=1e-6)


def test_finite_diff_grad_on_known_function():
    x0 = rand((4,), 30)
    got = T.finite_diff_grad(lambda x: float(np.sin(x).sum()), x0)
    assert np.allclose(got, np.cos(x0), atol=1e-9)
