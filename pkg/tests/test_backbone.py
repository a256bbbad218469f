"""Feature extractor shapes, init statistics, and forward math."""

import numpy as np
import pytest

from gpldla import tensor as T
from gpldla.backbone import ArchSpec, forward, init_params, wrap_params
from gpldla.errors import ContractError
from gpldla.rng import Rng


def test_arch_validation():
    with pytest.raises(ContractError):
        ArchSpec(kind="conv")
    with pytest.raises(ContractError):
        ArchSpec(kind="mlp", activation="gelu")
    with pytest.raises(ContractError):
        ArchSpec(kind="mlp", in_dim=4, hidden=0)
    spec = ArchSpec(kind="identity", in_dim=7, out_dim=99)
    assert spec.out_dim == 7       # identity pins out_dim to in_dim


def test_init_shapes_and_statistics():
    spec = ArchSpec(kind="mlp", in_dim=100, out_dim=32, hidden=64)
    params = init_params(spec, Rng(0))
    assert params["w0"].shape == (100, 64)
    assert params["b0"].shape == (64,)
    assert params["w1"].shape == (64, 32)
    assert np.all(params["b0"] == 0.0) and np.all(params["b1"] == 0.0)
    # fan-in scaling: std of w0 entries ~ 1/sqrt(100)
    assert abs(params["w0"].std() - 0.1) < 0.01


def test_identity_forward():
    spec = ArchSpec(kind="identity", in_dim=3, normalize=False)
    x = np.array([[1.0, 2.0, 2.0]])
    out = forward(spec, {}, x)
    assert np.array_equal(out.data, x)
    normed = forward(spec, {}, x, normalize=True)
    assert np.allclose(normed.data, x / 3.0)


def test_linear_forward_matches_manual():
    spec = ArchSpec(kind="linear", in_dim=4, out_dim=3, normalize=False)
    params = wrap_params(init_params(spec, Rng(1)))
    x = np.random.default_rng(2).standard_normal((6, 4))
    out = forward(spec, params, x)
    want = x @ params["w0"].data + params["b0"].data
    assert np.allclose(out.data, want)


@pytest.mark.parametrize("activation", ["relu", "tanh"])
def test_mlp_forward_matches_manual(activation):
    spec = ArchSpec(kind="mlp", in_dim=5, out_dim=4, hidden=8,
                    activation=activation, normalize=False)
    arrays = init_params(spec, Rng(3))
    params = wrap_params(arrays)
    x = np.random.default_rng(4).standard_normal((7, 5))
    h = x @ arrays["w0"] + arrays["b0"]
    h = np.maximum(h, 0.0) if activation == "relu" else np.tanh(h)
    want = h @ arrays["w1"] + arrays["b1"]
    out = forward(spec, params, x)
    assert np.allclose(out.data, want)


def test_normalized_outputs_are_unit_rows():
    spec = ArchSpec(kind="mlp", in_dim=6, out_dim=5, hidden=9, normalize=True)
    params = wrap_params(init_params(spec, Rng(5)))
    x = np.random.default_rng(6).standard_normal((11, 6)) * 4.0
    out = forward(spec, params, x)
    assert np.allclose(np.linalg.norm(out.data, axis=1), 1.0, atol=1e-12)


def test_zero_output_row_stays_finite():
    # zero input through the identity + normalization guard
    spec = ArchSpec(kind="identity", in_dim=4, normalize=True)
    out = forward(spec, {}, np.zeros((2, 4)))
    assert np.isfinite(out.data).all()


def test_input_dim_mismatch():
    spec = ArchSpec(kind="linear", in_dim=4, out_dim=2)
    params = wrap_params(init_params(spec, Rng(7)))
    with pytest.raises(ContractError):
        forward(spec, params, np.zeros((3, 5)))


def test_backbone_gradient_flows():
    spec = ArchSpec(kind="mlp", in_dim=3, out_dim=2, hidden=4,
                    activation="tanh", normalize=True)
    arrays = init_params(spec, Rng(8))
    params = wrap_params(arrays)
    x = np.random.default_rng(9).standard_normal((5, 3))
    loss = T.tsum(T.square(forward(spec, params, x)))
    T.backward(loss)
    for name in ("w0", "b0", "w1", "b1"):
        grad = params[name].grad
        assert grad is not None and grad.shape == arrays[name].shape
    # unit-norm output makes the loss constant (= n rows), gradients ~ 0
    assert np.allclose(loss.data, 5.0)
