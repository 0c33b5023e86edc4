import numpy as np
import pytest

from core.autodiff import (Tensor, affine, backward, conv2d, cross_entropy_loss, finite_difference_check,
                           fixed_order_matmul, flatten, mse_loss, relu, unflatten)
from core.errors import ContractError, DimensionError, ValidationError
from core.split_model import forward_full


class ConvLayer:
    """A single conv layer exposed the way split models expose parameters"""

    def __init__(self, rng, dtype=np.float64):
        self.W = Tensor((0.5 * rng.standard_normal((3, 2, 3, 3))).astype(dtype), requires_grad=True, name="w")
        self.b = Tensor((0.1 * rng.standard_normal(3)).astype(dtype), requires_grad=True, name="b")

    def parameter_groups(self):
        return {"intermediate": {"w": self.W, "b": self.b}}


def conv_loss(model, batch):
    x, target = batch
    out = conv2d(Tensor(x.astype(model.W.dtype)), model.W, model.b, stride=2, padding=1)
    return mse_loss(flatten(out), target)


def naive_conv(x, w, b, stride, padding):
    x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    batch, _, height, width = x.shape
    out_c, _, k, _ = w.shape
    out_h = (height - k) // stride + 1
    out_w = (width - k) // stride + 1
    out = np.zeros((batch, out_c, out_h, out_w))
    for n in range(batch):
        for o in range(out_c):
            for i in range(out_h):
                for j in range(out_w):
                    patch = x[n, :, i * stride:i * stride + k, j * stride:j * stride + k]
                    out[n, o, i, j] = np.sum(patch * w[o]) + b[o]
    return out


def test_fixed_order_matmul_matches_matmul(rng):
    x = rng.standard_normal((5, 7))
    w = rng.standard_normal((7, 3))
    np.testing.assert_allclose(fixed_order_matmul(x, w), x @ w, rtol=1e-12, atol=1e-12)


def test_fixed_order_matmul_rows_do_not_depend_on_batch(rng):
    x = rng.standard_normal((16, 9)).astype(np.float32)
    w = rng.standard_normal((9, 4)).astype(np.float32)
    full = fixed_order_matmul(x, w)
    for row in range(len(x)):
        assert np.array_equal(full[row], fixed_order_matmul(x[row:row + 1], w)[0])


def test_affine_shape_mismatch_raises():
    with pytest.raises(DimensionError):
        affine(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))), Tensor(np.zeros(2)))


def test_relu_subgradient_is_zero_at_kink():
    x = Tensor(np.array([[-1.0, 0.0, 2.0]]), requires_grad=True)
    out = relu(x)
    backward(mse_loss(out, np.zeros((1, 3))))
    np.testing.assert_array_equal(out.values, [[0.0, 0.0, 2.0]])
    assert x.grad[0, 1] == 0.0
    assert x.grad[0, 0] == 0.0
    assert x.grad[0, 2] > 0


def test_affine_gradients_match_closed_form(rng):
    x = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
    W = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
    b = Tensor(rng.standard_normal(2), requires_grad=True)
    target = rng.standard_normal((4, 2))
    backward(mse_loss(affine(x, W, b), target))

    residual = 2 * (x.values @ W.values + b.values - target) / target.size
    np.testing.assert_allclose(W.grad, x.values.T @ residual, rtol=1e-10)
    np.testing.assert_allclose(b.grad, residual.sum(axis=0), rtol=1e-10)
    np.testing.assert_allclose(x.grad, residual @ W.values.T, rtol=1e-10)


def test_cross_entropy_uniform_logits():
    logits = Tensor(np.zeros((3, 5)), requires_grad=True)
    loss = cross_entropy_loss(logits, [0, 1, 4])
    assert loss.item() == pytest.approx(np.log(5))


def test_cross_entropy_is_stable_for_large_logits():
    logits = Tensor(np.array([[1000.0, 0.0], [0.0, 1000.0]]))
    assert np.isfinite(cross_entropy_loss(logits, [0, 1]).item())


def test_cross_entropy_hand_values():
    assert cross_entropy_loss(Tensor(np.array([[1.0, 2.0]])), [0]).item() == pytest.approx(1.313262, abs=1e-6)
    confident = cross_entropy_loss(Tensor(np.array([[1000.0, 0.0, 0.0]])), [0]).item()
    assert confident == pytest.approx(0.0, abs=1e-12)


def test_mse_hand_values_and_symmetry(rng):
    assert mse_loss(Tensor(np.array([1.0, 3.0])), np.array([2.0, 1.0])).item() == 2.5
    assert mse_loss(Tensor(np.array([0.0, 0.0])), np.array([1.0, 1.0])).item() == 1.0
    a, b = rng.standard_normal((4, 3)), rng.standard_normal((4, 3))
    assert mse_loss(Tensor(a), b).item() == mse_loss(Tensor(b), a).item()
    assert mse_loss(Tensor(a), a).item() == 0.0


def test_cross_entropy_rejects_out_of_range_labels():
    with pytest.raises(ValidationError):
        cross_entropy_loss(Tensor(np.zeros((2, 3))), [0, 3])


def test_backward_requires_scalar_loss():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    out = relu(x)
    with pytest.raises(ContractError):
        backward(out)


def test_backward_requires_recorded_output():
    with pytest.raises(ContractError):
        backward(Tensor(np.array(1.0)))


def test_backward_zero_fills_unreachable_parameters(rng):
    used = Tensor(rng.standard_normal((3, 2)), requires_grad=True)
    unused = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
    bias = Tensor(np.zeros(2), requires_grad=True)
    loss = mse_loss(affine(Tensor(rng.standard_normal((4, 3))), used, bias), np.zeros((4, 2)))
    grads = backward(loss, {"intermediate": {"used": used, "bias": bias, "unused": unused}})
    arrays = grads.unflatten()["intermediate"]
    assert np.all(arrays["unused"] == 0)
    assert np.any(arrays["used"] != 0)


def test_ops_preserve_dtype(rng):
    for dtype in (np.float32, np.float64):
        x = Tensor(rng.standard_normal((2, 3)).astype(dtype))
        W = Tensor(rng.standard_normal((3, 4)).astype(dtype))
        b = Tensor(np.zeros(4, dtype=dtype))
        out = relu(affine(x, W, b))
        assert out.dtype == dtype
        assert mse_loss(out, np.zeros((2, 4))).dtype == dtype


def test_integer_values_become_float32():
    assert Tensor([1, 2, 3]).dtype == np.float32


def test_detach_has_no_graph(rng):
    x = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
    out = relu(x)
    copy = out.detach()
    assert copy.graph is None
    assert not copy.requires_grad
    np.testing.assert_array_equal(copy.values, out.values)


def test_flatten_unflatten_shapes(rng):
    x = Tensor(rng.standard_normal((2, 3, 4, 4)))
    flat = flatten(x)
    assert flat.shape == (2, 48)
    assert unflatten(flat, (3, 4, 4)).shape == (2, 3, 4, 4)
    with pytest.raises(DimensionError):
        unflatten(flat, (3, 4, 5))


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1)])
def test_conv2d_matches_direct_loop(rng, stride, padding):
    x = rng.standard_normal((2, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding)
    np.testing.assert_allclose(out.values, naive_conv(x, w, b, stride, padding), rtol=1e-10, atol=1e-10)


def test_conv2d_rejects_bad_stride(rng):
    with pytest.raises(ValidationError):
        conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 3, 3))), Tensor(np.zeros(1)), stride=3)


def test_conv2d_gradients_pass_finite_differences(rng):
    layer = ConvLayer(rng)
    x = rng.standard_normal((2, 2, 5, 5))
    target = rng.standard_normal((2, 27))
    assert finite_difference_check(layer, conv_loss, (x, target)) < 1e-6


def test_conv2d_input_gradient_passes_finite_differences(rng):
    W = Tensor(rng.standard_normal((2, 2, 3, 3)))
    b = Tensor(np.zeros(2))
    x_values = rng.standard_normal((1, 2, 4, 4))
    target = rng.standard_normal((1, 2, 4, 4))

    x = Tensor(x_values.copy(), requires_grad=True)
    backward(mse_loss(conv2d(x, W, b, padding=1), target))

    eps = 1e-6
    numeric = np.zeros_like(x_values)
    for index in np.ndindex(x_values.shape):
        plus, minus = x_values.copy(), x_values.copy()
        plus[index] += eps
        minus[index] -= eps
        numeric[index] = (mse_loss(conv2d(Tensor(plus), W, b, padding=1), target).item()
                          - mse_loss(conv2d(Tensor(minus), W, b, padding=1), target).item()) / (2 * eps)
    np.testing.assert_allclose(x.grad, numeric, rtol=1e-5, atol=1e-8)


def test_finite_difference_check_restores_parameters(make_model):
    model = make_model(dtype=np.float32)
    before = {name: p.values.copy() for group in model.parameter_groups().values() for name, p in group.items()}
    rng = np.random.default_rng(0)
    batch = (rng.standard_normal((4, 8)), rng.integers(0, 4, 4))

    def loss_fn(m, b):
        return cross_entropy_loss(forward_full(m, b[0]).logits, b[1])

    finite_difference_check(model, loss_fn, batch)
    for group in model.parameter_groups().values():
        for name, p in group.items():
            assert p.dtype == np.float32
            np.testing.assert_array_equal(p.values, before[name])


def test_finite_difference_check_rejects_bad_eps(make_model):
    with pytest.raises(ValidationError):
        finite_difference_check(make_model(), lambda m, b: None, None, eps=0.0)
