"""Unit tests for the reverse-mode autodiff engine."""
import numpy as np
import pytest

from gcnrwz import autodiff as ad
from gcnrwz.autodiff import Tensor


def test_tensor_is_float64_and_contiguous():
    t = Tensor(np.arange(6, dtype=np.int32).reshape(2, 3).T)
    assert t.values.dtype == np.float64
    assert t.values.flags.c_contiguous


def test_scalar_tensor_keeps_zero_dims():
    t = Tensor(3.0)
    assert t.shape == ()
    assert t.item() == 3.0


def test_add_sub_hadamard_values():
    a = Tensor([1.0, 2.0])
    b = Tensor([3.0, 5.0])
    assert np.array_equal(ad.add(a, b).values, [4.0, 7.0])
    assert np.array_equal(ad.sub(a, b).values, [-2.0, -3.0])
    assert np.array_equal(ad.hadamard(a, b).values, [3.0, 10.0])


def test_broadcast_gradients_sum_over_expanded_axes():
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    loss = ad.reduce_sum(ad.add(a, b))
    ad.backward(loss)
    assert np.array_equal(a.grad, np.ones((2, 3)))
    assert np.array_equal(b.grad, 2.0 * np.ones(3))


def test_incompatible_shapes_rejected():
    with pytest.raises(ValueError, match="incompatible shapes"):
        ad.add(Tensor(np.ones(2)), Tensor(np.ones(3)))


def test_matmul_inner_dim_mismatch_rejected():
    with pytest.raises(ValueError, match="inner dimensions"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_matmul_batched_broadcast_gradient():
    rng = np.random.default_rng(0)
    a = Tensor(rng.standard_normal((4, 2, 3)), requires_grad=True)
    b = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
    loss = ad.reduce_sum(ad.matmul(a, b))
    ad.backward(loss)
    assert a.grad.shape == a.shape
    assert b.grad.shape == b.shape
    err = ad.finite_difference_check(
        lambda: ad.reduce_sum(ad.matmul(a, b)), [a, b])
    assert err < 1e-6


def test_softmax_rows_sum_to_one():
    x = Tensor(np.random.default_rng(1).standard_normal((3, 5)))
    out = ad.softmax(x, axis=-1).values
    assert np.allclose(out.sum(axis=-1), 1.0)
    assert np.all(out > 0)


def test_softmax_shift_invariance():
    x = np.array([1.0, 2.0, 3.0])
    assert np.allclose(ad.softmax(Tensor(x)).values,
                       ad.softmax(Tensor(x + 1000.0)).values)


def test_softmax_gradient_matches_finite_differences():
    rng = np.random.default_rng(2)
    x = Tensor(rng.standard_normal((2, 4)), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 1)), requires_grad=True)
    f = lambda: ad.reduce_sum(ad.matmul(ad.softmax(x, axis=-1), w))
    assert ad.finite_difference_check(f, [x, w]) < 1e-6


@pytest.mark.parametrize("op", [ad.sigmoid, ad.tanh])
def test_smooth_unary_gradients(op):
    x = Tensor(np.random.default_rng(3).standard_normal((3, 3)), requires_grad=True)
    assert ad.finite_difference_check(lambda: ad.reduce_sum(op(x)), [x]) < 1e-6


def test_sigmoid_stable_at_extremes():
    out = ad.sigmoid(Tensor([-1000.0, 0.0, 1000.0])).values
    assert np.all(np.isfinite(out))
    assert out[0] == 0.0 and out[2] == 1.0 and out[1] == 0.5


def test_relu_values_and_gradient():
    x = Tensor([-1.0, 0.0, 2.0], requires_grad=True)
    out = ad.relu(x)
    assert np.array_equal(out.values, [0.0, 0.0, 2.0])
    ad.backward(ad.reduce_sum(out))
    assert np.array_equal(x.grad, [0.0, 0.0, 1.0])


def test_conv1d_time_matches_direct_correlation():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 3, 4, 9))
    k = rng.standard_normal((5, 3, 3))
    out = ad.conv1d_time(Tensor(x), Tensor(k)).values
    assert out.shape == (2, 5, 4, 7)
    ref = np.zeros_like(out)
    for s in range(2):
        for o in range(5):
            for n in range(4):
                for t in range(7):
                    ref[s, o, n, t] = np.sum(k[o] * x[s, :, n, t:t + 3])
    assert np.allclose(out, ref, atol=1e-12)


def test_conv1d_time_gradients():
    rng = np.random.default_rng(5)
    x = Tensor(rng.standard_normal((2, 2, 3, 6)), requires_grad=True)
    k = Tensor(rng.standard_normal((3, 2, 3)), requires_grad=True)
    f = lambda: ad.reduce_sum(ad.conv1d_time(x, k))
    assert ad.finite_difference_check(f, [x, k]) < 1e-6


def test_conv1d_time_kernel_longer_than_sequence_rejected():
    with pytest.raises(ValueError, match="exceeds sequence length"):
        ad.conv1d_time(Tensor(np.ones((1, 1, 2))), Tensor(np.ones((1, 1, 3))))


def test_concat_and_slice_roundtrip_gradients():
    rng = np.random.default_rng(6)
    a = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
    b = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
    joined = ad.concat([a, b], axis=1)
    assert joined.shape == (2, 5)
    piece = ad.slice_axis(joined, 1, 3, 2)
    ad.backward(ad.reduce_sum(piece))
    assert np.array_equal(a.grad, np.zeros((2, 3)))
    assert np.array_equal(b.grad, np.ones((2, 2)))


def test_slice_axis_bounds_checked():
    with pytest.raises(ValueError, match="out of bounds"):
        ad.slice_axis(Tensor(np.ones((2, 3))), 1, 2, 2)


def test_transpose_reshape_gradients():
    rng = np.random.default_rng(7)
    x = Tensor(rng.standard_normal((2, 3, 4)), requires_grad=True)
    f = lambda: ad.reduce_sum(
        ad.hadamard(ad.reshape(ad.transpose(x, (2, 0, 1)), (4, 6)),
                    ad.reshape(ad.transpose(x, (2, 0, 1)), (4, 6))))
    assert ad.finite_difference_check(f, [x]) < 1e-6


def test_reduce_mean_gradient_is_uniform():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    ad.backward(ad.reduce_mean(x))
    assert np.allclose(x.grad, np.full((2, 3), 1.0 / 6.0))


def test_gradients_accumulate_across_paths():
    x = Tensor([2.0], requires_grad=True)
    y = ad.add(ad.hadamard(x, x), x)  # x^2 + x -> dy/dx = 2x + 1 = 5
    ad.backward(ad.reduce_sum(y))
    assert np.allclose(x.grad, [5.0])


def test_backward_requires_scalar_loss():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="must be scalar"):
        ad.backward(ad.relu(x))


def test_constants_receive_no_gradient():
    c = ad.constant(np.ones(3))
    x = Tensor(np.ones(3), requires_grad=True)
    ad.backward(ad.reduce_sum(ad.hadamard(c, x)))
    assert c.grad is None
    assert np.array_equal(x.grad, np.ones(3))


def test_finite_difference_check_rejects_nondeterministic_function():
    x = Tensor(np.ones(2), requires_grad=True)
    rng = np.random.default_rng(8)

    def noisy():
        return ad.reduce_sum(ad.hadamard(x, ad.constant(rng.standard_normal(2))))

    with pytest.raises(ValueError, match="not deterministic"):
        ad.finite_difference_check(noisy, [x])
