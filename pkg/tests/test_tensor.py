import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fixupbench import tensor as T
from fixupbench.errors import DimensionError, DomainError, PreconditionError


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            s = 0.0
            for k in range(a.shape[1]):
                s += a[i, k] * b[k, j]
            out[i, j] = s
    return out


def naive_conv(x, w, stride, pad):
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for b in range(n):
        for o in range(f):
            for i in range(ho):
                for j in range(wo):
                    s = 0.0
                    for ch in range(c):
                        for di in range(k):
                            for dj in range(k):
                                s += xp[b, ch, i * stride + di, j * stride + dj] * w[o, ch, di, dj]
                    out[b, o, i, j] = s
    return out


def test_matmul_hand_cases():
    assert np.array_equal(T.matmul(np.eye(2), np.array([[1., 2.], [3., 4.]])), [[1, 2], [3, 4]])
    assert np.array_equal(T.matmul(np.array([[1., 2.]]), np.array([[3.], [4.]])), [[11]])


def test_matmul_matches_triple_loop():
    rng = T.make_rng(1)
    a, b = rng.standard_normal((5, 7)), rng.standard_normal((7, 3))
    ref = naive_matmul(a, b)
    assert np.max(np.abs(T.matmul(a, b) - ref) / np.abs(ref)) <= 1e-12


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 2\)"):
        T.matmul(np.ones((2, 3)), np.ones((4, 2)))


def test_conv_hand_cases():
    out = T.conv2d(np.ones((1, 1, 3, 3)), np.full((1, 1, 1, 1), 2.0))
    assert np.array_equal(out, np.full((1, 1, 3, 3), 2.0))
    out = T.conv2d(np.array([[[[1., 2.], [3., 4.]]]]), np.ones((1, 1, 2, 2)))
    assert np.array_equal(out, [[[[10.]]]])


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 0)])
def test_conv_matches_nested_loops(stride, pad):
    rng = T.make_rng(stride * 10 + pad)
    x = rng.standard_normal((2, 3, 6, 5))
    w = rng.standard_normal((4, 3, 3, 3))
    np.testing.assert_allclose(T.conv2d(x, w, stride, pad), naive_conv(x, w, stride, pad), rtol=1e-12, atol=1e-12)


def test_conv_output_size_formula():
    assert T.conv2d(np.zeros((1, 1, 7, 7)), np.zeros((1, 1, 3, 3)), 2, 1).shape == (1, 1, 4, 4)


def test_conv_kernel_too_large():
    with pytest.raises(DimensionError):
        T.conv2d(np.ones((1, 1, 2, 2)), np.ones((1, 1, 3, 3)))


def test_conv_backward_finite_differences():
    rng = T.make_rng(3)
    x = rng.standard_normal((2, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    dy = rng.standard_normal((2, 3, 3, 3))
    out, cols = T.conv2d(x, w, 2, 1, return_cols=True)
    dx, dw = T.conv2d_backward(dy, cols, x.shape, w, 2, 1)
    h = 1e-6
    for arr, grad in ((x, dx), (w, dw)):
        num = np.zeros_like(arr)
        for i in range(arr.size):
            old = arr.flat[i]
            arr.flat[i] = old + h
            up = np.sum(T.conv2d(x, w, 2, 1) * dy)
            arr.flat[i] = old - h
            down = np.sum(T.conv2d(x, w, 2, 1) * dy)
            arr.flat[i] = old
            num.flat[i] = (up - down) / (2 * h)
        np.testing.assert_allclose(grad, num, rtol=1e-6, atol=1e-8)


def test_relu_definition_and_mask():
    out, mask = T.relu(np.array([-1.0, 0.0, 2.0]))
    assert np.array_equal(out, [0, 0, 2])
    assert np.array_equal(mask, [False, False, True])
    assert np.array_equal(T.relu(-np.ones(4))[0], np.zeros(4))
    # gradient at exactly zero is zero
    assert T.relu_backward(np.ones(3), mask)[1] == 0.0


def test_relu_gradient_finite_differences():
    x = T.make_rng(0).standard_normal(50)
    x = x[np.abs(x) > 1e-3]
    _, mask = T.relu(x)
    h = 1e-6
    num = (T.relu(x + h)[0] - T.relu(x - h)[0]) / (2 * h)
    np.testing.assert_allclose(T.relu_backward(np.ones_like(x), mask), num, atol=1e-7)


def test_variance_sum_cases():
    assert T.variance_sum(np.zeros((2, 2))) == 0.0
    assert T.variance_sum(np.array([[0.0], [2.0]])) == 2.0
    with pytest.raises(PreconditionError):
        T.variance_sum(np.zeros((1, 3)))


def test_variance_sum_monte_carlo():
    x = T.make_rng(0).standard_normal((10_000, 8))
    assert abs(T.variance_sum(x) - 8) <= 0.5


def test_sample_normal_degenerate_and_moments():
    rng = T.make_rng(0)
    assert np.array_equal(T.sample("normal", (3, 3), rng, mean=0.0, std=0.0), np.zeros((3, 3)))
    draws = T.sample("normal", (100_000,), T.make_rng(5), mean=0.0, std=1.0)
    assert abs(draws.mean()) <= 0.02
    assert 0.98 <= draws.var() <= 1.02


def test_sample_rejects_bad_parameters():
    rng = T.make_rng(0)
    with pytest.raises(DomainError):
        T.sample("normal", (2,), rng, std=-1.0)
    with pytest.raises(DomainError):
        T.sample("uniform", (2,), rng, low=1.0, high=0.0)


@pytest.mark.parametrize("shape", [(4, 4), (6, 3), (3, 6)])
def test_orthogonal(shape):
    q = T.sample("orthogonal", shape, T.make_rng(2))
    small = min(shape)
    gram = q.T @ q if shape[0] >= shape[1] else q @ q.T
    assert np.max(np.abs(gram - np.eye(small))) <= 1e-10


def test_orthogonal_needs_two_axes():
    with pytest.raises(DimensionError):
        T.sample("orthogonal", (2, 2, 2), T.make_rng(0))


def test_same_seed_same_stream():
    a = T.sample("normal", (64,), T.make_rng(7), std=1.0)
    b = T.sample("normal", (64,), T.make_rng(7), std=1.0)
    assert a.tobytes() == b.tobytes()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
def test_kernels_linear_and_homogeneous(seed, alpha):
    rng = T.make_rng(seed)
    a, a2 = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    b = rng.standard_normal((4, 2))
    lhs = T.matmul(a + alpha * a2, b)
    rhs = T.matmul(a, b) + alpha * T.matmul(a2, b)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * max(1.0, np.max(np.abs(rhs)))
    x = rng.standard_normal((1, 2, 4, 4))
    w = rng.standard_normal((2, 2, 3, 3))
    ref = alpha * T.conv2d(x, w, 1, 1)
    assert np.max(np.abs(T.conv2d(alpha * x, w, 1, 1) - ref)) <= 1e-12 * np.max(np.abs(ref))
    v = rng.standard_normal(10)
    assert np.allclose(T.relu(alpha * v)[0], alpha * T.relu(v)[0], rtol=1e-12, atol=0)
