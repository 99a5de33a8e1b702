import numpy as np
import pytest

from spikeforge import tensor as tz


# --- independent scalar-loop oracles -----------------------------------------

def matmul_oracle(a, b):
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for p in range(k):
                s += a[i][p] * b[p][j]
            out[i][j] = s
    return out


def conv2d_oracle(x, w, stride, pad):
    c_in, h, wid = x.shape
    c_out, _, kh, kw = w.shape
    xp = np.zeros((c_in, h + 2 * pad, wid + 2 * pad))
    xp[:, pad : pad + h, pad : pad + wid] = x
    h_out = (h + 2 * pad - kh) // stride + 1
    w_out = (wid + 2 * pad - kw) // stride + 1
    out = np.zeros((c_out, h_out, w_out))
    for o in range(c_out):
        for r in range(h_out):
            for s in range(w_out):
                acc = 0.0
                for c in range(c_in):
                    for i in range(kh):
                        for j in range(kw):
                            acc += w[o][c][i][j] * xp[c][r * stride + i][s * stride + j]
                out[o][r][s] = acc
    return out


def avgpool_oracle(x, k, stride):
    c, h, w = x.shape
    h_out = (h - k) // stride + 1
    w_out = (w - k) // stride + 1
    out = np.zeros((c, h_out, w_out))
    for ci in range(c):
        for r in range(h_out):
            for s in range(w_out):
                acc = 0.0
                for i in range(k):
                    for j in range(k):
                        acc += x[ci][r * stride + i][s * stride + j]
                out[ci][r][s] = acc / (k * k)
    return out


# --- matmul -------------------------------------------------------------------

def test_matmul_identity():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(tz.matmul(a, np.eye(2)), a)


def test_matmul_identity_times_column():
    out = tz.matmul(np.eye(2), [[5.0], [7.0]])
    assert np.array_equal(out, [[5.0], [7.0]])


def test_matmul_hand_case():
    out = tz.matmul([[1.0, 2.0], [3.0, 4.0]], [[1.0], [1.0]])
    assert np.array_equal(out, [[3.0], [7.0]])


def test_matmul_shape_mismatch():
    with pytest.raises(tz.DimensionError):
        tz.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_random_vs_oracle():
    rng = np.random.default_rng(0)
    for _ in range(5):
        a = rng.normal(size=(5, 5))
        b = rng.normal(size=(5, 5))
        got = tz.matmul(a, b)
        ref = matmul_oracle(a, b)
        assert np.max(np.abs(got - ref)) <= 1e-12 * max(1.0, np.max(np.abs(ref)))


# --- conv2d -------------------------------------------------------------------

def test_conv2d_pointwise_scaling():
    x = np.ones((1, 3, 3))
    w = np.full((1, 1, 1, 1), 2.0)
    assert np.array_equal(tz.conv2d(x, w), np.full((1, 3, 3), 2.0))


def test_conv2d_zero_kernel():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 4, 4))
    w = np.zeros((3, 2, 2, 2))
    assert np.array_equal(tz.conv2d(x, w), np.zeros((3, 3, 3)))


def test_conv2d_hand_sum():
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    w = np.ones((1, 1, 2, 2))
    assert np.array_equal(tz.conv2d(x, w), [[[10.0]]])


def test_conv2d_bad_output_size():
    with pytest.raises(tz.DimensionError):
        tz.conv2d(np.ones((1, 5, 5)), np.ones((1, 1, 2, 2)), stride=2)


def test_conv2d_random_vs_oracle():
    rng = np.random.default_rng(2)
    for stride, pad in ((1, 0), (1, 1), (2, 1)):
        x = rng.normal(size=(2, 5, 5))
        w = rng.normal(size=(3, 2, 3, 3))
        got = tz.conv2d(x, w, stride, pad)
        ref = conv2d_oracle(x, w, stride, pad)
        assert np.max(np.abs(got - ref)) <= 1e-12 * max(1.0, np.max(np.abs(ref)))


# --- avgpool2d ------------------------------------------------------------------

def test_avgpool_constant():
    assert np.array_equal(tz.avgpool2d(np.full((1, 4, 4), 3.5), 2), np.full((1, 2, 2), 3.5))


def test_avgpool_hand_mean():
    assert np.array_equal(tz.avgpool2d([[[1.0, 3.0], [5.0, 7.0]]], 2), [[[4.0]]])


def test_avgpool_zeros():
    assert np.array_equal(tz.avgpool2d(np.zeros((2, 4, 4)), 2), np.zeros((2, 2, 2)))


def test_avgpool_window_too_large():
    with pytest.raises(tz.DimensionError):
        tz.avgpool2d(np.ones((1, 2, 2)), 3)


def test_avgpool_random_vs_oracle():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 5, 5))
    got = tz.avgpool2d(x, 3, stride=1)
    ref = avgpool_oracle(x, 3, 1)
    assert np.max(np.abs(got - ref)) <= 1e-12


# --- elementwise ----------------------------------------------------------------

def test_relu():
    assert np.array_equal(tz.relu([-1.0, 2.0]), [0.0, 2.0])


def test_clamp():
    assert np.array_equal(tz.clamp([-0.5, 0.5, 1.5], 0.0, 1.0), [0.0, 0.5, 1.0])


def test_add_zeros_identity():
    a = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(tz.add(a, np.zeros(3)), a)


def test_add_shape_mismatch():
    with pytest.raises(tz.DimensionError):
        tz.add(np.ones(3), np.ones(4))


def test_nonfinite_detection():
    with pytest.raises(tz.NonFiniteError):
        tz.check_finite(np.array([1.0, np.nan]))
