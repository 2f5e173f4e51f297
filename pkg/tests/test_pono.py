import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from sitta import tensor as T
from sitta.pono import EPS, MomentPair, extract_moments, inject_moments, pono_normalize
from sitta.tensor import DimensionError, Tensor

finite = st.floats(-50, 50, allow_nan=False, width=32)
feature_maps = arrays(np.float32, st.tuples(st.integers(1, 2), st.integers(2, 6), st.integers(1, 5),
                                            st.integers(1, 5)), elements=finite)


def loop_moments(x, eps=EPS):
    b, c, h, w = x.shape
    beta = np.zeros((b, 1, h, w))
    gamma = np.zeros((b, 1, h, w))
    for i in range(b):
        for y in range(h):
            for z in range(w):
                vals = [float(x[i, k, y, z]) for k in range(c)]
                mu = sum(vals) / c
                beta[i, 0, y, z] = mu
                gamma[i, 0, y, z] = np.sqrt(sum((v - mu) ** 2 for v in vals) / c + eps)
    return beta, gamma


def test_constant_input_gamma_is_sqrt_eps():
    m = extract_moments(Tensor(np.full((1, 4, 3, 3), 5.0, np.float32)))
    np.testing.assert_array_equal(m.beta.data, 5.0)
    assert np.all(m.gamma.data == np.float32(np.sqrt(1e-5)))
    assert m.gamma.data[0, 0, 0, 0] == pytest.approx(3.1623e-3, rel=1e-4)


def test_two_point_variance():
    x = np.zeros((1, 2, 1, 1), np.float32)
    x[0, :, 0, 0] = [1, 3]
    m = extract_moments(Tensor(x))
    assert m.beta.item() == pytest.approx(2.0)
    assert m.gamma.item() == pytest.approx(np.sqrt(1 + 1e-5), abs=1e-7)


def test_matches_loop_oracle(rng):
    x = rng.standard_normal((2, 8, 4, 4)).astype(np.float32)
    m = extract_moments(Tensor(x))
    beta, gamma = loop_moments(x)
    np.testing.assert_allclose(m.beta.data, beta, atol=1e-6)
    np.testing.assert_allclose(m.gamma.data, gamma, atol=1e-6)


@given(feature_maps)
def test_round_trip(x):
    n, m = pono_normalize(Tensor(x))
    np.testing.assert_allclose(inject_moments(n, m).data, x, atol=1e-5 * max(1.0, np.abs(x).max()))


@given(feature_maps)
def test_normalized_moments(x):
    with T.precision(np.float64):
        n, _ = pono_normalize(Tensor(x.astype(np.float64)))
    assert np.abs(n.data.mean(axis=1)).max() < 1e-5
    var = x.astype(np.float64).var(axis=1)
    nondegenerate = var > 1e-2
    std = n.data.std(axis=1)
    assert np.all(np.abs(std[nondegenerate] - 1) < 1e-3)


def test_constant_input_normalizes_to_zero():
    n, m = pono_normalize(Tensor(np.full((1, 3, 2, 2), -2.0, np.float32)))
    np.testing.assert_array_equal(n.data, 0.0)


@given(feature_maps)
def test_gamma_floor(x):
    m = extract_moments(Tensor(x))
    assert np.all(m.gamma.data >= np.float32(np.sqrt(EPS)) * (1 - 1e-6))
    assert m.beta.shape[2:] == x.shape[2:]


@given(feature_maps, st.randoms())
def test_channel_permutation_invariance(x, r):
    perm = list(range(x.shape[1]))
    r.shuffle(perm)
    a, b = extract_moments(Tensor(x)), extract_moments(Tensor(x[:, perm]))
    np.testing.assert_allclose(a.beta.data, b.beta.data, atol=1e-4)
    np.testing.assert_allclose(a.gamma.data, b.gamma.data, rtol=1e-4, atol=1e-5)


@given(feature_maps, st.floats(-5, 5).filter(lambda a: abs(a) > 0.1))
def test_scale_equivariance(x, a):
    x = x.astype(np.float64)
    with T.precision(np.float64):
        m, ms = extract_moments(Tensor(x)), extract_moments(Tensor(a * x))
    np.testing.assert_allclose(ms.beta.data, a * m.beta.data, atol=1e-9 * max(1, abs(a) * np.abs(x).max()))
    # eps sits inside the root: gamma(a x)^2 = a^2 (gamma(x)^2 - eps) + eps
    expect = np.sqrt(a * a * (m.gamma.data ** 2 - 1e-5) + 1e-5)
    np.testing.assert_allclose(ms.gamma.data, expect, rtol=1e-9)
    # and away from the floor the plain |a| scaling holds to within eps-sized error
    sigma = np.sqrt(x.var(axis=1, keepdims=True))
    mask = sigma > 0.1
    bound = 1e-5 / (2 * sigma[mask]) * abs(abs(a) - 1 / abs(a)) + 1e-9
    assert np.all(np.abs(ms.gamma.data[mask] - abs(a) * m.gamma.data[mask]) <= bound)


def test_inject_identity_and_zero(rng):
    f = Tensor(rng.standard_normal((1, 3, 4, 4)).astype(np.float32))
    beta = Tensor(rng.standard_normal((1, 1, 4, 4)).astype(np.float32))
    ones = Tensor(np.ones((1, 1, 4, 4), np.float32))
    zeros = Tensor(np.zeros((1, 1, 4, 4), np.float32))
    np.testing.assert_array_equal(inject_moments(f, MomentPair(zeros, ones)).data, f.data)
    out = inject_moments(Tensor(np.zeros((1, 3, 4, 4), np.float32)), MomentPair(beta, ones))
    np.testing.assert_array_equal(out.data, np.broadcast_to(beta.data, (1, 3, 4, 4)))


def test_inject_resizes_by_nearest(rng):
    x = Tensor(rng.standard_normal((1, 4, 2, 2)).astype(np.float32))
    m = extract_moments(x)
    out = inject_moments(Tensor(np.ones((1, 2, 4, 4), np.float32)), m)
    expect = T.upsample_nearest(m.gamma, 2).data + T.upsample_nearest(m.beta, 2).data
    np.testing.assert_allclose(out.data[:, :1], expect, atol=1e-6)
    with pytest.raises(DimensionError):
        inject_moments(Tensor(np.ones((1, 2, 3, 3), np.float32)), m)
