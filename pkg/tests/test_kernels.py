"""The numba and numpy kernel paths must agree and be mutually adjoint."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from staa import _kernels

needs_numba = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")


def _both(fn, *args):
    prev = _kernels.set_backend("numpy")
    try:
        a = fn(*args)
        _kernels.set_backend("numba")
        b = fn(*args)
    finally:
        _kernels.set_backend(prev)
    return a, b


def test_set_backend_returns_previous():
    prev = _kernels.set_backend("numpy")
    assert _kernels.backend() == "numpy"
    assert _kernels.set_backend(prev) == "numpy"
    with pytest.raises(ValueError):
        _kernels.set_backend("cuda")


@pytest.mark.parametrize("n,s,expect", [(8, 2, 4), (7, 2, 4), (5, 1, 5), (1, 3, 1)])
def test_conv_out_extent(n, s, expect):
    assert _kernels.conv_out_extent(n, s) == expect


@needs_numba
@settings(max_examples=30, deadline=None)
@given(T=st.integers(1, 5), H=st.integers(1, 6), W=st.integers(1, 6),
       kt=st.sampled_from([1, 3]), kh=st.sampled_from([1, 3, 5]), r=st.integers(1, 3), s=st.integers(1, 3))
def test_im2col_backends_agree(T, H, W, kt, kh, r, s):
    x = np.random.default_rng(T * 100 + H * 10 + W).standard_normal((2, 2, T, H, W))
    a, b = _both(_kernels.im2col3d, x, (kt, kh, kh), (r, s, s))
    np.testing.assert_array_equal(a, b)


@needs_numba
@settings(max_examples=30, deadline=None)
@given(T=st.integers(1, 5), H=st.integers(1, 6), r=st.integers(1, 3), s=st.integers(1, 3))
def test_col2im_backends_agree(T, H, r, s):
    rng = np.random.default_rng(T * 7 + H)
    xshape = (1, 2, T, H, H + 1)
    cols = _kernels.im2col3d(rng.standard_normal(xshape), (3, 3, 3), (r, s, s))
    g = rng.standard_normal(cols.shape)
    a, b = _both(_kernels.col2im3d, g, xshape, (3, 3, 3), (r, s, s))
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_col2im_is_adjoint_of_im2col(rng, backend):
    xshape = (2, 3, 4, 5, 6)
    x = rng.standard_normal(xshape)
    cols = _kernels.im2col3d(x, (3, 3, 3), (2, 2, 1))
    y = rng.standard_normal(cols.shape)
    lhs = float((cols * y).sum())
    rhs = float((x * _kernels.col2im3d(y, xshape, (3, 3, 3), (2, 2, 1))).sum())
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_sample_points_interpolates_and_clamps(backend):
    x = np.arange(12.0).reshape(1, 1, 3, 4)
    py = np.array([[0.0, 0.5, 2.0, -3.0, 1.0]])
    px = np.array([[0.0, 0.5, 3.0, 9.0, 1.25]])
    v = _kernels.sample_points(x, py, px)[0, :, 0]
    np.testing.assert_allclose(v, [0.0, 2.5, 11.0, 3.0, 5.25])


@needs_numba
def test_sample_backends_agree(rng):
    x = rng.standard_normal((2, 3, 5, 6))
    py = rng.uniform(-1, 5, (2, 40))
    px = rng.uniform(-1, 6, (2, 40))
    a, b = _both(_kernels.sample_points, x, py, px)
    np.testing.assert_allclose(a, b, rtol=1e-12)
    g = rng.standard_normal(a.shape)
    ga, gb = _both(_kernels.sample_points_backward, g, x, py, px)
    for u, v in zip(ga, gb):
        np.testing.assert_allclose(u, v, rtol=1e-10, atol=1e-12)


def test_clamped_points_get_no_coordinate_gradient(backend):
    x = np.random.default_rng(0).standard_normal((1, 2, 4, 4))
    py = np.array([[-2.0, 1.5, 7.0]])
    px = np.array([[1.5, -1.0, 1.5]])
    g = np.ones((1, 3, 2))
    _, gpy, gpx = _kernels.sample_points_backward(g, x, py, px)
    assert gpy[0, 0] == 0.0 and gpy[0, 2] == 0.0
    assert gpx[0, 1] == 0.0
