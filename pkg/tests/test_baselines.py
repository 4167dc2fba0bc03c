import numpy as np
import pytest

from staa.baselines import (ClassicalFilter, bicubic_matrix, box_kernel, classical_downsample, gaussian_kernel,
                            gaussian_kernel3d, keys_cubic, temporal_notches, temporal_response)
from staa.downsampler import FilterBank, downsample
from staa.errors import DimensionError, RangeError
from staa.volume import VideoVolume


def vol(x):
    return VideoVolume(np.asarray(x, dtype=np.float64))


def test_nearest_keeps_even_frames(rng):
    v = vol(rng.uniform(0, 255, (3, 7, 4, 4)))
    out = classical_downsample(v, ClassicalFilter("nearest"), (2, 1))
    np.testing.assert_array_equal(out.data, v.data[:, ::2])
    assert out.frames == 4


def test_nearest_equals_delta_filterbank(rng):
    v = vol(rng.uniform(0, 255, (3, 6, 8, 8)))
    k = np.zeros((3, 3, 3))
    k[1, 1, 1] = 1
    a = classical_downsample(v, ClassicalFilter("nearest"), (2, 2)).data
    b = downsample(v, FilterBank.from_kernel(k, (2, 2), dtype=np.float64)).data
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("f", [ClassicalFilter("box_temporal", length=3), ClassicalFilter("box_temporal", length=2),
                               ClassicalFilter("gaussian3d"), ClassicalFilter("bicubic"), ClassicalFilter("nearest")])
def test_constants_preserved(f):
    v = vol(np.full((3, 6, 8, 8), 42.0))
    np.testing.assert_allclose(classical_downsample(v, f, (2, 2)).data, 42.0, rtol=1e-12)


def test_bicubic_reproduces_linear_ramp():
    H, W = 16, 16
    yy, xx = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    ramp = 3.0 * xx + 2.0 * yy + 5.0
    v = vol(np.broadcast_to(ramp, (1, 2, H, W)))
    out = classical_downsample(v, ClassicalFilter("bicubic"), (1, 2)).data[0, 0]
    # interior samples centred on 2i stay on the ramp
    ref = 3.0 * (2 * xx[:8, :8]) + 2.0 * (2 * yy[:8, :8]) + 5.0
    np.testing.assert_allclose(out[2:-2, 2:-2], ref[2:-2, 2:-2], atol=1e-9)


def test_bicubic_matrix_rows_normalised():
    m = bicubic_matrix(10, 2)
    assert m.shape == (5, 10)
    np.testing.assert_allclose(m.sum(axis=1), 1.0)


def test_keys_cubic_interpolates():
    np.testing.assert_allclose(keys_cubic(np.array([0.0, 1.0, 2.0, 2.5])), [1, 0, 0, 0], atol=1e-12)


def test_gaussian_kernel_properties():
    k = gaussian_kernel(1.0, 3)
    e = np.exp(-0.5)
    np.testing.assert_allclose(k, np.array([e, 1, e]) / (1 + 2 * e))
    for sigma, n in [(0.3, 5), (2.0, 7), (0.8, 3)]:
        k = gaussian_kernel(sigma, n)
        assert abs(k.sum() - 1) < 1e-9
        np.testing.assert_array_equal(k, k[::-1])
    k3 = gaussian_kernel3d(0.8, 0.8)
    assert k3.shape == (3, 3, 3) and abs(k3.sum() - 1) < 1e-12
    with pytest.raises(RangeError):
        gaussian_kernel(0.0, 3)
    with pytest.raises(DimensionError):
        gaussian_kernel(1.0, 4)


def test_box_kernel():
    np.testing.assert_allclose(box_kernel(3), [1 / 3] * 3)
    np.testing.assert_allclose(box_kernel(2), [0, 0.5, 0.5])
    with pytest.raises(RangeError):
        box_kernel(0)
    with pytest.raises(RangeError):
        ClassicalFilter("box_temporal", length=0)


def test_box_length_one_is_identity(rng):
    v = vol(rng.uniform(0, 255, (3, 4, 4, 4)))
    np.testing.assert_array_equal(classical_downsample(v, ClassicalFilter("box_temporal", length=1), (1, 1)).data,
                                  v.data)


def test_box_is_temporal_mean(rng):
    v = vol(rng.uniform(0, 255, (1, 6, 3, 3)))
    out = classical_downsample(v, ClassicalFilter("box_temporal", length=3), (1, 1)).data
    np.testing.assert_allclose(out[:, 2], v.data[:, 1:4].mean(axis=1))


def test_unknown_kind():
    with pytest.raises(ValueError):
        ClassicalFilter("lanczos")


def test_box_has_notches_gaussian_does_not():
    assert temporal_notches(ClassicalFilter("box_temporal", length=2)) == pytest.approx([0.5])
    assert temporal_notches(ClassicalFilter("box_temporal", length=3)) == pytest.approx([1 / 3], abs=1e-3)
    assert temporal_notches(ClassicalFilter("gaussian3d")) == []
    f, r = temporal_response(ClassicalFilter("nearest"))
    np.testing.assert_allclose(r, 1.0)
