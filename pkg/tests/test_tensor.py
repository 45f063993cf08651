import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavpool.errors import DimensionError
from wavpool.tensor import PaddingMode, SeededRng, conv2d, matmul, maxpool3d


def naive_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def naive_conv(x, k, stride):
    kh, kw = k.shape
    oh = (x.shape[0] - kh) // stride + 1
    ow = (x.shape[1] - kw) // stride + 1
    out = np.zeros((oh, ow))
    for i in range(oh):
        for j in range(ow):
            for u in range(kh):
                for v in range(kw):
                    out[i, j] += x[i * stride + u, j * stride + v] * k[u, v]
    return out


def naive_maxpool(x, kernel):
    o = [d - k + 1 for d, k in zip(x.shape, kernel)]
    out = np.empty(o)
    for i in range(o[0]):
        for j in range(o[1]):
            for l in range(o[2]):
                out[i, j, l] = max(
                    x[i + a, j + b, l + c]
                    for a in range(kernel[0])
                    for b in range(kernel[1])
                    for c in range(kernel[2])
                )
    return out


class TestMatmul:
    def test_identity(self):
        assert np.array_equal(matmul([[1, 0], [0, 1]], [[5, 6], [7, 8]]), [[5, 6], [7, 8]])

    def test_dot(self):
        assert matmul([[1, 2]], [[3], [4]]).tolist() == [[11.0]]

    def test_random_vs_triple_loop(self, rng):
        a, b = rng.normal(size=(8, 8)), rng.normal(size=(8, 8))
        assert np.max(np.abs(matmul(a, b) - naive_matmul(a, b))) <= 1e-12

    def test_shape_mismatch_names_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    @given(st.floats(-10, 10), st.integers(0, 2**31))
    @settings(max_examples=30, deadline=None)
    def test_bilinear(self, alpha, seed):
        r = np.random.default_rng(seed)
        a, b = r.normal(size=(4, 5)), r.normal(size=(5, 3))
        assert np.max(np.abs(matmul(alpha * a, b) - alpha * matmul(a, b))) <= 1e-12


class TestConv2d:
    def test_smoothing_constant(self):
        assert conv2d([[1, 1], [1, 1]], [[0.5, 0.5], [0.5, 0.5]], stride=2).tolist() == [[2.0]]

    def test_haar_vertical_annihilates_constant(self):
        psi_v = [[0.5, 0.5], [-0.5, -0.5]]
        assert np.array_equal(conv2d(np.ones((4, 4)), psi_v, stride=2), np.zeros((2, 2)))

    def test_random_vs_sliding_window(self, rng):
        x, k = rng.normal(size=(6, 6)), rng.normal(size=(3, 3))
        assert np.max(np.abs(conv2d(x, k, 1) - naive_conv(x, k, 1))) <= 1e-12

    def test_strided_with_padding(self, rng):
        x, k = rng.normal(size=(7, 5)), rng.normal(size=(3, 3))
        got = conv2d(x, k, stride=2, padding=PaddingMode.ZERO)
        assert np.allclose(got, naive_conv(np.pad(x, 1), k, 2), atol=1e-12)
        rep = conv2d(x, k, stride=1, padding=PaddingMode.REPLICATE)
        assert np.allclose(rep, naive_conv(np.pad(x, 1, mode="edge"), k, 1), atol=1e-12)

    def test_kernel_too_large(self):
        with pytest.raises(DimensionError):
            conv2d(np.ones((2, 2)), np.ones((3, 3)))

    @pytest.mark.parametrize("h,w", [(2, 2), (4, 6), (28, 28), (32, 10)])
    def test_stride_two_halves_even_dims(self, h, w):
        assert conv2d(np.ones((h, w)), np.ones((2, 2)), stride=2).shape == (h // 2, w // 2)


class TestMaxPool3d:
    def test_constant_block(self):
        assert maxpool3d(np.full((2, 2, 2), 3.5), (2, 2, 2)).ravel().tolist() == [3.5]

    def test_global_max(self, rng):
        x = rng.uniform(-1, 0, size=(3, 2, 4))
        x[1, 0, 2] = 7.0
        assert maxpool3d(x, x.shape).ravel().tolist() == [7.0]

    def test_random_vs_brute_force(self, rng):
        x = rng.normal(size=(4, 3, 5))
        assert np.array_equal(maxpool3d(x, (2, 2, 2)), naive_maxpool(x, (2, 2, 2)))

    def test_bounds(self, rng):
        x = rng.normal(size=(4, 3, 6))
        out = maxpool3d(x, (2, 2, 3))
        assert out.max() <= x.max()
        for i, j, l in np.ndindex(out.shape):
            assert out[i, j, l] >= x[i : i + 2, j : j + 2, l : l + 3].min()

    def test_kernel_exceeds_input(self):
        with pytest.raises(DimensionError):
            maxpool3d(np.ones((2, 3, 4)), (3, 1, 1))


def test_seeded_rng_reproducible():
    a, b = SeededRng(42), SeededRng(42)
    assert np.array_equal(a.uniform(size=10), b.uniform(size=10))
    assert not np.array_equal(SeededRng(42, stream=1).uniform(size=10), SeededRng(42).uniform(size=10))


def test_seeded_rng_pinned_stream():
    # PCG64 output is fixed by its algorithm; this pins it across platforms/releases.
    assert SeededRng(0).integers(0, 2**31, size=3).tolist() == [1826701615, 1367864807, 1097657232]
    assert SeededRng(7).permutation(6).tolist() == [5, 2, 0, 4, 1, 3]
