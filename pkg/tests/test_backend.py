"""Kernel backends must agree with each other and with independent oracles."""

import numpy as np
import pytest
import scipy.signal

from eegpipe import backend
from eegpipe import _kernels_numpy as knp

try:
    from eegpipe import _kernels_numba as knb
    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


def corr2d_loops(x, w):
    """Reference cross-correlation, deliberately written as plain loops."""
    b, c, h, wd = x.shape
    f, c2, kh, kw = w.shape
    assert c == c2
    oh, ow = h - kh + 1, wd - kw + 1
    out = np.zeros((b, f, oh, ow))
    for bi in range(b):
        for fi in range(f):
            for i in range(oh):
                for j in range(ow):
                    out[bi, fi, i, j] = np.sum(
                        x[bi, :, i:i + kh, j:j + kw] * w[fi]
                    )
    return out


def corr2d_dw_loops(x, w):
    b, c, h, wd = x.shape
    c2, m, kh, kw = w.shape
    assert c == c2
    oh, ow = h - kh + 1, wd - kw + 1
    out = np.zeros((b, c * m, oh, ow))
    for bi in range(b):
        for ci in range(c):
            for mi in range(m):
                for i in range(oh):
                    for j in range(ow):
                        out[bi, ci * m + mi, i, j] = np.sum(
                            x[bi, ci, i:i + kh, j:j + kw] * w[ci, mi]
                        )
    return out


class TestBackendSelection:
    def test_backend_name_is_known(self):
        assert backend.backend_name() in ("numba", "numpy")

    def test_exposed_kernels_exist(self):
        for name in ("sosfilt", "corr2d", "corr2d_dw"):
            assert callable(getattr(backend, name))


class TestSosfilt:
    def test_matches_scipy(self):
        rng = np.random.default_rng(11)
        sos = scipy.signal.butter(4, [0.5, 20.0], btype="band", fs=200.0,
                                  output="sos")
        for _ in range(5):
            x = rng.standard_normal((3, 400))
            want = scipy.signal.sosfilt(sos, x, axis=-1)
            np.testing.assert_allclose(knp.sosfilt(sos, x), want, rtol=1e-12)
            if HAS_NUMBA:
                np.testing.assert_allclose(knb.sosfilt(sos, x), want,
                                           rtol=1e-12, atol=1e-12)

    def test_impulse_response_single_biquad(self):
        # One biquad with known coefficients: check the recurrence by hand.
        sos = np.array([[0.5, 0.2, 0.1, 1.0, -0.3, 0.02]])
        x = np.zeros((1, 6))
        x[0, 0] = 1.0
        y = backend.sosfilt(sos, x)[0]
        want = np.zeros(6)
        want[0] = 0.5
        want[1] = 0.2 - (-0.3) * want[0]
        want[2] = 0.1 - (-0.3) * want[1] - 0.02 * want[0]
        for n in range(3, 6):
            want[n] = -(-0.3) * want[n - 1] - 0.02 * want[n - 2]
        np.testing.assert_allclose(y, want, rtol=1e-14)


class TestCorr2d:
    def test_matches_loop_reference(self):
        rng = np.random.default_rng(3)
        for _ in range(6):
            b, c, f = rng.integers(1, 4, size=3)
            kh, kw = rng.integers(1, 4, size=2)
            h = int(kh) + int(rng.integers(0, 6))
            wd = int(kw) + int(rng.integers(0, 6))
            x = rng.standard_normal((b, c, h, wd))
            w = rng.standard_normal((f, c, kh, kw))
            want = corr2d_loops(x, w)
            np.testing.assert_allclose(knp.corr2d(x, w), want, rtol=1e-10,
                                       atol=1e-12)
            if HAS_NUMBA:
                np.testing.assert_allclose(knb.corr2d(x, w), want, rtol=1e-10,
                                           atol=1e-12)

    def test_identity_kernel(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((2, 1, 5, 7))
        w = np.ones((1, 1, 1, 1))
        np.testing.assert_array_equal(backend.corr2d(x, w), x)


class TestCorr2dDepthwise:
    def test_matches_loop_reference(self):
        rng = np.random.default_rng(5)
        for _ in range(6):
            b, c, m = rng.integers(1, 4, size=3)
            kh, kw = rng.integers(1, 4, size=2)
            h = int(kh) + int(rng.integers(0, 5))
            wd = int(kw) + int(rng.integers(0, 5))
            x = rng.standard_normal((b, c, h, wd))
            w = rng.standard_normal((c, m, kh, kw))
            want = corr2d_dw_loops(x, w)
            np.testing.assert_allclose(knp.corr2d_dw(x, w), want, rtol=1e-10,
                                       atol=1e-12)
            if HAS_NUMBA:
                np.testing.assert_allclose(knb.corr2d_dw(x, w), want,
                                           rtol=1e-10, atol=1e-12)


@pytest.mark.skipif(not HAS_NUMBA, reason="numba unavailable")
class TestBackendParity:
    def test_kernels_agree_across_backends(self):
        rng = np.random.default_rng(9)
        sos = scipy.signal.butter(4, [1.0, 30.0], btype="band", fs=200.0,
                                  output="sos")
        for _ in range(4):
            x = rng.standard_normal((2, 300))
            np.testing.assert_allclose(knb.sosfilt(sos, x),
                                       knp.sosfilt(sos, x), rtol=1e-12,
                                       atol=1e-13)
            xi = rng.standard_normal((2, 3, 8, 9))
            w = rng.standard_normal((4, 3, 3, 3))
            np.testing.assert_allclose(knb.corr2d(xi, w), knp.corr2d(xi, w),
                                       rtol=1e-11, atol=1e-12)
            wd = rng.standard_normal((3, 2, 2, 2))
            np.testing.assert_allclose(knb.corr2d_dw(xi, wd),
                                       knp.corr2d_dw(xi, wd), rtol=1e-11,
                                       atol=1e-12)
