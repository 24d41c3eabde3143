"""The numpy and numba kernel flavours must agree."""

import numpy as np
import pytest

from nhcsr import _kernels

pytestmark = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not installed")

NP, NB = _kernels.NUMPY_KERNELS, _kernels.NUMBA_KERNELS


def test_scatter_rows_bitwise():
    r = np.random.default_rng(0)
    vals = r.normal(size=(200, 5))
    idx = r.integers(0, 17, size=200)
    np.testing.assert_array_equal(NP["scatter_rows"](vals, idx, 17), NB["scatter_rows"](vals, idx, 17))


def test_bilinear_pair_bitwise():
    r = np.random.default_rng(1)
    rows = r.normal(size=(30, 4))
    idx = r.integers(0, 30, size=(50, 4))
    w = r.uniform(size=(50, 4))
    np.testing.assert_array_equal(NP["bilinear_gather"](rows, idx, w), NB["bilinear_gather"](rows, idx, w))
    g = r.normal(size=(50, 4))
    np.testing.assert_array_equal(NP["bilinear_scatter"](g, idx, w, 30), NB["bilinear_scatter"](g, idx, w, 30))


def test_im2col_col2im_bitwise():
    r = np.random.default_rng(2)
    x = r.normal(size=(2, 3, 5, 4))
    cols = NP["im2col3"](x)
    np.testing.assert_array_equal(cols, NB["im2col3"](x))
    g = r.normal(size=cols.shape)
    np.testing.assert_array_equal(NP["col2im3"](g, 2, 3, 5, 4), NB["col2im3"](g, 2, 3, 5, 4))


def test_col2im_is_adjoint_of_im2col():
    r = np.random.default_rng(3)
    x = r.normal(size=(1, 2, 4, 6))
    y = r.normal(size=(24, 18))
    lhs = (NP["im2col3"](x) * y).sum()
    rhs = (x * NP["col2im3"](y, 1, 2, 4, 6)).sum()
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_box_mean_close():
    x = np.random.default_rng(4).normal(size=(20, 17))
    np.testing.assert_allclose(NP["box_mean"](x, 8), NB["box_mean"](x, 8), rtol=0, atol=1e-14)


def test_q1_coo_bitwise():
    r = np.random.default_rng(5)
    mats = r.normal(size=(6, 4, 4))
    nodes = r.integers(0, 20, size=(6, 4))
    for a, b in zip(NP["q1_coo"](mats, nodes), NB["q1_coo"](mats, nodes)):
        np.testing.assert_array_equal(a, b)
