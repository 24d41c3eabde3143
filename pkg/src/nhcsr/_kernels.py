"""Hot inner loops, each in a pure-numpy and a numba flavour.

The active backend is chosen once at import time. Setting the environment
variable ``NHCSR_DISABLE_NUMBA=1`` (or running without numba installed)
selects the numpy path. Both paths visit elements in the same order, so the
scatter kernels give bitwise-identical sums (``box_mean`` differs in the
last ulp because numpy reduces pairwise).

All kernels operate on float64 C-contiguous arrays.
"""

import os

import numpy as np

try:
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

NUMBA_DISABLED = os.environ.get("NHCSR_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")
BACKEND = "numba" if HAVE_NUMBA and not NUMBA_DISABLED else "numpy"


# ---------------------------------------------------------------- numpy path


def _scatter_rows_np(vals, idx, n_rows):
    out = np.zeros((n_rows, vals.shape[1]))
    np.add.at(out, idx, vals)
    return out


def _bilinear_gather_np(rows, idx, w):
    # rows: (N, C); idx, w: (Q, 4) -> (Q, C)
    out = rows[idx[:, 0]] * w[:, 0:1]
    out += rows[idx[:, 1]] * w[:, 1:2]
    out += rows[idx[:, 2]] * w[:, 2:3]
    out += rows[idx[:, 3]] * w[:, 3:4]
    return out


def _bilinear_scatter_np(grad, idx, w, n_rows):
    out = np.zeros((n_rows, grad.shape[1]))
    # query-major, corner-minor: same accumulation order as the numba loop
    vals = grad[:, None, :] * w[:, :, None]
    np.add.at(out, idx.ravel(), vals.reshape(-1, grad.shape[1]))
    return out


def _im2col3_np(x):
    # x: (B, C, H, W) -> (B*H*W, C*9), zero padding 1
    b, c, h, w = x.shape
    xp = np.zeros((b, c, h + 2, w + 2))
    xp[:, :, 1:-1, 1:-1] = x
    cols = np.empty((b, h, w, c, 9))
    k = 0
    for ky in range(3):
        for kx in range(3):
            cols[..., k] = xp[:, :, ky:ky + h, kx:kx + w].transpose(0, 2, 3, 1)
            k += 1
    return cols.reshape(b * h * w, c * 9)


def _col2im3_np(cols, b, c, h, w):
    cols = cols.reshape(b, h, w, c, 9)
    xp = np.zeros((b, c, h + 2, w + 2))
    k = 0
    for ky in range(3):
        for kx in range(3):
            xp[:, :, ky:ky + h, kx:kx + w] += cols[..., k].transpose(0, 3, 1, 2)
            k += 1
    return np.ascontiguousarray(xp[:, :, 1:-1, 1:-1])


def _box_mean_np(x, win):
    # mean over every win x win window, stride 1
    view = np.lib.stride_tricks.sliding_window_view(x, (win, win))
    return view.mean(axis=(-2, -1))


def _q1_coo_np(elem_mats, nodes):
    # elem_mats: (n_el, 4, 4); nodes: (n_el, 4) global ids -> COO triplets
    rows = np.repeat(nodes, 4, axis=1).ravel()
    cols = np.tile(nodes, (1, 4)).ravel()
    return rows, cols, elem_mats.reshape(-1).copy()


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @njit(cache=True)
    def _scatter_rows_nb(vals, idx, n_rows):
        d = vals.shape[1]
        out = np.zeros((n_rows, d))
        for m in range(idx.shape[0]):
            r = idx[m]
            for j in range(d):
                out[r, j] += vals[m, j]
        return out

    @njit(cache=True)
    def _bilinear_gather_nb(rows, idx, w):
        q_n = idx.shape[0]
        c_n = rows.shape[1]
        out = np.empty((q_n, c_n))
        for q in range(q_n):
            i0, i1, i2, i3 = idx[q, 0], idx[q, 1], idx[q, 2], idx[q, 3]
            w0, w1, w2, w3 = w[q, 0], w[q, 1], w[q, 2], w[q, 3]
            for c in range(c_n):
                acc = rows[i0, c] * w0
                acc += rows[i1, c] * w1
                acc += rows[i2, c] * w2
                acc += rows[i3, c] * w3
                out[q, c] = acc
        return out

    @njit(cache=True)
    def _bilinear_scatter_nb(grad, idx, w, n_rows):
        c_n = grad.shape[1]
        out = np.zeros((n_rows, c_n))
        for q in range(idx.shape[0]):
            for k in range(4):
                r = idx[q, k]
                wk = w[q, k]
                for c in range(c_n):
                    out[r, c] += grad[q, c] * wk
        return out

    @njit(cache=True)
    def _im2col3_nb(x):
        b_n, c_n, h, w = x.shape
        cols = np.zeros((b_n * h * w, c_n * 9))
        for b in range(b_n):
            for i in range(h):
                for j in range(w):
                    r = (b * h + i) * w + j
                    for c in range(c_n):
                        for ky in range(3):
                            ii = i + ky - 1
                            if ii < 0 or ii >= h:
                                continue
                            for kx in range(3):
                                jj = j + kx - 1
                                if jj < 0 or jj >= w:
                                    continue
                                cols[r, c * 9 + ky * 3 + kx] = x[b, c, ii, jj]
        return cols

    @njit(cache=True)
    def _col2im3_nb(cols, b_n, c_n, h, w):
        x = np.zeros((b_n, c_n, h, w))
        for b in range(b_n):
            for c in range(c_n):
                for ky in range(3):
                    for kx in range(3):
                        k = c * 9 + ky * 3 + kx
                        for i in range(h):
                            ii = i + ky - 1
                            if ii < 0 or ii >= h:
                                continue
                            for j in range(w):
                                jj = j + kx - 1
                                if jj < 0 or jj >= w:
                                    continue
                                x[b, c, ii, jj] += cols[(b * h + i) * w + j, k]
        return x

    @njit(cache=True)
    def _box_mean_nb(x, win):
        h, w = x.shape
        oh, ow = h - win + 1, w - win + 1
        out = np.empty((oh, ow))
        inv = 1.0 / (win * win)
        for i in range(oh):
            for j in range(ow):
                acc = 0.0
                for a in range(win):
                    for b in range(win):
                        acc += x[i + a, j + b]
                out[i, j] = acc * inv
        return out

    @njit(cache=True)
    def _q1_coo_nb(elem_mats, nodes):
        n_el = nodes.shape[0]
        rows = np.empty(n_el * 16, dtype=np.int64)
        cols = np.empty(n_el * 16, dtype=np.int64)
        vals = np.empty(n_el * 16)
        p = 0
        for e in range(n_el):
            for a in range(4):
                for b in range(4):
                    rows[p] = nodes[e, a]
                    cols[p] = nodes[e, b]
                    vals[p] = elem_mats[e, a, b]
                    p += 1
        return rows, cols, vals


NUMPY_KERNELS = {
    "scatter_rows": _scatter_rows_np,
    "bilinear_gather": _bilinear_gather_np,
    "bilinear_scatter": _bilinear_scatter_np,
    "im2col3": _im2col3_np,
    "col2im3": _col2im3_np,
    "box_mean": _box_mean_np,
    "q1_coo": _q1_coo_np,
}

if HAVE_NUMBA:
    NUMBA_KERNELS = {
        "scatter_rows": _scatter_rows_nb,
        "bilinear_gather": _bilinear_gather_nb,
        "bilinear_scatter": _bilinear_scatter_nb,
        "im2col3": _im2col3_nb,
        "col2im3": _col2im3_nb,
        "box_mean": _box_mean_nb,
        "q1_coo": _q1_coo_nb,
    }
else:  # pragma: no cover
    NUMBA_KERNELS = {}

_ACTIVE = NUMBA_KERNELS if BACKEND == "numba" else NUMPY_KERNELS


def scatter_rows(vals, idx, n_rows):
    """Sum rows of ``vals`` (M, D) into an (n_rows, D) array at ``idx``."""
    return _ACTIVE["scatter_rows"](np.ascontiguousarray(vals), np.ascontiguousarray(idx, dtype=np.int64), n_rows)


def bilinear_gather(rows, idx, w):
    return _ACTIVE["bilinear_gather"](np.ascontiguousarray(rows), idx, w)


def bilinear_scatter(grad, idx, w, n_rows):
    return _ACTIVE["bilinear_scatter"](np.ascontiguousarray(grad), idx, w, n_rows)


def im2col3(x):
    return _ACTIVE["im2col3"](np.ascontiguousarray(x))


def col2im3(cols, b, c, h, w):
    return _ACTIVE["col2im3"](np.ascontiguousarray(cols), b, c, h, w)


def box_mean(x, win):
    return _ACTIVE["box_mean"](np.ascontiguousarray(x, dtype=np.float64), win)


def q1_coo(elem_mats, nodes):
    return _ACTIVE["q1_coo"](np.ascontiguousarray(elem_mats), np.ascontiguousarray(nodes, dtype=np.int64))
