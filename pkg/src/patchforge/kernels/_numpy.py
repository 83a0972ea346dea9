"""Pure-numpy kernel implementations.

Convolutions go through im2col + BLAS GEMM; gather/scatter ops (bilinear
warp, max pooling, patch search) use vectorized fancy indexing and
``np.add.at``. Semantics match the numba backend exactly: same tie-breaking,
same accumulation dtype, same out-of-bounds policy.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided

NAME = "numpy"


def _im2col(x_pad: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    c, hp, wp = x_pad.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    s0, s1, s2 = x_pad.strides
    view = as_strided(
        x_pad,
        shape=(c, kh, kw, ho, wo),
        strides=(s0, s1, s2, s1 * stride, s2 * stride),
    )
    return view.reshape(c * kh * kw, ho * wo), ho, wo


def conv2d_fwd(x_pad, w, stride):
    """Valid cross-correlation of pre-padded (C,H,W) input with (O,C,kh,kw)."""
    co, ci, kh, kw = w.shape
    col, ho, wo = _im2col(x_pad, kh, kw, stride)
    y = w.reshape(co, -1) @ col
    return y.reshape(co, ho, wo)


def conv2d_bwd_input(dy, w, in_shape, stride):
    co, ci, kh, kw = w.shape
    _, ho, wo = dy.shape
    dcol = w.reshape(co, -1).T @ dy.reshape(co, -1)
    dcol = dcol.reshape(ci, kh, kw, ho, wo)
    dx = np.zeros(in_shape, dtype=dy.dtype)
    for i in range(kh):
        for j in range(kw):
            dx[:, i : i + ho * stride : stride, j : j + wo * stride : stride] += dcol[
                :, i, j
            ]
    return dx


def conv2d_bwd_weight(dy, x_pad, kh, kw, stride):
    co, ho, wo = dy.shape
    col, _, _ = _im2col(x_pad, kh, kw, stride)
    dw = dy.reshape(co, -1) @ col.T
    return dw.reshape(co, x_pad.shape[0], kh, kw)


def _bilinear_setup(py, px, h, w, edge):
    y0 = np.floor(py)
    x0 = np.floor(px)
    fy = py - y0
    fx = px - x0
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)
    y1 = y0 + 1
    x1 = x0 + 1
    if edge:
        y0c, y1c = np.clip(y0, 0, h - 1), np.clip(y1, 0, h - 1)
        x0c, x1c = np.clip(x0, 0, w - 1), np.clip(x1, 0, w - 1)
        v = np.ones(py.shape, dtype=np.float64)
        valid = (v, v, v, v)
    else:
        vy0 = (y0 >= 0) & (y0 < h)
        vy1 = (y1 >= 0) & (y1 < h)
        vx0 = (x0 >= 0) & (x0 < w)
        vx1 = (x1 >= 0) & (x1 < w)
        valid = (
            (vy0 & vx0).astype(np.float64),
            (vy0 & vx1).astype(np.float64),
            (vy1 & vx0).astype(np.float64),
            (vy1 & vx1).astype(np.float64),
        )
        y0c, y1c = np.clip(y0, 0, h - 1), np.clip(y1, 0, h - 1)
        x0c, x1c = np.clip(x0, 0, w - 1), np.clip(x1, 0, w - 1)
    w00 = (1.0 - fy) * (1.0 - fx) * valid[0]
    w01 = (1.0 - fy) * fx * valid[1]
    w10 = fy * (1.0 - fx) * valid[2]
    w11 = fy * fx * valid[3]
    return (y0c, x0c, y1c, x1c), (w00, w01, w10, w11)


def warp_fwd(feat, py, px, edge):
    """Bilinear gather: out[c,i,j] samples feat[c] at (py[i,j], px[i,j])."""
    c, h, w = feat.shape
    (y0, x0, y1, x1), (w00, w01, w10, w11) = _bilinear_setup(py, px, h, w, edge)
    acc = (
        w00 * feat[:, y0, x0]
        + w01 * feat[:, y0, x1]
        + w10 * feat[:, y1, x0]
        + w11 * feat[:, y1, x1]
    )
    return acc.astype(feat.dtype, copy=False)


def warp_bwd(dy, py, px, h, w, edge):
    c = dy.shape[0]
    (y0, x0, y1, x1), (w00, w01, w10, w11) = _bilinear_setup(py, px, h, w, edge)
    dfeat = np.zeros((c, h, w), dtype=np.float64)
    flat = dfeat.reshape(c, -1)
    for yy, xx, wt in ((y0, x0, w00), (y0, x1, w01), (y1, x0, w10), (y1, x1, w11)):
        idx = (yy * w + xx).ravel()
        np.add.at(flat, (slice(None), idx), (dy * wt).reshape(c, -1))
    return dfeat.astype(dy.dtype, copy=False)


def maxpool2_fwd(x):
    """2x2/stride-2 max pool; ties resolve to the first cell in row-major order."""
    c, h, w = x.shape
    xr = (
        x.reshape(c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 3, 2, 4)
        .reshape(c, h // 2, w // 2, 4)
    )
    arg = xr.argmax(axis=3).astype(np.int8)
    y = np.take_along_axis(xr, arg[..., None].astype(np.int64), axis=3)[..., 0]
    return y, arg


def maxpool2_bwd(dy, arg, h, w):
    c, h2, w2 = dy.shape
    dxr = np.zeros((c, h2, w2, 4), dtype=dy.dtype)
    np.put_along_axis(dxr, arg[..., None].astype(np.int64), dy[..., None], axis=3)
    return (
        dxr.reshape(c, h2, w2, 2, 2)
        .transpose(0, 1, 3, 2, 4)
        .reshape(c, h, w)
    )


def leaky_fwd(x, slope):
    return np.where(x > 0, x, x * x.dtype.type(slope))


def leaky_bwd(g, x, slope):
    return np.where(x > 0, g, g * g.dtype.type(slope))


def patch_min_sqdists(a, b):
    """Min squared L2 distance from each row of a to the rows of b.

    Uses the |a|^2 + |b|^2 - 2ab expansion in float64 with blockwise GEMM.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    bb = np.einsum("ij,ij->i", b, b)
    out = np.empty(a.shape[0], dtype=np.float64)
    block = 2048
    for s in range(0, a.shape[0], block):
        ab = a[s : s + block]
        aa = np.einsum("ij,ij->i", ab, ab)
        d2 = aa[:, None] + bb[None, :] - 2.0 * (ab @ b.T)
        out[s : s + block] = d2.min(axis=1)
    np.maximum(out, 0.0, out=out)
    return out
