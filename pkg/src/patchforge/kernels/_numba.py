"""Numba-jitted kernel implementations.

Same contracts as ``_numpy``: convolutions build the column matrix with
explicit loops and hand off to BLAS via ``np.dot``; warp/pool/search ops are
direct loops. All kernels are single-threaded and keep IEEE semantics
(no fastmath) so results are reproducible run to run.
"""

import numpy as np
from numba import njit

NAME = "numba"


@njit(cache=True)
def _im2col(x_pad, kh, kw, stride):
    c, hp, wp = x_pad.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    col = np.empty((c * kh * kw, ho * wo), dtype=x_pad.dtype)
    row = 0
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                r = 0
                for oi in range(ho):
                    ii = oi * stride + i
                    for oj in range(wo):
                        col[row, r] = x_pad[ci, ii, oj * stride + j]
                        r += 1
                row += 1
    return col, ho, wo


@njit(cache=True)
def conv2d_fwd(x_pad, w, stride):
    co, ci, kh, kw = w.shape
    col, ho, wo = _im2col(x_pad, kh, kw, stride)
    w2 = np.ascontiguousarray(w.reshape(co, ci * kh * kw))
    y = np.dot(w2, col)
    return y.reshape(co, ho, wo)


@njit(cache=True)
def conv2d_bwd_input(dy, w, in_shape, stride):
    co, ci, kh, kw = w.shape
    _, ho, wo = dy.shape
    w2t = np.ascontiguousarray(w.reshape(co, ci * kh * kw).T)
    dy2 = np.ascontiguousarray(dy.reshape(co, ho * wo))
    dcol = np.dot(w2t, dy2)  # (ci*kh*kw, ho*wo)
    dx = np.zeros(in_shape, dtype=dy.dtype)
    row = 0
    for c in range(ci):
        for i in range(kh):
            for j in range(kw):
                r = 0
                for oi in range(ho):
                    ii = oi * stride + i
                    for oj in range(wo):
                        dx[c, ii, oj * stride + j] += dcol[row, r]
                        r += 1
                row += 1
    return dx


@njit(cache=True)
def conv2d_bwd_weight(dy, x_pad, kh, kw, stride):
    co = dy.shape[0]
    ho, wo = dy.shape[1], dy.shape[2]
    col, _, _ = _im2col(x_pad, kh, kw, stride)
    # dw = dy2 @ col.T computed as (col @ dy2.T).T so only the small
    # (co, N) operand gets transpose-copied, not the big column matrix
    dy2t = np.empty((ho * wo, co), dtype=dy.dtype)
    for o in range(co):
        r = 0
        for i in range(ho):
            for j in range(wo):
                dy2t[r, o] = dy[o, i, j]
                r += 1
    dwt = np.dot(col, dy2t)  # (ci*kh*kw, co)
    ck = col.shape[0]
    dw = np.empty((co, ck), dtype=dy.dtype)
    for o in range(co):
        for k in range(ck):
            dw[o, k] = dwt[k, o]
    return dw.reshape(co, x_pad.shape[0], kh, kw)


@njit(cache=True)
def warp_fwd(feat, py, px, edge):
    c, h, w = feat.shape
    ho, wo = py.shape
    out = np.zeros((c, ho, wo), dtype=feat.dtype)
    for i in range(ho):
        for j in range(wo):
            x = px[i, j]
            y = py[i, j]
            x0 = int(np.floor(x))
            y0 = int(np.floor(y))
            fx = x - x0
            fy = y - y0
            x1 = x0 + 1
            y1 = y0 + 1
            if edge:
                y0c = min(max(y0, 0), h - 1)
                y1c = min(max(y1, 0), h - 1)
                x0c = min(max(x0, 0), w - 1)
                x1c = min(max(x1, 0), w - 1)
                w00 = (1.0 - fy) * (1.0 - fx)
                w01 = (1.0 - fy) * fx
                w10 = fy * (1.0 - fx)
                w11 = fy * fx
            else:
                vy0 = 0 <= y0 < h
                vy1 = 0 <= y1 < h
                vx0 = 0 <= x0 < w
                vx1 = 0 <= x1 < w
                w00 = (1.0 - fy) * (1.0 - fx) * (1.0 if vy0 and vx0 else 0.0)
                w01 = (1.0 - fy) * fx * (1.0 if vy0 and vx1 else 0.0)
                w10 = fy * (1.0 - fx) * (1.0 if vy1 and vx0 else 0.0)
                w11 = fy * fx * (1.0 if vy1 and vx1 else 0.0)
                y0c = min(max(y0, 0), h - 1)
                y1c = min(max(y1, 0), h - 1)
                x0c = min(max(x0, 0), w - 1)
                x1c = min(max(x1, 0), w - 1)
            for ci in range(c):
                acc = (
                    w00 * feat[ci, y0c, x0c]
                    + w01 * feat[ci, y0c, x1c]
                    + w10 * feat[ci, y1c, x0c]
                    + w11 * feat[ci, y1c, x1c]
                )
                out[ci, i, j] = acc
    return out


@njit(cache=True)
def warp_bwd(dy, py, px, h, w, edge):
    c, ho, wo = dy.shape
    dfeat = np.zeros((c, h, w), dtype=np.float64)
    for i in range(ho):
        for j in range(wo):
            x = px[i, j]
            y = py[i, j]
            x0 = int(np.floor(x))
            y0 = int(np.floor(y))
            fx = x - x0
            fy = y - y0
            x1 = x0 + 1
            y1 = y0 + 1
            y0c = min(max(y0, 0), h - 1)
            y1c = min(max(y1, 0), h - 1)
            x0c = min(max(x0, 0), w - 1)
            x1c = min(max(x1, 0), w - 1)
            if edge:
                w00 = (1.0 - fy) * (1.0 - fx)
                w01 = (1.0 - fy) * fx
                w10 = fy * (1.0 - fx)
                w11 = fy * fx
            else:
                vy0 = 0 <= y0 < h
                vy1 = 0 <= y1 < h
                vx0 = 0 <= x0 < w
                vx1 = 0 <= x1 < w
                w00 = (1.0 - fy) * (1.0 - fx) * (1.0 if vy0 and vx0 else 0.0)
                w01 = (1.0 - fy) * fx * (1.0 if vy0 and vx1 else 0.0)
                w10 = fy * (1.0 - fx) * (1.0 if vy1 and vx0 else 0.0)
                w11 = fy * fx * (1.0 if vy1 and vx1 else 0.0)
            for ci in range(c):
                g = dy[ci, i, j]
                dfeat[ci, y0c, x0c] += w00 * g
                dfeat[ci, y0c, x1c] += w01 * g
                dfeat[ci, y1c, x0c] += w10 * g
                dfeat[ci, y1c, x1c] += w11 * g
    return dfeat.astype(dy.dtype)


@njit(cache=True)
def maxpool2_fwd(x):
    c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    y = np.empty((c, h2, w2), dtype=x.dtype)
    arg = np.empty((c, h2, w2), dtype=np.int8)
    for ci in range(c):
        for i in range(h2):
            for j in range(w2):
                best = x[ci, 2 * i, 2 * j]
                bi = 0
                v = x[ci, 2 * i, 2 * j + 1]
                if v > best:
                    best = v
                    bi = 1
                v = x[ci, 2 * i + 1, 2 * j]
                if v > best:
                    best = v
                    bi = 2
                v = x[ci, 2 * i + 1, 2 * j + 1]
                if v > best:
                    best = v
                    bi = 3
                y[ci, i, j] = best
                arg[ci, i, j] = bi
    return y, arg


@njit(cache=True)
def maxpool2_bwd(dy, arg, h, w):
    c, h2, w2 = dy.shape
    dx = np.zeros((c, h, w), dtype=dy.dtype)
    for ci in range(c):
        for i in range(h2):
            for j in range(w2):
                a = arg[ci, i, j]
                dx[ci, 2 * i + a // 2, 2 * j + a % 2] += dy[ci, i, j]
    return dx


@njit(cache=True)
def leaky_fwd(x, slope):
    out = np.empty_like(x)
    flat_in = x.ravel()
    flat_out = out.ravel()
    s = x.dtype.type(slope)
    for i in range(flat_in.size):
        v = flat_in[i]
        flat_out[i] = v if v > 0 else v * s
    return out


@njit(cache=True)
def leaky_bwd(g, x, slope):
    out = np.empty_like(g)
    fg = g.ravel()
    fx = x.ravel()
    fo = out.ravel()
    s = g.dtype.type(slope)
    for i in range(fg.size):
        fo[i] = fg[i] if fx[i] > 0 else fg[i] * s
    return out


@njit(cache=True)
def patch_min_sqdists(a, b):
    na, d = a.shape
    nb = b.shape[0]
    out = np.empty(na, dtype=np.float64)
    for i in range(na):
        best = np.inf
        for j in range(nb):
            s = 0.0
            for k in range(d):
                diff = a[i, k] - b[j, k]
                s += diff * diff
                if s >= best:
                    break
            if s < best:
                best = s
        out[i] = best
    return out
