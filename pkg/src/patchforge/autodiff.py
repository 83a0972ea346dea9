"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Var` wraps an ndarray plus a closure that maps the output gradient
to parent gradients. The graph is built by the op functions below and torn
down after :func:`backward`. Only what the networks here need is
implemented: elementwise arithmetic, reductions, conv2d, batch norm, max
pooling, nearest-neighbor resize, linear (area) resize, bilinear warp,
concatenation, and the saturating/leaky nonlinearities.

Heavy lifting is delegated to :mod:`patchforge.kernels`; everything in this
module is backend-agnostic.
"""

from __future__ import annotations

import functools

import numpy as np

from . import kernels
from .errors import ShapeError


class Var:
    """Node in the computation graph: an array plus backward plumbing."""

    __slots__ = ("data", "grad", "_parents", "_bwd", "requires_grad")

    def __init__(self, data, parents=(), bwd=None, requires_grad=False):
        self.data = np.asarray(data)
        self.grad = None
        self._parents = parents
        self._bwd = bwd
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Var":
        return Var(self.data)


class Param(Var):
    """Leaf variable updated by an optimizer."""

    def __init__(self, data):
        super().__init__(np.asarray(data), requires_grad=True)


def backward(loss: Var) -> None:
    """Backpropagate from a scalar loss, accumulating ``.grad`` on leaves."""
    if loss.data.size != 1:
        raise ShapeError("backward() expects a scalar loss")
    topo: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._bwd is None or node.grad is None:
            continue
        grads = node._bwd(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g
        if not isinstance(node, Param):
            node.grad = None  # free intermediate gradient memory


def _as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(np.asarray(x))


# ---------------------------------------------------------------------------
# elementwise + reductions


def add(a: Var, b: Var) -> Var:
    a, b = _as_var(a), _as_var(b)
    return Var(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Var, b: Var) -> Var:
    a, b = _as_var(a), _as_var(b)
    return Var(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Var, b: Var) -> Var:
    a, b = _as_var(a), _as_var(b)
    return Var(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scale_(a: Var, c: float) -> Var:
    return Var(a.data * c, (a,), lambda g: (g * c,))


def add_const(a: Var, c) -> Var:
    return Var(a.data + c, (a,), lambda g: (g,))


def div_by_scalar(a: Var, s: Var) -> Var:
    """Elementwise a / s where s is a scalar Var (e.g. a spectral norm)."""
    sval = float(s.data)
    out = a.data / sval

    def bwd(g):
        ga = g / sval
        gs = -np.sum(g * a.data) / (sval * sval)
        return ga, np.asarray(gs, dtype=s.data.dtype)

    return Var(out, (a, s), bwd)


def square(a: Var) -> Var:
    return Var(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def mean(a: Var) -> Var:
    n = a.data.size

    def bwd(g):
        return (np.full(a.data.shape, float(g) / n, dtype=a.data.dtype),)

    return Var(np.asarray(a.data.mean(dtype=np.float64), dtype=np.float64), (a,), bwd)


def vsum(a: Var) -> Var:
    def bwd(g):
        return (np.full(a.data.shape, float(g), dtype=a.data.dtype),)

    return Var(np.asarray(a.data.sum(dtype=np.float64), dtype=np.float64), (a,), bwd)


def l1_loss(a: Var, b: Var) -> Var:
    """Mean absolute difference per element."""
    a, b = _as_var(a), _as_var(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"l1_loss shape mismatch {a.data.shape} vs {b.data.shape}")
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    n = diff.size
    sign = np.sign(diff)

    def bwd(g):
        gd = (float(g) / n) * sign
        return gd.astype(a.data.dtype), (-gd).astype(b.data.dtype)

    return Var(np.asarray(np.abs(diff).mean()), (a, b), bwd)


# ---------------------------------------------------------------------------
# nonlinearities


def leaky_relu(a: Var, slope: float = 0.2) -> Var:
    out = kernels.leaky_fwd(a.data, slope)

    def bwd(g):
        g = np.ascontiguousarray(g, dtype=a.data.dtype)
        return (kernels.leaky_bwd(g, a.data, slope),)

    return Var(out, (a,), bwd)


def sigmoid(a: Var) -> Var:
    out = 1.0 / (1.0 + np.exp(-a.data.astype(np.float64)))
    out = out.astype(a.data.dtype, copy=False)

    def bwd(g):
        return ((g * out * (1.0 - out)).astype(a.data.dtype, copy=False),)

    return Var(out, (a,), bwd)


# ---------------------------------------------------------------------------
# structural ops


def concat_channels(a: Var, b: Var) -> Var:
    ca = a.data.shape[0]

    def bwd(g):
        return g[:ca], g[ca:]

    return Var(np.concatenate([a.data, b.data], axis=0), (a, b), bwd)


def _pad_input(x: np.ndarray, pad: int, mode: str) -> np.ndarray:
    if pad == 0:
        return x
    if mode == "zero":
        return np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    if mode == "reflect":
        if pad != 1:
            raise ShapeError("reflect padding implemented for width 1 only")
        return np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="reflect")
    raise ShapeError(f"unknown pad mode {mode!r}")


def _unpad_grad(dpad: np.ndarray, pad: int, mode: str) -> np.ndarray:
    if pad == 0:
        return dpad
    if mode == "zero":
        return dpad[:, pad:-pad, pad:-pad]
    # reflect, pad 1: fold border gradients back onto their source pixels
    dx = dpad[:, 1:-1, 1:-1].copy()
    dx[:, 1, :] += dpad[:, 0, 1:-1]
    dx[:, -2, :] += dpad[:, -1, 1:-1]
    dx[:, :, 1] += dpad[:, 1:-1, 0]
    dx[:, :, -2] += dpad[:, 1:-1, -1]
    dx[:, 1, 1] += dpad[:, 0, 0]
    dx[:, 1, -2] += dpad[:, 0, -1]
    dx[:, -2, 1] += dpad[:, -1, 0]
    dx[:, -2, -2] += dpad[:, -1, -1]
    return dx


def conv2d(x: Var, w: Var, b: Var | None, stride: int = 1, pad: int = 1,
           pad_mode: str = "reflect") -> Var:
    """Cross-correlation with (O,C,kh,kw) weights over a (C,H,W) input."""
    x_pad = _pad_input(x.data, pad, pad_mode)
    y = kernels.conv2d_fwd(x_pad, w.data, stride)
    if b is not None:
        y = y + b.data[:, None, None]
    kh, kw = w.data.shape[2], w.data.shape[3]
    need_dx = x.requires_grad
    need_dw = w.requires_grad
    need_db = b is not None and b.requires_grad

    def bwd(g):
        g = np.ascontiguousarray(g, dtype=x.data.dtype)
        dx = dw = db = None
        if need_dx:
            dxp = kernels.conv2d_bwd_input(g, w.data, x_pad.shape, stride)
            dx = _unpad_grad(dxp, pad, pad_mode)
        if need_dw:
            dw = kernels.conv2d_bwd_weight(g, x_pad, kh, kw, stride)
        if need_db:
            db = g.sum(axis=(1, 2))
        return (dx, dw, db) if b is not None else (dx, dw)

    parents = (x, w, b) if b is not None else (x, w)
    return Var(y, parents, bwd)


def maxpool2(x: Var) -> Var:
    c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even dims, got {h}x{w}")
    y, arg = kernels.maxpool2_fwd(x.data)

    def bwd(g):
        return (kernels.maxpool2_bwd(np.ascontiguousarray(g, dtype=x.data.dtype), arg, h, w),)

    return Var(y, (x,), bwd)


def _nearest_index(n_out: int, n_in: int) -> np.ndarray:
    # floor mapping; exact k-fold replication when n_out = k * n_in
    return np.minimum((np.arange(n_out) * n_in) // n_out, n_in - 1).astype(np.int64)


def upsample_nearest(x: Var, out_hw: tuple[int, int]) -> Var:
    """Nearest-neighbor resize to explicit target dims (enlarging only)."""
    c, h, w = x.data.shape
    ho, wo = out_hw
    if ho < h or wo < w:
        raise ShapeError(f"upsample_nearest cannot shrink {h}x{w} -> {ho}x{wo}")
    iy = _nearest_index(ho, h)
    ix = _nearest_index(wo, w)
    out = x.data[:, iy[:, None], ix[None, :]]
    # floor mapping is monotone and onto, so the backward pass is a pair of
    # segment sums along each axis
    ystarts = np.searchsorted(iy, np.arange(h), side="left")
    xstarts = np.searchsorted(ix, np.arange(w), side="left")

    def bwd(g):
        g = np.ascontiguousarray(g, dtype=x.data.dtype)
        gc = np.add.reduceat(g, xstarts, axis=2)
        return (np.ascontiguousarray(np.add.reduceat(gc, ystarts, axis=1)),)

    return Var(np.ascontiguousarray(out), (x,), bwd)


@functools.lru_cache(maxsize=256)
def _area_weights_cached(n_out: int, n_in: int) -> np.ndarray:
    m = np.zeros((n_out, n_in), dtype=np.float64)
    step = n_in / n_out
    for i in range(n_out):
        lo = i * step
        hi = (i + 1) * step
        j0 = int(np.floor(lo))
        j1 = min(int(np.ceil(hi)), n_in)
        for j in range(j0, j1):
            m[i, j] = min(hi, j + 1) - max(lo, j)
        m[i] /= m[i].sum()
    m.setflags(write=False)
    return m


def area_resize_weights(n_out: int, n_in: int) -> np.ndarray:
    """Row-stochastic (n_out, n_in) box-filter resampling matrix."""
    return _area_weights_cached(n_out, n_in)


def area_resize(x: Var, out_hw: tuple[int, int]) -> Var:
    """Antialiased (area-averaging) resize; linear in pixel values."""
    c, h, w = x.data.shape
    ho, wo = out_hw
    if (ho, wo) == (h, w):
        return x
    ry = area_resize_weights(ho, h).astype(x.data.dtype)
    rx = area_resize_weights(wo, w).astype(x.data.dtype)
    t = np.matmul(ry[None], x.data)  # (c, ho, w)
    out = np.matmul(t, rx.T[None])  # (c, ho, wo)

    def bwd(g):
        t2 = np.matmul(ry.T[None], np.ascontiguousarray(g, dtype=x.data.dtype))
        return (np.matmul(t2, rx[None]),)

    return Var(out, (x,), bwd)


def warp(x: Var, py: np.ndarray, px: np.ndarray, edge: bool = False) -> Var:
    """Bilinear warp onto a precomputed sampling grid (see geometry.sample_grid)."""
    c, h, w = x.data.shape
    out = kernels.warp_fwd(x.data, py, px, edge)

    def bwd(g):
        return (kernels.warp_bwd(np.ascontiguousarray(g, dtype=x.data.dtype), py, px, h, w, edge),)

    return Var(out, (x,), bwd)


def batchnorm(x: Var, gamma: Var, beta: Var, running_mean: np.ndarray,
              running_var: np.ndarray, training: bool, momentum: float = 0.1,
              eps: float = 1e-5) -> Var:
    """Per-channel batch normalization over the spatial axes of (C,H,W).

    In training mode the batch statistics are used and the running buffers
    are updated in place; in inference mode the running buffers are used and
    nothing mutates.
    """
    c = x.data.shape[0]
    xr = x.data.reshape(c, -1)
    n = xr.shape[1]
    if training:
        mu = xr.mean(axis=1)
        var = xr.var(axis=1)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.astype(running_mean.dtype)
        running_var *= 1.0 - momentum
        # unbiased estimate feeds the running buffer, biased feeds the norm
        unbiased = var * (n / max(n - 1, 1))
        running_var += momentum * unbiased.astype(running_var.dtype)
    else:
        mu = running_mean.astype(xr.dtype)
        var = running_var.astype(xr.dtype)
    ivstd = 1.0 / np.sqrt(var + eps)
    xhat = (xr - mu[:, None]) * ivstd[:, None]
    out = gamma.data[:, None] * xhat + beta.data[:, None]

    def bwd(g):
        g2 = g.reshape(c, -1)
        dgamma = (g2 * xhat).sum(axis=1)
        dbeta = g2.sum(axis=1)
        dxhat = g2 * gamma.data[:, None]
        if training:
            dx = (
                dxhat
                - dxhat.mean(axis=1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
            ) * ivstd[:, None]
        else:
            dx = dxhat * ivstd[:, None]
        return (
            dx.reshape(x.data.shape).astype(x.data.dtype, copy=False),
            dgamma.astype(gamma.data.dtype, copy=False),
            dbeta.astype(beta.data.dtype, copy=False),
        )

    return Var(out.reshape(x.data.shape).astype(x.data.dtype, copy=False),
               (x, gamma, beta), bwd)
