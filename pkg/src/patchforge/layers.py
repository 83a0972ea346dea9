"""Parameterized layers built on the autodiff ops.

Layers hold float32 parameters plus whatever persistent buffers they need
(batch-norm running statistics, spectral-norm power-iteration vectors).
``params()``/``buffers()`` expose name/array pairs for checkpointing.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Param, Var
from .spectral import l2normalize, power_iteration


def he_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


class Conv2d:
    """3x3 (by default) convolution with optional spectral normalization."""

    def __init__(self, rng, c_in, c_out, k=3, stride=1, pad=None, pad_mode="reflect",
                 sn=False):
        self.stride = stride
        self.pad = (k - 1) // 2 if pad is None else pad
        self.pad_mode = pad_mode
        self.sn = sn
        self.w = Param(he_init(rng, (c_out, c_in, k, k), c_in * k * k))
        self.b = Param(np.zeros(c_out, dtype=np.float32))
        if sn:
            # warm-start the power iteration until the estimate stagnates, so
            # sigma tracks accurately from the very first update even when
            # the init spectrum is nearly degenerate at the top
            w2d = self.w.data.reshape(c_out, -1)
            u0 = l2normalize(rng.standard_normal(c_out).astype(np.float32))
            prev = 0.0
            for _ in range(1000):
                sigma, u0, _ = power_iteration(w2d, u0, iters=1)
                if abs(sigma - prev) <= 1e-6 * max(sigma, 1e-12):
                    break
                prev = sigma
            self.u = u0.astype(np.float32)
        else:
            self.u = None

    def _normalized_weight(self, training: bool, frozen: bool) -> Var:
        co = self.w.data.shape[0]
        w2d = self.w.data.reshape(co, -1)
        u = self.u
        v = l2normalize(w2d.T @ u)
        if training and not frozen:
            u = l2normalize(w2d @ v)
            self.u = u  # persists across steps
        sigma = float(u @ (w2d @ v))
        if sigma < 1e-12:
            return Var(self.w.data) if frozen else self.w
        if frozen:
            return Var(self.w.data / sigma)
        # sigma enters the graph so gradients see d(W/sigma)/dW exactly
        outer = np.outer(u, v).reshape(self.w.data.shape).astype(np.float32)
        sigma_var = ad.vsum(ad.mul(self.w, Var(outer)))
        return ad.div_by_scalar(self.w, sigma_var)

    def __call__(self, x: Var, training: bool = False, frozen: bool = False) -> Var:
        """frozen=True uses the weights as constants (no weight gradients,
        no power-iteration update); activations still get gradients."""
        if self.sn:
            w = self._normalized_weight(training, frozen)
        else:
            w = Var(self.w.data) if frozen else self.w
        b = Var(self.b.data) if frozen else self.b
        return ad.conv2d(x, w, b, stride=self.stride, pad=self.pad,
                         pad_mode=self.pad_mode)

    def params(self):
        return [("w", self.w), ("b", self.b)]

    def buffers(self):
        return [("u", self.u)] if self.sn else []

    def set_buffer(self, name, value):
        assert name == "u" and self.sn
        self.u = value.astype(np.float32)


class BatchNorm2d:
    def __init__(self, channels: int, momentum: float = 0.1):
        self.gamma = Param(np.ones(channels, dtype=np.float32))
        self.beta = Param(np.zeros(channels, dtype=np.float32))
        self.running_mean = np.zeros(channels, dtype=np.float32)
        self.running_var = np.ones(channels, dtype=np.float32)
        self.momentum = momentum

    def __call__(self, x: Var, training: bool = False) -> Var:
        return ad.batchnorm(x, self.gamma, self.beta, self.running_mean,
                            self.running_var, training, self.momentum)

    def params(self):
        return [("gamma", self.gamma), ("beta", self.beta)]

    def buffers(self):
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]

    def set_buffer(self, name, value):
        getattr(self, name)[...] = value


class ConvBlock:
    """conv -> optional batch norm -> leaky relu (activation optional)."""

    def __init__(self, rng, c_in, c_out, k=3, stride=1, pad_mode="reflect",
                 sn=True, norm=True, act=True, slope=0.2):
        self.conv = Conv2d(rng, c_in, c_out, k=k, stride=stride,
                           pad_mode=pad_mode, sn=sn)
        self.bn = BatchNorm2d(c_out) if norm else None
        self.act = act
        self.slope = slope

    def __call__(self, x: Var, training: bool = False) -> Var:
        y = self.conv(x, training)
        if self.bn is not None:
            y = self.bn(y, training)
        if self.act:
            y = ad.leaky_relu(y, self.slope)
        return y

    def params(self):
        out = [("conv." + n, p) for n, p in self.conv.params()]
        if self.bn is not None:
            out += [("bn." + n, p) for n, p in self.bn.params()]
        return out

    def buffers(self):
        out = [("conv." + n, b) for n, b in self.conv.buffers()]
        if self.bn is not None:
            out += [("bn." + n, b) for n, b in self.bn.buffers()]
        return out

    def set_buffer(self, name, value):
        sub, leaf = name.split(".", 1)
        (self.conv if sub == "conv" else self.bn).set_buffer(leaf, value)


class ResBlock:
    """Two conv blocks with an additive shortcut (pre-activation omitted)."""

    def __init__(self, rng, channels, pad_mode="reflect", sn=True, norm=True):
        self.block1 = ConvBlock(rng, channels, channels, pad_mode=pad_mode,
                                sn=sn, norm=norm, act=True)
        self.block2 = ConvBlock(rng, channels, channels, pad_mode=pad_mode,
                                sn=sn, norm=norm, act=False)

    def __call__(self, x: Var, training: bool = False) -> Var:
        return ad.add(x, self.block2(self.block1(x, training), training))

    def params(self):
        return [("b1." + n, p) for n, p in self.block1.params()] + [
            ("b2." + n, p) for n, p in self.block2.params()
        ]

    def buffers(self):
        return [("b1." + n, b) for n, b in self.block1.buffers()] + [
            ("b2." + n, b) for n, b in self.block2.buffers()
        ]

    def set_buffer(self, name, value):
        sub, leaf = name.split(".", 1)
        (self.block1 if sub == "b1" else self.block2).set_buffer(leaf, value)


def collect_params(named_layers) -> list[tuple[str, Param]]:
    out = []
    for prefix, layer in named_layers:
        out += [(f"{prefix}.{n}", p) for n, p in layer.params()]
    return out


def collect_buffers(named_layers) -> list[tuple[str, np.ndarray]]:
    out = []
    for prefix, layer in named_layers:
        out += [(f"{prefix}.{n}", b) for n, b in layer.buffers()]
    return out
