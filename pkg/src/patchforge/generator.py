"""Shape-flexible hourglass generator.

Encoder: strided-free 3x3 conv blocks with 2x2 max pooling. Bottleneck:
residual blocks. The bottleneck feature map and every skip tensor are
geometrically warped onto the target canvas (at the matching pyramid level),
so the decoder's nearest-neighbor-resize + conv blocks can assemble an
output of any requested height/width/homography. The sampling transform is
parameter-free: nothing about the geometry is learned.

Because both source and target use normalized [-1,1] coordinates, one 3x3
transform drives the warp at every pyramid level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import ShapeError
from .geometry import OutputGeometry, sample_grid
from .layers import ConvBlock, Conv2d, ResBlock, collect_params, collect_buffers


@dataclass(frozen=True)
class GeneratorConfig:
    base_channels: int = 64
    depth: int = 5
    residual_blocks: int = 6
    use_skip: bool = True
    normalization: str = "batch"  # batch | none
    spectral_norm_all_but_last: bool = True
    channel_cap: int = 256
    pad_mode: str = "reflect"
    warp_pad: str = "zero"  # zero | edge

    def __post_init__(self):
        if self.depth < 1:
            raise ShapeError("depth must be >= 1")
        if self.base_channels < 1 or self.residual_blocks < 0:
            raise ShapeError("base_channels >= 1 and residual_blocks >= 0 required")
        if self.normalization not in ("batch", "none"):
            raise ShapeError(f"unknown normalization {self.normalization!r}")
        if self.warp_pad not in ("zero", "edge"):
            raise ShapeError(f"unknown warp_pad {self.warp_pad!r}")

    @property
    def channels(self) -> list[int]:
        return [
            min(self.base_channels * (1 << k), self.channel_cap)
            for k in range(self.depth + 1)
        ]


def _dims_ladder(height: int, width: int, depth: int) -> list[tuple[int, int]]:
    dims = [(height, width)]
    for _ in range(depth):
        h, w = dims[-1]
        dims.append(((h + 1) // 2, (w + 1) // 2))
    return dims


class Generator:
    def __init__(self, config: GeneratorConfig, rng: np.random.Generator):
        self.config = config
        ch = config.channels
        sn = config.spectral_norm_all_but_last
        norm = config.normalization == "batch"
        pm = config.pad_mode

        self.entry = ConvBlock(rng, 3, ch[0], pad_mode=pm, sn=sn, norm=norm)
        self.enc = [
            ConvBlock(rng, ch[k - 1], ch[k], pad_mode=pm, sn=sn, norm=norm)
            for k in range(1, config.depth + 1)
        ]
        self.res = [
            ResBlock(rng, ch[config.depth], pad_mode=pm, sn=sn, norm=norm)
            for _ in range(config.residual_blocks)
        ]
        self.dec = []
        for k in range(config.depth - 1, -1, -1):
            c_in = ch[k + 1] + (ch[k] if config.use_skip else 0)
            self.dec.append(ConvBlock(rng, c_in, ch[k], pad_mode=pm, sn=sn, norm=norm))
        # last layer carries no spectral norm and no normalization
        self.final = Conv2d(rng, ch[0], 3, pad_mode=pm, sn=False)

    def _named_layers(self):
        names = [("entry", self.entry)]
        names += [(f"enc{k}", l) for k, l in enumerate(self.enc)]
        names += [(f"res{k}", l) for k, l in enumerate(self.res)]
        names += [(f"dec{k}", l) for k, l in enumerate(self.dec)]
        names.append(("final", self.final))
        return names

    def named_params(self):
        return collect_params(self._named_layers())

    def named_buffers(self):
        return collect_buffers(self._named_layers())

    def set_buffer(self, name: str, value: np.ndarray):
        prefix, leaf = name.split(".", 1)
        dict(self._named_layers())[prefix].set_buffer(leaf, value)

    def forward(self, x, geo: OutputGeometry, training: bool = False) -> Var:
        """Retarget (3,H,W) input onto the geometry's canvas; returns a Var.

        H and W must be divisible by 2**depth. Output is (3, geo.height,
        geo.width) in [0,1].
        """
        v = x if isinstance(x, Var) else Var(np.ascontiguousarray(x, dtype=np.float32))
        c, h, w = v.data.shape
        d = self.config.depth
        if c != 3:
            raise ShapeError(f"expected 3 input channels, got {c}")
        if h % (1 << d) or w % (1 << d):
            raise ShapeError(
                f"input dims {h}x{w} not divisible by 2^depth = {1 << d}"
            )
        edge = self.config.warp_pad == "edge"
        out_dims = _dims_ladder(geo.height, geo.width, d)
        use_skip = self.config.use_skip

        def warp_to(feat: Var, level: int) -> Var:
            oh, ow = out_dims[level]
            lg = OutputGeometry(oh, ow, geo.transform)
            py, px = sample_grid(lg, feat.data.shape[1], feat.data.shape[2])
            return ad.warp(feat, py, px, edge)

        f = self.entry(v, training)
        skips = [f]
        for k, enc in enumerate(self.enc, start=1):
            f = ad.maxpool2(enc(f, training))
            if k < d:
                skips.append(f)
        for r in self.res:
            f = r(f, training)
        f = warp_to(f, d)
        for i, dec in enumerate(self.dec):
            level = d - 1 - i
            f = ad.upsample_nearest(f, out_dims[level])
            if use_skip:
                f = ad.concat_channels(f, warp_to(skips[level], level))
            f = dec(f, training)
        return ad.sigmoid(self.final(f, training))

    def infer(self, x: np.ndarray, geo: OutputGeometry) -> np.ndarray:
        return self.forward(x, geo, training=False).data


def chain_receptive_field(ops) -> int:
    """Receptive-field diameter (input pixels) of a sequential op chain.

    Each op is ("conv", kernel) | ("pool", size) | ("upsample", factor).
    """
    diameter = 1.0
    stride = 1.0
    for kind, arg in ops:
        if kind == "conv":
            diameter += (arg - 1) * stride
        elif kind == "pool":
            diameter += (arg - 1) * stride
            stride *= arg
        elif kind == "upsample":
            stride /= arg
        else:
            raise ValueError(f"unknown op kind {kind!r}")
    return int(np.ceil(diameter))


def count_receptive_field(config: GeneratorConfig) -> int:
    """Theoretical output-pixel receptive-field diameter at identity geometry.

    The deepest (bottleneck) path dominates; skip paths are strictly
    shallower and cannot widen it.
    """
    ops = [("conv", 3)]  # entry
    for _ in range(config.depth):
        ops.append(("conv", 3))
        ops.append(("pool", 2))
    for _ in range(config.residual_blocks):
        ops += [("conv", 3), ("conv", 3)]
    for _ in range(config.depth):
        ops.append(("upsample", 2))
        ops.append(("conv", 3))
    ops.append(("conv", 3))  # final
    return chain_receptive_field(ops)
