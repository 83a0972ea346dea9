"""Multi-scale patch discriminator.

An image pyramid is built with area-averaged downscaling by a factor of
sqrt(2) per level (level i dims = ceil(dims0 / sqrt(2)^i), computed from the
original image each time, never cascaded). Every level gets its own small
fully-convolutional head; nothing is shared between levels. Head outputs are
one-channel score maps; the pooled score is the convex combination of the
per-map means under the scheduled scale weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .errors import ShapeError
from .layers import Conv2d, collect_params, collect_buffers


@dataclass(frozen=True)
class DiscriminatorConfig:
    num_scales: int = 5
    downscale_factor: float = math.sqrt(2.0)
    convs_per_scale: int = 4
    first_conv_strided: bool = True
    channels: int = 64
    share_weights: bool = False
    spectral_norm_all_but_last: bool = True
    schedule_sigma: float = 0.4

    def __post_init__(self):
        if self.num_scales < 1:
            raise ShapeError("num_scales must be >= 1")
        if self.downscale_factor <= 1.0:
            raise ShapeError("downscale_factor must exceed 1")
        if self.share_weights:
            raise ShapeError("per-scale heads do not share weights")
        if self.convs_per_scale < 2:
            raise ShapeError("need at least 2 convs per scale")


def head_receptive_field(config: DiscriminatorConfig) -> int:
    """Receptive-field diameter of one head, in its own level's pixels."""
    d, s = 1, 1
    for i in range(config.convs_per_scale):
        d += 2 * s
        if i == 0 and config.first_conv_strided:
            s *= 2
    return d


def pyramid_dims(height: int, width: int, config: DiscriminatorConfig):
    """Per-level (h, w): ceil(dims0 / factor^i). Level 0 is the original."""
    out = []
    for i in range(config.num_scales):
        f = config.downscale_factor**i
        out.append((max(1, math.ceil(height / f)), max(1, math.ceil(width / f))))
    return out


def min_input_dim(config: DiscriminatorConfig) -> int:
    """Smallest image side whose coarsest level still spans one receptive field."""
    rf = head_receptive_field(config)
    return math.ceil(rf * config.downscale_factor ** (config.num_scales - 1))


class _Head:
    def __init__(self, rng, config: DiscriminatorConfig):
        c = config.channels
        sn = config.spectral_norm_all_but_last
        n = config.convs_per_scale
        self.convs = []
        for i in range(n):
            c_in = 3 if i == 0 else c
            c_out = 1 if i == n - 1 else c
            stride = 2 if (i == 0 and config.first_conv_strided) else 1
            self.convs.append(
                Conv2d(rng, c_in, c_out, k=3, stride=stride, pad_mode="zero",
                       sn=sn and i < n - 1)
            )

    def __call__(self, x: Var, training: bool = False, frozen: bool = False) -> Var:
        for i, conv in enumerate(self.convs):
            x = conv(x, training, frozen)
            if i < len(self.convs) - 1:
                x = ad.leaky_relu(x, 0.2)
        return x

    def params(self):
        return [(f"conv{i}.{n}", p) for i, c in enumerate(self.convs)
                for n, p in c.params()]

    def buffers(self):
        return [(f"conv{i}.{n}", b) for i, c in enumerate(self.convs)
                for n, b in c.buffers()]

    def set_buffer(self, name, value):
        idx, leaf = name.split(".", 1)
        self.convs[int(idx[4:])].set_buffer(leaf, value)


class Discriminator:
    def __init__(self, config: DiscriminatorConfig, rng: np.random.Generator):
        self.config = config
        self.heads = [_Head(rng, config) for _ in range(config.num_scales)]

    def _named_layers(self):
        return [(f"head{i}", h) for i, h in enumerate(self.heads)]

    def named_params(self):
        return collect_params(self._named_layers())

    def named_buffers(self):
        return collect_buffers(self._named_layers())

    def set_buffer(self, name, value):
        prefix, leaf = name.split(".", 1)
        dict(self._named_layers())[prefix].set_buffer(leaf, value)

    def forward(self, img, scale_weights: np.ndarray, training: bool = False,
                frozen: bool = False):
        """Pooled score plus per-scale maps for a (3,H,W) image in [0,1].

        score = sum_i w_i * mean(map_i); raises ShapeError when the coarsest
        pyramid level is smaller than one head receptive field. With
        ``frozen=True`` the head weights act as constants (used when only the
        gradient w.r.t. the image is needed).
        """
        v = img if isinstance(img, Var) else Var(np.ascontiguousarray(img, dtype=np.float32))
        h, w = v.data.shape[1], v.data.shape[2]
        dims = pyramid_dims(h, w, self.config)
        rf = head_receptive_field(self.config)
        if min(dims[-1]) < rf:
            raise ShapeError(
                f"coarsest pyramid level {dims[-1]} is smaller than the "
                f"head receptive field ({rf}px); input {h}x{w} is too small"
            )
        weights = np.asarray(scale_weights, dtype=np.float64)
        if weights.shape != (self.config.num_scales,):
            raise ShapeError(
                f"expected {self.config.num_scales} scale weights, got {weights.shape}"
            )
        maps = []
        score = None
        for i, head in enumerate(self.heads):
            level = v if i == 0 else ad.area_resize(v, dims[i])
            m = head(level, training, frozen)
            maps.append(m)
            term = ad.scale_(ad.mean(m), float(weights[i]))
            score = term if score is None else ad.add(score, term)
        return score, maps

    def score(self, img: np.ndarray, scale_weights) -> tuple[float, list[np.ndarray]]:
        s, maps = self.forward(img, scale_weights, training=False)
        return s.item(), [m.data for m in maps]


def scale_weight_schedule(iteration: int, total_curriculum: int, n: int,
                          sigma: float = 0.4) -> np.ndarray:
    """Convex per-scale weights shifting coarse-to-fine over the curriculum.

    A Gaussian bump over the scale index whose center moves linearly from
    the coarsest scale (index n-1) at iteration 0 to the finest (index 0)
    once ``total_curriculum`` iterations have elapsed.
    """
    if iteration < 0:
        raise ValueError("iteration must be >= 0")
    if n < 1:
        raise ValueError("n must be >= 1")
    if n == 1:
        return np.ones(1, dtype=np.float64)
    progress = 1.0 if total_curriculum <= 0 else min(iteration / total_curriculum, 1.0)
    center = (n - 1) * (1.0 - progress)
    idx = np.arange(n, dtype=np.float64)
    w = np.exp(-((idx - center) ** 2) / (2.0 * sigma * sigma))
    return w / w.sum()
