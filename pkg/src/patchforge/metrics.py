"""Patch-distribution metrics: coherence and completeness.

coherence(y, x): over a pyramid of scales, the mean nearest-neighbor L2
distance from every patch of y to the patch set of x. Zero means every
output patch exists verbatim in the input. completeness swaps the roles:
it asks whether every input patch survives into the output. A synthesis
that tiles one input region is coherent but incomplete (mode collapse);
one that invents content is complete but incoherent.

Scale handling: each image is area-resized to ceil(dim * scale) per side
before patch extraction. Distances are plain Euclidean norms of flattened
(C * p * p) patch differences in the native [0,1] channel space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

from . import kernels
from .autodiff import Var, area_resize
from .errors import ShapeError

_DEFAULT_SCALES = (1.0, 1.0 / math.sqrt(2.0), 0.5, 0.5 / math.sqrt(2.0))

REPORT_VERSION = 1


@dataclass(frozen=True)
class PatchMetricConfig:
    patch_size: int = 7
    scales: tuple[float, ...] = _DEFAULT_SCALES
    stride: int = 1
    distance: str = "L2"

    def __post_init__(self):
        if self.patch_size < 3 or self.patch_size % 2 == 0:
            raise ShapeError("patch_size must be odd and >= 3")
        if self.stride < 1:
            raise ShapeError("stride must be >= 1")
        if list(self.scales) != sorted(self.scales, reverse=True):
            raise ShapeError("scales must be sorted descending")
        if self.distance != "L2":
            raise ShapeError("only L2 distance is supported")


def extract_patches(img: np.ndarray, patch_size: int, stride: int) -> np.ndarray:
    """All sliding patches of (C,H,W) as a (N, C*p*p) float64 matrix."""
    c, h, w = img.shape
    p = patch_size
    if h < p or w < p:
        raise ShapeError(f"image {h}x{w} smaller than one {p}x{p} patch")
    ny = (h - p) // stride + 1
    nx = (w - p) // stride + 1
    s0, s1, s2 = img.strides
    view = as_strided(
        img,
        shape=(ny, nx, c, p, p),
        strides=(s1 * stride, s2 * stride, s0, s1, s2),
    )
    return np.ascontiguousarray(view.reshape(ny * nx, c * p * p), dtype=np.float64)


def _resized(img: np.ndarray, scale: float) -> np.ndarray:
    if scale == 1.0:
        return img
    h, w = img.shape[1], img.shape[2]
    return area_resize(Var(img), (math.ceil(h * scale), math.ceil(w * scale))).data


def _one_sided(src: np.ndarray, ref: np.ndarray, cfg: PatchMetricConfig) -> list[float]:
    """Per-scale mean NN distance from src patches into ref's patch set."""
    src = np.ascontiguousarray(src, dtype=np.float64)
    ref = np.ascontiguousarray(ref, dtype=np.float64)
    values = []
    for s in cfg.scales:
        a = extract_patches(_resized(src, s), cfg.patch_size, cfg.stride)
        b = extract_patches(_resized(ref, s), cfg.patch_size, cfg.stride)
        d2 = kernels.patch_min_sqdists(a, b)
        values.append(float(np.sqrt(d2).mean()))
    return values


def coherence(y: np.ndarray, x: np.ndarray, cfg: PatchMetricConfig | None = None) -> float:
    """Mean over scales of mean NN distance from y's patches into x's."""
    cfg = cfg or PatchMetricConfig()
    return float(np.mean(_one_sided(y, x, cfg)))


def completeness(y: np.ndarray, x: np.ndarray, cfg: PatchMetricConfig | None = None) -> float:
    """Identical to coherence with the roles of y and x swapped."""
    cfg = cfg or PatchMetricConfig()
    return coherence(x, y, cfg)


def bidirectional_report(y: np.ndarray, x: np.ndarray,
                         cfg: PatchMetricConfig | None = None) -> dict:
    """Both metrics plus the per-scale breakdown, as a serializable record."""
    cfg = cfg or PatchMetricConfig()
    per_coh = _one_sided(y, x, cfg)
    per_com = _one_sided(x, y, cfg)
    return {
        "version": REPORT_VERSION,
        "coherence": float(np.mean(per_coh)),
        "completeness": float(np.mean(per_com)),
        "per_scale": {
            "scales": list(cfg.scales),
            "coherence": per_coh,
            "completeness": per_com,
        },
        "config": {
            "patch_size": cfg.patch_size,
            "stride": cfg.stride,
            "distance": cfg.distance,
        },
    }
