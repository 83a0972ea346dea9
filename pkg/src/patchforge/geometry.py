"""Homography algebra and the differentiable warping layer.

Coordinate convention: both the source feature map and the target canvas are
addressed by normalized coordinates in [-1, 1]^2, where (-1, -1) is the
center of the top-left pixel minus half a pixel, i.e. coordinate
``nx = 2*(j + 0.5)/W - 1`` for column j. A :class:`Homography` ``T`` used in
an :class:`OutputGeometry` maps *output* normalized coordinates to *input*
normalized coordinates (backward mapping): each output pixel samples the
input at ``T @ (nx, ny, 1)``.

Pure axis scaling therefore needs no matrix at all: the identity transform
with different canvas dims stretches the sampling grid. The matrix carries
shape distortion proper (shear, perspective, translation).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateTransform, ShapeError

_DET_EPS = 1e-12


def _canonicalize(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise ShapeError(f"homography matrix must be 3x3, got {m.shape}")
    if abs(m[2, 2]) < _DET_EPS:
        raise DegenerateTransform("m[2][2] ~ 0, cannot canonicalize")
    if abs(np.linalg.det(m)) < _DET_EPS:
        raise DegenerateTransform("matrix is singular or near-singular")
    return m / m[2, 2]


@dataclass(frozen=True)
class Homography:
    """3x3 invertible projective transform in canonical form (m[2][2] = 1)."""

    m: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "m", _canonicalize(self.m))
        self.m.setflags(write=False)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Homography):
            return NotImplemented
        return bool(np.all(np.abs(self.m - other.m) <= 1e-12))

    def is_identity(self, tol: float = 1e-12) -> bool:
        return bool(np.all(np.abs(self.m - np.eye(3)) <= tol))


@dataclass(frozen=True)
class OutputGeometry:
    """Target canvas dims plus the output->input coordinate transform."""

    height: int
    width: int
    transform: Homography = field(default_factory=lambda: identity())

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ShapeError(
                f"output dims must be >= 1, got {self.height}x{self.width}"
            )


def identity() -> Homography:
    return Homography(np.eye(3))


def translate(tx: float, ty: float) -> Homography:
    m = np.eye(3)
    m[0, 2] = tx
    m[1, 2] = ty
    return Homography(m)


def scale(sx: float, sy: float | None = None) -> Homography:
    sy = sx if sy is None else sy
    return Homography(np.diag([float(sx), float(sy), 1.0]))


def shear(kx: float, ky: float = 0.0) -> Homography:
    m = np.eye(3)
    m[0, 1] = kx
    m[1, 0] = ky
    return Homography(m)


def perspective(px: float, py: float) -> Homography:
    m = np.eye(3)
    m[2, 0] = px
    m[2, 1] = py
    return Homography(m)


def compose(a: Homography, b: Homography) -> Homography:
    """Canonicalized matrix product a @ b (apply b first, then a)."""
    prod = a.m @ b.m
    if abs(np.linalg.det(prod)) < _DET_EPS:
        raise DegenerateTransform("composition is singular")
    return Homography(prod)


def invert(h: Homography) -> Homography:
    if abs(np.linalg.det(h.m)) < _DET_EPS:
        raise DegenerateTransform("matrix is singular")
    return Homography(np.linalg.inv(h.m))


def _collinear_triple_exists(pts: np.ndarray, tol: float = 1e-9) -> bool:
    # cross product magnitude of (p1-p0, p2-p0) doubles the triangle area
    for i in range(4):
        for j in range(i + 1, 4):
            for k in range(j + 1, 4):
                v1 = pts[j] - pts[i]
                v2 = pts[k] - pts[i]
                if abs(v1[0] * v2[1] - v1[1] * v2[0]) < tol:
                    return True
    return False


def from_corners(src, dst) -> Homography:
    """Homography mapping the four src points onto the four dst points.

    Direct linear transform with 8 unknowns: each correspondence
    (x, y) -> (u, v) contributes
        u = (h00*x + h01*y + h02) / (h20*x + h21*y + 1)
        v = (h10*x + h11*y + h12) / (h20*x + h21*y + 1)
    which linearizes to two rows of an 8x8 system.
    """
    src = np.asarray(src, dtype=np.float64).reshape(4, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(4, 2)
    if _collinear_triple_exists(src) or _collinear_triple_exists(dst):
        raise DegenerateTransform("three of the four corners are collinear")

    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i] = u
        b[2 * i + 1] = v
    try:
        h = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise DegenerateTransform(f"corner system is singular: {exc}") from exc
    m = np.append(h, 1.0).reshape(3, 3)
    return Homography(m)


def apply(h: Homography, pts) -> np.ndarray:
    """Apply h to an (N, 2) array of points; returns (N, 2)."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    hom = np.concatenate([pts, np.ones((len(pts), 1))], axis=1)
    out = hom @ h.m.T
    w = out[:, 2:3]
    if np.any(np.abs(w) < _DET_EPS):
        raise DegenerateTransform("point maps to infinity")
    return out[:, :2] / w


def sample_grid(geo: OutputGeometry, in_height: int, in_width: int) -> tuple[np.ndarray, np.ndarray]:
    """Input-space pixel coordinates sampled by each output pixel.

    Returns (py, px) float64 arrays of shape (geo.height, geo.width). Output
    pixels whose homogeneous w ~ 0 get coordinates far outside the input so
    they resolve as out-of-bounds.
    """
    hh, ww = geo.height, geo.width
    if np.array_equal(geo.transform.m, np.eye(3)):
        # direct pixel-space form: collapses to the exact integer grid when
        # dims match, so an identity warp is a bit-exact copy
        py1 = (np.arange(hh) + 0.5) * (in_height / hh) - 0.5
        px1 = (np.arange(ww) + 0.5) * (in_width / ww) - 0.5
        py, px = np.meshgrid(py1, px1, indexing="ij")
        return py, px
    ny, nx = np.meshgrid(
        2.0 * (np.arange(hh) + 0.5) / hh - 1.0,
        2.0 * (np.arange(ww) + 0.5) / ww - 1.0,
        indexing="ij",
    )
    m = geo.transform.m
    sx = m[0, 0] * nx + m[0, 1] * ny + m[0, 2]
    sy = m[1, 0] * nx + m[1, 1] * ny + m[1, 2]
    w = m[2, 0] * nx + m[2, 1] * ny + m[2, 2]
    bad = np.abs(w) < _DET_EPS
    w = np.where(bad, 1.0, w)
    sx = np.where(bad, 1e9, sx / w)
    sy = np.where(bad, 1e9, sy / w)
    px = (sx + 1.0) * 0.5 * in_width - 0.5
    py = (sy + 1.0) * 0.5 * in_height - 0.5
    return py, px


def warp(feature: np.ndarray, geo: OutputGeometry, pad: str = "zero") -> np.ndarray:
    """Bilinearly resample ``feature`` (C,H,W) onto the geometry's canvas.

    Out-of-bounds samples are zero (``pad='zero'``) or clamped to the edge
    (``pad='edge'``). Linear in the feature values, hence differentiable;
    the training path uses the same kernel through the autodiff op.
    """
    feature = np.asarray(feature)
    if feature.ndim != 3 or feature.shape[0] < 1:
        raise ShapeError(f"feature must be (C,H,W), got {feature.shape}")
    from . import kernels

    py, px = sample_grid(geo, feature.shape[1], feature.shape[2])
    return kernels.warp_fwd(feature, py, px, pad == "edge")
