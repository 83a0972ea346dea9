"""Synthesis requests and the checkpoint-backed inference engine."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpoint import Checkpoint, restore_generator
from .errors import ConfigError, DegenerateTransform
from .geometry import Homography, OutputGeometry, compose, from_corners, identity

MAX_OUTPUT_DIM = 2048

# input-corner targets in normalized coords: TL, TR, BR, BL
_UNIT_CORNERS = ((-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0))


class RequestError(ConfigError):
    """Malformed synthesis request (HTTP 400)."""


class OutputTooLarge(ConfigError):
    """Requested canvas exceeds the per-axis cap (HTTP 413)."""


@dataclass(frozen=True)
class SynthesisRequest:
    """Either axis scales or a corner quad, never both.

    Corner coordinates are normalized to [0,1]^2 of the *output* canvas and
    give, in order TL, TR, BR, BL, where the input image's corners land.
    """

    output_height: int | None = None
    output_width: int | None = None
    scale_x: float | None = None
    scale_y: float | None = None
    corners: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        has_scales = self.scale_x is not None or self.scale_y is not None
        has_corners = self.corners is not None
        if has_scales and has_corners:
            raise RequestError("provide corners or scales, not both")
        if not has_scales and not has_corners:
            raise RequestError("provide corners or scale_x/scale_y")
        if has_scales:
            if self.scale_x is None or self.scale_y is None:
                raise RequestError("scale_x and scale_y must both be set")
            if self.scale_x <= 0 or self.scale_y <= 0:
                raise RequestError("scales must be positive")
        if has_corners:
            if len(self.corners) != 4 or any(len(c) != 2 for c in self.corners):
                raise RequestError("corners must be four (x, y) pairs")
            if self.output_height is None or self.output_width is None:
                raise RequestError("corner requests need explicit output dims")
        for d in (self.output_height, self.output_width):
            if d is not None and (not isinstance(d, int) or d < 1):
                raise RequestError("output dims must be positive integers")

    @staticmethod
    def from_dict(d: dict) -> "SynthesisRequest":
        if not isinstance(d, dict):
            raise RequestError("request body must be a JSON object")
        allowed = {"output_height", "output_width", "scale_x", "scale_y", "corners"}
        unknown = set(d) - allowed
        if unknown:
            raise RequestError(f"unknown request fields: {sorted(unknown)}")

        def _int(name):
            v = d.get(name)
            if v is None:
                return None
            if isinstance(v, bool) or not isinstance(v, int):
                raise RequestError(f"{name} must be an integer")
            return v

        def _num(name):
            v = d.get(name)
            if v is None:
                return None
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise RequestError(f"{name} must be a number")
            return float(v)

        corners = d.get("corners")
        if corners is not None:
            try:
                corners = tuple((float(c[0]), float(c[1])) for c in corners)
            except (TypeError, ValueError, IndexError) as exc:
                raise RequestError(f"malformed corners: {exc}") from exc
        return SynthesisRequest(
            output_height=_int("output_height"),
            output_width=_int("output_width"),
            scale_x=_num("scale_x"),
            scale_y=_num("scale_y"),
            corners=corners,
        )


def _pad_compensation(orig_hw, padded_hw) -> Homography:
    """Maps original-extent normalized coords into the padded image's."""
    (h, w), (hp, wp) = orig_hw, padded_hw
    a = w / wp
    b = h / hp
    m = np.array([[a, 0.0, a - 1.0], [0.0, b, b - 1.0], [0.0, 0.0, 1.0]])
    return Homography(m)


def request_geometry(req: SynthesisRequest, orig_hw, padded_hw) -> OutputGeometry:
    h, w = orig_hw
    if req.corners is not None:
        src = [(2.0 * x - 1.0, 2.0 * y - 1.0) for x, y in req.corners]
        t = from_corners(src, _UNIT_CORNERS)
        oh, ow = req.output_height, req.output_width
    else:
        t = identity()
        oh = req.output_height or max(int(round(h * req.scale_y)), 1)
        ow = req.output_width or max(int(round(w * req.scale_x)), 1)
    if oh > MAX_OUTPUT_DIM or ow > MAX_OUTPUT_DIM:
        raise OutputTooLarge(
            f"requested {oh}x{ow} exceeds the {MAX_OUTPUT_DIM}px per-axis cap"
        )
    return OutputGeometry(oh, ow, compose(_pad_compensation(orig_hw, padded_hw), t))


class SynthesisEngine:
    """Loaded generator + source image; pure (thread-safe) synthesis calls."""

    def __init__(self, ckpt: Checkpoint):
        self.generator = restore_generator(ckpt)
        self.source = ckpt.source_image
        self.orig_hw = tuple(ckpt.source_orig_hw)
        self.iteration = ckpt.iteration
        self.format_version = ckpt.format_version

    @property
    def padded_hw(self):
        return self.source.shape[1], self.source.shape[2]

    def geometry_for(self, req: SynthesisRequest) -> OutputGeometry:
        return request_geometry(req, self.orig_hw, self.padded_hw)

    def synthesize(self, req: SynthesisRequest) -> np.ndarray:
        geo = self.geometry_for(req)
        return self.generator.infer(self.source, geo)

    def meta(self) -> dict:
        return {
            "source_height": self.orig_hw[0],
            "source_width": self.orig_hw[1],
            "iteration": self.iteration,
            "format_version": self.format_version,
            "max_output_dim": MAX_OUTPUT_DIM,
        }
