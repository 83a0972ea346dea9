"""Adversarial training loop.

One iteration: sample a crop and a random output geometry (curriculum-
ramped), synthesize, update the discriminator on (dequantized real,
detached fake) with the least-squares GAN loss, then update the generator
on the least-squares fooling term plus the weighted cycle reconstruction
term |G(G(x;T);T^-1) - x|_1. Adam with linearly decaying learning rate.

Determinism: every random draw comes from a counter-style generator keyed
by (seed, stream, iteration), so a resumed run replays the exact trajectory
of an uninterrupted one.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .discriminator import (
    Discriminator,
    DiscriminatorConfig,
    min_input_dim,
    scale_weight_schedule,
)
from .errors import DegenerateTransform, NonFiniteLoss, ShapeError
from .generator import Generator, GeneratorConfig
from .geometry import OutputGeometry, compose, invert, perspective, shear, translate
from .spectral import power_iteration, spectral_normalize  # noqa: F401  (re-export)


@dataclass(frozen=True)
class CurriculumRanges:
    max_scale_dev: float = 0.35
    max_shift: float = 0.1
    max_perspective: float = 0.25
    max_shear: float = 0.25

    def __post_init__(self):
        for name in ("max_scale_dev", "max_shift", "max_perspective", "max_shear"):
            if getattr(self, name) < 0:
                raise ShapeError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class TrainConfig:
    lambda_reconst: float = 0.1
    iterations: int = 20000
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    lr_decay: str = "linear"
    crop_min: int = 192
    crop_max: int = 256
    batch_size: int = 1
    curriculum_iters: int = 10000
    transform_ranges: CurriculumRanges = field(default_factory=CurriculumRanges)
    ablate_reconst: bool = False
    ablate_multiscale: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.lambda_reconst < 0:
            raise ShapeError("lambda_reconst must be >= 0")
        if self.batch_size != 1:
            raise ShapeError("batch_size is fixed at 1")
        if self.crop_min > self.crop_max:
            raise ShapeError("crop_min must be <= crop_max")
        if self.curriculum_iters > max(self.iterations, 0):
            raise ShapeError("curriculum_iters must be <= iterations")
        if self.iterations < 0:
            raise ShapeError("iterations must be >= 0")


@dataclass(frozen=True)
class LossReport:
    l_gan_d: float
    l_gan_g: float
    l_reconst: float
    l_total: float
    iteration: int


def lsgan_d_loss(d_real_score: float, d_fake_score: float) -> float:
    """(d_real - 1)^2 + d_fake^2 over the (size-1) batch."""
    return (d_real_score - 1.0) ** 2 + d_fake_score**2


def lsgan_g_loss(d_fake_score: float) -> float:
    """(d_fake - 1)^2: the generator pushes fakes toward the real label."""
    return (d_fake_score - 1.0) ** 2


def reconst_loss(x: np.ndarray, x_rec: np.ndarray) -> float:
    """Mean absolute difference per element."""
    x = np.asarray(x)
    x_rec = np.asarray(x_rec)
    if x.shape != x_rec.shape:
        raise ShapeError(f"shape mismatch {x.shape} vs {x_rec.shape}")
    return float(np.mean(np.abs(x.astype(np.float64) - x_rec.astype(np.float64))))


def curriculum_ramp(iteration: int, curriculum_iters: int) -> float:
    """Fraction of the full transform range unlocked at this iteration."""
    if curriculum_iters <= 0:
        return 0.0 if iteration <= 0 else 1.0
    return min(max(iteration, 0) / curriculum_iters, 1.0)


def _snap_dim(value: float, multiple: int, min_dim: int) -> int:
    lo = ((min_dim + multiple - 1) // multiple) * multiple
    return max(int(round(value / multiple)) * multiple, lo, multiple)


def sample_transform(
    rng: np.random.Generator,
    ranges: CurriculumRanges,
    iteration: int,
    curriculum_iters: int,
    base_hw: tuple[int, int],
    min_dim: int = 1,
    dim_multiple: int = 1,
    max_tries: int = 100,
) -> OutputGeometry:
    """Random invertible output geometry within the ramped curriculum ranges.

    Output dims deviate from the base crop dims by at most the ramped scale
    deviation and snap to ``dim_multiple`` (the generator's 2^depth grid, so
    the synthesized image can feed the reconstruction pass). The matrix part
    carries shear/shift/perspective. At iteration 0 this returns the
    identity geometry at the crop's own dims.
    """
    r = curriculum_ramp(iteration, curriculum_iters)
    h, w = base_hw
    for _ in range(max_tries):
        sy = 1.0 + rng.uniform(-1.0, 1.0) * r * ranges.max_scale_dev
        sx = 1.0 + rng.uniform(-1.0, 1.0) * r * ranges.max_scale_dev
        oh = _snap_dim(h * sy, dim_multiple, min_dim)
        ow = _snap_dim(w * sx, dim_multiple, min_dim)
        kx = rng.uniform(-1.0, 1.0) * r * ranges.max_shear
        tx = rng.uniform(-1.0, 1.0) * r * ranges.max_shift
        ty = rng.uniform(-1.0, 1.0) * r * ranges.max_shift
        px = rng.uniform(-1.0, 1.0) * r * ranges.max_perspective
        py = rng.uniform(-1.0, 1.0) * r * ranges.max_perspective
        try:
            t = compose(translate(tx, ty), compose(shear(kx), perspective(px, py)))
            invert(t)
        except DegenerateTransform:
            continue
        return OutputGeometry(oh, ow, t)
    raise DegenerateTransform(f"no invertible transform in {max_tries} draws")


def dequantize(real_img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Add iid uniform noise in [0, 1/255) so 8-bit levels can't be detected."""
    noise = rng.random(real_img.shape, dtype=np.float64) / 255.0
    return (real_img.astype(np.float64) + noise).astype(real_img.dtype)


class Adam:
    def __init__(self, named_params, beta1=0.5, beta2=0.999, eps=1e-8):
        self.named_params = list(named_params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.named_params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.named_params}

    def step(self, lr: float):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, p in self.named_params:
            g = p.grad
            if g is None:
                continue
            g = g.astype(p.data.dtype, copy=False)
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for _, p in self.named_params:
            p.grad = None

    def state_blobs(self, prefix: str):
        out = [(f"{prefix}.step", np.array([self.t], dtype=np.float32))]
        for name, _ in self.named_params:
            out.append((f"{prefix}.m.{name}", self.m[name]))
            out.append((f"{prefix}.v.{name}", self.v[name]))
        return out

    def load_blobs(self, prefix: str, blobs: dict):
        self.t = int(blobs[f"{prefix}.step"][0])
        for name, _ in self.named_params:
            self.m[name][...] = blobs[f"{prefix}.m.{name}"]
            self.v[name][...] = blobs[f"{prefix}.v.{name}"]


def linear_lr(base: float, iteration: int, total: int) -> float:
    if total <= 0:
        return base
    return base * max(1.0 - iteration / total, 0.0)


def _check_finite(value: float, label: str, tensors: dict) -> None:
    if math.isfinite(value):
        return
    stats = {}
    for name, arr in tensors.items():
        a = np.asarray(arr, dtype=np.float64)
        stats[name] = {
            "min": float(np.nanmin(a)),
            "max": float(np.nanmax(a)),
            "mean": float(np.nanmean(a)),
            "nonfinite": int(np.size(a) - np.isfinite(a).sum()),
            "shape": list(a.shape),
        }
    raise NonFiniteLoss(f"{label} is not finite; tensor stats: {json.dumps(stats)}")


class TrainState:
    """Everything the loop mutates: both nets, both optimizers, iteration."""

    def __init__(self, g: Generator, d: Discriminator, cfg: TrainConfig):
        self.g = g
        self.d = d
        self.cfg = cfg
        self.opt_g = Adam(g.named_params())
        self.opt_d = Adam(d.named_params())
        self.iteration = 0


def _rng_for(seed: int, stream: int, iteration: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, iteration])


def train_step(state: TrainState, x: np.ndarray, iteration: int) -> LossReport:
    """One alternating D/G update on a single crop. Returns finite losses."""
    cfg = state.cfg
    g, d = state.g, state.d
    rng = _rng_for(cfg.seed, 1, iteration)
    h, w = x.shape[1], x.shape[2]
    geo = sample_transform(
        rng, cfg.transform_ranges, iteration, cfg.curriculum_iters, (h, w),
        min_dim=max(min_input_dim(d.config), 1 << g.config.depth),
        dim_multiple=1 << g.config.depth,
    )
    sw = scale_weight_schedule(iteration, cfg.curriculum_iters,
                               d.config.num_scales, d.config.schedule_sigma)
    lr_g = linear_lr(cfg.lr_g, iteration, cfg.iterations)
    lr_d = linear_lr(cfg.lr_d, iteration, cfg.iterations)

    y = g.forward(x, geo, training=True)

    # discriminator: real toward 1, detached fake toward 0
    real = dequantize(x, rng)
    s_real, _ = d.forward(real, sw, training=True)
    s_fake, _ = d.forward(y.detach(), sw, training=True)
    d_loss = ad.add(ad.square(ad.add_const(s_real, -1.0)), ad.square(s_fake))
    state.opt_d.zero_grad()
    state.opt_g.zero_grad()
    ad.backward(d_loss)
    state.opt_d.step(lr_d)

    # generator: fool the (updated) discriminator, reconstruct the source
    s_fake_g, _ = d.forward(y, sw, training=False, frozen=True)
    g_gan = ad.square(ad.add_const(s_fake_g, -1.0))
    if cfg.ablate_reconst:
        g_loss = g_gan
        l_rec = 0.0
    else:
        geo_inv = OutputGeometry(h, w, invert(geo.transform))
        x_rec = g.forward(y, geo_inv, training=True)
        rec = ad.l1_loss(x_rec, Var(x))
        g_loss = ad.add(g_gan, ad.scale_(rec, cfg.lambda_reconst))
        l_rec = rec.item()
    state.opt_g.zero_grad()
    state.opt_d.zero_grad()
    ad.backward(g_loss)
    state.opt_g.step(lr_g)

    l_gan_d = d_loss.item()
    l_gan_g = g_gan.item()
    tensors = {"y": y.data, "x": x}
    _check_finite(l_gan_d, "l_gan_d", tensors)
    _check_finite(l_gan_g, "l_gan_g", tensors)
    _check_finite(l_rec, "l_reconst", tensors)
    return LossReport(
        l_gan_d=l_gan_d,
        l_gan_g=l_gan_g,
        l_reconst=l_rec,
        l_total=l_gan_g + cfg.lambda_reconst * l_rec,
        iteration=iteration,
    )


def sample_crop(rng: np.random.Generator, image: np.ndarray, cfg: TrainConfig,
                depth: int, min_side: int) -> np.ndarray:
    """Square crop with side uniform in [crop_min, crop_max], rounded down
    to 2^depth divisibility and clamped to the image."""
    step = 1 << depth
    h, w = image.shape[1], image.shape[2]
    hi = min(cfg.crop_max, h, w)
    lo = min(cfg.crop_min, hi)
    side = int(rng.integers(lo, hi + 1))
    side = max((side // step) * step, max(step, (min_side + step - 1) // step * step))
    side = min(side, (hi // step) * step)
    top = int(rng.integers(0, h - side + 1))
    left = int(rng.integers(0, w - side + 1))
    return np.ascontiguousarray(image[:, top : top + side, left : left + side])


def pad_to_multiple(image: np.ndarray, multiple: int, minimum: int = 0) -> np.ndarray:
    """Reflect-pad (C,H,W) on the bottom/right to divisibility and a floor size."""
    h, w = image.shape[1], image.shape[2]
    th = max(h, minimum)
    tw = max(w, minimum)
    th = (th + multiple - 1) // multiple * multiple
    tw = (tw + multiple - 1) // multiple * multiple
    while image.shape[1] < th or image.shape[2] < tw:
        # np.pad reflect caps pad width at dim-1 per call; loop covers tiny inputs
        ph = min(th - image.shape[1], image.shape[1] - 1)
        pw = min(tw - image.shape[2], image.shape[2] - 1)
        if ph == 0 and pw == 0:
            raise ShapeError(f"cannot reflect-pad {image.shape} to {th}x{tw}")
        image = np.pad(image, ((0, 0), (0, ph), (0, pw)), mode="reflect")
    return image


class TelemetryWriter:
    """Line-delimited JSON loss records; one object per logged iteration."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w", encoding="utf-8") if path else None

    def write(self, report: LossReport, lr_g: float, lr_d: float, ramp: float,
              ranges: CurriculumRanges):
        if self._fh is None:
            return
        rec = {
            "iteration": report.iteration,
            "l_gan_d": report.l_gan_d,
            "l_gan_g": report.l_gan_g,
            "l_reconst": report.l_reconst,
            "l_total": report.l_total,
            "lr_g": lr_g,
            "lr_d": lr_d,
            "range_scale_dev": ramp * ranges.max_scale_dev,
            "range_shift": ramp * ranges.max_shift,
            "range_perspective": ramp * ranges.max_perspective,
            "range_shear": ramp * ranges.max_shear,
        }
        self._fh.write(json.dumps(rec) + "\n")
        self._fh.flush()

    def close(self):
        if self._fh:
            self._fh.close()
            self._fh = None


def build_models(train_cfg: TrainConfig, gen_cfg: GeneratorConfig,
                 disc_cfg: DiscriminatorConfig) -> TrainState:
    if train_cfg.ablate_multiscale:
        disc_cfg = replace(disc_cfg, num_scales=1)
    rng = _rng_for(train_cfg.seed, 0, 0)
    g = Generator(gen_cfg, rng)
    d = Discriminator(disc_cfg, rng)
    return TrainState(g, d, train_cfg)


def train(
    image: np.ndarray,
    cfg: TrainConfig,
    gen_cfg: GeneratorConfig | None = None,
    disc_cfg: DiscriminatorConfig | None = None,
    telemetry_path=None,
    snapshot_every: int = 0,
    snapshot_fn=None,
    log_every: int = 1,
    state: TrainState | None = None,
    start_iteration: int = 0,
) -> TrainState:
    """Run the full loop on a (3,H,W) float image in [0,1].

    ``state``/``start_iteration`` resume a loaded checkpoint; otherwise
    models are initialized from the config seed. ``snapshot_fn(state, it,
    padded_image)`` is invoked every ``snapshot_every`` completed iterations
    and once more when the loop ends.
    """
    gen_cfg = gen_cfg or GeneratorConfig()
    disc_cfg = disc_cfg or DiscriminatorConfig()
    if state is None:
        state = build_models(cfg, gen_cfg, disc_cfg)
    g_depth = state.g.config.depth
    min_side = max(min_input_dim(state.d.config), 1 << g_depth)
    image = pad_to_multiple(
        np.ascontiguousarray(image, dtype=np.float32),
        1 << g_depth,
        minimum=max(min(cfg.crop_min, max(image.shape[1], image.shape[2])), min_side),
    )
    writer = TelemetryWriter(telemetry_path)
    try:
        for it in range(start_iteration, cfg.iterations):
            rng = _rng_for(cfg.seed, 2, it)
            crop = sample_crop(rng, image, cfg, g_depth, min_side)
            report = train_step(state, crop, it)
            state.iteration = it + 1
            ramp = curriculum_ramp(it, cfg.curriculum_iters)
            if log_every and (it % log_every == 0 or it == cfg.iterations - 1):
                writer.write(report, linear_lr(cfg.lr_g, it, cfg.iterations),
                             linear_lr(cfg.lr_d, it, cfg.iterations), ramp,
                             cfg.transform_ranges)
            if snapshot_every and snapshot_fn and state.iteration % snapshot_every == 0:
                snapshot_fn(state, state.iteration, image)
        if snapshot_fn:
            snapshot_fn(state, state.iteration, image)
    finally:
        writer.close()
    return state
