"""Multi-scale discriminator: pyramid geometry, pooling oracle, schedule."""

import math

import numpy as np
import pytest

from patchforge.autodiff import Var
from patchforge.discriminator import (
    Discriminator,
    DiscriminatorConfig,
    head_receptive_field,
    min_input_dim,
    pyramid_dims,
    scale_weight_schedule,
)
from patchforge.errors import ShapeError

SMALL = DiscriminatorConfig(num_scales=3, channels=8)


def make_disc(cfg=SMALL, seed=3):
    return Discriminator(cfg, np.random.default_rng(seed))


def reference_box_resize(img, out_hw):
    """Independent area resampler: per-pixel interval-overlap accumulation."""
    c, h, w = img.shape
    oh, ow = out_hw
    out = np.zeros((c, oh, ow), dtype=np.float64)
    for ci in range(c):
        for i in range(oh):
            y0, y1 = i * h / oh, (i + 1) * h / oh
            for j in range(ow):
                x0, x1 = j * w / ow, (j + 1) * w / ow
                acc = 0.0
                area = 0.0
                for yy in range(int(math.floor(y0)), min(int(math.ceil(y1)), h)):
                    wy = min(y1, yy + 1) - max(y0, yy)
                    for xx in range(int(math.floor(x0)), min(int(math.ceil(x1)), w)):
                        wx = min(x1, xx + 1) - max(x0, xx)
                        acc += wy * wx * img[ci, yy, xx]
                        area += wy * wx
                out[ci, i, j] = acc / area
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12)


class TestPyramid:
    def test_dims_follow_sqrt2_rule(self):
        cfg = DiscriminatorConfig(num_scales=5, channels=8)
        dims = pyramid_dims(64, 96, cfg)
        for i, (h, w) in enumerate(dims):
            f = math.sqrt(2.0) ** i
            assert h == math.ceil(64 / f)
            assert w == math.ceil(96 / f)

    def test_head_receptive_field(self):
        # 4 convs of 3x3, first strided: 3 + 3*(2*2) = 15
        assert head_receptive_field(SMALL) == 15

    def test_too_small_input_rejected(self, rng):
        d = make_disc()
        img = rng.random((3, 16, 16), dtype=np.float32)  # coarsest level ~8 < 15
        with pytest.raises(ShapeError):
            d.forward(img, np.full(3, 1 / 3))

    def test_min_input_dim(self):
        d = make_disc()
        assert min_input_dim(SMALL) == math.ceil(15 * math.sqrt(2.0) ** 2)
        img = np.random.default_rng(0).random(
            (3, min_input_dim(SMALL), min_input_dim(SMALL)), dtype=np.float32)
        d.forward(img, np.full(3, 1 / 3))  # must not raise


class TestForward:
    def test_one_hot_constant_head(self, rng):
        """Force head k to output a constant c; one-hot weights pick it out."""
        d = make_disc()
        k, c = 1, 0.7
        head = d.heads[k]
        for conv in head.convs:
            conv.w.data[...] = 0.0
            conv.b.data[...] = 0.0
        head.convs[-1].b.data[...] = c
        weights = np.zeros(3)
        weights[k] = 1.0
        img = rng.random((3, 40, 40), dtype=np.float32)
        score, maps = d.score(img, weights)
        assert abs(score - c) < 1e-6
        assert np.allclose(maps[k], c)

    def test_uniform_weights_constant_maps(self, rng):
        d = make_disc()
        c = -0.25
        for head in d.heads:
            for conv in head.convs:
                conv.w.data[...] = 0.0
                conv.b.data[...] = 0.0
            head.convs[-1].b.data[...] = c
        img = rng.random((3, 40, 40), dtype=np.float32)
        score, _ = d.score(img, np.full(3, 1 / 3))
        assert abs(score - c) < 1e-6

    def test_score_matches_explicit_pyramid_oracle(self, rng):
        d = make_disc()
        img = rng.random((3, 36, 44), dtype=np.float32)
        weights = np.array([0.2, 0.3, 0.5])
        score, _ = d.score(img, weights)

        dims = pyramid_dims(36, 44, SMALL)
        total = 0.0
        for i, head in enumerate(d.heads):
            level = img.astype(np.float64) if i == 0 else reference_box_resize(
                img.astype(np.float64), dims[i])
            m = head(Var(level.astype(np.float32))).data
            total += weights[i] * float(m.mean())
        assert abs(score - total) < 1e-5

    def test_no_weight_sharing(self, rng):
        d = make_disc()
        img = rng.random((3, 40, 40), dtype=np.float32)
        w = np.full(3, 1 / 3)
        _, maps_before = d.score(img, w)
        d.heads[0].convs[1].w.data[...] += 0.5  # mutate scale-0 head only
        _, maps_after = d.score(img, w)
        assert not np.array_equal(maps_before[0], maps_after[0])
        for j in (1, 2):
            assert np.array_equal(maps_before[j], maps_after[j])

    def test_share_weights_rejected(self):
        with pytest.raises(ShapeError):
            DiscriminatorConfig(share_weights=True)

    def test_last_conv_has_no_spectral_norm(self):
        d = make_disc()
        for head in d.heads:
            assert head.convs[-1].sn is False and head.convs[-1].u is None
            for conv in head.convs[:-1]:
                assert conv.sn is True

    def test_map_locality_probe(self, rng):
        """Each map value depends only on a bounded patch at its scale."""
        cfg = DiscriminatorConfig(num_scales=1, channels=8)
        d = make_disc(cfg)
        img = rng.random((3, 48, 48), dtype=np.float32)
        _, maps = d.score(img, np.ones(1))
        img2 = img.copy()
        img2[:, 24, 24] += 0.5
        _, maps2 = d.score(img2, np.ones(1))
        changed = np.any(maps[0] != maps2[0], axis=0)
        ys, xs = np.nonzero(changed)
        assert len(ys) > 0
        # stride-2 first conv halves resolution: diameter 15 covers <= 8 cells
        assert ys.max() - ys.min() + 1 <= 8
        assert xs.max() - xs.min() + 1 <= 8


class TestSchedule:
    def test_iteration_zero_coarsest_dominates(self):
        w = scale_weight_schedule(0, 10000, 5)
        assert w[-1] >= 0.9
        assert abs(w.sum() - 1.0) < 1e-9

    def test_single_scale(self):
        for it in (0, 1, 5000, 10**6):
            assert np.array_equal(scale_weight_schedule(it, 10000, 1), [1.0])

    def test_sweep_normalized_nonnegative(self):
        for it in range(0, 10000, 7):
            w = scale_weight_schedule(it, 10000, 5)
            assert abs(w.sum() - 1.0) < 1e-9
            assert np.all(w >= 0)

    def test_monotone_shift(self):
        prev_coarse, prev_fine = None, None
        for it in range(0, 12001, 400):
            w = scale_weight_schedule(it, 10000, 4)
            if prev_coarse is not None:
                assert w[-1] <= prev_coarse + 1e-12
                assert w[0] >= prev_fine - 1e-12
            prev_coarse, prev_fine = w[-1], w[0]

    def test_finest_dominates_after_curriculum(self):
        w = scale_weight_schedule(10000, 10000, 5)
        assert w[0] > 0.5
        assert np.array_equal(w, scale_weight_schedule(99999, 10000, 5))
