"""Gradient checks for every autodiff op against central finite differences."""

import numpy as np
import pytest

from patchforge import autodiff as ad
from patchforge.autodiff import Param, Var
from patchforge.errors import ShapeError
from patchforge.geometry import OutputGeometry, perspective, sample_grid, shear, compose


def numeric_grad(loss_fn, x, eps=1e-6):
    g = np.zeros_like(x)
    flat, gf = x.ravel(), g.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = loss_fn()
        flat[i] = old - eps
        down = loss_fn()
        flat[i] = old
        gf[i] = (up - down) / (2 * eps)
    return g


def check_grads(build, arrays, tol=1e-6):
    """build(vars) -> scalar Var; arrays: dict name -> float64 ndarray."""
    params = {k: Param(v) for k, v in arrays.items()}
    loss = build(params)
    ad.backward(loss)
    for name, arr in arrays.items():
        analytic = params[name].grad
        assert analytic is not None, f"no grad for {name}"

        def loss_value():
            fresh = {k: Param(v) for k, v in arrays.items()}
            return float(build(fresh).data)

        numeric = numeric_grad(loss_value, arr)
        scale = max(np.max(np.abs(numeric)), 1.0)
        err = np.max(np.abs(analytic - numeric)) / scale
        assert err < tol, f"{name}: rel err {err:.3e}"


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def proj_loss(out: Var, seed=0) -> Var:
    r = np.random.default_rng(seed).random(out.data.shape)
    return ad.vsum(ad.mul(out, Var(r)))


class TestElementwise:
    def test_add_sub_mul(self, rng):
        a = rng.random((3, 4))
        b = rng.random((3, 4))
        check_grads(lambda p: proj_loss(ad.mul(ad.add(p["a"], p["b"]),
                                               ad.sub(p["a"], p["b"]))),
                    {"a": a, "b": b})

    def test_square_scale_add_const(self, rng):
        a = rng.random((5,))
        check_grads(lambda p: proj_loss(ad.square(ad.scale_(ad.add_const(p["a"], 0.3), 1.7))),
                    {"a": a})

    def test_mean_and_sum(self, rng):
        a = rng.random((4, 6))
        check_grads(lambda p: ad.mean(p["a"]), {"a": a})
        check_grads(lambda p: ad.vsum(ad.square(p["a"])), {"a": a})

    def test_div_by_scalar(self, rng):
        a = rng.random((4, 4)) + 0.5
        s = rng.random((1,)) + 1.0

        def build(p):
            sig = ad.vsum(ad.mul(p["s"], Var(np.ones(1))))
            return proj_loss(ad.div_by_scalar(p["a"], sig))

        check_grads(build, {"a": a, "s": s})

    def test_l1_loss(self, rng):
        a = rng.random((3, 5)) + 1.0
        b = rng.random((3, 5)) - 1.0  # keep |a-b| away from the kink
        check_grads(lambda p: ad.l1_loss(p["a"], p["b"]), {"a": a, "b": b})

    def test_l1_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ad.l1_loss(Var(np.zeros((2, 2))), Var(np.zeros((2, 3))))

    def test_leaky_relu(self, rng):
        a = rng.random((4, 4)) - 0.5
        a[np.abs(a) < 0.05] = 0.2  # avoid the kink
        check_grads(lambda p: proj_loss(ad.leaky_relu(p["a"], 0.2)), {"a": a})

    def test_sigmoid(self, rng):
        a = rng.standard_normal((3, 4))
        check_grads(lambda p: proj_loss(ad.sigmoid(p["a"])), {"a": a})


class TestStructural:
    def test_concat_channels(self, rng):
        a = rng.random((2, 3, 3))
        b = rng.random((4, 3, 3))
        check_grads(lambda p: proj_loss(ad.concat_channels(p["a"], p["b"])),
                    {"a": a, "b": b})

    def test_maxpool2(self, rng):
        a = rng.random((2, 6, 8))
        check_grads(lambda p: proj_loss(ad.maxpool2(p["a"])), {"a": a})

    def test_maxpool2_odd_dims_rejected(self):
        with pytest.raises(ShapeError):
            ad.maxpool2(Var(np.zeros((1, 5, 4))))

    def test_upsample_nearest_exact_double(self, rng):
        a = rng.random((2, 3, 5))
        check_grads(lambda p: proj_loss(ad.upsample_nearest(p["a"], (6, 10))),
                    {"a": a})

    def test_upsample_nearest_fractional(self, rng):
        a = rng.random((1, 4, 3))
        check_grads(lambda p: proj_loss(ad.upsample_nearest(p["a"], (7, 8))),
                    {"a": a})

    def test_upsample_nearest_replicates(self):
        a = np.arange(6, dtype=np.float64).reshape(1, 2, 3)
        out = ad.upsample_nearest(Var(a), (4, 6)).data
        want = np.repeat(np.repeat(a[0], 2, axis=0), 2, axis=1)
        assert np.array_equal(out[0], want)

    def test_upsample_cannot_shrink(self):
        with pytest.raises(ShapeError):
            ad.upsample_nearest(Var(np.zeros((1, 4, 4))), (3, 8))

    def test_area_resize(self, rng):
        a = rng.random((2, 7, 9))
        check_grads(lambda p: proj_loss(ad.area_resize(p["a"], (5, 6))), {"a": a})

    def test_area_resize_preserves_mean(self, rng):
        a = rng.random((1, 12, 12))
        out = ad.area_resize(Var(a), (6, 6)).data
        assert abs(out.mean() - a.mean()) < 1e-12

    def test_warp_zero_and_edge(self, rng):
        a = rng.random((2, 6, 6))
        geo = OutputGeometry(5, 7, compose(shear(0.15), perspective(0.08, -0.1)))
        py, px = sample_grid(geo, 6, 6)
        for edge in (False, True):
            check_grads(lambda p: proj_loss(ad.warp(p["a"], py, px, edge)), {"a": a})


class TestConv:
    def test_conv_reflect_stride1(self, rng):
        x = rng.random((3, 6, 6))
        w = rng.standard_normal((4, 3, 3, 3)) * 0.3
        b = rng.standard_normal(4) * 0.1
        check_grads(
            lambda p: proj_loss(ad.conv2d(p["x"], p["w"], p["b"], 1, 1, "reflect")),
            {"x": x, "w": w, "b": b}, tol=1e-5)

    def test_conv_zero_stride2(self, rng):
        x = rng.random((2, 8, 8))
        w = rng.standard_normal((3, 2, 3, 3)) * 0.3
        b = rng.standard_normal(3) * 0.1
        check_grads(
            lambda p: proj_loss(ad.conv2d(p["x"], p["w"], p["b"], 2, 1, "zero")),
            {"x": x, "w": w, "b": b}, tol=1e-5)

    def test_conv_no_pad(self, rng):
        x = rng.random((1, 5, 5))
        w = rng.standard_normal((2, 1, 3, 3))
        check_grads(
            lambda p: proj_loss(ad.conv2d(p["x"], p["w"], None, 1, 0, "zero")),
            {"x": x, "w": w}, tol=1e-5)

    def test_conv_shapes(self, rng):
        x = Var(rng.random((3, 10, 12)))
        w = Var(rng.standard_normal((5, 3, 3, 3)))
        b = Var(np.zeros(5))
        assert ad.conv2d(x, w, b, 1, 1, "reflect").data.shape == (5, 10, 12)
        assert ad.conv2d(x, w, b, 2, 1, "zero").data.shape == (5, 5, 6)


class TestBatchNorm:
    def test_training_mode_grads(self, rng):
        x = rng.random((3, 4, 5)) * 2.0
        gamma = rng.random(3) + 0.5
        beta = rng.standard_normal(3) * 0.2

        def build(p):
            rm = np.zeros(3, dtype=np.float64)
            rv = np.ones(3, dtype=np.float64)
            return proj_loss(ad.batchnorm(p["x"], p["g"], p["b"], rm, rv, True))

        check_grads(build, {"x": x, "g": gamma, "b": beta}, tol=1e-5)

    def test_eval_mode_grads(self, rng):
        x = rng.random((2, 4, 4))
        gamma = rng.random(2) + 0.5
        beta = rng.standard_normal(2) * 0.2
        rm = rng.random(2)
        rv = rng.random(2) + 0.5

        def build(p):
            return proj_loss(ad.batchnorm(p["x"], p["g"], p["b"], rm.copy(),
                                          rv.copy(), False))

        check_grads(build, {"x": x, "g": gamma, "b": beta}, tol=1e-5)

    def test_running_stats_update(self, rng):
        x = rng.random((2, 8, 8))
        rm = np.zeros(2, dtype=np.float64)
        rv = np.ones(2, dtype=np.float64)
        ad.batchnorm(Var(x), Var(np.ones(2)), Var(np.zeros(2)), rm, rv, True)
        mu = x.reshape(2, -1).mean(axis=1)
        assert np.allclose(rm, 0.1 * mu, atol=1e-12)

    def test_training_output_normalized(self, rng):
        x = rng.random((2, 10, 10))
        out = ad.batchnorm(Var(x), Var(np.ones(2)), Var(np.zeros(2)),
                           np.zeros(2), np.ones(2), True).data
        assert np.allclose(out.reshape(2, -1).mean(axis=1), 0.0, atol=1e-10)
        assert np.allclose(out.reshape(2, -1).std(axis=1), 1.0, atol=1e-3)


class TestBackwardMechanics:
    def test_grad_accumulates_on_reuse(self, rng):
        a = Param(rng.random((3,)))
        loss = ad.add(ad.vsum(ad.square(a)), ad.vsum(a))
        ad.backward(loss)
        assert np.allclose(a.grad, 2 * a.data + 1)

    def test_scalar_loss_required(self):
        v = Param(np.ones((2, 2)))
        with pytest.raises(ShapeError):
            ad.backward(ad.square(v))

    def test_detach_blocks_gradient(self, rng):
        a = Param(rng.random((3,)))
        loss = ad.vsum(ad.square(a.detach()))
        assert not loss.requires_grad
