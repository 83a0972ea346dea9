"""Homography algebra and warp layer tests.

Oracles: extended-precision (long double) matrix products, a test-local
Gauss-Jordan inverse, an independent 8x8 least-squares solve for corner
correspondences, and central finite differences for the warp gradient.
"""

import numpy as np
import pytest

from patchforge import autodiff as ad
from patchforge.errors import DegenerateTransform, ShapeError
from patchforge.geometry import (
    Homography,
    OutputGeometry,
    apply,
    compose,
    from_corners,
    identity,
    invert,
    perspective,
    sample_grid,
    scale,
    shear,
    translate,
    warp,
)

UNIT_SQUARE = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]


def random_homography(rng):
    m = np.eye(3)
    m[0, 0], m[1, 1] = rng.uniform(0.5, 2.0, size=2)
    m[0, 1], m[1, 0] = rng.uniform(-0.3, 0.3, size=2)
    m[0, 2], m[1, 2] = rng.uniform(-0.4, 0.4, size=2)
    m[2, 0], m[2, 1] = rng.uniform(-0.2, 0.2, size=2)
    return Homography(m)


def gauss_jordan_inverse(m):
    n = m.shape[0]
    aug = np.concatenate([m.astype(np.float64).copy(), np.eye(n)], axis=1)
    for col in range(n):
        pivot = col + np.argmax(np.abs(aug[col:, col]))
        aug[[col, pivot]] = aug[[pivot, col]]
        aug[col] /= aug[col, col]
        for row in range(n):
            if row != col:
                aug[row] -= aug[row, col] * aug[col]
    return aug[:, n:]


class TestHomographyAlgebra:
    def test_identity_matrix(self):
        assert np.array_equal(identity().m, np.eye(3))

    def test_identity_laws(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            h = random_homography(rng)
            assert compose(identity(), h) == h
            assert compose(h, identity()) == h
        assert invert(identity()) == identity()

    def test_translations_cancel(self):
        assert compose(translate(0.1, 0.0), translate(-0.1, 0.0)) == identity()

    def test_scales_cancel(self):
        assert compose(scale(2.0), scale(0.5)) == identity()

    def test_compose_matches_extended_precision_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            a, b = random_homography(rng), random_homography(rng)
            got = compose(a, b).m
            prod = a.m.astype(np.longdouble) @ b.m.astype(np.longdouble)
            want = (prod / prod[2, 2]).astype(np.float64)
            assert np.max(np.abs(got - want)) < 1e-12

    def test_invert_diagonal(self):
        got = invert(Homography(np.diag([2.0, 1.0, 1.0])))
        assert np.allclose(got.m, np.diag([0.5, 1.0, 1.0]), atol=1e-15)

    def test_invert_roundtrip_1000(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            h = random_homography(rng)
            err = np.max(np.abs(compose(h, invert(h)).m - np.eye(3)))
            assert err < 1e-9

    def test_invert_matches_gauss_jordan_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(200):
            h = random_homography(rng)
            want = gauss_jordan_inverse(h.m)
            want /= want[2, 2]
            assert np.max(np.abs(invert(h).m - want)) < 1e-9

    def test_canonical_form(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            h = random_homography(rng)
            assert h.m[2, 2] == 1.0
            assert compose(h, h).m[2, 2] == 1.0
            assert invert(h).m[2, 2] == 1.0

    def test_singular_rejected(self):
        with pytest.raises(DegenerateTransform):
            Homography(np.array([[1.0, 0, 0], [2.0, 0, 0], [0, 0, 1.0]]))

    def test_compose_degenerate(self):
        a = Homography(np.diag([1e-5, 1e-3, 1.0]))  # det 1e-8: valid alone
        with pytest.raises(DegenerateTransform):
            compose(a, a)  # det 1e-16: rejected


class TestFromCorners:
    def test_unit_square_identity(self):
        h = from_corners(UNIT_SQUARE, UNIT_SQUARE)
        assert np.max(np.abs(h.m - np.eye(3))) < 1e-12

    def test_pure_translation(self):
        dst = [(x + 0.5, y) for x, y in UNIT_SQUARE]
        h = from_corners(UNIT_SQUARE, dst)
        want = translate(0.5, 0.0).m
        assert np.max(np.abs(h.m - want)) < 1e-9

    def test_random_quads_match_lstsq_oracle(self):
        rng = np.random.default_rng(23)
        for _ in range(100):
            jitter = rng.uniform(-0.3, 0.3, size=(4, 2))
            src = np.array(UNIT_SQUARE)
            dst = src + jitter
            h = from_corners(src, dst)
            # independent least-squares solve of the 8x8 linear system
            a = np.zeros((8, 8))
            b = np.zeros(8)
            for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
                a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
                a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
                b[2 * i] = u
                b[2 * i + 1] = v
            sol, *_ = np.linalg.lstsq(a, b, rcond=None)
            want = np.append(sol, 1.0).reshape(3, 3)
            want /= want[2, 2]
            assert np.max(np.abs(h.m - want)) < 1e-8
            reproj = apply(h, src) - dst
            assert np.max(np.abs(reproj)) < 1e-9

    def test_collinear_rejected(self):
        src = [(0.0, 0.0), (0.5, 0.5), (1.0, 1.0), (1.0, 0.0)]
        with pytest.raises(DegenerateTransform):
            from_corners(src, UNIT_SQUARE)
        with pytest.raises(DegenerateTransform):
            from_corners(UNIT_SQUARE, src)


class TestOutputGeometry:
    def test_dims_validated(self):
        with pytest.raises(ShapeError):
            OutputGeometry(0, 4)
        with pytest.raises(ShapeError):
            OutputGeometry(4, -1)

    def test_default_transform_is_identity(self):
        assert OutputGeometry(4, 4).transform == identity()


class TestWarp:
    def test_identity_same_dims_exact(self):
        rng = np.random.default_rng(1)
        img = rng.random((3, 8, 12), dtype=np.float64)
        out = warp(img, OutputGeometry(8, 12))
        assert np.array_equal(out, img)

    def test_constant_image_in_bounds(self):
        img = np.full((2, 16, 16), 0.625, dtype=np.float64)
        geo = OutputGeometry(16, 16, compose(scale(0.5), translate(0.1, 0.05)))
        out = warp(img, geo)
        assert np.allclose(out, 0.625, atol=1e-12)

    def test_shape_contract(self):
        rng = np.random.default_rng(2)
        img = rng.random((3, 10, 10))
        for hh, ww in [(1, 1), (5, 17), (20, 3), (10, 10)]:
            assert warp(img, OutputGeometry(hh, ww)).shape == (3, hh, ww)

    def test_out_of_bounds_zero(self):
        img = np.ones((1, 8, 8))
        out = warp(img, OutputGeometry(8, 8, scale(4.0)))  # samples far outside
        assert out[0, 0, 0] == 0.0
        assert out[0, -1, -1] == 0.0

    def test_out_of_bounds_edge_clamps(self):
        img = np.ones((1, 8, 8))
        out = warp(img, OutputGeometry(8, 8, scale(4.0)), pad="edge")
        assert np.allclose(out, 1.0)

    def test_linearity(self):
        rng = np.random.default_rng(3)
        a = rng.random((2, 9, 9))
        b = rng.random((2, 9, 9))
        geo = OutputGeometry(13, 7, compose(shear(0.2), perspective(0.1, -0.05)))
        lhs = warp(0.7 * a + 1.3 * b, geo)
        rhs = 0.7 * warp(a, geo) + 1.3 * warp(b, geo)
        assert np.max(np.abs(lhs - rhs)) < 1e-6

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            h = random_homography(rng)
            geo = OutputGeometry(int(rng.integers(4, 12)), int(rng.integers(4, 12)), h)
            x = rng.random((2, 8, 8))
            py, px = sample_grid(geo, 8, 8)
            proj = rng.random((2, geo.height, geo.width))

            def loss_value(arr):
                return float(np.sum(warp(arr, geo) * proj))

            xv = ad.Var(x.copy(), requires_grad=True)
            out = ad.warp(xv, py, px, False)
            loss = ad.vsum(ad.mul(out, ad.Var(proj)))
            ad.backward(loss)
            analytic = xv.grad

            eps = 1e-3
            flat = x.ravel()
            numeric = np.zeros_like(flat)
            for i in range(flat.size):
                old = flat[i]
                flat[i] = old + eps
                up = loss_value(x)
                flat[i] = old - eps
                down = loss_value(x)
                flat[i] = old
                numeric[i] = (up - down) / (2 * eps)
            numeric = numeric.reshape(x.shape)
            denom = max(np.max(np.abs(numeric)), 1e-12)
            rel = np.max(np.abs(analytic - numeric)) / denom
            assert rel < 1e-4
