"""Backend equivalence: the numba kernels and the pure-numpy fallback must
implement identical semantics, and each must be deterministic run to run."""

import numpy as np
import pytest

from patchforge.kernels import _numba as nb
from patchforge.kernels import _numpy as npk
from patchforge import kernels
from patchforge.geometry import OutputGeometry, compose, perspective, sample_grid, shear

BACKENDS = {"numba": nb, "numpy": npk}


@pytest.fixture
def rng():
    return np.random.default_rng(99)


def both(fn_name, *args):
    return [getattr(mod, fn_name)(*args) for mod in BACKENDS.values()]


class TestConvAgreement:
    @pytest.mark.parametrize("stride", [1, 2])
    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_fwd(self, rng, stride, dtype):
        x = rng.random((5, 12, 14)).astype(dtype)
        w = rng.standard_normal((7, 5, 3, 3)).astype(dtype)
        a, b = both("conv2d_fwd", x, w, stride)
        assert a.shape == b.shape
        np.testing.assert_allclose(a, b, rtol=1e-5, atol=1e-6)

    @pytest.mark.parametrize("stride", [1, 2])
    def test_bwd_input(self, rng, stride):
        x_shape = (4, 11, 13)
        w = rng.standard_normal((6, 4, 3, 3)).astype(np.float32)
        ho = (x_shape[1] - 3) // stride + 1
        wo = (x_shape[2] - 3) // stride + 1
        dy = rng.random((6, ho, wo)).astype(np.float32)
        a, b = both("conv2d_bwd_input", dy, w, x_shape, stride)
        np.testing.assert_allclose(a, b, rtol=1e-5, atol=1e-6)

    @pytest.mark.parametrize("stride", [1, 2])
    def test_bwd_weight(self, rng, stride):
        x = rng.random((4, 11, 13)).astype(np.float32)
        ho = (11 - 3) // stride + 1
        wo = (13 - 3) // stride + 1
        dy = rng.random((6, ho, wo)).astype(np.float32)
        a, b = both("conv2d_bwd_weight", dy, x, 3, 3, stride)
        np.testing.assert_allclose(a, b, rtol=1e-4, atol=1e-5)


class TestWarpAgreement:
    @pytest.mark.parametrize("edge", [False, True])
    def test_fwd_bwd(self, rng, edge):
        feat = rng.random((3, 9, 9)).astype(np.float32)
        geo = OutputGeometry(7, 11, compose(shear(0.2), perspective(0.1, -0.15)))
        py, px = sample_grid(geo, 9, 9)
        a, b = both("warp_fwd", feat, py, px, edge)
        np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-7)
        dy = rng.random((3, 7, 11)).astype(np.float32)
        ga, gb = both("warp_bwd", dy, py, px, 9, 9, edge)
        np.testing.assert_allclose(ga, gb, rtol=1e-6, atol=1e-7)


class TestMaxPoolAgreement:
    def test_random(self, rng):
        x = rng.random((4, 10, 12)).astype(np.float32)
        (ya, aa), (yb, ab) = both("maxpool2_fwd", x)
        np.testing.assert_array_equal(ya, yb)
        np.testing.assert_array_equal(aa, ab)
        dy = rng.random(ya.shape).astype(np.float32)
        da, db = both("maxpool2_bwd", dy, aa, 10, 12)
        np.testing.assert_array_equal(da, db)

    def test_tie_break_first(self):
        x = np.zeros((1, 2, 2), dtype=np.float32)  # all equal: first cell wins
        for mod in BACKENDS.values():
            y, arg = mod.maxpool2_fwd(x)
            assert arg[0, 0, 0] == 0
            dx = mod.maxpool2_bwd(np.ones((1, 1, 1), dtype=np.float32), arg, 2, 2)
            assert dx[0, 0, 0] == 1.0 and dx.sum() == 1.0


class TestLeakyAgreement:
    def test_fwd_bwd(self, rng):
        x = (rng.random((3, 5, 7)) - 0.5).astype(np.float32)
        a, b = both("leaky_fwd", x, 0.2)
        np.testing.assert_array_equal(a, b)
        g = rng.random(x.shape).astype(np.float32)
        da, db = both("leaky_bwd", g, x, 0.2)
        np.testing.assert_array_equal(da, db)


class TestPatchSearch:
    def test_matches_bruteforce(self, rng):
        a = rng.random((40, 12))
        b = rng.random((25, 12))
        brute = np.array([min(float(((pa - pb) ** 2).sum()) for pb in b) for pa in a])
        for name, mod in BACKENDS.items():
            got = mod.patch_min_sqdists(a, b)
            np.testing.assert_allclose(got, brute, rtol=1e-10, atol=1e-12,
                                       err_msg=name)

    def test_backends_agree(self, rng):
        a = rng.random((200, 48))
        b = rng.random((150, 48))
        ra, rb = both("patch_min_sqdists", a, b)
        np.testing.assert_allclose(ra, rb, rtol=1e-10, atol=1e-12)


class TestDeterminism:
    def test_each_backend_bitwise_stable(self, rng):
        x = rng.random((4, 16, 16)).astype(np.float32)
        w = rng.standard_normal((8, 4, 3, 3)).astype(np.float32)
        geo = OutputGeometry(13, 9, shear(0.1))
        py, px = sample_grid(geo, 16, 16)
        for mod in BACKENDS.values():
            assert np.array_equal(mod.conv2d_fwd(x, w, 1), mod.conv2d_fwd(x, w, 1))
            assert np.array_equal(mod.warp_fwd(x, py, px, False),
                                  mod.warp_fwd(x, py, px, False))


class TestDispatcher:
    def test_env_selection(self):
        prev = kernels.get_backend()
        try:
            kernels.set_backend("numpy")
            assert kernels.get_backend() == "numpy"
            x = np.ones((1, 4, 4), dtype=np.float32)
            w = np.ones((1, 1, 3, 3), dtype=np.float32)
            assert kernels.conv2d_fwd(x, w, 1).shape == (1, 2, 2)
            kernels.set_backend("numba")
            assert kernels.get_backend() == "numba"
        finally:
            kernels.set_backend(prev)

    def test_unknown_backend(self):
        from patchforge.errors import ConfigError

        with pytest.raises(ConfigError):
            kernels.set_backend("cuda")

    def test_available(self):
        avail = kernels.available_backends()
        assert "numpy" in avail and "numba" in avail
