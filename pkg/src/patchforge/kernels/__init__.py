"""Hot numeric kernels with selectable backend.

Two interchangeable implementations exist: ``numba`` (JIT-compiled, the
default when numba imports cleanly) and ``numpy`` (pure-numpy fallback).
Select explicitly with the environment variable ``PATCHFORGE_BACKEND=numba``
or ``PATCHFORGE_BACKEND=numpy``, or at runtime with :func:`set_backend`.

``benchmarks/bench_kernels.py`` times the two backends against each other.
"""

import os

from ..errors import ConfigError

_impl = None
_impl_name = None


def _load(name: str):
    if name == "numpy":
        from . import _numpy

        return _numpy
    if name == "numba":
        from . import _numba

        return _numba
    raise ConfigError(f"unknown kernel backend {name!r} (choose numba or numpy)")


def set_backend(name: str) -> str:
    """Force a kernel backend; returns the previously active backend name."""
    global _impl, _impl_name
    prev = _impl_name
    _impl = _load(name)
    _impl_name = name
    return prev


def get_backend() -> str:
    return _impl_name


def available_backends() -> list[str]:
    out = ["numpy"]
    try:
        import numba  # noqa: F401

        out.insert(0, "numba")
    except ImportError:
        pass
    return out


def _init_default():
    env = os.environ.get("PATCHFORGE_BACKEND", "").strip().lower()
    if env:
        set_backend(env)
        return
    try:
        set_backend("numba")
    except ImportError:
        set_backend("numpy")


_init_default()


def conv2d_fwd(x_pad, w, stride=1):
    return _impl.conv2d_fwd(x_pad, w, stride)


def conv2d_bwd_input(dy, w, in_shape, stride=1):
    return _impl.conv2d_bwd_input(dy, w, in_shape, stride)


def conv2d_bwd_weight(dy, x_pad, kh, kw, stride=1):
    return _impl.conv2d_bwd_weight(dy, x_pad, kh, kw, stride)


def warp_fwd(feat, py, px, edge=False):
    return _impl.warp_fwd(feat, py, px, edge)


def warp_bwd(dy, py, px, h, w, edge=False):
    return _impl.warp_bwd(dy, py, px, h, w, edge)


def maxpool2_fwd(x):
    return _impl.maxpool2_fwd(x)


def maxpool2_bwd(dy, arg, h, w):
    return _impl.maxpool2_bwd(dy, arg, h, w)


def leaky_fwd(x, slope=0.2):
    return _impl.leaky_fwd(x, slope)


def leaky_bwd(g, x, slope=0.2):
    return _impl.leaky_bwd(g, x, slope)


def patch_min_sqdists(a, b):
    return _impl.patch_min_sqdists(a, b)
