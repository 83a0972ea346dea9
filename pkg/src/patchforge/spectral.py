"""Spectral normalization via power iteration.

Each normalized layer keeps a persistent left singular vector estimate ``u``
that is refined by one power iteration per training step; weights are scaled
by the estimated top singular value before use. The last layer of the
generator and of every discriminator head is exempt.
"""

from __future__ import annotations

import numpy as np

_EPS = 1e-12


def l2normalize(v: np.ndarray, eps: float = _EPS) -> np.ndarray:
    return v / (np.linalg.norm(v) + eps)


def power_iteration(w2d: np.ndarray, u: np.ndarray | None = None, iters: int = 1):
    """Estimate the top singular value of a 2D matrix.

    Returns (sigma, u, v); pass the returned ``u`` back in to continue the
    iteration across calls.
    """
    if u is None:
        u = l2normalize(np.ones(w2d.shape[0], dtype=w2d.dtype))
    v = l2normalize(w2d.T @ u)
    for _ in range(max(iters - 1, 0)):
        u = l2normalize(w2d @ v)
        v = l2normalize(w2d.T @ u)
    u = l2normalize(w2d @ v)
    sigma = float(u @ (w2d @ v))
    return sigma, u, v


def spectral_normalize(weight: np.ndarray, power_iters: int = 1,
                       u: np.ndarray | None = None):
    """Divide a 2D-flattened kernel matrix by its estimated top singular value.

    A zero matrix is returned unchanged with sigma = 0.0 as a sentinel.
    """
    if power_iters < 1:
        raise ValueError("power_iters must be >= 1")
    w2d = np.asarray(weight)
    if w2d.ndim != 2:
        raise ValueError(f"expected a 2D-flattened kernel, got shape {w2d.shape}")
    if not np.any(w2d):
        return w2d, 0.0
    sigma, _, _ = power_iteration(w2d, u=u, iters=power_iters)
    return w2d / sigma, sigma
