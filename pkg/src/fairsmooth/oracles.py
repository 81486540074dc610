"""Independent oracles for validating the Monte-Carlo smoothing path.

Two deterministic routes that never touch the sampling code:

* a closed form for threshold-linear classifiers, where the smoothed value
  is a normal CDF of the signed margin;
* tensor-grid Gauss-Hermite quadrature for toy models with at most four
  parameters.

Both are used by the verification checks and the test suite as the second
side of every dual-route comparison.
"""

from __future__ import annotations

import math

import numpy as np

from .model import Architecture, forward_many

SQRT2 = math.sqrt(2.0)
MAX_QUADRATURE_DIM = 4


def normal_cdf(u: float) -> float:
    """Standard normal CDF via the error function."""
    return 0.5 * math.erfc(-u / SQRT2)


def normal_tail(u: float) -> float:
    """1 - Phi(u), accurate for large u."""
    return 0.5 * math.erfc(u / SQRT2)


def threshold_linear_smoothed(w: np.ndarray, x: np.ndarray, sigma: float) -> float:
    """Exact smoothed value of a bias-free threshold unit ``1[w.x >= 0]``.

    Adding N(0, sigma^2 I) noise to w shifts the margin by a normal variate
    with standard deviation sigma * ||x||, so the expectation is
    Phi(w.x / (sigma * ||x||)).
    """
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    norm_x = float(np.linalg.norm(x))
    if norm_x == 0.0:
        return 1.0  # margin is exactly 0 for every draw; ties count positive
    return normal_cdf(float(w @ x) / (sigma * norm_x))


def _hermite_grid(dim: int, nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensor grid (points, weights) for E[g(Z)] with Z ~ N(0, I_dim)."""
    if dim > MAX_QUADRATURE_DIM:
        raise ValueError(
            f"quadrature oracle supports at most {MAX_QUADRATURE_DIM} parameters, got {dim}"
        )
    t, w = np.polynomial.hermite.hermgauss(nodes)
    points_1d = SQRT2 * t
    weights_1d = w / math.sqrt(math.pi)
    grids = np.meshgrid(*([points_1d] * dim), indexing="ij")
    points = np.stack([g.reshape(-1) for g in grids], axis=1)
    weight = np.ones(points.shape[0])
    mesh_w = np.meshgrid(*([weights_1d] * dim), indexing="ij")
    for g in mesh_w:
        weight = weight * g.reshape(-1)
    return points, weight


def quadrature_smoothed(
    arch: Architecture,
    w: np.ndarray,
    x: np.ndarray,
    sigma: float,
    nodes: int = 64,
) -> float:
    """Deterministic E[f(x; W + sigma Z)] on a Gauss-Hermite tensor grid."""
    points, weights = _hermite_grid(arch.n_params, nodes)
    stack = np.asarray(w, dtype=np.float64)[None, :] + sigma * points
    values = forward_many(arch, stack, np.asarray(x, dtype=np.float64)[None, :])[:, 0]
    return float(weights @ values)


def quadrature_smoothed_directional(
    arch: Architecture,
    w: np.ndarray,
    delta: np.ndarray,
    x: np.ndarray,
    sigma: float,
    nodes: int = 64,
) -> float:
    """Deterministic score-form derivative E[f(x; W + sigma Z) (Z . delta) / sigma].

    This equals the directional derivative of the smoothed value along
    ``delta`` (cross-checked against finite differences of
    ``quadrature_smoothed`` in the tests).
    """
    points, weights = _hermite_grid(arch.n_params, nodes)
    stack = np.asarray(w, dtype=np.float64)[None, :] + sigma * points
    values = forward_many(arch, stack, np.asarray(x, dtype=np.float64)[None, :])[:, 0]
    score = points @ np.asarray(delta, dtype=np.float64) / sigma
    return float(weights @ (values * score))
