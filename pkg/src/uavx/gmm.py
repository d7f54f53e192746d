"""Gaussian mixture over pooled depth-state embeddings.

States are embedded by average-pooling the normalized depth image onto a
4x4 grid. The mixture has diagonal covariances, floored variances, and
Dirichlet-smoothed weights fit by expectation-maximization; densities are
evaluated in log space with the log-sum-exp trick so scoring stays finite
far from the data.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

EMBED_GRID = 4  # embeddings are EMBED_GRID**2 dimensional
VARIANCE_FLOOR = 1e-6
_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class GaussianMixture:
    weights: np.ndarray      # (m,) simplex
    means: np.ndarray        # (m, d)
    covariances: np.ndarray  # (m, d) diagonal entries, >= VARIANCE_FLOOR

    @property
    def components(self) -> int:
        return self.weights.shape[0]


def embed(state: np.ndarray) -> np.ndarray:
    """Average-pool a square observation onto a 4x4 grid and flatten."""
    state = np.asarray(state, dtype=np.float64)
    if state.ndim != 2 or state.shape[0] != state.shape[1]:
        raise ShapeError(f"expected a square 2-D observation, got shape {state.shape}")
    res = state.shape[0]
    if res % EMBED_GRID:
        raise ShapeError(f"observation side {res} not divisible by {EMBED_GRID}")
    block = res // EMBED_GRID
    pooled = state.reshape(EMBED_GRID, block, EMBED_GRID, block).mean(axis=(1, 3))
    return pooled.ravel()


def _component_log_densities(g: GaussianMixture, points: np.ndarray) -> np.ndarray:
    """(n, m) matrix of log N(x_i | mu_k, Sigma_k) for diagonal Sigma."""
    d = points.shape[1]
    diff = points[:, None, :] - g.means[None, :, :]
    maha = np.sum(diff * diff / g.covariances[None, :, :], axis=2)
    log_det = np.sum(np.log(g.covariances), axis=1)
    return -0.5 * (d * _LOG_2PI + log_det[None, :] + maha)


def _logsumexp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    peak = np.max(a, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    return np.squeeze(peak, axis) + np.log(np.sum(np.exp(a - peak), axis=axis))


def _log_weights(weights: np.ndarray) -> np.ndarray:
    out = np.full_like(weights, -np.inf)
    positive = weights > 0.0
    out[positive] = np.log(weights[positive])
    return out


def log_density(g: GaussianMixture, x: np.ndarray) -> float:
    """ln sum_k alpha_k N(x | mu_k, Sigma_k), stabilized by log-sum-exp."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (g.means.shape[1],):
        raise ShapeError(f"point has dim {x.shape}, mixture has dim {g.means.shape[1]}")
    comp = _component_log_densities(g, x[None, :])[0]
    return float(_logsumexp(comp + _log_weights(g.weights), axis=0))


def penalized_log_likelihood(g: GaussianMixture, points, pseudocount: float) -> float:
    """Data log-likelihood plus the Dirichlet weight penalty used by fit."""
    points = np.asarray(points, dtype=np.float64)
    comp = _component_log_densities(g, points)
    ll = float(np.sum(_logsumexp(comp + _log_weights(g.weights)[None, :], axis=1)))
    if pseudocount > 0.0:
        ll += pseudocount * float(np.sum(_log_weights(g.weights)))
    return ll


def _farthest_point_means(points: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded first pick, then greedy farthest-point selection."""
    chosen = [int(rng.integers(points.shape[0]))]
    for _ in range(m - 1):
        d = np.min(
            np.sum((points[:, None, :] - points[chosen][None, :, :]) ** 2, axis=2),
            axis=1,
        )
        chosen.append(int(np.argmax(d)))
    return points[chosen].copy()


def fit(
    points,
    m: int,
    iterations: int = 20,
    pseudocount: float = 1.0,
    seed: int = 0,
) -> GaussianMixture:
    """Fit an m-component diagonal mixture by Dirichlet-MAP EM.

    Weights update as (N_k + pseudocount) / (n + m * pseudocount), variances
    are floored at VARIANCE_FLOOR, and means start from seeded farthest-point
    selection, so the penalized log-likelihood never decreases across
    iterations and repeated calls with the same inputs agree exactly.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError(f"points must be (n, d), got shape {points.shape}")
    n, d = points.shape
    if m < 1:
        raise ValueError(f"component count must be positive, got {m}")
    if n < m:
        raise ValueError(f"need at least {m} points to fit {m} components, got {n}")
    if iterations < 0:
        raise ValueError("iterations must be non-negative")
    if pseudocount < 0.0:
        raise ValueError("pseudocount must be non-negative")

    rng = np.random.default_rng(seed)
    means = _farthest_point_means(points, m, rng)
    global_var = np.maximum(points.var(axis=0), VARIANCE_FLOOR)
    covariances = np.tile(global_var, (m, 1))
    weights = np.full(m, 1.0 / m)
    g = GaussianMixture(weights, means, covariances)

    for _ in range(iterations):
        # E-step: responsibilities in log space
        log_r = _component_log_densities(g, points) + _log_weights(g.weights)[None, :]
        log_r -= _logsumexp(log_r, axis=1)[:, None]
        resp = np.exp(log_r)
        # M-step with Dirichlet-smoothed weights and floored variances
        counts = resp.sum(axis=0)
        g.weights = (counts + pseudocount) / (n + m * pseudocount)
        for k in range(m):
            if counts[k] <= 1e-12:
                continue  # keep the previous parameters for a dead component
            mean = resp[:, k] @ points / counts[k]
            centered = points - mean
            var = resp[:, k] @ (centered * centered) / counts[k]
            g.means[k] = mean
            g.covariances[k] = np.maximum(var, VARIANCE_FLOOR)
    return g
