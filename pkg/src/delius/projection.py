"""Linear and nonlinear 2-d/low-d projections for analysis and plotting.

PCA comes from the singular value decomposition of the centered data
with a deterministic sign convention: the largest-magnitude coordinate
of every component is made positive.  The t-SNE here is the exact
O(n^2) variant: per-point bandwidths found by bisection on the
conditional distribution's entropy, symmetrised joint affinities, and
plain momentum gradient descent with an early exaggeration phase.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .rng import Rng

_ENTROPY_TOL = 1e-5
_MAX_BISECTIONS = 50
_EXAGGERATION_UNTIL = 250
_MOMENTUM_SWITCH = 250
_MOMENTUM_EARLY = 0.5
_MOMENTUM_LATE = 0.8


# ---------------------------------------------------------------------------
# PCA


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    total_variance: float

    @property
    def r(self) -> int:
        return self.components.shape[0]

    def explained_variance_ratio(self) -> np.ndarray:
        if self.total_variance == 0.0:
            return np.zeros_like(self.explained_variance)
        return self.explained_variance / self.total_variance


def pca_fit(points: np.ndarray, r: int) -> PcaModel:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ShapeError(f"points must be 2-d, got shape {points.shape}")
    n, d = points.shape
    if n < 2:
        raise ConfigError(f"pca needs at least 2 rows, got {n}")
    limit = min(n - 1, d)
    if not 1 <= r <= limit:
        raise ConfigError(f"r must lie in [1, {limit}] for {n}x{d} data, got {r}")
    if not np.isfinite(points).all():
        raise DataError("points contain non-finite values")
    mean = points.mean(axis=0)
    centered = points - mean
    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:r].copy()
    for row in components:
        pivot = int(np.argmax(np.abs(row)))
        if row[pivot] < 0.0:
            row *= -1.0
    variances = singular**2 / (n - 1)
    return PcaModel(
        mean=mean,
        components=components,
        explained_variance=variances[:r].copy(),
        total_variance=float(variances.sum()),
    )


def pca_transform(model: PcaModel, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != model.mean.shape[0]:
        raise ShapeError(
            f"points shape {points.shape} does not match model dimension "
            f"{model.mean.shape[0]}"
        )
    return (points - model.mean) @ model.components.T


def pca_inverse(model: PcaModel, reduced: np.ndarray) -> np.ndarray:
    reduced = np.asarray(reduced, dtype=np.float64)
    if reduced.ndim != 2 or reduced.shape[1] != model.r:
        raise ShapeError(f"reduced shape {reduced.shape} does not match r = {model.r}")
    return reduced @ model.components + model.mean


# ---------------------------------------------------------------------------
# t-SNE


@dataclass(frozen=True)
class TsneConfig:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    early_exaggeration: float = 12.0
    seed: int = 0

    def validate(self, n: int) -> None:
        if n < 5:
            raise ConfigError(f"t-SNE needs at least 5 rows, got {n}")
        if not 1.0 < self.perplexity < (n - 1) / 3.0:
            raise ConfigError(
                f"perplexity must lie in (1, {(n - 1) / 3.0:g}) for n = {n}, "
                f"got {self.perplexity}"
            )
        if self.iterations < 1:
            raise ConfigError(f"iterations must be at least 1, got {self.iterations}")
        if not self.learning_rate > 0.0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if not self.early_exaggeration >= 1.0:
            raise ConfigError(
                f"early exaggeration must be at least 1, got {self.early_exaggeration}"
            )


def _sq_distance_matrix(points: np.ndarray) -> np.ndarray:
    sq = np.einsum("nd,nd->n", points, points)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (points @ points.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


def _conditional_row(d2_row: np.ndarray, i: int, beta: float) -> np.ndarray:
    logits = -beta * d2_row
    logits[i] = -np.inf
    logits -= logits.max()
    p = np.exp(logits)
    p[i] = 0.0
    return p / p.sum()


def _entropy(p: np.ndarray) -> float:
    nz = p[p > 0.0]
    return float(-(nz * np.log(nz)).sum())


def joint_affinities(points: np.ndarray, perplexity: float) -> np.ndarray:
    """Symmetrised t-SNE affinity matrix; entries sum to 1.

    The per-point bandwidth is bisected until the conditional
    distribution's entropy matches log(perplexity).
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    d2 = _sq_distance_matrix(points)
    target = math.log(perplexity)
    cond = np.zeros((n, n))
    for i in range(n):
        beta, lo, hi = 1.0, 0.0, math.inf
        row = None
        for _ in range(_MAX_BISECTIONS):
            row = _conditional_row(d2[i].copy(), i, beta)
            gap = _entropy(row) - target
            if abs(gap) <= _ENTROPY_TOL:
                break
            if gap > 0.0:  # too spread out: narrow the kernel
                lo = beta
                beta = beta * 2.0 if math.isinf(hi) else (lo + hi) / 2.0
            else:
                hi = beta
                beta = beta / 2.0 if lo == 0.0 else (lo + hi) / 2.0
        cond[i] = row
    joint = (cond + cond.T) / (2.0 * n)
    return joint


def lowdim_gradient(p: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, float]:
    """Gradient of KL(p || q) in the embedding, plus the divergence itself."""
    y = np.asarray(y, dtype=np.float64)
    n = y.shape[0]
    if p.shape != (n, n):
        raise ShapeError(f"affinity shape {p.shape} does not match {n} points")
    d2 = _sq_distance_matrix(y)
    w = 1.0 / (1.0 + d2)
    np.fill_diagonal(w, 0.0)
    q = w / w.sum()
    pq = (p - q) * w
    grad = 4.0 * (pq.sum(axis=1)[:, None] * y - pq @ y)
    mask = p > 0.0
    kl = float((p[mask] * np.log(p[mask] / q[mask])).sum())
    return grad, kl


def tsne_embed(points: np.ndarray, config: TsneConfig) -> np.ndarray:
    """Exact t-SNE layout in 2-d."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ShapeError(f"points must be 2-d, got shape {points.shape}")
    if not np.isfinite(points).all():
        raise DataError("points contain non-finite values")
    n = points.shape[0]
    config.validate(n)
    p = joint_affinities(points, config.perplexity)
    p = p * config.early_exaggeration
    exaggerated = True
    rng = Rng(config.seed)
    y = rng.normal((n, 2), std=1e-4)
    velocity = np.zeros_like(y)
    for it in range(config.iterations):
        if exaggerated and it >= _EXAGGERATION_UNTIL:
            p = p / config.early_exaggeration
            exaggerated = False
        momentum = _MOMENTUM_EARLY if it < _MOMENTUM_SWITCH else _MOMENTUM_LATE
        grad, _ = lowdim_gradient(p, y)
        velocity = momentum * velocity - config.learning_rate * grad
        y = y + velocity
        y = y - y.mean(axis=0)
    return y
