"""Clustering quality measures and the evaluation report.

Silhouette uses Euclidean distances; a point alone in its cluster
scores 0.  The variance ratio criterion compares between-cluster to
within-cluster scatter scaled by (n - k) / (k - 1) and is reported as
infinite when every cluster collapses to a point.  Accuracy against
ground truth maximises the matched count over all one-to-one
cluster-to-class mappings via an optimal assignment on the confusion
matrix.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, DataError, ShapeError


def _check_points_labels(points: np.ndarray, labels: np.ndarray):
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    if points.ndim != 2:
        raise ShapeError(f"points must be 2-d, got shape {points.shape}")
    if labels.shape != (points.shape[0],):
        raise ShapeError(
            f"labels shape {labels.shape} does not match {points.shape[0]} points"
        )
    if not np.isfinite(points).all():
        raise DataError("points contain non-finite values")
    return points, labels.astype(np.int64)


def _pairwise_distances(points: np.ndarray) -> np.ndarray:
    sq = np.einsum("nd,nd->n", points, points)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (points @ points.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


def silhouette(points: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette over all points."""
    points, labels = _check_points_labels(points, labels)
    n = points.shape[0]
    clusters = np.unique(labels)
    k = len(clusters)
    if not 2 <= k <= n - 1:
        raise ConfigError(f"silhouette needs 2 <= clusters <= n - 1, got k={k}, n={n}")
    dist = _pairwise_distances(points)
    sums = np.empty((n, k))
    counts = np.empty(k)
    for ci, c in enumerate(clusters):
        members = labels == c
        sums[:, ci] = dist[:, members].sum(axis=1)
        counts[ci] = members.sum()
    own = np.searchsorted(clusters, labels)
    scores = np.zeros(n)
    for i in range(n):
        ci = own[i]
        if counts[ci] == 1:
            continue  # singleton clusters score 0 by convention
        a = sums[i, ci] / (counts[ci] - 1)
        other = [sums[i, cj] / counts[cj] for cj in range(k) if cj != ci]
        b = min(other)
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


def calinski_harabasz(points: np.ndarray, labels: np.ndarray) -> float:
    """Variance ratio criterion; infinite when within-cluster scatter vanishes."""
    points, labels = _check_points_labels(points, labels)
    n = points.shape[0]
    clusters = np.unique(labels)
    k = len(clusters)
    if not 2 <= k <= n - 1:
        raise ConfigError(f"variance ratio needs 2 <= clusters <= n - 1, got k={k}, n={n}")
    overall = points.mean(axis=0)
    within = 0.0
    between = 0.0
    for c in clusters:
        members = points[labels == c]
        centroid = members.mean(axis=0)
        within += float(((members - centroid) ** 2).sum())
        between += members.shape[0] * float(((centroid - overall) ** 2).sum())
    if within < 1e-300:
        return math.inf
    return (between / within) * ((n - k) / (k - 1))


def clustering_accuracy(truth: np.ndarray, clusters: np.ndarray) -> float:
    """Best achievable agreement under a one-to-one cluster relabeling."""
    truth = np.asarray(truth)
    clusters = np.asarray(clusters)
    if truth.shape != clusters.shape or truth.ndim != 1:
        raise ShapeError(
            f"label vectors must be equal-length 1-d, got {truth.shape} and {clusters.shape}"
        )
    n = truth.shape[0]
    if n == 0:
        raise ConfigError("cannot score empty label vectors")
    _, t = np.unique(truth, return_inverse=True)
    _, c = np.unique(clusters, return_inverse=True)
    side = max(t.max(), c.max()) + 1
    confusion = np.zeros((side, side), dtype=np.int64)
    np.add.at(confusion, (t, c), 1)
    rows, cols = linear_sum_assignment(confusion, maximize=True)
    return float(confusion[rows, cols].sum()) / n


@dataclass
class EvalReport:
    """Metrics for one clustering in one representation space."""

    sc: float
    chi: float
    acc_style: float | None
    acc_genre: float | None
    k: int
    n: int
    space_tag: str

    def to_dict(self) -> dict:
        chi_infinite = math.isinf(self.chi)
        return {
            "sc": self.sc,
            "chi": None if chi_infinite else self.chi,
            "chi_infinite": chi_infinite,
            "acc_style": self.acc_style,
            "acc_genre": self.acc_genre,
            "k": self.k,
            "n": self.n,
            "space_tag": self.space_tag,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        chi = math.inf if data.get("chi_infinite") else data["chi"]
        return cls(
            sc=data["sc"],
            chi=chi,
            acc_style=data["acc_style"],
            acc_genre=data["acc_genre"],
            k=data["k"],
            n=data["n"],
            space_tag=data["space_tag"],
        )


def evaluate(
    points: np.ndarray,
    labels: np.ndarray,
    space_tag: str,
    style_truth=None,
    genre_truth=None,
) -> EvalReport:
    """Score a clustering; accuracy entries appear only when truth is given.

    ``style_truth`` and ``genre_truth`` are (row_indices, class_indices)
    pairs covering the labeled subset, as produced by
    ``dataio.labels_for``.
    """
    points, labels = _check_points_labels(points, labels)

    def acc(pair):
        if pair is None:
            return None
        rows, classes = pair
        rows = np.asarray(rows, dtype=np.int64)
        if rows.size == 0:
            return None
        return clustering_accuracy(np.asarray(classes), labels[rows])

    return EvalReport(
        sc=silhouette(points, labels),
        chi=calinski_harabasz(points, labels),
        acc_style=acc(style_truth),
        acc_genre=acc(genre_truth),
        k=int(len(np.unique(labels))),
        n=int(points.shape[0]),
        space_tag=space_tag,
    )
