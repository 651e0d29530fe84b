"""Diversity-driven selection: k-means++ seeding and greedy k-center."""

from __future__ import annotations

import numpy as np

from ..numcore import ContractError, RngStream


def kmeans_pp_seeding(points: np.ndarray, b: int, rng: RngStream) -> list[int]:
    """Pick ``b`` row positions by D^2 sampling.

    The first pick is uniform. Each later pick is drawn with probability
    proportional to the squared distance to the nearest pick so far; if every
    remaining distance is zero the pick falls back to uniform over unpicked rows.
    """
    n = points.shape[0]
    if b > n:
        raise ContractError(f"cannot pick {b} centers from {n} candidates")
    if b == 0:
        return []
    chosen = [int(rng.integers(n))]
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for step in range(1, b):
        d2[chosen] = 0.0
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            free = np.setdiff1d(np.arange(n), chosen)
            nxt = int(free[rng.integers(free.size)])
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((points - points[nxt]) ** 2, axis=1))
    return chosen


def nearest_center_distance(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Euclidean distance from every point to its closest center.

    Uses explicit differences (not the dot-product expansion) so each row's
    result is independent of row order.
    """
    out = np.full(points.shape[0], np.inf)
    block = max(1, 2_000_000 // max(1, points.size))
    for start in range(0, centers.shape[0], block):
        c = centers[start : start + block]
        d = np.sqrt(((points[:, None, :] - c[None, :, :]) ** 2).sum(axis=2))
        out = np.minimum(out, d.min(axis=1))
    return out


def k_center_greedy(candidates: np.ndarray, centers: np.ndarray, b: int) -> list[int]:
    """Greedy farthest-first traversal starting from existing ``centers``.

    Returns positions into ``candidates``. Ties go to the lowest position.
    """
    if centers.shape[0] == 0:
        raise ContractError("k-center needs at least one existing center (labeled sample)")
    if b > candidates.shape[0]:
        raise ContractError(f"cannot pick {b} of {candidates.shape[0]} candidates")
    dist = nearest_center_distance(candidates, centers)
    picks = []
    for _ in range(b):
        i = int(np.argmax(dist))
        picks.append(i)
        dist = np.minimum(dist, np.sqrt(np.sum((candidates - candidates[i]) ** 2, axis=1)))
        dist[i] = -1.0
    return picks


def covering_radius(points: np.ndarray, centers: np.ndarray) -> float:
    """Largest distance from any point to its nearest center."""
    diff = points[:, None, :] - centers[None, :, :]
    return float(np.sqrt((diff**2).sum(axis=2)).min(axis=1).max())
