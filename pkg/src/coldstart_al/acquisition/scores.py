"""Per-sample uncertainty scores and top-b selection."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..numcore import ContractError

HIGHER = "higher-is-selected"
LOWER = "lower-is-selected"


@dataclass
class ScoreTable:
    indices: np.ndarray
    scores: np.ndarray
    orientation: str
    # optional second key, compared in the same orientation as ``scores``
    secondary: np.ndarray | None = None

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.indices.shape != self.scores.shape:
            raise ContractError("indices and scores must align")
        if self.orientation not in (HIGHER, LOWER):
            raise ContractError(f"unknown orientation {self.orientation!r}")
        if not np.all(np.isfinite(self.scores)):
            raise ContractError("scores must be finite")

    def __len__(self) -> int:
        return self.indices.size


@dataclass
class SelectionResult:
    chosen: np.ndarray
    strategy_id: str
    scores: ScoreTable | None = None


def _check_probs(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] < 2:
        raise ContractError(f"expected probability rows with K >= 2, got shape {p.shape}")
    if np.any(p < -1e-9):
        raise ContractError("negative probability")
    return p


def entropy(p: np.ndarray, axis: int = -1) -> np.ndarray:
    """Shannon entropy in nats with ``0 log 0 = 0``."""
    p = np.clip(np.asarray(p, dtype=np.float64), 0.0, None)
    safe = np.where(p > 0, p, 1.0)
    return -np.sum(p * np.log(safe), axis=axis)


def score_entropy(p, indices=None) -> ScoreTable:
    p = _check_probs(p)
    if not np.allclose(p.sum(axis=1), 1.0, atol=1e-6):
        raise ContractError("probability rows must sum to 1")
    return ScoreTable(_default_indices(p, indices), entropy(p), HIGHER)


def score_margin(p, indices=None) -> ScoreTable:
    """Gap between the two largest probabilities."""
    p = _check_probs(p)
    top2 = np.sort(p, axis=1)[:, -2:]
    return ScoreTable(_default_indices(p, indices), top2[:, 1] - top2[:, 0], LOWER)


def score_least_confidence(p, indices=None) -> ScoreTable:
    p = _check_probs(p)
    return ScoreTable(_default_indices(p, indices), p.max(axis=1), LOWER)


def score_bald(mc: np.ndarray, indices=None) -> ScoreTable:
    """Mutual information between prediction and dropout masks.

    ``mc`` has shape ``(T, n, K)``; score is ``H(mean_t p_t) - mean_t H(p_t)``.
    """
    mc = np.asarray(mc, dtype=np.float64)
    if mc.ndim != 3 or mc.shape[0] < 2:
        raise ContractError(f"expected (T >= 2, n, K) tensor, got {mc.shape}")
    mi = entropy(mc.mean(axis=0)) - entropy(mc).mean(axis=0)
    return ScoreTable(_default_indices(mc[0], indices), mi, HIGHER)


def _default_indices(p, indices):
    return np.arange(len(p)) if indices is None else np.asarray(indices, dtype=np.int64)


def rank_order(table: ScoreTable) -> np.ndarray:
    """Positions of ``table`` rows sorted best-first, ties by lowest pool index."""
    sign = -1.0 if table.orientation == HIGHER else 1.0
    keys = [table.indices]
    if table.secondary is not None:
        keys.append(sign * np.asarray(table.secondary, dtype=np.float64))
    keys.append(sign * table.scores)
    return np.lexsort(keys)


def select_by_score(table: ScoreTable, b: int, strategy_id: str = "score") -> SelectionResult:
    """Top-``b`` rows under the table's orientation, best first."""
    if not 0 <= b <= len(table):
        raise ContractError(f"cannot select {b} of {len(table)} candidates")
    order = rank_order(table)
    return SelectionResult(table.indices[order[:b]], strategy_id, table)


def write_score_csv(path, table: ScoreTable, chosen) -> None:
    """Audit dump with header ``index,score,rank,chosen``."""
    order = rank_order(table)
    rank = np.empty(len(table), dtype=np.int64)
    rank[order] = np.arange(len(table))
    chosen = set(int(i) for i in chosen)
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "score", "rank", "chosen"])
        for pos in np.argsort(table.indices, kind="stable"):
            idx = int(table.indices[pos])
            writer.writerow([idx, repr(float(table.scores[pos])), int(rank[pos]), int(idx in chosen)])
