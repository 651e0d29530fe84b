"""Greedy last-layer GLISTER.

The inner problem is a single gradient step on the classifier head with a
candidate's pseudo-labeled loss; the outer problem greedily picks the
candidate whose step most reduces validation cross-entropy to first order,
i.e. whose head gradient has the largest inner product with the validation
gradient. After each pick the head is moved by that candidate's step.
"""

from __future__ import annotations

import numpy as np

from ..models import gradient_embedding, pseudo_labels
from ..numcore import ContractError, softmax


def head_gradients(h: np.ndarray, W: np.ndarray, b: np.ndarray, labels=None):
    """Per-row cross-entropy gradients for (W, b); pseudo-labels when ``labels`` is None.

    Returns ``(gW, gb)`` with shapes ``(n, K*e)`` and ``(n, K)``.
    """
    p = softmax(h @ W.T + b)
    y = pseudo_labels(p) if labels is None else np.asarray(labels, dtype=np.int64)
    gW = gradient_embedding(p, h, y)
    gb = p.copy()
    gb[np.arange(len(y)), y] -= 1.0
    return gW, gb


def validation_loss(h_val: np.ndarray, y_val, W: np.ndarray, b: np.ndarray) -> float:
    logits = h_val @ W.T + b
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(y_val)), np.asarray(y_val)].mean())


def glister_greedy(h_cand, h_val, y_val, W, b, n_pick: int, lr_inner: float = 0.01):
    """Return ``(positions, first_step_scores)`` of the greedy picks into ``h_cand``."""
    if len(h_val) == 0:
        raise ContractError("GLISTER needs a non-empty validation shard")
    if n_pick > len(h_cand):
        raise ContractError(f"cannot pick {n_pick} of {len(h_cand)} candidates")
    W = np.array(W, dtype=np.float64)
    b = np.array(b, dtype=np.float64)
    available = np.ones(len(h_cand), dtype=bool)
    picks: list[int] = []
    first_scores = None
    for _ in range(n_pick):
        vW, vb = head_gradients(h_val, W, b, y_val)
        gW, gb = head_gradients(h_cand, W, b)
        scores = gW @ vW.mean(axis=0) + gb @ vb.mean(axis=0)
        if first_scores is None:
            first_scores = scores.copy()
        masked = np.where(available, scores, -np.inf)
        i = int(np.argmax(masked))
        picks.append(i)
        available[i] = False
        W -= lr_inner * gW[i].reshape(W.shape)
        b -= lr_inner * gb[i]
    return picks, first_scores
