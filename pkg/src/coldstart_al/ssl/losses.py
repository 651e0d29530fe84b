"""Contrastive and redundancy-reduction objectives.

All losses are composed from :mod:`coldstart_al.numcore` primitives and accept
either plain arrays or tape nodes for their differentiable arguments.
Arguments documented as targets or keys are treated as constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import numcore as nc
from ..numcore import ContractError

# added to self-similarity logits; exp() of it underflows to exactly zero
_MASKED = -1e9


def nt_xent_loss(z, temperature: float = 0.5):
    """Normalized-temperature cross-entropy over ``2B`` rows.

    Rows ``i`` and ``i + B`` are the two views of one sample. Every anchor is
    scored against all other ``2B - 1`` rows; the loss is the mean over anchors.
    """
    if temperature <= 0:
        raise ContractError(f"temperature must be positive, got {temperature}")
    n = nc.value_of(z).shape[0]
    if n < 4 or n % 2:
        raise ContractError(f"nt_xent_loss needs an even number (>= 4) of rows, got {n}")
    b = n // 2
    zn = nc.l2_normalize(z)
    sim = nc.mul(nc.matmul(zn, nc.transpose(zn)), 1.0 / temperature)
    logp = nc.log_softmax(nc.add(sim, _MASKED * np.eye(n)))
    positives = np.zeros((n, n))
    idx = np.arange(n)
    positives[idx, (idx + b) % n] = 1.0
    return nc.mul(nc.sum(nc.mul(logp, positives)), -1.0 / n)


def info_nce_loss(query, keys, queue=None, temperature: float = 0.2):
    """InfoNCE with constant ``keys`` as positives.

    Negatives are the ``queue`` rows; with an empty queue the other in-batch
    keys serve as negatives instead. ``query`` and ``keys`` are L2-normalized.
    """
    if temperature <= 0:
        raise ContractError(f"temperature must be positive, got {temperature}")
    q = nc.l2_normalize(query)
    k = nc.value_of(nc.l2_normalize(np.asarray(nc.value_of(keys))))
    if queue is None or len(queue) == 0:
        logits = nc.mul(nc.matmul(q, k.T), 1.0 / temperature)
        target = np.eye(k.shape[0])
    else:
        pos = nc.sum(nc.mul(q, k), axis=1, keepdims=True)
        neg = nc.matmul(q, np.asarray(queue).T)
        logits = nc.mul(nc.concat([pos, neg], axis=1), 1.0 / temperature)
        target = np.zeros(nc.value_of(logits).shape)
        target[:, 0] = 1.0
    return nc.cross_entropy(logits, target)


def byol_loss(prediction, target):
    """Mean over rows of ``2 - 2 cos(prediction, target)``; ``target`` is constant."""
    t = np.asarray(nc.value_of(target), dtype=np.float64)
    p = nc.value_of(prediction)
    if p.shape != t.shape:
        raise ContractError(f"shape mismatch {p.shape} vs {t.shape}")
    for name, arr in (("prediction", p), ("target", t)):
        zero = np.flatnonzero(np.linalg.norm(arr, axis=1) == 0)
        if zero.size:
            raise ContractError(f"{name} row {zero[0]} has zero norm")
    cos = nc.sum(nc.mul(nc.l2_normalize(prediction), t / np.linalg.norm(t, axis=1, keepdims=True)), axis=1)
    return nc.mean(nc.sub(2.0, nc.mul(cos, 2.0)))


def sinkhorn(scores: np.ndarray, eps: float = 0.05, iters: int = 3) -> np.ndarray:
    """Balanced soft assignments of ``n`` rows to ``P`` prototypes.

    Returns codes of shape ``(n, P)`` whose rows sum to one; column sums
    approach ``n / P`` as ``iters`` grows.
    """
    if iters < 1:
        raise ContractError("sinkhorn needs at least one iteration")
    if eps <= 0:
        raise ContractError("eps must be positive")
    s = np.asarray(scores, dtype=np.float64) / eps
    q = np.exp(s - s.max()).T  # (P, n)
    n_proto, n = q.shape
    q /= q.sum()
    for _ in range(iters):
        q /= q.sum(axis=1, keepdims=True)
        q /= n_proto
        q /= q.sum(axis=0, keepdims=True)
        q /= n
    return (q * n).T


def swav_loss(z, prototypes, temperature: float = 0.1, eps: float = 0.05, iters: int = 3, codes=None):
    """Swapped-prediction loss; ``z`` stacks view A rows over view B rows.

    Returns ``(loss, codes)``. Codes come from Sinkhorn on detached scores,
    so gradients flow only through the softmax predictions. Passing ``codes``
    skips the Sinkhorn step and uses them as fixed targets.
    """
    zv = nc.value_of(z)
    n = zv.shape[0]
    if n % 2:
        raise ContractError("z must stack two equally sized views")
    if nc.value_of(prototypes).shape[0] < 2:
        raise ContractError("need at least two prototypes")
    b = n // 2
    zn = nc.l2_normalize(z)
    scores = nc.matmul(zn, nc.transpose(prototypes))
    if codes is None:
        codes = sinkhorn(nc.value_of(scores), eps, iters)
    logp = nc.log_softmax(nc.mul(scores, 1.0 / temperature))
    swapped = np.concatenate([codes[b:], codes[:b]])
    loss = nc.mul(nc.sum(nc.mul(logp, swapped)), -1.0 / n)
    return loss, codes


def standardize(z):
    """Zero-mean, unit (population) variance per column."""
    zv = nc.value_of(z)
    std = zv.std(axis=0)
    bad = np.flatnonzero(std < 1e-10)
    if bad.size:
        raise ContractError(f"embedding dimension {bad[0]} has zero variance")
    centered = nc.sub(z, nc.mean(z, axis=0, keepdims=True))
    var = nc.mean(nc.square(centered), axis=0, keepdims=True)
    return nc.div(centered, nc.sqrt(var))


def cross_correlation(z_a, z_b):
    """``(1/B) za^T zb`` on batch-standardized embeddings."""
    b = nc.value_of(z_a).shape[0]
    if b < 2:
        raise ContractError("cross-correlation needs at least two rows")
    return nc.mul(nc.matmul(nc.transpose(standardize(z_a)), standardize(z_b)), 1.0 / b)


def barlow_twins_loss(z_a, z_b, lam: float = 0.005):
    """Invariance term on the diagonal plus ``lam`` times the off-diagonal energy."""
    if lam <= 0:
        raise ContractError("lambda must be positive")
    c = cross_correlation(z_a, z_b)
    p = nc.value_of(c).shape[0]
    eye = np.eye(p)
    on = nc.sum(nc.mul(nc.square(nc.sub(c, eye)), eye))
    off = nc.sum(nc.mul(nc.square(c), 1.0 - eye))
    return nc.add(on, nc.mul(off, lam))


@dataclass
class NegativeQueue:
    """FIFO of normalized key embeddings."""

    capacity: int
    entries: np.ndarray | None = field(default=None)

    def __len__(self) -> int:
        return 0 if self.entries is None else self.entries.shape[0]

    def enqueue(self, keys: np.ndarray) -> None:
        keys = np.asarray(keys, dtype=np.float64)
        merged = keys if self.entries is None else np.concatenate([self.entries, keys])
        self.entries = merged[-self.capacity :].copy() if self.capacity else merged[:0]

    def array(self) -> np.ndarray | None:
        return self.entries


def swav_step(z, bank: "PrototypeBank", temperature: float = 0.1, iters: int = 3, eps: float = 0.05):
    """:func:`swav_loss` against the prototypes held in ``bank``."""
    return swav_loss(z, bank.prototypes, temperature, eps, iters)


@dataclass
class PrototypeBank:
    prototypes: np.ndarray

    def normalize(self) -> None:
        self.prototypes = self.prototypes / np.linalg.norm(self.prototypes, axis=1, keepdims=True)
