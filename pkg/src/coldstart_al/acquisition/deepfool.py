"""Distance to the decision boundary by iterative linearization (DeepFool, L2)."""

from __future__ import annotations

import numpy as np

from .. import numcore as nc
from ..models import forward
from ..numcore import ContractError, Tape

# reported when no label flip happens within ``max_iters``
NO_FLIP_SCORE = 1e12


def _logits_and_jacobian(model, x: np.ndarray):
    """Logits ``(n, K)`` and input Jacobian ``(n, K, d)`` for independent rows."""
    tape = Tape()
    xv = tape.watch(x)
    _, logits = forward(model, model.params, xv)
    K = model.num_classes
    jac = np.empty((x.shape[0], K, x.shape[1]))
    for k in range(K):
        select = np.zeros(logits.shape)
        select[:, k] = 1.0
        (jac[:, k, :],) = tape.gradients(nc.sum(nc.mul(logits, select)), [xv])
    return logits.value, jac


def _not_strictly_top(logits: np.ndarray, k0: np.ndarray) -> np.ndarray:
    own = logits[np.arange(len(k0)), k0]
    others = logits.copy()
    others[np.arange(len(k0)), k0] = -np.inf
    return own <= others.max(axis=1)


def deepfool(model, x: np.ndarray, max_iters: int = 50, overshoot: float = 0.02):
    """Minimal L2 perturbations for every row of ``x``.

    Returns ``(norms, iterations, flipped)``. ``norms`` is the length of the
    accumulated linearized step (before the overshoot factor used to cross the
    boundary); rows that never flip get :data:`NO_FLIP_SCORE`. A point whose
    original class stops being the unique arg-max counts as flipped.
    """
    if max_iters < 1:
        raise ContractError("max_iters must be >= 1")
    x0 = np.asarray(x, dtype=np.float64)
    n = x0.shape[0]
    logits0 = forward(model, model.params, x0)[1]
    k0 = np.argmax(logits0, axis=1)
    r_tot = np.zeros_like(x0)
    iters = np.zeros(n, dtype=np.int64)
    flipped = np.zeros(n, dtype=bool)
    active = np.arange(n)
    for it in range(1, max_iters + 1):
        if active.size == 0:
            break
        xa = x0[active] + (1.0 + overshoot) * r_tot[active]
        logits, jac = _logits_and_jacobian(model, xa)
        rows = np.arange(active.size)
        ka = k0[active]
        w = jac - jac[rows, ka][:, None, :]
        f = logits - logits[rows, ka][:, None]
        wnorm = np.linalg.norm(w, axis=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.abs(f) / wnorm
        ratio[rows, ka] = np.inf
        ratio[wnorm == 0] = np.inf
        best = np.argmin(ratio, axis=1)
        movable = np.isfinite(ratio[rows, best])
        wl = w[rows, best]
        step = np.zeros_like(xa)
        step[movable] = (
            np.abs(f[rows, best])[movable] / wnorm[rows, best][movable] ** 2
        )[:, None] * wl[movable]
        r_tot[active] += step
        iters[active] = it
        new_logits = forward(model, model.params, x0[active] + (1.0 + overshoot) * r_tot[active])[1]
        done = _not_strictly_top(new_logits, ka)
        flipped[active[done]] = True
        active = active[~done & movable]
    norms = np.where(flipped, np.linalg.norm(r_tot, axis=1), NO_FLIP_SCORE)
    return norms, iters, flipped
