"""Self-supervised pre-training of an encoder on the whole unlabeled pool.

The entry point :func:`pretrain` only ever sees a :class:`SamplePool`, which
carries features and no labels.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import numcore as nc
from ..data import SamplePool
from ..models import MomentumPair, make_optimizer, momentum_update
from ..numcore import ContractError, RngStream, Tape
from .augment import AugmentationPolicy
from .losses import (
    NegativeQueue,
    PrototypeBank,
    barlow_twins_loss,
    byol_loss,
    info_nce_loss,
    nt_xent_loss,
    swav_loss,
)

log = logging.getLogger(__name__)

METHODS = ("simclr", "moco_v2", "byol", "swav", "barlow")


@dataclass
class PretrainConfig:
    batch_size: int = 256
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    proj_hidden: int = 64
    proj_dim: int = 32
    temperature: float = 0.5
    moco_temperature: float = 0.2
    moco_momentum: float = 0.99
    queue_size: int = 1024
    byol_momentum: float = 0.99
    pred_hidden: int = 64
    swav_prototypes: int = 32
    swav_temperature: float = 0.1
    swav_eps: float = 0.05
    swav_iters: int = 3
    barlow_lambda: float = 0.005
    seed: int = 0
    augmentation: AugmentationPolicy = field(default_factory=AugmentationPolicy)


def _mlp_params(prefix: str, sizes, rng: RngStream) -> dict:
    params = {}
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        params[f"{prefix}.W{i}"] = rng.child(i).normal(0.0, np.sqrt(2.0 / a), size=(a, b))
        params[f"{prefix}.b{i}"] = np.zeros(b)
    return params


def _mlp(params, prefix: str, x, layers: int):
    h = x
    for i in range(layers):
        h = nc.add(nc.matmul(h, params[f"{prefix}.W{i}"]), params[f"{prefix}.b{i}"])
        if i < layers - 1:
            h = nc.relu(h)
    return h


class _Objective:
    """One pre-training method: owns its extra parameters and state."""

    def __init__(self, encoder, params: dict, config: PretrainConfig, rng: RngStream):
        self.encoder = encoder
        self.config = config
        e = encoder.out_dim
        params.update(_mlp_params("proj", (e, config.proj_hidden, config.proj_dim), rng.child(1)))

    def project(self, params, x):
        return _mlp(params, "proj", self.encoder.forward(params, x), 2)

    def loss(self, params, va, vb):
        raise NotImplementedError

    def after_step(self, params: dict) -> None:
        pass


class _SimCLR(_Objective):
    def loss(self, params, va, vb):
        z = self.project(params, np.concatenate([va, vb]))
        return nt_xent_loss(z, self.config.temperature)


class _Barlow(_Objective):
    def loss(self, params, va, vb):
        return barlow_twins_loss(
            self.project(params, va), self.project(params, vb), self.config.barlow_lambda
        )


class _SwAV(_Objective):
    def __init__(self, encoder, params, config, rng):
        super().__init__(encoder, params, config, rng)
        bank = PrototypeBank(rng.child(2).normal(size=(config.swav_prototypes, config.proj_dim)))
        bank.normalize()
        params["proto"] = bank.prototypes

    def loss(self, params, va, vb):
        z = self.project(params, np.concatenate([va, vb]))
        cfg = self.config
        loss, _ = swav_loss(z, params["proto"], cfg.swav_temperature, cfg.swav_eps, cfg.swav_iters)
        return loss

    def after_step(self, params):
        bank = PrototypeBank(params["proto"])
        bank.normalize()
        params["proto"] = bank.prototypes


class _MoCo(_Objective):
    def __init__(self, encoder, params, config, rng):
        super().__init__(encoder, params, config, rng)
        self.pair = MomentumPair.from_online(params, config.moco_momentum)
        self.queue = NegativeQueue(config.queue_size)
        self._pending_keys = None

    def keys(self, x):
        return nc.l2_normalize(self.project(self.pair.momentum, x))

    def loss(self, params, va, vb):
        loss, keys_b = moco_loss(self, params, va, vb)
        self._pending_keys = keys_b
        return loss

    def after_step(self, params):
        self.queue.enqueue(self._pending_keys)
        self.pair.online = {k: v for k, v in params.items()}
        momentum_update(self.pair)


def moco_loss(obj: _MoCo, params, va, vb):
    """Symmetrized InfoNCE: online queries of each view against momentum keys of the other."""
    t = obj.config.moco_temperature
    k_a, k_b = obj.keys(va), obj.keys(vb)
    queue = obj.queue.array()
    loss_ab = info_nce_loss(obj.project(params, va), k_b, queue, t)
    loss_ba = info_nce_loss(obj.project(params, vb), k_a, queue, t)
    return nc.mul(nc.add(loss_ab, loss_ba), 0.5), k_b


class _BYOL(_Objective):
    def __init__(self, encoder, params, config, rng):
        super().__init__(encoder, params, config, rng)
        params.update(
            _mlp_params("pred", (config.proj_dim, config.pred_hidden, config.proj_dim), rng.child(3))
        )
        self.pair = MomentumPair.from_online(self._target_view(params), config.byol_momentum)

    @staticmethod
    def _target_view(params):
        return {k: v for k, v in params.items() if not k.startswith("pred.")}

    def loss(self, params, va, vb):
        p_a = _mlp(params, "pred", self.project(params, va), 2)
        p_b = _mlp(params, "pred", self.project(params, vb), 2)
        z_a = self.project(self.pair.momentum, va)
        z_b = self.project(self.pair.momentum, vb)
        return nc.mul(nc.add(byol_loss(p_a, z_b), byol_loss(p_b, z_a)), 0.5)

    def after_step(self, params):
        self.pair.online = self._target_view(params)
        momentum_update(self.pair)


_OBJECTIVES = {
    "simclr": _SimCLR,
    "moco_v2": _MoCo,
    "byol": _BYOL,
    "swav": _SwAV,
    "barlow": _Barlow,
}


def moco_loss_step(
    encoder,
    params: dict,
    pair: MomentumPair,
    queue: NegativeQueue,
    view_a: np.ndarray,
    view_b: np.ndarray,
    temperature: float,
    optimizer=None,
    proj_layers: int = 2,
):
    """One MoCo update: loss, optional online step, key enqueue, momentum update.

    ``params`` and ``pair.momentum`` share keys (encoder plus ``proj.*``).
    Returns ``(loss_value, queue)``.
    """

    def project(p, x):
        return _mlp(p, "proj", encoder.forward(p, x), proj_layers)

    tape = Tape()
    nodes = {k: tape.watch(v) for k, v in params.items()}
    k_a = nc.l2_normalize(project(pair.momentum, view_a))
    k_b = nc.l2_normalize(project(pair.momentum, view_b))
    queue_arr = queue.array()
    loss = nc.mul(
        nc.add(
            info_nce_loss(project(nodes, view_a), k_b, queue_arr, temperature),
            info_nce_loss(project(nodes, view_b), k_a, queue_arr, temperature),
        ),
        0.5,
    )
    if optimizer is not None:
        names = list(nodes)
        grads = tape.gradients(loss, [nodes[k] for k in names])
        optimizer.step(params, dict(zip(names, grads)))
    queue.enqueue(k_b)
    pair.online = params
    momentum_update(pair)
    return float(loss.value), queue


def pretrain(
    encoder,
    pool: SamplePool,
    method: str,
    epochs: int,
    config: PretrainConfig | None = None,
    encoder_params: dict | None = None,
    loss_csv=None,
) -> tuple[dict, list[float]]:
    """Train ``encoder`` on augmented views of every pool sample.

    Returns the encoder parameters (``enc.*`` keys only) and the per-epoch mean
    loss. With ``epochs == 0`` the initial parameters come back unchanged.
    """
    if method not in _OBJECTIVES:
        raise ContractError(f"unknown pre-training method {method!r}; expected one of {METHODS}")
    if len(pool) == 0:
        raise ContractError("empty pool")
    config = config or PretrainConfig()
    rng = RngStream(config.seed)
    params = (
        {k: np.array(v, dtype=np.float64) for k, v in encoder_params.items()}
        if encoder_params is not None
        else encoder.init_params(rng.child(0))
    )
    enc_keys = list(params)
    objective = _OBJECTIVES[method](encoder, params, config, rng.child(1))
    opt = make_optimizer(config.optimizer, config.learning_rate, 0.9)
    x = pool.features
    n = x.shape[0]
    # drop a trailing batch too small for the batch statistics some losses need
    batch = min(config.batch_size, n)
    history = []
    for epoch in range(epochs):
        erng = rng.child(2, epoch)
        order = erng.permutation(n)
        losses = []
        for step, start in enumerate(range(0, n, batch)):
            idx = order[start : start + batch]
            if idx.size < 2:
                continue
            va = config.augmentation(x[idx], erng.child(step, 0))
            vb = config.augmentation(x[idx], erng.child(step, 1))
            tape = Tape()
            nodes = {k: tape.watch(v) for k, v in params.items()}
            loss = objective.loss(nodes, va, vb)
            names = list(nodes)
            grads = tape.gradients(loss, [nodes[k] for k in names])
            opt.step(params, dict(zip(names, grads)))
            objective.after_step(params)
            losses.append(float(loss.value))
        history.append(float(np.mean(losses)))
        log.debug("pretrain %s epoch %d loss %.4f", method, epoch, history[-1])
    if loss_csv is not None:
        write_loss_csv(loss_csv, history)
    return {k: params[k] for k in enc_keys}, history


def write_loss_csv(path, history) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for epoch, loss in enumerate(history):
            writer.writerow([epoch, repr(float(loss))])
