"""Small trainable classifiers exposing the signals the selection strategies use.

A classifier is an encoder producing an embedding ``h(x)`` followed by a
linear head ``W h + b``. Parameters live in a flat ``dict`` of float64 arrays
whose keys are prefixed ``enc.`` or ``head.``; forward code is written with
:mod:`coldstart_al.numcore` primitives so it runs on arrays or tape nodes.
"""

from __future__ import annotations

import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numcore as nc
from .numcore import DTYPE, ContractError, RngStream, Tape

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
# row block used for all batched inference; fixed so that sequential and
# threaded evaluation perform identical floating point work
CHUNK_ROWS = 256


# ---------------------------------------------------------------------------
# Encoders
# ---------------------------------------------------------------------------


class IdentityEncoder:
    """``h(x) = x``; turns the classifier into plain softmax regression."""

    kind = "linear"

    def __init__(self, in_dim: int):
        self.in_dim = in_dim
        self.out_dim = in_dim

    def init_params(self, rng: RngStream) -> dict:
        return {}

    def forward(self, params, x):
        return x

    def config(self) -> dict:
        return {"kind": self.kind, "in_dim": self.in_dim}


class MLPEncoder:
    """Fully connected ReLU stack."""

    kind = "mlp"

    def __init__(self, in_dim: int, hidden=(64, 64)):
        self.in_dim = in_dim
        self.hidden = tuple(int(h) for h in hidden)
        if not self.hidden:
            raise ContractError("MLPEncoder needs at least one hidden layer")
        self.out_dim = self.hidden[-1]

    def init_params(self, rng: RngStream) -> dict:
        params = {}
        fan_in = self.in_dim
        for i, width in enumerate(self.hidden):
            params[f"enc.W{i}"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, width))
            params[f"enc.b{i}"] = np.zeros(width)
            fan_in = width
        return params

    def forward(self, params, x):
        h = x
        for i in range(len(self.hidden)):
            h = nc.relu(nc.add(nc.matmul(h, params[f"enc.W{i}"]), params[f"enc.b{i}"]))
        return h

    def config(self) -> dict:
        return {"kind": self.kind, "in_dim": self.in_dim, "hidden": list(self.hidden)}


class ConvEncoder:
    """Three stride-2 3x3 conv blocks and global average pooling, for square images."""

    kind = "conv"

    def __init__(self, image_shape=(48, 48), channels=(8, 16, 32)):
        self.image_shape = tuple(image_shape)
        self.channels = tuple(int(c) for c in channels)
        self.in_dim = self.image_shape[0] * self.image_shape[1]
        self.out_dim = self.channels[-1]

    def init_params(self, rng: RngStream) -> dict:
        params = {}
        c_in = 1
        for i, c_out in enumerate(self.channels):
            fan_in = c_in * 9
            params[f"enc.K{i}"] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_in, 3, 3))
            params[f"enc.c{i}"] = np.zeros((1, c_out, 1, 1))
            c_in = c_out
        return params

    def forward(self, params, x):
        batch = nc.value_of(x).shape[0]
        h = nc.reshape(x, (batch, 1) + self.image_shape)
        for i in range(len(self.channels)):
            h = nc.conv2d(h, params[f"enc.K{i}"], stride=2, pad=1)
            h = nc.relu(nc.add(h, params[f"enc.c{i}"]))
        c, hh, ww = nc.value_of(h).shape[1:]
        h = nc.reshape(h, (batch, c, hh * ww))
        return nc.mean(h, axis=2)

    def config(self) -> dict:
        return {"kind": self.kind, "image_shape": list(self.image_shape), "channels": list(self.channels)}


def encoder_from_config(cfg: dict):
    kind = cfg["kind"]
    if kind == "linear":
        return IdentityEncoder(cfg["in_dim"])
    if kind == "mlp":
        return MLPEncoder(cfg["in_dim"], cfg["hidden"])
    if kind == "conv":
        return ConvEncoder(cfg["image_shape"], cfg["channels"])
    raise ContractError(f"unknown encoder kind {kind!r}")


# ---------------------------------------------------------------------------
# Classifier
# ---------------------------------------------------------------------------


@dataclass
class ProbabilisticClassifier:
    encoder: object
    num_classes: int
    params: dict = field(default_factory=dict)
    dropout_rate: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ContractError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def embedding_dim(self) -> int:
        return self.encoder.out_dim

    @property
    def encoder_params(self) -> dict:
        return {k: v for k, v in self.params.items() if k.startswith("enc.")}

    def copy(self) -> "ProbabilisticClassifier":
        return ProbabilisticClassifier(
            self.encoder,
            self.num_classes,
            {k: v.copy() for k, v in self.params.items()},
            self.dropout_rate,
        )


def build_classifier(
    encoder,
    num_classes: int,
    rng: RngStream,
    dropout_rate: float = 0.0,
    encoder_params: dict | None = None,
    zero_head: bool = False,
) -> ProbabilisticClassifier:
    """Fresh head on top of either new or supplied encoder weights."""
    params = (
        {k: np.array(v, dtype=DTYPE) for k, v in encoder_params.items()}
        if encoder_params is not None
        else encoder.init_params(rng.child(0))
    )
    e = encoder.out_dim
    if zero_head:
        params["head.W"] = np.zeros((num_classes, e))
    else:
        params["head.W"] = rng.child(1).normal(0.0, np.sqrt(1.0 / e), size=(num_classes, e))
    params["head.b"] = np.zeros(num_classes)
    return ProbabilisticClassifier(encoder, num_classes, params, dropout_rate)


def dropout_mask(rng: RngStream, shape, rate: float) -> np.ndarray:
    keep = 1.0 - rate
    return (rng.random(shape) >= rate) / keep


def forward(model: ProbabilisticClassifier, params, x, mask=None):
    """Return ``(h, logits)``; ``mask`` is an optional dropout mask on ``h``."""
    h = model.encoder.forward(params, x)
    hd = h if mask is None else nc.dropout(h, mask)
    logits = nc.add(nc.matmul(hd, nc.transpose(params["head.W"])), params["head.b"])
    return h, logits


def _chunked(fn, x: np.ndarray, n_jobs: int = 1) -> np.ndarray:
    """Apply ``fn`` to fixed row blocks, optionally threaded, merged in row order."""
    blocks = [x[i : i + CHUNK_ROWS] for i in range(0, x.shape[0], CHUNK_ROWS)]
    if n_jobs > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(fn, blocks))
    else:
        parts = [fn(b) for b in blocks]
    return np.concatenate(parts, axis=0)


def _rows(features, indices):
    x = np.asarray(getattr(features, "features", features), dtype=DTYPE)
    return x if indices is None else x[np.asarray(indices, dtype=np.int64)]


def embed(model: ProbabilisticClassifier, features, indices=None, n_jobs: int = 1) -> np.ndarray:
    """Penultimate embeddings ``h(x)`` with dropout disabled."""
    x = _rows(features, indices)
    return _chunked(lambda b: model.encoder.forward(model.params, b), x, n_jobs)


def predict_logits(model, features, indices=None, n_jobs: int = 1) -> np.ndarray:
    x = _rows(features, indices)
    return _chunked(lambda b: forward(model, model.params, b)[1], x, n_jobs)


def predict_proba(model, features, indices=None, n_jobs: int = 1) -> np.ndarray:
    """Class probabilities ``softmax(W h(x) + b)``, deterministic."""
    return nc.softmax(predict_logits(model, features, indices, n_jobs))


def stochastic_predict(
    model: ProbabilisticClassifier, features, indices, passes: int, rng: RngStream
) -> np.ndarray:
    """``passes`` MC-dropout forward passes, shape ``(passes, n, K)``.

    Pass ``t`` draws its mask from ``rng.child(t)`` so passes are independent
    of each other and of evaluation order.
    """
    if model.dropout_rate <= 0.0:
        raise ContractError(
            "stochastic_predict needs dropout_rate > 0; without dropout every pass is "
            "identical and the mutual-information score is identically zero"
        )
    if passes < 2:
        raise ContractError("passes must be >= 2")
    h = embed(model, features, indices)
    W, b = model.params["head.W"], model.params["head.b"]
    out = np.empty((passes, h.shape[0], model.num_classes))
    for t in range(passes):
        mask = dropout_mask(rng.child(t), h.shape, model.dropout_rate)
        out[t] = nc.softmax((h * mask) @ W.T + b)
    return out


def input_gradients(model: ProbabilisticClassifier, x: np.ndarray, target_class: int) -> np.ndarray:
    """Gradient of logit ``target_class`` w.r.t. each input row (rows are independent)."""
    tape = Tape()
    params = {k: v for k, v in model.params.items()}
    xv = tape.watch(np.asarray(x, dtype=DTYPE))
    _, logits = forward(model, params, xv)
    select = np.zeros(logits.shape)
    select[:, target_class] = 1.0
    (g,) = tape.gradients(nc.sum(nc.mul(logits, select)), [xv])
    return g


def input_gradient(model: ProbabilisticClassifier, sample, target_class: int) -> np.ndarray:
    """Gradient of a single logit (not probability) w.r.t. one input row."""
    row = np.asarray(sample, dtype=DTYPE).reshape(1, -1)
    return input_gradients(model, row, target_class)[0]


def last_layer_gradient(model: ProbabilisticClassifier, sample, pseudo_label: int) -> np.ndarray:
    """Cross-entropy gradient w.r.t. the head weights, flattened row-major (K*e)."""
    row = np.asarray(sample, dtype=DTYPE).reshape(1, -1)
    h = model.encoder.forward(model.params, row)
    p = nc.softmax(h @ model.params["head.W"].T + model.params["head.b"])
    return gradient_embedding(p, h, np.array([pseudo_label]))[0]


def gradient_embedding(probs: np.ndarray, h: np.ndarray, labels) -> np.ndarray:
    """Rows of ``(p - onehot(y)) outer h`` flattened; shape ``(n, K*e)``."""
    residual = probs.copy()
    residual[np.arange(len(residual)), np.asarray(labels, dtype=np.int64)] -= 1.0
    return (residual[:, :, None] * h[:, None, :]).reshape(len(residual), -1)


def pseudo_labels(probs: np.ndarray) -> np.ndarray:
    """Argmax with lowest-index tie-break (``np.argmax`` already returns the first)."""
    return np.argmax(probs, axis=1)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    optimizer: str = "sgd"
    learning_rate: float = 0.01
    batch_size: int = 20
    epochs: int = 30
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ContractError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}")
        if self.learning_rate <= 0:
            raise ContractError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ContractError("epochs must be >= 1")


class SGD:
    def __init__(self, lr: float, momentum: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict = {}

    def step(self, params: dict, grads: dict) -> None:
        for k, g in grads.items():
            if self.momentum:
                v = self.velocity.get(k)
                v = g if v is None else self.momentum * v + g
                self.velocity[k] = v
                g = v
            params[k] = params[k] - self.lr * g


class Adam:
    def __init__(self, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            m = self.b1 * self.m.get(k, 0.0) + (1.0 - self.b1) * g
            v = self.b2 * self.v.get(k, 0.0) + (1.0 - self.b2) * g * g
            self.m[k], self.v[k] = m, v
            params[k] = params[k] - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name: str, lr: float, momentum: float = 0.0):
    if name == "sgd":
        return SGD(lr, momentum)
    if name == "adam":
        return Adam(lr)
    raise ContractError(f"unknown optimizer {name!r}")


def train_supervised(
    model: ProbabilisticClassifier,
    features,
    labeled_indices,
    labels,
    config: TrainConfig,
    freeze_encoder: bool = False,
) -> tuple[ProbabilisticClassifier, float]:
    """Mini-batch cross-entropy training; returns a new model and the last epoch's mean loss."""
    idx = np.asarray(labeled_indices, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)
    if idx.size == 0:
        raise ContractError("cannot train on an empty labeled set")
    if idx.size != y.size:
        raise ContractError("labeled_indices and labels differ in length")
    x = _rows(features, idx)
    model = model.copy()
    params = model.params
    trainable = [k for k in params if not (freeze_encoder and k.startswith("enc."))]
    opt = make_optimizer(config.optimizer, config.learning_rate, config.momentum)
    rng = RngStream(config.seed)
    history = []
    for epoch in range(config.epochs):
        erng = rng.child(epoch)
        order = erng.permutation(idx.size)
        total = 0.0
        for start in range(0, idx.size, config.batch_size):
            batch = order[start : start + config.batch_size]
            tape = Tape()
            nodes = {k: (tape.watch(v) if k in trainable else v) for k, v in params.items()}
            mask = None
            if model.dropout_rate > 0:
                mask = dropout_mask(erng.child(start), (batch.size, model.embedding_dim), model.dropout_rate)
            _, logits = forward(model, nodes, x[batch], mask)
            loss = nc.cross_entropy(logits, y[batch])
            grads = tape.gradients(loss, [nodes[k] for k in trainable])
            opt.step(params, dict(zip(trainable, grads)))
            total += float(loss.value) * batch.size
        history.append(total / idx.size)
    if len(history) > 1 and history[-1] > history[0]:
        log.info("training loss rose from %.4f to %.4f", history[0], history[-1])
    return model, history[-1]


# ---------------------------------------------------------------------------
# Momentum encoders
# ---------------------------------------------------------------------------


@dataclass
class MomentumPair:
    """Online parameters and their exponential moving average."""

    online: dict
    momentum: dict
    coefficient: float = 0.99

    def __post_init__(self):
        if not 0.0 <= self.coefficient < 1.0:
            raise ContractError("momentum coefficient must be in [0, 1)")

    @classmethod
    def from_online(cls, online: dict, coefficient: float = 0.99) -> "MomentumPair":
        return cls(online, {k: np.array(v, copy=True) for k, v in online.items()}, coefficient)


def momentum_update(pair: MomentumPair) -> MomentumPair:
    """``momentum <- m * momentum + (1 - m) * online``, elementwise, in place."""
    m = pair.coefficient
    for k, q in pair.online.items():
        prev = pair.momentum.get(k)
        if prev is None or np.shape(prev) != np.shape(q):
            raise ContractError(
                f"parameter {k!r}: momentum shape {np.shape(prev)} != online shape {np.shape(q)}"
            )
        pair.momentum[k] = m * prev + (1.0 - m) * q
    return pair


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_model(model: ProbabilisticClassifier, path) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "encoder": model.encoder.config(),
        "num_classes": model.num_classes,
        "dropout_rate": model.dropout_rate,
    }
    buf = io.BytesIO()
    np.savez(buf, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **model.params)
    Path(path).write_bytes(buf.getvalue())


def load_model(path) -> ProbabilisticClassifier:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ContractError(f"unsupported checkpoint version {meta.get('version')}")
        params = {k: data[k].astype(DTYPE) for k in data.files if k != "__meta__"}
    return ProbabilisticClassifier(
        encoder_from_config(meta["encoder"]), meta["num_classes"], params, meta["dropout_rate"]
    )
