"""Flat ``key = value`` experiment configuration."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

from ..acquisition import STRATEGIES
from ..models import TrainConfig
from ..numcore import ContractError
from ..ssl import METHODS, AugmentationPolicy, PretrainConfig


class ConfigError(ValueError):
    pass


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class ExperimentConfig:
    # dataset
    dataset: str = "synthetic"
    fer2013_path: str = ""
    eval_split: str = "PublicTest"
    synth_classes: int = 10
    synth_dims: int = 32
    synth_pool_size: int = 2000
    synth_eval_size: int = 1000
    synth_spread: float = 0.3
    synth_imbalance: tuple = (4, 4, 1, 1, 1, 1, 1, 1, 1, 1)
    # -1 draws a fresh dataset from each run seed
    data_seed: int = -1
    # model
    model: str = "mlp"
    hidden: tuple = (64, 64)
    dropout_rate: float = 0.1
    # selection
    strategy: str = "least_confidence"
    candidate_cap: int = 0
    bald_passes: int = 25
    deepfool_max_iters: int = 50
    deepfool_overshoot: float = 0.02
    glister_lr: float = 0.01
    glister_val_fraction: float = 0.2
    coreset_space: str = "embedding"
    # pre-training
    pretrain: str = "none"
    pretrain_epochs: int = 100
    pretrain_batch_size: int = 256
    pretrain_optimizer: str = "adam"
    pretrain_lr: float = 1e-3
    proj_hidden: int = 64
    proj_dim: int = 32
    simclr_temperature: float = 0.5
    moco_temperature: float = 0.2
    moco_momentum: float = 0.99
    queue_size: int = 1024
    byol_momentum: float = 0.99
    swav_prototypes: int = 32
    swav_eps: float = 0.05
    swav_iters: int = 3
    barlow_lambda: float = 0.005
    aug_crop_pad: int = 4
    aug_flip_p: float = 0.5
    aug_noise: float = 0.05
    aug_jitter: float = 0.2
    # protocol
    budget_fraction: float = 0.40
    initial_fraction: float = 0.05
    cycles: int = 7
    epochs_per_cycle: int = 30
    optimizer: str = "sgd"
    learning_rate: float = 0.01
    batch_size: int = 20
    momentum: float = 0.9
    warm_start: bool = False
    freeze_encoder: bool = False
    seeds: tuple = (0, 1, 2)
    # execution
    n_jobs: int = 1
    seed_workers: int = 1
    dump_scores: bool = False
    record_wall_time: bool = False

    def __post_init__(self):
        # canonical element types so equal configs serialize (and hash) identically
        self.synth_imbalance = tuple(float(v) for v in self.synth_imbalance)
        self.hidden = tuple(int(v) for v in self.hidden)
        self.seeds = tuple(int(v) for v in self.seeds)
        self.validate()

    def validate(self) -> None:
        if self.dataset not in ("synthetic", "fer2013"):
            raise ConfigError(f"dataset must be 'synthetic' or 'fer2013', got {self.dataset!r}")
        if self.dataset == "fer2013" and not self.fer2013_path:
            raise ConfigError("fer2013_path is required when dataset = fer2013")
        if self.eval_split not in ("PublicTest", "PrivateTest"):
            raise ConfigError("eval_split must be PublicTest or PrivateTest")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.pretrain != "none" and self.pretrain not in METHODS:
            raise ConfigError(f"unknown pretrain method {self.pretrain!r}")
        if self.model not in ("linear", "mlp", "conv"):
            raise ConfigError(f"unknown model {self.model!r}")
        if not 0 < self.initial_fraction <= self.budget_fraction <= 1:
            raise ConfigError("need 0 < initial_fraction <= budget_fraction <= 1")
        if self.cycles < 2:
            raise ConfigError("cycles must be >= 2")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        if self.epochs_per_cycle < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("epochs_per_cycle, batch_size and learning_rate must be positive")
        if self.pretrain_epochs < 0:
            raise ConfigError("pretrain_epochs must be >= 0")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if any(s < 0 or s >= 2**64 for s in self.seeds):
            raise ConfigError("seeds must be unsigned 64-bit integers")
        if self.dataset == "synthetic" and len(self.synth_imbalance) != self.synth_classes:
            raise ConfigError("synth_imbalance needs one entry per class")
        if self.strategy == "bald" and self.dropout_rate <= 0:
            raise ConfigError("strategy bald requires dropout_rate > 0")

    # -- derived settings -------------------------------------------------

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            optimizer=self.optimizer,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs_per_cycle,
            momentum=self.momentum,
            seed=seed,
        )

    def pretrain_config(self, seed: int, image_shape=None) -> PretrainConfig:
        aug = AugmentationPolicy(
            crop_pad=self.aug_crop_pad if image_shape else 0,
            flip_p=self.aug_flip_p if image_shape else 0.0,
            noise_sigma=self.aug_noise,
            jitter=self.aug_jitter,
            image_shape=image_shape,
        )
        return PretrainConfig(
            batch_size=self.pretrain_batch_size,
            optimizer=self.pretrain_optimizer,
            learning_rate=self.pretrain_lr,
            proj_hidden=self.proj_hidden,
            proj_dim=self.proj_dim,
            temperature=self.simclr_temperature,
            moco_temperature=self.moco_temperature,
            moco_momentum=self.moco_momentum,
            queue_size=self.queue_size,
            byol_momentum=self.byol_momentum,
            swav_prototypes=self.swav_prototypes,
            swav_eps=self.swav_eps,
            swav_iters=self.swav_iters,
            barlow_lambda=self.barlow_lambda,
            seed=seed,
            augmentation=aug,
        )

    def strategy_params(self) -> dict:
        return {
            "candidate_cap": self.candidate_cap,
            "bald_passes": self.bald_passes,
            "deepfool_max_iters": self.deepfool_max_iters,
            "deepfool_overshoot": self.deepfool_overshoot,
            "glister_lr": self.glister_lr,
            "glister_val_fraction": self.glister_val_fraction,
            "coreset_space": self.coreset_space,
        }

    # -- serialization ----------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        """Hash of every setting except the seed list and execution knobs."""
        skip = {"seeds", "n_jobs", "seed_workers", "dump_scores", "record_wall_time"}
        text = "\n".join(
            line for line in self.to_text().splitlines() if line.split(" = ")[0] not in skip
        )
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_PARSERS = {
    "int": int,
    "float": float,
    "str": str.strip,
    "bool": _bool,
}
_TUPLE_PARSERS = {"synth_imbalance": _floats, "hidden": _ints, "seeds": _ints}


def parse_value(key: str, text: str):
    known = {f.name: f for f in fields(ExperimentConfig)}
    if key not in known:
        raise ConfigError(f"unknown config key {key!r}")
    if key in _TUPLE_PARSERS:
        return _TUPLE_PARSERS[key](text)
    try:
        return _PARSERS[known[key].type](text.strip())
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from None


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        try:
            values[key] = parse_value(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{lineno}: {exc}") from None
    try:
        return ExperimentConfig(**values)
    except ContractError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))
