from .augment import AugmentationPolicy, augment
from .losses import (
    NegativeQueue,
    PrototypeBank,
    barlow_twins_loss,
    byol_loss,
    cross_correlation,
    info_nce_loss,
    nt_xent_loss,
    sinkhorn,
    swav_loss,
    swav_step,
)
from .pretrain import METHODS, PretrainConfig, moco_loss_step, pretrain

__all__ = [
    "AugmentationPolicy",
    "METHODS",
    "NegativeQueue",
    "PretrainConfig",
    "PrototypeBank",
    "augment",
    "barlow_twins_loss",
    "byol_loss",
    "cross_correlation",
    "info_nce_loss",
    "moco_loss_step",
    "nt_xent_loss",
    "pretrain",
    "sinkhorn",
    "swav_loss",
    "swav_step",
]
