"""View generation for contrastive pre-training.

Images (when ``image_shape`` is set) get a padded random crop and a random
horizontal flip; every input gets a per-sample intensity scale and additive
Gaussian noise, then is clipped back to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numcore import ContractError, RngStream


@dataclass(frozen=True)
class AugmentationPolicy:
    crop_pad: int = 4
    flip_p: float = 0.5
    noise_sigma: float = 0.05
    jitter: float = 0.2
    image_shape: tuple[int, int] | None = None

    def __post_init__(self):
        if self.crop_pad < 0 or not 0.0 <= self.flip_p <= 1.0:
            raise ContractError("crop_pad must be >= 0 and flip_p in [0, 1]")
        if self.noise_sigma < 0 or not 0.0 <= self.jitter < 1.0:
            raise ContractError("noise_sigma must be >= 0 and jitter in [0, 1)")

    def __call__(self, x: np.ndarray, rng: RngStream) -> np.ndarray:
        return augment(x, self, rng)


def random_crop(images: np.ndarray, pad: int, rng: RngStream) -> np.ndarray:
    """Zero-pad each (H, W) image by ``pad`` and crop a random H x W window."""
    n, h, w = images.shape
    padded = np.pad(images, ((0, 0), (pad, pad), (pad, pad)))
    dy = rng.integers(0, 2 * pad + 1, size=n)
    dx = rng.integers(0, 2 * pad + 1, size=n)
    out = np.empty_like(images)
    for i in range(n):
        out[i] = padded[i, dy[i] : dy[i] + h, dx[i] : dx[i] + w]
    return out


def augment(x: np.ndarray, policy: AugmentationPolicy, rng: RngStream) -> np.ndarray:
    n = x.shape[0]
    out = np.array(x, dtype=np.float64)
    if policy.image_shape is not None:
        imgs = out.reshape((n,) + tuple(policy.image_shape))
        if policy.crop_pad:
            imgs = random_crop(imgs, policy.crop_pad, rng.child(0))
        if policy.flip_p > 0:
            flip = rng.child(1).random(n) < policy.flip_p
            imgs[flip] = imgs[flip, :, ::-1]
        out = imgs.reshape(n, -1)
    if policy.jitter > 0:
        out = out * rng.child(2).uniform(1.0 - policy.jitter, 1.0 + policy.jitter, size=(n, 1))
    if policy.noise_sigma > 0:
        out = out + rng.child(3).normal(0.0, policy.noise_sigma, size=out.shape)
    return np.clip(out, 0.0, 1.0)
