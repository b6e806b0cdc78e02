"""Segmentation, entropy and adversarial losses.

Probability maps follow one layout convention throughout the package: the
class axis is axis 0 for an unbatched map (``C``, or ``C x H x W``) and axis 1
for a batch (``N x C`` or ``N x C x H x W``).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DimensionError

EPS = 1e-7


def class_axis(ndim: int) -> int:
    if ndim in (1, 3):
        return 0
    if ndim in (2, 4):
        return 1
    raise DimensionError(f"probability maps have 1 to 4 axes, got {ndim}")


def one_hot(labels: np.ndarray, num_classes: int, axis: int | None = None) -> np.ndarray:
    """Integer label map -> one-hot array with the class axis inserted at ``axis``.

    ``axis`` defaults to the layout convention for the resulting rank.
    """
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise DimensionError(f"label values must lie in [0, {num_classes})")
    out = np.eye(num_classes, dtype=ad.working_dtype())[labels]
    if axis is None:
        axis = class_axis(labels.ndim + 1)
    return np.moveaxis(out, -1, axis)


def _as_onehot(y, p: Tensor) -> np.ndarray:
    y = y.data if isinstance(y, Tensor) else np.asarray(y)
    if y.shape == p.shape:
        return y
    axis = class_axis(p.ndim)
    expect = p.shape[:axis] + p.shape[axis + 1:]
    if y.shape != expect:
        raise DimensionError(f"label shape {y.shape} does not match probability map {p.shape}")
    return one_hot(y.astype(np.int64), p.shape[axis], axis)


def seg_cross_entropy(p, y, reduction: str = "sum") -> Tensor:
    """``-sum_{pixels} sum_c y log p`` with ``p`` clamped to at least 1e-7.

    ``y`` is a one-hot map of the same shape as ``p`` or an integer label map.
    ``reduction="mean"`` divides by the number of pixels.
    """
    p = ad.as_tensor(p)
    y = _as_onehot(y, p)
    loss = -ad.sum(ad.mul(y, ad.log(p, EPS)))
    if reduction == "mean":
        pixels = p.data.size // p.shape[class_axis(p.ndim)]
        loss = ad.mul(loss, 1.0 / pixels)
    elif reduction != "sum":
        raise ConfigError(f"unknown reduction {reduction!r}")
    return loss


def entropy_map(p) -> Tensor:
    """Per-pixel Shannon entropy in nats; the class axis is summed out."""
    p = ad.as_tensor(p)
    return -ad.sum(ad.mul(p, ad.log(p, EPS)), axis=class_axis(p.ndim))


def _reduce(x: Tensor, reduction: str) -> Tensor:
    if reduction == "mean":
        return ad.mean(x)
    if reduction == "sum":
        return ad.sum(x)
    raise ConfigError(f"unknown reduction {reduction!r}")


def discriminator_loss(d_src, d_tgt, reduction: str = "mean") -> Tensor:
    """Binary cross-entropy: label 1 for the source-role map, 0 for the target-role map.

    Used both for source-vs-target domains and for easy-vs-hard splits.
    """
    d_src, d_tgt = ad.as_tensor(d_src), ad.as_tensor(d_tgt)
    if d_src.shape[1:] != d_tgt.shape[1:]:
        raise DimensionError(f"discriminator maps differ in shape: {d_src.shape} vs {d_tgt.shape}")
    real = ad.log(ad.clamp(d_src, EPS, 1.0 - EPS))
    fake = ad.log(ad.sub(1.0, ad.clamp(d_tgt, EPS, 1.0 - EPS)))
    return -(_reduce(real, reduction) + _reduce(fake, reduction))


def domain_discriminator_loss(d_source, d_target, reduction: str = "mean") -> Tensor:
    return discriminator_loss(d_source, d_target, reduction)


def split_discriminator_loss(d_easy, d_hard, reduction: str = "mean") -> Tensor:
    return discriminator_loss(d_easy, d_hard, reduction)


def generator_adv_loss(d_tgt, reduction: str = "mean") -> Tensor:
    """Non-saturating generator loss ``-mean log D(target-role map)``."""
    d_tgt = ad.as_tensor(d_tgt)
    return -_reduce(ad.log(ad.clamp(d_tgt, EPS, 1.0 - EPS)), reduction)


def total_generator_objective(seg_loss, adv_loss, adv_weight: float) -> Tensor:
    if adv_weight < 0:
        raise ConfigError(f"adversarial weight must be non-negative, got {adv_weight}")
    return ad.add(seg_loss, ad.mul(adv_loss, adv_weight))
