"""Hard pseudo labels from soft predictions."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .losses import class_axis, one_hot


def to_pseudo_label(p) -> np.ndarray:
    """Per-pixel argmax as an ``int32`` label map (ties go to the lowest class)."""
    p = p.data if isinstance(p, Tensor) else np.asarray(p)
    return np.argmax(p, axis=class_axis(p.ndim)).astype(np.int32)


def to_pseudo_onehot(p) -> np.ndarray:
    p = p.data if isinstance(p, Tensor) else np.asarray(p)
    axis = class_axis(p.ndim)
    return one_hot(to_pseudo_label(p), p.shape[axis], axis)
