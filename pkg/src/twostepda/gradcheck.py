"""Central finite differences, the independent oracle for reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet


@dataclass
class GradCheck:
    analytic: np.ndarray
    numeric: np.ndarray

    @property
    def rel_error(self) -> np.ndarray:
        scale = np.maximum(np.maximum(np.abs(self.analytic), np.abs(self.numeric)), 1e-6)
        return np.abs(self.analytic - self.numeric) / scale

    def fraction_below(self, tol: float) -> float:
        return float(np.mean(self.rel_error < tol))

    @property
    def max_error(self) -> float:
        return float(self.rel_error.max()) if self.rel_error.size else 0.0


def check_params(loss_fn: Callable[[], ad.Tensor], params: ParameterSet | list[ParameterSet],
                 h: float = 1e-3) -> GradCheck:
    """Compare ``backward`` against central differences over every parameter entry.

    ``loss_fn`` must rebuild the graph from the current parameter values on each
    call.  Call inside ``autodiff.precision(np.float64)`` for meaningful results.
    """
    sets = params if isinstance(params, list) else [params]
    for ps in sets:
        ps.zero_grad()
    ad.backward(loss_fn())
    analytic, numeric = [], []
    for ps in sets:
        for _, t in ps.items():
            analytic.append(t.grad.reshape(-1).copy())
            flat = t.data.reshape(-1)
            num = np.empty_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = loss_fn().item()
                flat[i] = orig - h
                down = loss_fn().item()
                flat[i] = orig
                num[i] = (up - down) / (2 * h)
            numeric.append(num)
        ps.zero_grad()
    return GradCheck(np.concatenate(analytic), np.concatenate(numeric))


def check_inputs(fn: Callable[..., ad.Tensor], *arrays: np.ndarray, h: float = 1e-3) -> GradCheck:
    """Gradient of ``sum(fn(*inputs) * probe)`` w.r.t. every input entry.

    A fixed random probe turns any-shaped outputs into a scalar without
    hiding errors the way a plain sum would (e.g. softmax, whose plain sum is
    constant).
    """
    tensors = [ad.Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*tensors)
    probe = np.random.default_rng(1234).normal(size=out.shape)

    def scalar(ts):
        return ad.sum(ad.mul(fn(*ts), probe))

    ad.backward(scalar(tensors))
    analytic = np.concatenate([t.grad.reshape(-1) for t in tensors])
    numeric = []
    for k, a in enumerate(arrays):
        base = a.astype(ad.working_dtype())
        num = np.empty(base.size)
        for i in range(base.size):
            vals = []
            for sign in (1, -1):
                pert = base.copy().reshape(-1)
                pert[i] += sign * h
                ts = [ad.Tensor(x) for x in arrays]
                ts[k] = ad.Tensor(pert.reshape(base.shape))
                vals.append(scalar(ts).item())
            num[i] = (vals[0] - vals[1]) / (2 * h)
        numeric.append(num)
    return GradCheck(analytic, np.concatenate(numeric))
