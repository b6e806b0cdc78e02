"""Dense tensors and a define-by-run reverse-mode differentiation engine.

Every differentiable operation returns a new :class:`Tensor` that remembers its
parents and a closure propagating the output gradient back to them.  Calling
:func:`backward` on a scalar walks that graph in reverse topological order.

The engine works in ``float32`` by default.  :func:`precision` switches the
working dtype (used by the finite-difference checks, which need ``float64`` to
resolve differences at ``h = 1e-3``).
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, NumericError, UsageError

_DTYPE = [np.float32]
_GRAD_ENABLED = [True]


def working_dtype():
    return _DTYPE[-1]


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily run every new tensor in ``dtype``."""
    _DTYPE.append(np.dtype(dtype).type)
    try:
        yield
    finally:
        _DTYPE.pop()


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Forward passes inside this block build no graph (evaluation only)."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values in {what}")


class Tensor:
    """A numpy array plus the bookkeeping needed for reverse-mode gradients."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (),
                 _backward: Callable[[np.ndarray], None] | None = None, op: str = ""):
        arr = np.asarray(data, dtype=working_dtype())
        _check_finite(arr, op or "tensor input")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = _GRAD_ENABLED[-1] and (
            requires_grad or any(p.requires_grad for p in _parents))
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g


def _not_scalar(t: Tensor):
    raise DimensionError(f"item() needs a single-element tensor, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return Tensor(a.data + b.data, _parents=(a, b), _backward=backward, op="add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return Tensor(a.data - b.data, _parents=(a, b), _backward=backward, op="sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "multiply")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor(a.data * b.data, _parents=(a, b), _backward=backward, op="multiply")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return Tensor(a.data @ b.data, _parents=(a, b), _backward=backward, op="matmul")


def log(x, eps: float = 0.0) -> Tensor:
    """Natural log of ``max(x, eps)``; clamped entries get zero gradient."""
    x = as_tensor(x)
    xd = np.maximum(x.data, eps) if eps > 0 else x.data
    if (xd <= 0).any():
        raise NumericError("log of non-positive value")
    mask = x.data >= eps if eps > 0 else None

    def backward(g):
        gx = g / xd
        if mask is not None:
            gx = gx * mask
        x._accumulate(gx)

    return Tensor(np.log(xd), _parents=(x,), _backward=backward, op="log")


def clamp(x, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    mask = (x.data >= lo) & (x.data <= hi)

    def backward(g):
        x._accumulate(g * mask)

    return Tensor(np.clip(x.data, lo, hi), _parents=(x,), _backward=backward, op="clamp")


# --------------------------------------------------------------------------
# activations


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def backward(g):
        x._accumulate(g * mask)

    return Tensor(x.data * mask, _parents=(x,), _backward=backward, op="relu")


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = as_tensor(x)
    scale = np.where(x.data > 0, 1.0, slope).astype(x.data.dtype)

    def backward(g):
        x._accumulate(g * scale)

    return Tensor(x.data * scale, _parents=(x,), _backward=backward, op="leaky-relu")


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)

    def backward(g):
        x._accumulate(g * out * (1.0 - out))

    return Tensor(out, _parents=(x,), _backward=backward, op="sigmoid")


def softmax(x, axis: int) -> Tensor:
    """Softmax along ``axis`` (the channel axis for segmentation maps)."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        x._accumulate(out * (g - dot))

    return Tensor(out, _parents=(x,), _backward=backward, op="channelwise-softmax")


# --------------------------------------------------------------------------
# reductions and shape manipulation


def sum(x, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.shape))

    return Tensor(out, _parents=(x,), _backward=backward, op="sum")


def mean(x, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if x.data.size == 0:
        raise DimensionError("mean of an empty tensor")
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size // max(out.size, 1)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g / count, x.shape))

    return Tensor(out, _parents=(x,), _backward=backward, op="mean")


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None

    def backward(g):
        x._accumulate(g.reshape(x.shape))

    return Tensor(out, _parents=(x,), _backward=backward, op="reshape")


def concat(tensors: Sequence, axis: int) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: {exc}") from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def backward(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return Tensor(out, _parents=tuple(ts), _backward=backward, op="concat")


def upsample2x(x) -> Tensor:
    """Nearest-neighbour upsampling of the last two axes by 2."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise DimensionError("upsample-nearest needs at least 2 spatial axes")
    out = x.data.repeat(2, axis=-2).repeat(2, axis=-1)

    def backward(g):
        h, w = x.shape[-2:]
        g = g.reshape(g.shape[:-2] + (h, 2, w, 2))
        x._accumulate(g.sum(axis=(-3, -1)))

    return Tensor(out, _parents=(x,), _backward=backward, op="upsample-nearest")


# --------------------------------------------------------------------------
# 3x3 convolution with zero padding 1


def conv2d(x, w, b=None, stride: int = 1) -> Tensor:
    """3x3 convolution, zero padding 1, stride 1 or 2.

    ``x`` is ``C_in x H x W`` or ``N x C_in x H x W``; ``w`` is
    ``C_out x C_in x 3 x 3``; ``b`` is ``C_out``.
    """
    x, w = as_tensor(x), as_tensor(w)
    if stride not in (1, 2):
        raise DimensionError(f"conv2d: stride must be 1 or 2, got {stride}")
    unbatched = x.ndim == 3
    xd = x.data[None] if unbatched else x.data
    if xd.ndim != 4 or w.ndim != 4 or w.shape[2:] != (3, 3):
        raise DimensionError(f"conv2d: bad shapes input {x.shape}, kernel {w.shape}")
    n, cin, h, wd = xd.shape
    cout = w.shape[0]
    if w.shape[1] != cin:
        raise DimensionError(f"conv2d: input has {cin} channels, kernel expects {w.shape[1]}")
    if b is not None:
        b = as_tensor(b)
        if b.shape != (cout,):
            raise DimensionError(f"conv2d: bias shape {b.shape} != ({cout},)")

    padded = np.pad(xd, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ho, wo = (h - 1) // stride + 1, (wd - 1) // stride + 1
    # cols[n, c, k] holds the k-th 3x3 tap of channel c, laid out as Ho x Wo
    cols = np.empty((n, cin, 9, ho, wo), dtype=xd.dtype)
    for k in range(9):
        i, j = divmod(k, 3)
        cols[:, :, k] = padded[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    cols = cols.reshape(n, cin * 9, ho * wo)
    wmat = w.data.reshape(cout, cin * 9)
    out = np.matmul(wmat, cols)
    if b is not None:
        out += b.data[:, None]
    out = out.reshape(n, cout, ho, wo)
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g3 = (g[None] if unbatched else g).reshape(n, cout, ho * wo)
        if w.requires_grad:
            gw = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0)
            w._accumulate(gw.reshape(w.shape))
        if b is not None and b.requires_grad:
            b._accumulate(g3.sum(axis=(0, 2)))
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g3).reshape(n, cin, 9, ho, wo)
            gpad = np.zeros_like(padded)
            for k in range(9):
                i, j = divmod(k, 3)
                gpad[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, k]
            gx = gpad[:, :, 1:h + 1, 1:wd + 1]
            x._accumulate(gx[0] if unbatched else gx)

    return Tensor(out[0] if unbatched else out, _parents=parents, _backward=backward, op="conv2d")


def dense(x, w, b) -> Tensor:
    """``x @ w + b`` for a batch of row vectors."""
    return add(matmul(x, w), b)


# --------------------------------------------------------------------------
# backward pass


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if not isinstance(loss, Tensor) or not loss.requires_grad:
        raise UsageError("backward() called on a tensor that is not on the tape")
    if loss.data.size != 1:
        raise DimensionError(f"backward() needs a scalar loss, got shape {loss.shape}")
    order = _topological(loss)
    # interior nodes keep their gradient in .grad only transiently
    for node in order:
        if node._parents:
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        _check_finite(node.grad, f"gradient of {node.op}")
        node._backward(node.grad)
        node.grad = None
    for node in order:
        if not node._parents and node.grad is not None:
            _check_finite(node.grad, "leaf gradient")


# --------------------------------------------------------------------------
# parameters and optimizers


class ParameterSet:
    """Named trainable tensors with their gradients and optimizer state."""

    def __init__(self, arrays: dict[str, np.ndarray] | None = None):
        self.params: dict[str, Tensor] = {}
        self.state: dict[str, dict[str, np.ndarray]] = {}
        self.step_count = 0
        for name, arr in (arrays or {}).items():
            self.add(name, arr)

    def add(self, name: str, arr) -> Tensor:
        t = Tensor(arr)
        t.requires_grad = True
        t.grad = np.zeros_like(t.data)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self) -> Iterable[tuple[str, Tensor]]:
        return self.params.items()

    def count(self) -> int:
        return int(np.sum([t.data.size for t in self.params.values()]))

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = np.zeros_like(t.data)

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def copy(self) -> "ParameterSet":
        """Fresh parameters with the same values and zeroed optimizer state."""
        return ParameterSet(self.arrays())

    def _grad(self, t: Tensor) -> np.ndarray:
        return t.grad if t.grad is not None else np.zeros_like(t.data)


def sgd_step(params: ParameterSet, lr: float, momentum: float = 0.0,
             weight_decay: float = 0.0) -> None:
    """Momentum SGD; L2 decay is folded into the gradient before momentum."""
    if not lr > 0:
        raise ConfigError(f"sgd learning rate must be positive, got {lr}")
    for name, t in params.items():
        g = params._grad(t)
        if weight_decay:
            g = g + weight_decay * t.data
        if momentum:
            buf = params.state.setdefault(name, {}).get("momentum")
            buf = g.copy() if buf is None else momentum * buf + g
            params.state[name]["momentum"] = buf
            g = buf
        t.data = (t.data - lr * g).astype(t.data.dtype)
    params.step_count += 1
    params.zero_grad()


def adam_step(params: ParameterSet, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    if not eps > 0:
        raise ConfigError(f"adam eps must be positive, got {eps}")
    if not lr > 0:
        raise ConfigError(f"adam learning rate must be positive, got {lr}")
    params.step_count += 1
    k = params.step_count
    c1 = 1.0 - beta1 ** k
    c2 = 1.0 - beta2 ** k
    for name, t in params.items():
        g = params._grad(t)
        st = params.state.setdefault(name, {})
        m = st.get("m", np.zeros_like(t.data))
        v = st.get("v", np.zeros_like(t.data))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        st["m"], st["v"] = m, v
        step = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        t.data = (t.data - step).astype(t.data.dtype)
    params.zero_grad()


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int,
                    gain: float = math.sqrt(2.0)) -> np.ndarray:
    bound = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)
