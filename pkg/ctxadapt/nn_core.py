"""
file: nn_core.py
brief: float64 reverse-mode autodiff on numpy arrays, parameter stores with Adam and dense MLPs
note: weights are stored (out, in) so a dense layer computes x @ W.T + b
"""

from __future__ import annotations

import contextlib
import copy
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np  # pylint: disable=import-error

ACTIVATIONS = ("relu", "none", "tanh")
FINAL_ACTIVATIONS = ("none", "tanh")

CKPT_MAGIC = b"CTXAPARM"
CKPT_VERSION = 1

_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Dimension mismatch, tagged with the layer where it was detected."""

    def __init__(self, message: str, layer: str | None = None):
        super().__init__(message if layer is None else f"{layer}: {message}")
        self.layer = layer


class GraphError(RuntimeError):
    """Backward requested on something that has no recorded graph."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED  # pylint: disable=global-statement
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """Array value with an optional backward closure."""

    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, parents: tuple = (), op: str = "leaf", sink=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.parents = parents
        self.op = op
        self.backward_fn: Callable | None = None
        self.sink = sink

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def numpy(self) -> np.ndarray:
        return self.data

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple, op: str, backward_fn: Callable) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by '{op}'")
    track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=track, parents=parents if track else (), op=op)
    if track:
        out.backward_fn = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# element-wise ops


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data + b.data, (a, b), "add", lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data - b.data, (a, b), "sub", lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape))
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data * b.data,
        (a, b),
        "mul",
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), "neg", lambda g: (-g,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0.0
    return _result(np.where(mask, a.data, 0.0), (a,), "relu", lambda g: (g * mask,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _result(y, (a,), "tanh", lambda g: (g * (1.0 - y * y),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        y = np.exp(a.data)
    return _result(y, (a,), "exp", lambda g: (g * y,))


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(a.data)
    return _result(y, (a,), "log", lambda g: (g / a.data,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _result(a.data * a.data, (a,), "square", lambda g: (2.0 * a.data * g,))


def minimum(a, b) -> Tensor:
    """Element-wise minimum; ties route the gradient to the first argument."""
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data
    return _result(
        np.where(pick_a, a.data, b.data),
        (a, b),
        "minimum",
        lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)),
    )


# reductions and shape ops


def _expand_reduced(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    return _result(
        np.sum(a.data, axis=axis, keepdims=keepdims),
        (a,),
        "sum",
        lambda g: (_expand_reduced(g, a.shape, axis, keepdims).copy(),),
    )


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    return _result(
        np.mean(a.data, axis=axis, keepdims=keepdims),
        (a,),
        "mean",
        lambda g: (_expand_reduced(g, a.shape, axis, keepdims) / count,),
    )


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _result(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        "concat",
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def reshape(a, shape: tuple) -> Tensor:
    a = as_tensor(a)
    return _result(a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(a.shape),))


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    def backward_fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(a.data[index], (a,), "getitem", backward_fn)


# linear algebra


def matmul(a, b) -> Tensor:
    """2-D @ 2-D product."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}", "matmul")
    return _result(a.data @ b.data, (a, b), "matmul", lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x, w, b=None, layer: str | None = None) -> Tensor:
    """Dense layer x @ w.T + b for a vector (in,) or a batch (B, in); w is (out, in)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim not in (1, 2) or x.shape[-1] != w.shape[1]:
        raise ShapeError(f"expected input width {w.shape[1]}, got shape {x.shape}", layer)
    parents = (x, w) if b is None else (x, w, as_tensor(b))
    data = x.data @ w.data.T
    if b is not None:
        data = data + parents[2].data

    def backward_fn(g):
        gx = g @ w.data
        gw = np.outer(g, x.data) if x.ndim == 1 else g.T @ x.data
        if b is None:
            return gx, gw
        return gx, gw, (g if x.ndim == 1 else g.sum(axis=0))

    return _result(data, parents, "linear", backward_fn)


def batched_matvec(w, x, layer: str | None = None) -> Tensor:
    """Per-row matrix-vector product: w (B, out, in), x (B, in) -> (B, out)."""
    w, x = as_tensor(w), as_tensor(x)
    if w.ndim != 3 or x.ndim != 2 or w.shape[0] != x.shape[0] or w.shape[2] != x.shape[1]:
        raise ShapeError(f"cannot apply per-row matrices {w.shape} to {x.shape}", layer)
    return _result(
        np.einsum("boi,bi->bo", w.data, x.data),
        (w, x),
        "batched_matvec",
        lambda g: (g[:, :, None] * x.data[:, None, :], np.einsum("boi,bo->bi", w.data, g)),
    )


def activate(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "none":
        return x
    raise ValueError(f"unknown activation '{kind}'")


def backward(loss: Tensor):
    """
    Reverse pass from a scalar loss; gradients are accumulated into the ParamStore entries
    whose leaves took part in the forward pass.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise GraphError("backward needs a scalar Tensor loss")
    if not loss.requires_grad:
        raise GraphError("no recorded graph: run a forward pass with gradients enabled first")

    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.sink is not None:
            node.sink.grad += g
        if node.backward_fn is None:
            continue
        for parent, parent_grad in zip(node.parents, node.backward_fn(g)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + parent_grad if key in grads else parent_grad


# parameters


@dataclass
class ParamEntry:
    value: np.ndarray
    grad: np.ndarray
    m: np.ndarray
    v: np.ndarray
    step: int = 0


class ParamStore:
    """
    Named float64 parameters with gradient slots and Adam moments.

    The version counter is bumped whenever values change, so derived caches can tell
    when they are stale.
    """

    def __init__(self):
        self.entries: dict[str, ParamEntry] = {}
        self.version = 0
        self.trainable = True

    def add(self, name: str, value) -> np.ndarray:
        if name in self.entries:
            raise ValueError(f"parameter '{name}' already exists")
        value = np.array(value, dtype=np.float64)
        self.entries[name] = ParamEntry(value, np.zeros_like(value), np.zeros_like(value), np.zeros_like(value))
        self.version += 1
        return value

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[name].value

    def __len__(self):
        return len(self.entries)

    def names(self) -> list[str]:
        return list(self.entries)

    def num_parameters(self, prefix: str = "") -> int:
        return int(np.sum([e.value.size for n, e in self.entries.items() if n.startswith(prefix)], dtype=np.int64))

    def leaf(self, name: str) -> Tensor:
        try:
            entry = self.entries[name]
        except KeyError as exc:
            raise KeyError(f"parameter '{name}' is missing from the store") from exc
        track = _GRAD_ENABLED and self.trainable
        return Tensor(entry.value, requires_grad=track, sink=entry if track else None)

    def set_value(self, name: str, value):
        entry = self.entries[name]
        value = np.asarray(value, dtype=np.float64)
        if value.shape != entry.value.shape:
            raise ShapeError(f"expected shape {entry.value.shape}, got {value.shape}", name)
        entry.value[...] = value
        self.version += 1

    def zero_grad(self):
        for entry in self.entries.values():
            entry.grad[...] = 0.0

    def copy(self) -> ParamStore:
        return copy.deepcopy(self)

    def copy_from(self, other: ParamStore):
        for name, entry in self.entries.items():
            entry.value[...] = other.entries[name].value
        self.version += 1

    @contextlib.contextmanager
    def frozen(self):
        """Leaves read inside the block do not collect gradients."""
        previous = self.trainable
        self.trainable = False
        try:
            yield self
        finally:
            self.trainable = previous


def adam_step(params: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam update of every entry, then zero the gradients."""
    for entry in params.entries.values():
        entry.step += 1
        entry.m = beta1 * entry.m + (1.0 - beta1) * entry.grad
        entry.v = beta2 * entry.v + (1.0 - beta2) * entry.grad * entry.grad
        m_hat = entry.m / (1.0 - beta1**entry.step)
        v_hat = entry.v / (1.0 - beta2**entry.step)
        entry.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
        if not np.all(np.isfinite(entry.value)):
            raise NonFiniteError("Adam produced non-finite parameters")
        entry.grad[...] = 0.0
    params.version += 1
    return params


def soft_update(target: ParamStore, online: ParamStore, tau: float):
    """Polyak averaging: target <- tau * online + (1 - tau) * target."""
    for name, entry in target.entries.items():
        entry.value[...] = tau * online.entries[name].value + (1.0 - tau) * entry.value
    target.version += 1


# dense networks


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_dims: tuple = ()
    output_dim: int = 1
    activation: str = "relu"
    final_activation: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ValueError(f"MLP dims must be positive, got {self.layer_sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation '{self.activation}'")
        if self.final_activation not in FINAL_ACTIVATIONS:
            raise ValueError(f"unknown final activation '{self.final_activation}'")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.output_dim]

    @property
    def layers(self) -> list[tuple[int, int]]:
        sizes = self.layer_sizes
        return list(zip(sizes[:-1], sizes[1:]))

    def num_parameters(self) -> int:
        return sum(fan_in * fan_out + fan_out for fan_in, fan_out in self.layers)


def dense_shapes(prefix: str, fan_in: int, fan_out: int, bias: bool = True) -> list[tuple[str, tuple]]:
    shapes = [(f"{prefix}.w", (fan_out, fan_in))]
    if bias:
        shapes.append((f"{prefix}.b", (fan_out,)))
    return shapes


def mlp_shapes(spec: MlpSpec, prefix: str) -> list[tuple[str, tuple]]:
    shapes = []
    for i, (fan_in, fan_out) in enumerate(spec.layers):
        shapes += dense_shapes(f"{prefix}.l{i}", fan_in, fan_out)
    return shapes


def init_dense(store: ParamStore, prefix: str, fan_in: int, fan_out: int, rng: np.random.Generator, scale=1.0):
    """Fan-in uniform initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    bound = 1.0 / np.sqrt(fan_in)
    store.add(f"{prefix}.w", scale * rng.uniform(-bound, bound, size=(fan_out, fan_in)))
    store.add(f"{prefix}.b", scale * rng.uniform(-bound, bound, size=fan_out))


def init_mlp(spec: MlpSpec, store: ParamStore, prefix: str, rng: np.random.Generator, final_scale: float = 1.0):
    layers = spec.layers
    for i, (fan_in, fan_out) in enumerate(layers):
        init_dense(store, f"{prefix}.l{i}", fan_in, fan_out, rng, final_scale if i == len(layers) - 1 else 1.0)


def dense(params: ParamStore, prefix: str, x) -> Tensor:
    return linear(x, params.leaf(f"{prefix}.w"), params.leaf(f"{prefix}.b"), layer=prefix)


def mlp_forward(spec: MlpSpec, params: ParamStore, x, prefix: str = "mlp") -> Tensor:
    x = as_tensor(x)
    if x.ndim not in (1, 2) or x.shape[-1] != spec.input_dim:
        raise ShapeError(f"expected input width {spec.input_dim}, got shape {x.shape}", f"{prefix}.l0")
    layers = spec.layers
    h = x
    for i in range(len(layers)):
        h = dense(params, f"{prefix}.l{i}", h)
        h = activate(h, spec.activation if i < len(layers) - 1 else spec.final_activation)
    return h


# gradient checking


def finite_difference_check(
    loss_fn: Callable[[], Tensor],
    params: ParamStore,
    names: Iterable[str] | None = None,
    eps: float = 1e-5,
    floor: float = 1e-4,
) -> float:
    """
    Compare analytic gradients against central differences

    Parameters
    -----------------
    - loss_fn: builds a scalar loss from the current values in params
    - params: store whose entries are perturbed
    - names: entries to check (all by default)
    - eps: half-width of the central difference
    - floor: gradients smaller than this are compared absolutely

    Returns
    -----------------
    - worst relative error |a - n| / max(|a|, |n|, floor)
    """
    names = list(params.names() if names is None else names)
    params.zero_grad()
    backward(loss_fn())
    analytic = {name: params.entries[name].grad.copy() for name in names}
    params.zero_grad()

    worst = 0.0
    with no_grad():
        for name in names:
            value = params.entries[name].value
            for idx in np.ndindex(value.shape):
                original = value[idx]
                value[idx] = original + eps
                params.version += 1
                loss_plus = float(loss_fn().data)
                value[idx] = original - eps
                params.version += 1
                loss_minus = float(loss_fn().data)
                value[idx] = original
                numeric = (loss_plus - loss_minus) / (2.0 * eps)
                exact = analytic[name][idx]
                worst = max(worst, abs(exact - numeric) / max(abs(exact), abs(numeric), floor))
    params.version += 1
    return worst


# checkpoints


def save_params(params: ParamStore, path: str):
    """
    Write parameter values (no optimiser state) in the checkpoint layout:
    magic, u32 version, u32 count, then per entry u32 name length, UTF-8 name,
    u32 ndim, u32 dims and the values as little-endian float64, row-major.
    """
    chunks = [CKPT_MAGIC, np.array([CKPT_VERSION, len(params)], dtype="<u4").tobytes()]
    for name, entry in params.entries.items():
        raw_name = name.encode("utf-8")
        chunks.append(np.array([len(raw_name)], dtype="<u4").tobytes())
        chunks.append(raw_name)
        chunks.append(np.array([entry.value.ndim, *entry.value.shape], dtype="<u4").tobytes())
        chunks.append(np.ascontiguousarray(entry.value, dtype="<f8").tobytes())
    with open(path, "wb") as file:
        file.write(b"".join(chunks))


def load_params(path: str) -> ParamStore:
    with open(path, "rb") as file:
        blob = file.read()
    if blob[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise ValueError(f"{path} is not a parameter checkpoint")
    pos = len(CKPT_MAGIC)

    def read_u32(count: int) -> list[int]:
        nonlocal pos
        values = np.frombuffer(blob, dtype="<u4", count=count, offset=pos)
        pos += 4 * count
        return [int(v) for v in values]

    version, count = read_u32(2)
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    params = ParamStore()
    for _ in range(count):
        (name_len,) = read_u32(1)
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = read_u32(1)
        shape = tuple(read_u32(ndim))
        size = int(np.prod(shape, dtype=np.int64))
        values = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape)
        pos += 8 * size
        params.add(name, values)
    return params
