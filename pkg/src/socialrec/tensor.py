"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation returns a new :class:`Tensor` that remembers
its parents and a closure mapping the output gradient to parent gradients.
:func:`backward` orders the recorded graph topologically (a :class:`GradTape`)
and replays the closures in reverse, summing contributions so that a
tensor used along several paths receives the sum of all path gradients.

Binary operations follow numpy broadcasting; gradients are summed back down
to the operand shape.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, *, _parents=(), _backward=None, op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = tuple(_parents)
        self._backward: BackwardFn | None = _backward
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
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

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self) -> "GradTape":
        return backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _result(data, parents, backward_fn, op) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward_fn, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, name: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{name}: incompatible shapes {a.shape} and {b.shape}") from None


# --------------------------------------------------------------------------
# elementwise
# --------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    """Hadamard (element-wise) product."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), bw, "mul")


hadamard = mul


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # the tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _stable_sigmoid(x.data)

    def bw(g):
        return (g * y * (1.0 - y),)

    return _result(y, (x,), bw, "sigmoid")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)

    def bw(g):
        return (g * (1.0 - y * y),)

    return _result(y, (x,), bw, "tanh")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    y = np.where(mask, x.data, 0.0)

    def bw(g):
        return (g * mask,)

    return _result(y, (x,), bw, "relu")


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log: non-positive input")

    def bw(g):
        return (g / x.data,)

    return _result(np.log(x.data), (x,), bw, "log")


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp values; the gradient passes only where the input was inside the range."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)

    def bw(g):
        return (g * inside,)

    return _result(np.clip(x.data, lo, hi), (x,), bw, "clip")


def elementwise(op: str, *args) -> Tensor:
    """Dispatch by name: add, sub, hadamard, sigmoid, tanh, relu."""
    table = {"add": add, "sub": sub, "hadamard": mul, "mul": mul,
             "sigmoid": sigmoid, "tanh": tanh, "relu": relu}
    try:
        fn = table[op]
    except KeyError:
        raise DomainError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# --------------------------------------------------------------------------
# linear algebra and shape
# --------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """``a @ b`` for ``a`` of shape (..., k) and a 2-D ``b`` of shape (k, n)."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def bw(g):
        ga = g @ b.data.T
        a2 = a.data.reshape(-1, a.shape[-1])
        gb = a2.T @ g.reshape(-1, b.shape[1])
        return ga, gb

    return _result(a.data @ b.data, (a, b), bw, "matmul")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    """Concatenate along the last axis (all leading dimensions must agree)."""
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise DimensionError("concat: nothing to concatenate")
    lead = ts[0].shape[:-1]
    for t in ts[1:]:
        if t.shape[:-1] != lead:
            raise DimensionError(f"concat: leading shapes differ, {ts[0].shape} vs {t.shape}")
    if axis not in (-1, ts[0].ndim - 1):
        raise DimensionError("concat: only the last axis is supported")
    widths = [t.shape[-1] for t in ts]
    bounds = np.cumsum([0] + widths)

    def bw(g):
        return tuple(g[..., bounds[i]:bounds[i + 1]] for i in range(len(ts)))

    return _result(np.concatenate([t.data for t in ts], axis=-1), tuple(ts), bw, "concat")


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {x.shape} as {shape}") from None

    def bw(g):
        return (g.reshape(x.shape),)

    return _result(y, (x,), bw, "reshape")


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(i is None or i is Ellipsis or isinstance(i, (int, np.integer, slice)) for i in items)


def take(x, index) -> Tensor:
    """Basic or advanced indexing; repeated indices accumulate gradient."""
    x = as_tensor(x)
    y = x.data[index]
    basic = _is_basic(index)

    def bw(g):
        return (_Scatter(index, g, basic),)

    return _result(np.array(y, dtype=np.float64), (x,), bw, "take")


class _Scatter:
    """Gradient of an indexing op, added into the parent's buffer without materialising a dense copy."""

    __slots__ = ("index", "values", "basic")

    def __init__(self, index, values, basic: bool):
        self.index, self.values, self.basic = index, values, basic

    def add_into(self, buf: np.ndarray) -> None:
        if self.basic:
            buf[self.index] += self.values
        else:
            np.add.at(buf, self.index, self.values)


def tensor_sum(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    y = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(y, (x,), bw, "sum")


def mean(x) -> Tensor:
    x = as_tensor(x)
    return mul(tensor_sum(x), 1.0 / x.size)


# --------------------------------------------------------------------------
# softmax and dropout
# --------------------------------------------------------------------------


def softmax(x, mask=None) -> Tensor:
    """Softmax over the last axis with max subtraction.

    ``mask`` (same shape, 0/1) excludes entries; a row with no admitted entry
    yields all zeros instead of NaN.
    """
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DomainError("softmax: empty input")
    if mask is None:
        shifted = x.data - x.data.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=-1, keepdims=True)
    else:
        keep = np.asarray(mask, dtype=bool)
        if keep.shape != x.shape:
            raise DimensionError(f"softmax: mask {keep.shape} does not match {x.shape}")
        masked = np.where(keep, x.data, -np.inf)
        top = masked.max(axis=-1, keepdims=True)
        top = np.where(np.isfinite(top), top, 0.0)
        e = np.where(keep, np.exp(np.where(keep, x.data - top, 0.0)), 0.0)
        z = e.sum(axis=-1, keepdims=True)
        y = e / np.where(z > 0, z, 1.0)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), bw, "softmax")


def dropout(x, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1/(1-rate)``; eval mode is the identity."""
    if not 0.0 <= rate < 1.0:
        raise DomainError(f"dropout rate must lie in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise DomainError("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor(keep))


def lstm_scan(proj, w_hh, mask) -> Tensor:
    """Run one LSTM layer over time as a single recorded operation.

    ``proj`` [E, L, 4d] holds the input projections (bias included) with gate
    blocks ordered input, forget, output, candidate; ``w_hh`` is [d, 4d].
    ``mask`` [E, L] marks real steps: on a masked step the hidden and cell
    states carry over unchanged. Returns every hidden state, [E, L, d].

    Fusing the recurrence keeps the tape at one node per layer, so the cost
    of a step is a handful of numpy calls instead of a dozen graph nodes.
    """
    proj, w_hh = as_tensor(proj), as_tensor(w_hh)
    if proj.ndim != 3 or w_hh.ndim != 2 or w_hh.shape[1] != 4 * w_hh.shape[0] or proj.shape[2] != w_hh.shape[1]:
        raise DimensionError(f"lstm_scan: bad shapes {proj.shape} and {w_hh.shape}")
    E, L, _ = proj.shape
    d = w_hh.shape[0]
    m = np.asarray(mask, dtype=bool)
    if m.shape != (E, L):
        raise DimensionError(f"lstm_scan: mask {m.shape} does not match {(E, L)}")
    mf = m.astype(np.float64)[:, :, None]
    W = w_hh.data
    hs = np.zeros((E, L, d))
    cache = []
    h = np.zeros((E, d))
    c = np.zeros((E, d))
    for t in range(L):
        z = proj.data[:, t] + h @ W
        gates = _stable_sigmoid(z[:, :3 * d])
        g = np.tanh(z[:, 3 * d:])
        i, f, o = gates[:, :d], gates[:, d:2 * d], gates[:, 2 * d:]
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        cache.append((h, c, gates, g, tc))
        keep = mf[:, t]
        h = keep * h_new + (1.0 - keep) * h
        c = keep * c_new + (1.0 - keep) * c
        hs[:, t] = h

    def bw(gh):
        dproj = np.zeros(proj.shape)
        dW = np.zeros(W.shape)
        dh = np.zeros((E, d))
        dc = np.zeros((E, d))
        for t in range(L - 1, -1, -1):
            h_prev, c_prev, gates, g, tc = cache[t]
            keep = mf[:, t]
            dh = dh + gh[:, t]
            dh_new, dc_new = keep * dh, keep * dc
            i, f, o = gates[:, :d], gates[:, d:2 * d], gates[:, 2 * d:]
            dc_new = dc_new + dh_new * o * (1.0 - tc * tc)
            dz = np.concatenate([dc_new * g, dc_new * c_prev, dh_new * tc], axis=1) * gates * (1.0 - gates)
            dz = np.concatenate([dz, dc_new * i * (1.0 - g * g)], axis=1)
            dproj[:, t] = dz
            dW += h_prev.T @ dz
            dh = (1.0 - keep) * dh + dz @ W.T
            dc = (1.0 - keep) * dc + dc_new * f
        return dproj, dW

    return _result(hs, (proj, w_hh), bw, "lstm_scan")


# --------------------------------------------------------------------------
# backward pass
# --------------------------------------------------------------------------


class GradTape:
    """Topologically ordered record of the operations that produced a tensor."""

    def __init__(self, nodes: list[Tensor]):
        self.nodes = nodes

    @classmethod
    def from_loss(cls, loss: Tensor) -> "GradTape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(loss, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        return cls(order)

    def __len__(self) -> int:
        return len(self.nodes)

    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n._backward is None]


def backward(loss: Tensor, tape: GradTape | None = None) -> GradTape:
    """Populate ``.grad`` on every ``requires_grad`` tensor reachable from ``loss``.

    Leaf gradients accumulate across calls; interior gradients are reset.
    """
    if loss.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape is None:
        tape = GradTape.from_loss(loss)
    if not tape.nodes:
        raise DomainError("backward: empty tape")
    for node in tape.nodes:
        if node._backward is not None:
            node.grad = None
    loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
    owned: set[int] = set()  # nodes whose .grad buffer was allocated here and may be updated in place
    for node in reversed(tape.nodes):
        if node._backward is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._backward(node.grad)):
            if g is None or not parent.requires_grad:
                continue
            if isinstance(g, _Scatter):
                if id(parent) not in owned:
                    parent.grad = np.zeros(parent.shape) if parent.grad is None else parent.grad.copy()
                    owned.add(id(parent))
                g.add_into(parent.grad)
                continue
            # otherwise never in place: backward rules may hand the same array to several parents
            g = np.reshape(g, parent.shape)
            parent.grad = g if parent.grad is None else parent.grad + g
    return tape


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Max over coordinates of ``|autodiff - central| / max(1, |central|)``."""
    x = parameter(np.array(as_tensor(x).data, copy=True))
    out = f(x)
    if out.size != 1:
        raise DimensionError(f"grad_check needs a scalar function, got shape {out.shape}")
    backward(out)
    auto = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    flat = x.data.reshape(-1)
    numeric = np.empty(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(Tensor(x.data)).item()
        flat[i] = orig - eps
        lo = f(Tensor(x.data)).item()
        flat[i] = orig
        numeric[i] = (hi - lo) / (2 * eps)
    err = np.abs(auto.reshape(-1) - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max()) if err.size else 0.0
