"""Dense float64 tensors with tape-based reverse-mode differentiation.

A :class:`ComputationRecord` is a tape. Trainable leaves are registered
with :meth:`ComputationRecord.leaf`; every primitive applied to a tensor
that lives on a tape is appended to that same tape. Tensors that belong to
no tape are plain values, so the same model code runs with or without
gradient tracking.

    >>> rec = ComputationRecord()
    >>> p = rec.leaf("p", [3.0])
    >>> loss = mean(square(p))
    >>> backward(rec, loss)["p"].data
    array([6.])
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not satisfy a primitive's shape rule."""


class UnknownPrimitiveError(ValueError):
    pass


class Tensor:
    """An immutable float64 array, optionally tied to a node of a tape."""

    __slots__ = ("data", "record", "index")
    __array_ufunc__ = None  # ndarray <op> Tensor defers to the Tensor's reflected op

    def __init__(self, data, record: ComputationRecord | None = None, index: int | None = None):
        arr = np.array(data, dtype=np.float64)
        arr.flags.writeable = False
        self.data = arr
        self.record = record
        self.index = index

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        tag = "" if self.record is None else f", node={self.index}"
        return f"Tensor(shape={self.shape}{tag})"

    def __add__(self, other):
        return apply_primitive("add", self, other)

    def __radd__(self, other):
        return apply_primitive("add", other, self)

    def __sub__(self, other):
        return apply_primitive("sub", self, other)

    def __rsub__(self, other):
        return apply_primitive("sub", other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return apply_primitive("scale", self, factor=float(other))
        return apply_primitive("mul", self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise TypeError("Tensor division is only defined for scalar divisors")
        return apply_primitive("scale", self, factor=1.0 / float(other))

    def __neg__(self):
        return apply_primitive("scale", self, factor=-1.0)

    def __matmul__(self, other):
        return apply_primitive("matmul", self, other)

    def __rmatmul__(self, other):
        return apply_primitive("matmul", other, self)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# ---------------------------------------------------------------------------
# primitives


@dataclass(frozen=True)
class Primitive:
    name: str
    arity: int
    check: Callable  # (shapes, attrs) -> None, raises ShapeError
    forward: Callable  # (arrays, attrs) -> ndarray
    backward: Callable  # (grad, arrays, out, attrs) -> list of operand grads


PRIMITIVES: dict[str, Primitive] = {}


def _register(name, arity, check, forward, backward):
    PRIMITIVES[name] = Primitive(name, arity, check, forward, backward)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(shapes, attrs):
    try:
        np.broadcast_shapes(*shapes)
    except ValueError:
        raise ShapeError(f"shapes {shapes[0]} and {shapes[1]} are not broadcast-compatible") from None


def _check_any(shapes, attrs):
    return None


def _check_matmul(shapes, attrs):
    a, b = shapes
    if len(a) < 2 or len(b) < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a} and {b}")
    if a[-1] != b[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a} @ {b}")
    try:
        np.broadcast_shapes(a[:-2], b[:-2])
    except ValueError:
        raise ShapeError(f"matmul batch dimensions differ: {a} @ {b}") from None


def _swap(x):
    return np.swapaxes(x, -1, -2)


def _matmul_backward(g, arrays, out, attrs):
    a, b = arrays
    return [_unbroadcast(g @ _swap(b), a.shape), _unbroadcast(_swap(a) @ g, b.shape)]


def _check_affine(shapes, attrs):
    x, w, b = shapes
    if len(w) != 2 or len(b) != 1:
        raise ShapeError(f"affine needs weight of rank 2 and bias of rank 1, got {w} and {b}")
    if len(x) < 1 or x[-1] != w[0]:
        raise ShapeError(f"affine input width {x} does not match weight {w}")
    if b[0] != w[1]:
        raise ShapeError(f"affine bias {b} does not match weight {w}")


def _affine_backward(g, arrays, out, attrs):
    x, w, _ = arrays
    x2 = x.reshape(-1, x.shape[-1])
    g2 = g.reshape(-1, g.shape[-1])
    return [g @ w.T, x2.T @ g2, g2.sum(axis=0)]


def _sigmoid(x):
    # split by sign so neither branch overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _softmax_backward(g, arrays, out, attrs):
    return [out * (g - (g * out).sum(axis=-1, keepdims=True))]


def _check_conv(shapes, attrs):
    x, w, b = shapes
    if len(x) != 2 or len(w) != 3 or len(b) != 1:
        raise ShapeError(f"conv1d expects x (T, Cin), w (k, Cin, Cout), b (Cout,), got {x}, {w}, {b}")
    if w[0] % 2 != 1:
        raise ShapeError(f"conv1d kernel length must be odd, got {w[0]}")
    if x[1] != w[1]:
        raise ShapeError(f"conv1d input channels {x} do not match kernel {w}")
    if b[0] != w[2]:
        raise ShapeError(f"conv1d bias {b} does not match kernel {w}")


def _conv_forward(arrays, attrs):
    x, w, b = arrays
    k = w.shape[0]
    half = k // 2
    t = x.shape[0]
    xp = np.pad(x, ((half, half), (0, 0)))
    out = np.broadcast_to(b, (t, w.shape[2])).copy()
    for j in range(k):
        out += xp[j:j + t] @ w[j]
    return out


def _conv_backward(g, arrays, out, attrs):
    x, w, _ = arrays
    k = w.shape[0]
    half = k // 2
    t = x.shape[0]
    xp = np.pad(x, ((half, half), (0, 0)))
    gxp = np.zeros_like(xp)
    gw = np.empty_like(w)
    for j in range(k):
        gw[j] = xp[j:j + t].T @ g
        gxp[j:j + t] += g @ w[j].T
    return [gxp[half:half + t], gw, g.sum(axis=0)]


def _check_sum(shapes, attrs):
    axis = attrs.get("axis")
    if axis is not None and not -len(shapes[0]) <= axis < len(shapes[0]):
        raise ShapeError(f"cannot sum axis {axis} of shape {shapes[0]}")


def _sum_forward(arrays, attrs):
    return np.asarray(arrays[0].sum(axis=attrs.get("axis")))


def _sum_backward(g, arrays, out, attrs):
    x = arrays[0]
    axis = attrs.get("axis")
    if axis is not None:
        g = np.expand_dims(g, axis)
    return [np.broadcast_to(g, x.shape).copy()]


def _check_reshape(shapes, attrs):
    target = attrs["shape"]
    try:
        np.empty(shapes[0]).reshape(target)
    except ValueError:
        raise ShapeError(f"cannot reshape {shapes[0]} to {target}") from None


def _check_swap(shapes, attrs):
    if len(shapes[0]) < 2:
        raise ShapeError(f"transpose needs rank >= 2, got {shapes[0]}")


_register("add", 2, _check_broadcast, lambda a, at: a[0] + a[1],
          lambda g, a, o, at: [_unbroadcast(g, a[0].shape), _unbroadcast(g, a[1].shape)])
_register("sub", 2, _check_broadcast, lambda a, at: a[0] - a[1],
          lambda g, a, o, at: [_unbroadcast(g, a[0].shape), _unbroadcast(-g, a[1].shape)])
_register("mul", 2, _check_broadcast, lambda a, at: a[0] * a[1],
          lambda g, a, o, at: [_unbroadcast(g * a[1], a[0].shape), _unbroadcast(g * a[0], a[1].shape)])
_register("scale", 1, _check_any, lambda a, at: a[0] * at["factor"],
          lambda g, a, o, at: [g * at["factor"]])
_register("matmul", 2, _check_matmul, lambda a, at: a[0] @ a[1], _matmul_backward)
_register("affine", 3, _check_affine, lambda a, at: a[0] @ a[1] + a[2], _affine_backward)
_register("sigmoid", 1, _check_any, lambda a, at: _sigmoid(a[0]),
          lambda g, a, o, at: [g * o * (1.0 - o)])
_register("relu", 1, _check_any, lambda a, at: np.maximum(a[0], 0.0),
          lambda g, a, o, at: [g * (a[0] > 0)])
_register("softmax", 1, _check_any, lambda a, at: _softmax(a[0]), _softmax_backward)
_register("conv1d", 3, _check_conv, _conv_forward, _conv_backward)
_register("sum", 1, _check_sum, _sum_forward, _sum_backward)
_register("mean", 1, _check_any, lambda a, at: np.asarray(a[0].mean()),
          lambda g, a, o, at: [np.full(a[0].shape, g / a[0].size)])
_register("square", 1, _check_any, lambda a, at: a[0] * a[0],
          lambda g, a, o, at: [2.0 * g * a[0]])
_register("log", 1, _check_any, lambda a, at: np.log(a[0]),
          lambda g, a, o, at: [g / a[0]])
_register("clip", 1, _check_any, lambda a, at: np.clip(a[0], at["low"], at["high"]),
          lambda g, a, o, at: [g * ((a[0] >= at["low"]) & (a[0] <= at["high"]))])
_register("reshape", 1, _check_reshape, lambda a, at: a[0].reshape(at["shape"]),
          lambda g, a, o, at: [g.reshape(a[0].shape)])
_register("transpose", 1, _check_swap, lambda a, at: _swap(a[0]).copy(),
          lambda g, a, o, at: [_swap(g).copy()])


# ---------------------------------------------------------------------------
# tape


@dataclass
class Node:
    kind: str  # primitive name, or "leaf" / "const"
    inputs: tuple[int, ...]
    attrs: dict
    value: np.ndarray
    name: str | None = None


@dataclass
class ComputationRecord:
    nodes: list[Node] = field(default_factory=list)
    leaves: dict[str, int] = field(default_factory=dict)

    def leaf(self, name: str, value) -> Tensor:
        """Register a trainable parameter on this tape."""
        if name in self.leaves:
            raise ValueError(f"duplicate leaf name {name!r}")
        t = self._append(Node("leaf", (), {}, np.array(value, dtype=np.float64), name))
        self.leaves[name] = t.index
        return t

    def constant(self, value) -> Tensor:
        return self._append(Node("const", (), {}, np.array(value, dtype=np.float64)))

    def _append(self, node: Node) -> Tensor:
        node.value.flags.writeable = False
        self.nodes.append(node)
        return Tensor(node.value, self, len(self.nodes) - 1)

    def _adopt(self, t: Tensor) -> int:
        if t.record is self:
            return t.index
        if t.record is not None:
            raise ValueError("operands belong to different computation records")
        return self.constant(t.data).index

    def replay(self, leaf_values: Mapping[str, np.ndarray] | None = None) -> list[np.ndarray]:
        """Recompute every node from the leaves (optionally substituted)."""
        leaf_values = leaf_values or {}
        values: list[np.ndarray] = []
        for node in self.nodes:
            if node.kind == "leaf":
                values.append(np.asarray(leaf_values.get(node.name, node.value), dtype=np.float64))
            elif node.kind == "const":
                values.append(node.value)
            else:
                prim = PRIMITIVES[node.kind]
                values.append(prim.forward([values[i] for i in node.inputs], node.attrs))
        return values


def apply_primitive(kind: str, *operands, **attrs) -> Tensor:
    """Apply primitive ``kind``; record it if any operand lives on a tape."""
    try:
        prim = PRIMITIVES[kind]
    except KeyError:
        raise UnknownPrimitiveError(f"unknown primitive {kind!r}") from None
    if len(operands) != prim.arity:
        raise ShapeError(f"{kind} takes {prim.arity} operands, got {len(operands)}")
    tensors = [as_tensor(op) for op in operands]
    prim.check([t.shape for t in tensors], attrs)
    out = prim.forward([t.data for t in tensors], attrs)

    records = {id(t.record): t.record for t in tensors if t.record is not None}
    if not records:
        return Tensor(out)
    if len(records) > 1:
        raise ValueError("operands belong to different computation records")
    rec = next(iter(records.values()))
    inputs = tuple(rec._adopt(t) for t in tensors)
    return rec._append(Node(kind, inputs, attrs, np.asarray(out, dtype=np.float64)))


def backward(record: ComputationRecord, loss: Tensor) -> dict[str, Tensor]:
    """Gradient of scalar ``loss`` with respect to every leaf of ``record``.

    Leaves that do not influence the loss get zero gradients. The record
    is left untouched.
    """
    if loss.record is not record:
        raise ValueError("loss is not a node of this record")
    if loss.data.size != 1 or loss.ndim != 0:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    nodes = record.nodes
    needs = [False] * (loss.index + 1)
    for i in range(loss.index + 1):
        node = nodes[i]
        needs[i] = node.kind == "leaf" or any(needs[j] for j in node.inputs)

    grads: dict[int, np.ndarray] = {loss.index: np.ones(())}
    for i in range(loss.index, -1, -1):
        node = nodes[i]
        if node.kind in ("leaf", "const") or not needs[i]:
            continue
        g = grads.pop(i, None)
        if g is None:
            continue
        prim = PRIMITIVES[node.kind]
        operand_values = [nodes[j].value for j in node.inputs]
        for j, gj in zip(node.inputs, prim.backward(g, operand_values, node.value, node.attrs)):
            if not needs[j]:
                continue
            grads[j] = grads[j] + gj if j in grads else np.asarray(gj, dtype=np.float64)

    return {
        name: Tensor(grads.get(idx, np.zeros_like(nodes[idx].value)))
        for name, idx in record.leaves.items()
    }


def grad_check(function: Callable[[dict[str, Tensor]], Tensor],
               params: Mapping[str, np.ndarray], eps: float = 1e-5,
               per_param: bool = False):
    """Compare analytic gradients with central finite differences.

    ``function`` maps a dict of parameter tensors to a scalar tensor.
    Returns the maximum over all entries of
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``, or a dict of
    per-parameter maxima when ``per_param`` is set.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def evaluate(values):
        rec = ComputationRecord()
        out = function({k: rec.leaf(k, v) for k, v in values.items()})
        val = float(np.asarray(out.data))
        if not np.isfinite(val):
            raise FloatingPointError("function value is not finite")
        return rec, out

    rec, out = evaluate(params)
    analytic = backward(rec, out)

    errors = {}
    for name, value in params.items():
        numeric = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            shifted = dict(params)
            plus = value.copy()
            plus[idx] += eps
            minus = value.copy()
            minus[idx] -= eps
            shifted[name] = plus
            f_plus = evaluate(shifted)[1].item()
            shifted[name] = minus
            f_minus = evaluate(shifted)[1].item()
            numeric[idx] = (f_plus - f_minus) / (2 * eps)
        a = analytic[name].data
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(numeric)))
        errors[name] = float((np.abs(a - numeric) / denom).max()) if value.size else 0.0
    if per_param:
        return errors
    return max(errors.values(), default=0.0)


# ---------------------------------------------------------------------------
# optimizer


@dataclass(frozen=True)
class OptimizerState:
    """Adaptive-moment (Adam) accumulators and hyperparameters."""

    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Mapping[str, np.ndarray] = field(default_factory=dict)
    v: Mapping[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Mapping[str, np.ndarray], **hyper) -> OptimizerState:
        zeros = {k: np.zeros(np.shape(p)) for k, p in params.items()}
        return cls(m=zeros, v={k: z.copy() for k, z in zeros.items()}, **hyper)


def optimizer_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
                   state: OptimizerState) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One bias-corrected Adam update. Inputs are not modified.

    Parameters absent from ``grads`` are passed through unchanged (frozen).
    """
    step = state.step + 1
    c1 = 1.0 - state.beta1 ** step
    c2 = 1.0 - state.beta2 ** step
    new_params, new_m, new_v = {}, dict(state.m), dict(state.v)
    for name, p in params.items():
        p = np.asarray(p, dtype=np.float64)
        if name not in grads:
            new_params[name] = p
            continue
        g = np.asarray(grads[name].data if isinstance(grads[name], Tensor) else grads[name],
                       dtype=np.float64)
        if name not in state.m:
            raise KeyError(f"no optimizer accumulators for parameter {name!r}")
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise ShapeError(f"parameter {name!r} has shape {p.shape}, gradient {g.shape}, "
                             f"accumulator {state.m[name].shape}")
        m = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        new_params[name] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_m[name], new_v[name] = m, v
    new_state = OptimizerState(state.lr, state.beta1, state.beta2, state.eps, step, new_m, new_v)
    return new_params, new_state


# ---------------------------------------------------------------------------
# functional spellings


def matmul(a, b):
    return apply_primitive("matmul", a, b)


def affine(x, weight, bias):
    return apply_primitive("affine", x, weight, bias)


def sigmoid(x):
    return apply_primitive("sigmoid", x)


def relu(x):
    return apply_primitive("relu", x)


def softmax(x):
    """Softmax over the last axis."""
    return apply_primitive("softmax", x)


def conv1d(x, weight, bias):
    """Same-length temporal cross-correlation with zero padding."""
    return apply_primitive("conv1d", x, weight, bias)


def tsum(x, axis: int | None = None):
    return apply_primitive("sum", x, axis=axis)


def mean(x):
    return apply_primitive("mean", x)


def square(x):
    return apply_primitive("square", x)


def log(x):
    return apply_primitive("log", x)


def clip(x, low: float, high: float):
    return apply_primitive("clip", x, low=low, high=high)


def reshape(x, shape):
    return apply_primitive("reshape", x, shape=tuple(shape))


def transpose(x):
    """Swap the last two axes."""
    return apply_primitive("transpose", x)
