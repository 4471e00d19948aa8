"""
dense arrays with reverse-mode automatic differentiation

a Tensor wraps a float64 numpy array. operations on tensors that require
gradients are recorded on the active Tape (define-by-run); Tape.backward
walks the records in reverse and accumulates gradients on the leaves.

tapes are thread-local, so independent threads can each build their own
graph over shared read-only parameter arrays.
"""

import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np


class ShapeError(ValueError):
    """raised when operand shapes are incompatible for an operation"""


class GradientError(RuntimeError):
    """raised when backward is called on an output it cannot differentiate"""


ArrayLike = Union["Tensor", np.ndarray, float, int]
Axis = Union[int, Tuple[int, ...], None]

_local = threading.local()


def _tape_stack() -> List["Tape"]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Optional["Tape"]:
    """the innermost tape entered on this thread, or None"""
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def no_tape() -> Iterator[None]:
    """suspend recording on this thread (used for evaluation-only passes)"""
    stack = _tape_stack()
    saved = list(stack)
    stack.clear()
    try:
        yield
    finally:
        stack.extend(saved)


@dataclass
class Record:
    """one recorded operation: inputs, output and the rule mapping output grad to input grads"""
    op: str
    inputs: Tuple["Tensor", ...]
    output: "Tensor"
    rule: Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tape:
    """
    ordered list of recorded operations

    records are appended as operations execute, so every record's inputs were
    produced by earlier records (or are leaves). use as a context manager:

        with Tape() as tape:
            loss = f(w)
        tape.backward(loss)
    """

    def __init__(self):
        self.records: List[Record] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def record(self, op: str, inputs: Tuple["Tensor", ...], output: "Tensor",
               rule: Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]) -> None:
        output._node = (self, len(self.records))
        output.requires_grad = True
        self.records.append(Record(op, inputs, output, rule))

    def inputs_of(self, op: str) -> List[np.ndarray]:
        """input arrays of every record of the given op, in execution order"""
        return [rec.inputs[0].data for rec in self.records if rec.op == op]

    def backward(self, output: "Tensor") -> None:
        """
        accumulate d(output)/d(leaf) into leaf.grad for every reachable leaf

        gradients add onto existing leaf.grad values; callers reset them between
        steps with zero_grad.
        """
        if output.data.size != 1:
            raise GradientError(f"backward requires a scalar output, got shape {output.shape}")
        if output._node is None or output._node[0] is not self:
            raise GradientError("backward output is not connected to this tape")

        grads = {id(output): np.ones_like(output.data)}
        for rec in reversed(self.records[: output._node[1] + 1]):
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.rule(g)):
                if gi is None or not inp.requires_grad:
                    continue
                if inp._node is None:
                    inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
                elif id(inp) in grads:
                    grads[id(inp)] = grads[id(inp)] + gi
                else:
                    grads[id(inp)] = gi


class Tensor:
    """
    float64 array with an optional reference into the active tape

    leaves are created with requires_grad=True; their .grad holds the
    accumulated gradient (same shape as .data) after backward.
    """

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._node: Optional[Tuple[Tape, int]] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return div(other, self)

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)

    def __rmatmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(other, self)

    # reductions and shape ops

    def sum(self, axis: Axis = None, keepdims: bool = False) -> "Tensor":
        return sum_axis(self, axis, keepdims)

    def mean(self, axis: Axis = None, keepdims: bool = False) -> "Tensor":
        return mean_axis(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def repeat(self, count: int, axis: int) -> "Tensor":
        return repeat(self, count, axis)

    def exp(self) -> "Tensor":
        return exp(self)

    def abs(self) -> "Tensor":
        return absolute(self)

    def sqrt(self) -> "Tensor":
        return sqrt(self)

    def square(self) -> "Tensor":
        return square(self)

    def leaky_relu(self, slope: float = 0.01) -> "Tensor":
        return leaky_relu(self, slope)


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _emit(op: str, inputs: Tuple[Tensor, ...], data: np.ndarray,
          rule: Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]) -> Tensor:
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(op, inputs, out, rule)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """sum grad down to shape, undoing numpy broadcasting"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, extent in enumerate(shape):
        if extent == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def _normalize_axis(axis: Axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for a tensor with {ndim} dimensions")
        out.append(ax % ndim)
    return tuple(sorted(set(out)))


# elementwise binary ops (numpy broadcasting, including scalars)

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _emit("add", (a, b), a.data + b.data,
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _emit("sub", (a, b), a.data - b.data,
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _emit("mul", (a, b), a.data * b.data,
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data
    return _emit("div", (a, b), out,
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """
    matrix product over the last two axes, batch axes broadcast

    the common case of a batched activation times a 2-d weight matrix reduces
    the weight gradient with a single flattened product.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: incompatible batch shapes {a.shape} and {b.shape}") from None

    def rule(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.ndim == 2:
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _emit("matmul", (a, b), a.data @ b.data, rule)


# reductions

def sum_axis(a: ArrayLike, axis: Axis = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axis(axis, a.ndim)

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _emit("sum", (a,), a.data.sum(axis=axes, keepdims=keepdims), rule)


def mean_axis(a: ArrayLike, axis: Axis = None, keepdims: bool = False) -> Tensor:
    """mean over the given axes; backward spreads 1/m uniformly over the m pooled entries"""
    a = as_tensor(a)
    axes = _normalize_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    if count == 0:
        raise ShapeError(f"mean: empty reduction over axes {axes} of shape {a.shape}")

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, a.shape).copy(),)

    return _emit("mean", (a,), a.data.mean(axis=axes, keepdims=keepdims), rule)


# shape ops

def reshape(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return _emit("reshape", (a,), out, lambda g: (g.reshape(a.shape),))


def repeat(a: ArrayLike, count: int, axis: int) -> Tensor:
    """repeat each entry count times along axis; backward sums the copies"""
    a = as_tensor(a)
    (ax,) = _normalize_axis(axis, a.ndim)
    if count < 1:
        raise ShapeError(f"repeat: count must be positive, got {count}")

    def rule(g):
        split = a.shape[:ax] + (a.shape[ax], count) + a.shape[ax + 1:]
        return (g.reshape(split).sum(axis=ax + 1),)

    return _emit("repeat", (a,), np.repeat(a.data, count, axis=ax), rule)


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    """concatenate along axis; backward splits the gradient by input extent"""
    ts = tuple(as_tensor(t) for t in tensors)
    if not ts:
        raise ShapeError("concat: no tensors given")
    (ax,) = _normalize_axis(axis, ts[0].ndim)
    ref = ts[0].shape
    for t in ts[1:]:
        if t.ndim != len(ref) or t.shape[:ax] + t.shape[ax + 1:] != ref[:ax] + ref[ax + 1:]:
            raise ShapeError(f"concat: shapes {ref} and {t.shape} differ off axis {ax}")
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def rule(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _emit("concat", ts, np.concatenate([t.data for t in ts], axis=ax), rule)


def stack(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    """stack equally shaped tensors along a new axis"""
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("stack: no tensors given")
    ax = axis % (ts[0].ndim + 1)
    expanded = [reshape(t, t.shape[:ax] + (1,) + t.shape[ax:]) for t in ts]
    return concat(expanded, axis=ax)


# elementwise unary ops

def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _emit("exp", (a,), out, lambda g: (g * out,))


def absolute(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _emit("abs", (a,), np.abs(a.data), lambda g: (g * np.sign(a.data),))


def sqrt(a: ArrayLike) -> Tensor:
    """square root; the gradient at 0 is taken as 0 (only reached by constant inputs)"""
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def rule(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.where(out > 0, g / (2.0 * safe), 0.0),)

    return _emit("sqrt", (a,), out, rule)


def square(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _emit("square", (a,), a.data * a.data, lambda g: (2.0 * a.data * g,))


def leaky_relu(a: ArrayLike, slope: float = 0.01) -> Tensor:
    """q(z) = max(z, 0) + slope * min(z, 0)"""
    a = as_tensor(a)
    scale = np.where(a.data > 0, 1.0, slope)
    return _emit("leaky_relu", (a,), a.data * scale, lambda g: (g * scale,))


# gradient plumbing

def backward(output: Tensor) -> None:
    """differentiate a scalar output with respect to every leaf on its tape"""
    if output.data.size != 1:
        raise GradientError(f"backward requires a scalar output, got shape {output.shape}")
    if output._node is None:
        raise GradientError("backward output is detached from any tape")
    output._node[0].backward(output)


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def leaves(arrays: "dict[str, np.ndarray]", requires_grad: bool = True) -> "dict[str, Tensor]":
    """wrap named parameter arrays as leaf tensors"""
    return {name: Tensor(arr, requires_grad=requires_grad, name=name) for name, arr in arrays.items()}


def gradients(named: "dict[str, Tensor]") -> "dict[str, np.ndarray]":
    """collect leaf gradients, zeros where a leaf was unreachable"""
    return {name: (t.grad if t.grad is not None else np.zeros_like(t.data)) for name, t in named.items()}
