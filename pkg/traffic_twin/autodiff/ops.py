"""
Differentiable operations on :class:`~traffic_twin.autodiff.tensor.Tensor`.

Binary elementwise operations accept operands of equal shape, or a scalar on
either side. Any other broadcast must be declared with :func:`expand`.
Min/max selections (elementwise and reductions) send the whole gradient to
one operand; ties go to the first operand or the lowest index.
"""

from typing import Callable, Sequence
import operator

import numpy as np

from traffic_twin.autodiff.tensor import Tape, Tensor, freeze, readonly
from traffic_twin.errors import DomainError, IndexOutOfRange, ShapeMismatch

__all__ = [
    "ELEMENTWISE",
    "REDUCTIONS",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "minimum",
    "maximum",
    "sigmoid",
    "exp",
    "log",
    "softplus",
    "ge",
    "gt",
    "le",
    "lt",
    "eq",
    "elementwise",
    "reduce_sum",
    "reduce_max",
    "reduce_min",
    "reduce",
    "matmul",
    "transpose",
    "reshape",
    "expand",
    "concat",
    "stack",
    "take",
    "argsort_desc",
    "gather",
    "scatter",
    "softmax",
    "log_softmax",
    "stop_gradient",
    "graft",
    "straight_through",
    "onehot_argmax",
    "gumbel_from_uniform",
    "gumbel_sample",
]

Operand = Tensor | float | int | np.ndarray


def as_tensor(value: Operand) -> Tensor:
    if isinstance(value, Tensor):
        return value

    return Tensor.constant(value)


def _tape_of(parents: Sequence[Tensor]) -> Tape | None:
    for parent in parents:
        if parent.requires_grad and parent.tape.recording:
            return parent.tape

    return None


def _result(op: str, data: np.ndarray, parents: Sequence[Tensor], vjp) -> Tensor:
    data = readonly(np.asarray(data, dtype=np.float64))
    tape = _tape_of(parents)

    if tape is None:
        return Tensor(data)

    return tape.record(op, data, parents, vjp)


def _constant(data: np.ndarray) -> Tensor:
    return Tensor(readonly(np.asarray(data, dtype=np.float64)))


def _check_binary(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return

    raise ShapeMismatch(
        f"{op}: operand shapes {a.shape} and {b.shape} differ; declare broadcasting with expand()"
    )


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if shape == () and grad.shape != ():
        return grad.sum()

    return grad


def _binary(op: str, a: Operand, b: Operand) -> tuple[Tensor, Tensor]:
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(op, a, b)
    return a, b


def add(a: Operand, b: Operand) -> Tensor:
    a, b = _binary("add", a, b)
    return _result(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = _binary("sub", a, b)
    return _result(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = _binary("mul", a, b)
    return _result(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: Operand, b: Operand) -> Tensor:
    a, b = _binary("div", a, b)
    return _result(
        "div",
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(a: Operand) -> Tensor:
    a = as_tensor(a)
    return _result("neg", -a.data, (a,), lambda g: (-g,))


def minimum(a: Operand, b: Operand) -> Tensor:
    """Elementwise minimum; on ties the gradient follows ``a``"""
    a, b = _binary("minimum", a, b)
    take_a = freeze(lambda: np.asarray(a.data <= b.data))
    return _result(
        "minimum",
        np.where(take_a, a.data, b.data),
        (a, b),
        lambda g: (
            _unbroadcast(np.where(take_a, g, 0.0), a.shape),
            _unbroadcast(np.where(take_a, 0.0, g), b.shape),
        ),
    )


def maximum(a: Operand, b: Operand) -> Tensor:
    """Elementwise maximum; on ties the gradient follows ``a``"""
    a, b = _binary("maximum", a, b)
    take_a = freeze(lambda: np.asarray(a.data >= b.data))
    return _result(
        "maximum",
        np.where(take_a, a.data, b.data),
        (a, b),
        lambda g: (
            _unbroadcast(np.where(take_a, g, 0.0), a.shape),
            _unbroadcast(np.where(take_a, 0.0, g), b.shape),
        ),
    )


def sigmoid(a: Operand) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a: Operand) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result("exp", out, (a,), lambda g: (g * out,))


def log(a: Operand) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log requires strictly positive input")

    return _result("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def softplus(a: Operand) -> Tensor:
    """log(1 + exp(a))"""
    return log(exp(a) + 1.0)


def _indicator(op: str, compare: Callable, a: Operand, b: Operand) -> Tensor:
    a, b = _binary(op, a, b)
    return _constant(freeze(lambda: compare(a.data, b.data).astype(np.float64)))


def ge(a: Operand, b: Operand) -> Tensor:
    """1[a >= b], a constant"""
    return _indicator("ge", operator.ge, a, b)


def gt(a: Operand, b: Operand) -> Tensor:
    return _indicator("gt", operator.gt, a, b)


def le(a: Operand, b: Operand) -> Tensor:
    return _indicator("le", operator.le, a, b)


def lt(a: Operand, b: Operand) -> Tensor:
    return _indicator("lt", operator.lt, a, b)


def eq(a: Operand, b: Operand) -> Tensor:
    return _indicator("eq", operator.eq, a, b)


ELEMENTWISE: dict[str, Callable[..., Tensor]] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "neg": neg,
    "min": minimum,
    "max": maximum,
    "sigmoid": sigmoid,
    "exp": exp,
    "log": log,
    "ge": ge,
    "gt": gt,
    "le": le,
    "lt": lt,
    "eq": eq,
}


def elementwise(op_kind: str, a: Operand, b: Operand | None = None) -> Tensor:
    if op_kind not in ELEMENTWISE:
        raise ValueError(f"Unknown elementwise operation {op_kind!r}")

    if b is None:
        return ELEMENTWISE[op_kind](a)

    return ELEMENTWISE[op_kind](a, b)


def _check_axis(a: Tensor, axis: int | None) -> None:
    if axis is not None and not -a.ndim <= axis < a.ndim:
        raise ShapeMismatch(f"Axis {axis} is invalid for shape {a.shape}")


def reduce_sum(a: Operand, axis: int | None = None) -> Tensor:
    a = as_tensor(a)
    _check_axis(a, axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape),)

    return _result("sum", a.data.sum(axis=axis), (a,), vjp)


def _select(op: str, pick: Callable, a: Operand, axis: int | None) -> Tensor:
    a = as_tensor(a)
    _check_axis(a, axis)

    if axis is None:
        flat = int(freeze(lambda: np.asarray(pick(a.data))))

        def vjp(g):
            grad = np.zeros(a.size)
            grad[flat] = g
            return (grad.reshape(a.shape),)

        return _result(op, a.data.reshape(-1)[flat], (a,), vjp)

    index = freeze(lambda: np.expand_dims(pick(a.data, axis=axis), axis))

    def vjp(g):
        grad = np.zeros(a.shape)
        np.put_along_axis(grad, index, np.expand_dims(g, axis), axis)
        return (grad,)

    return _result(op, np.take_along_axis(a.data, index, axis).squeeze(axis), (a,), vjp)


def reduce_max(a: Operand, axis: int | None = None) -> Tensor:
    """Maximum along ``axis``; the gradient goes to the lowest-index maximum"""
    return _select("max", np.argmax, a, axis)


def reduce_min(a: Operand, axis: int | None = None) -> Tensor:
    """Minimum along ``axis``; the gradient goes to the lowest-index minimum"""
    return _select("min", np.argmin, a, axis)


REDUCTIONS: dict[str, Callable[..., Tensor]] = {
    "sum": reduce_sum,
    "max": reduce_max,
    "min": reduce_min,
}


def reduce(op_kind: str, a: Operand, axis: int | None = None) -> Tensor:
    if op_kind not in REDUCTIONS:
        raise ValueError(f"Unknown reduction {op_kind!r}")

    return REDUCTIONS[op_kind](a, axis)


def matmul(a: Operand, b: Operand) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    if a.ndim not in (1, 2) or b.ndim not in (1, 2) or (a.ndim == 1 and b.ndim == 1):
        raise ShapeMismatch(f"matmul: unsupported operand shapes {a.shape} and {b.shape}")

    if a.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: inner dimensions of {a.shape} and {b.shape} differ")

    def vjp(g):
        if b.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        if a.ndim == 1:
            return b.data @ g, np.outer(a.data, g)
        return g @ b.data.T, a.data.T @ g

    return _result("matmul", a.data @ b.data, (a, b), vjp)


def transpose(a: Operand) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeMismatch(f"transpose expects a 2-D tensor, got shape {a.shape}")

    return _result("transpose", a.data.T, (a,), lambda g: (g.T,))


def reshape(a: Operand, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError as e:
        raise ShapeMismatch(f"Cannot reshape {a.shape} into {shape}") from e

    return _result("reshape", data, (a,), lambda g: (g.reshape(a.shape),))


def expand(a: Operand, shape: tuple[int, ...], axis: int) -> Tensor:
    """
    Repeat ``a`` along a new ``axis`` so the result has ``shape``.

    Example: ``expand(row, (n_agents, n_links), axis=0)`` repeats a per-link
    vector for every agent.
    """
    a = as_tensor(a)
    shape = tuple(shape)
    axis = axis % len(shape)

    if shape[:axis] + shape[axis + 1 :] != a.shape:
        raise ShapeMismatch(f"Cannot expand {a.shape} to {shape} along axis {axis}")

    data = np.broadcast_to(np.expand_dims(a.data, axis), shape)
    return _result("expand", data, (a,), lambda g: (g.sum(axis=axis),))


def concat(tensors: Sequence[Operand], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeMismatch(f"concat: {e}") from e

    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result("concat", data, tensors, lambda g: np.split(g, bounds, axis=axis))


def stack(tensors: Sequence[Operand], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeMismatch(f"stack: {e}") from e

    return _result(
        "stack",
        data,
        tensors,
        lambda g: [np.take(g, k, axis=axis) for k in range(len(tensors))],
    )


def take(a: Operand, start: int, stop: int, axis: int = 0) -> Tensor:
    """Contiguous slice ``[start, stop)`` along ``axis``"""
    a = as_tensor(a)
    _check_axis(a, axis)
    window = [slice(None)] * a.ndim
    window[axis] = slice(start, stop)
    window = tuple(window)

    def vjp(g):
        grad = np.zeros(a.shape)
        grad[window] = g
        return (grad,)

    return _result("take", a.data[window], (a,), vjp)


def argsort_desc(a: Operand, axis: int = 0) -> np.ndarray:
    """
    Indices sorting ``a`` in descending order along ``axis``.

    Ties keep ascending original index. The result is an index array and
    carries no gradient.
    """
    a = as_tensor(a)
    _check_axis(a, axis)
    return freeze(lambda: np.argsort(-a.data, axis=axis, kind="stable"))


def _check_index(idx: np.ndarray, size: int) -> None:
    if idx.size and (idx.min() < 0 or idx.max() >= size):
        raise IndexOutOfRange(f"Index out of range for axis of size {size}")


def _fancy(idx: np.ndarray, axis: int) -> tuple[np.ndarray, ...]:
    grids = list(np.ogrid[tuple(slice(n) for n in idx.shape)])
    grids[axis] = idx
    return tuple(grids)


def gather(a: Operand, idx: np.ndarray, axis: int = 0) -> Tensor:
    """
    Pick entries of ``a`` along ``axis``.

    For 1-D ``a`` this is ``a[idx]``; for 2-D ``a`` it picks ``a[idx[i, j], j]``
    (``axis=0``) the way :func:`numpy.take_along_axis` does.
    """
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    _check_axis(a, axis)

    if idx.ndim != a.ndim:
        raise ShapeMismatch(f"gather: index rank {idx.ndim} differs from tensor rank {a.ndim}")

    _check_index(idx, a.shape[axis])
    where = _fancy(idx, axis)

    def vjp(g):
        grad = np.zeros(a.shape)
        np.add.at(grad, where, g)
        return (grad,)

    return _result("gather", a.data[where], (a,), vjp)


def scatter(
    values: Operand,
    idx: np.ndarray,
    shape: tuple[int, ...],
    fill: float = 0.0,
    axis: int = 0,
) -> Tensor:
    """
    Place ``values`` at ``idx`` along ``axis`` in a tensor of ``shape``.

    Entries no index targets hold ``fill``. Each position may be targeted at
    most once per call.
    """
    values = as_tensor(values)
    idx = np.asarray(idx, dtype=np.intp)
    shape = tuple(shape)

    if idx.shape != values.shape or len(shape) != idx.ndim:
        raise ShapeMismatch(f"scatter: index {idx.shape}, values {values.shape}, target {shape}")

    _check_index(idx, shape[axis])
    if idx.shape[axis] > 1 and np.any(np.diff(np.sort(idx, axis=axis), axis=axis) == 0):
        raise IndexOutOfRange("scatter targets the same index more than once")

    where = _fancy(idx, axis)
    data = np.full(shape, fill, dtype=np.float64)
    data[where] = values.data

    return _result("scatter", data, (values,), lambda g: (g[where],))


def softmax(a: Operand, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    _check_axis(a, axis)
    shifted = np.exp(a.data - a.data.max(axis=axis, keepdims=True))
    out = shifted / shifted.sum(axis=axis, keepdims=True)

    return _result(
        "softmax",
        out,
        (a,),
        lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),),
    )


def log_softmax(a: Operand, axis: int = -1) -> Tensor:
    """log(softmax(a)) evaluated without forming the softmax"""
    a = as_tensor(a)
    _check_axis(a, axis)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    return _result(
        "log_softmax",
        out,
        (a,),
        lambda g: (g - np.exp(out) * g.sum(axis=axis, keepdims=True),),
    )


def stop_gradient(a: Operand) -> Tensor:
    a = as_tensor(a)
    return _constant(freeze(lambda: a.data))


def graft(new: Operand, old: Operand) -> Tensor:
    """
    Value of ``new`` carrying the gradient history of ``old`` as well.

    Computes ``new + (old - stop_gradient(old))``; the bracket is exactly zero,
    so the forward value is bit-equal to ``new``.
    """
    new, old = as_tensor(new), as_tensor(old)
    if new.shape != old.shape:
        raise ShapeMismatch(f"graft: shapes {new.shape} and {old.shape} differ")

    return add(new, sub(old, stop_gradient(old)))


def straight_through(hard: np.ndarray, soft: Tensor) -> Tensor:
    """Forward value ``hard``, gradient of ``soft``"""
    return add(_constant(hard), sub(soft, stop_gradient(soft)))


def onehot_argmax(a: Operand, axis: int = -1) -> np.ndarray:
    """One-hot of the argmax along ``axis``; ties pick the lowest index"""
    a = as_tensor(a)
    _check_axis(a, axis)

    def compute():
        hot = np.zeros(a.shape)
        np.put_along_axis(hot, np.expand_dims(np.argmax(a.data, axis=axis), axis), 1.0, axis)
        return hot

    return freeze(compute)


def gumbel_from_uniform(uniform: np.ndarray) -> np.ndarray:
    return -np.log(-np.log(uniform))


def gumbel_sample(shape: tuple[int, ...], generator: np.random.Generator) -> Tensor:
    """
    Standard Gumbel noise as a constant tensor.

    ``generator`` is a lane of a :class:`~traffic_twin.autodiff.rng.RngStream`.
    Uniform draws of exactly 0 are moved to the smallest positive float so the
    sample stays finite.
    """
    uniform = generator.random(shape)
    uniform = np.where(uniform > 0.0, uniform, np.finfo(np.float64).tiny)
    return _constant(gumbel_from_uniform(uniform))
