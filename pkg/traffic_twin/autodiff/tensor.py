"""
Dense float64 tensors and the reverse-mode tape they are recorded on.

A :class:`Tensor` is an immutable numpy array plus an optional handle into a
:class:`Tape`. Operations (see :mod:`traffic_twin.autodiff.ops`) append a node
holding the vector-Jacobian product of the operation whenever one of their
inputs is recorded on a tape that is not paused; otherwise they return plain
constants.

Example: ::

    tape = Tape()
    x = tape.watch([3.0])
    loss = ops.reduce_sum(x * x)
    (grad,) = tape.backward(loss, [x])  # [6.0]
"""

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence
import logging

import numpy as np

from traffic_twin.errors import TapeError

logger = logging.getLogger(__name__)

Vjp = Callable[[np.ndarray], Sequence[np.ndarray | None]]


def readonly(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


@dataclass(slots=True)
class _Node:
    op: str
    parents: tuple[int | None, ...]
    vjp: Vjp | None
    shape: tuple[int, ...]


class Tensor:
    __slots__ = ("data", "node", "tape")

    # numpy scalars and arrays defer to Tensor's reflected operators
    __array_priority__ = 100

    def __init__(self, data: np.ndarray, node: int | None = None, tape: "Tape | None" = None):
        self.data: np.ndarray = data
        self.node = node
        self.tape = tape

    @classmethod
    def constant(cls, value) -> "Tensor":
        """Wrap a copy of ``value`` as a tensor that carries no gradient"""
        return cls(readonly(np.array(value, dtype=np.float64)))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def requires_grad(self) -> bool:
        return self.node is not None and self.tape is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        kind = f"node={self.node}" if self.requires_grad else "constant"
        return f"Tensor(shape={self.shape}, {kind})"

    def __add__(self, other):
        return ops.add(self, other)

    def __radd__(self, other):
        return ops.add(other, self)

    def __sub__(self, other):
        return ops.sub(self, other)

    def __rsub__(self, other):
        return ops.sub(other, self)

    def __mul__(self, other):
        return ops.mul(self, other)

    def __rmul__(self, other):
        return ops.mul(other, self)

    def __truediv__(self, other):
        return ops.div(self, other)

    def __rtruediv__(self, other):
        return ops.div(other, self)

    def __neg__(self):
        return ops.neg(self)

    def __matmul__(self, other):
        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        return ops.matmul(other, self)

    @property
    def T(self) -> "Tensor":
        return ops.transpose(self)


class Tape:
    """
    Append-only record of operations for reverse-mode differentiation.

    Node order is the order operations were executed in, which is a valid
    topological order; :meth:`pullback` walks it backwards.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._paused = 0

    def __len__(self):
        return len(self._nodes)

    @property
    def recording(self) -> bool:
        return self._paused == 0

    @contextmanager
    def paused(self) -> Iterator["Tape"]:
        """Operations on tensors of this tape return constants while paused"""
        self._paused += 1
        try:
            yield self
        finally:
            self._paused -= 1

    def watch(self, value, name: str = "leaf") -> Tensor:
        """Register ``value`` as a differentiable leaf (a parameter)"""
        data = readonly(np.array(value, dtype=np.float64))
        return Tensor(data, self._append(_Node(name, (), None, data.shape)), self)

    def record(self, op: str, data: np.ndarray, parents: Sequence[Tensor], vjp: Vjp) -> Tensor:
        ids = tuple(parent.node if parent.tape is self else None for parent in parents)

        if not self.recording or all(index is None for index in ids):
            return Tensor(data)

        return Tensor(data, self._append(_Node(op, ids, vjp, data.shape)), self)

    def _append(self, node: _Node) -> int:
        self._nodes.append(node)
        return len(self._nodes) - 1

    def backward(self, loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
        """
        Gradients of a scalar ``loss`` with respect to each tensor in ``wrt``.

        Tensors ``loss`` does not depend on get zero gradients.

        :raise TapeError: if ``loss`` is not a scalar or not recorded on this tape
        """
        if loss.ndim != 0:
            raise TapeError(f"Loss must be a scalar, got shape {loss.shape}")

        if loss.tape is not self:
            raise TapeError("Loss is not recorded on this tape")

        return self.pullback([loss], [np.ones(())], wrt)

    def pullback(
        self,
        outputs: Sequence[Tensor],
        cotangents: Sequence[np.ndarray],
        wrt: Sequence[Tensor],
    ) -> list[np.ndarray]:
        """Vector-Jacobian product of ``outputs`` seeded with ``cotangents``"""
        grads: list[np.ndarray | None] = [None] * len(self._nodes)

        for output, cotangent in zip(outputs, cotangents):
            if output.tape is not self or output.node is None:
                continue
            grads[output.node] = _accumulate(grads[output.node], cotangent)

        keep = {tensor.node for tensor in wrt if tensor.tape is self and tensor.node is not None}

        for index in range(len(self._nodes) - 1, -1, -1):
            grad = grads[index]
            if grad is None:
                continue

            node = self._nodes[index]
            if node.vjp is not None:
                for parent, parent_grad in zip(node.parents, node.vjp(grad)):
                    if parent is None or parent_grad is None:
                        continue
                    grads[parent] = _accumulate(grads[parent], parent_grad)

            if index not in keep:
                grads[index] = None

        result = []
        for tensor in wrt:
            grad = None
            if tensor.tape is self and tensor.node is not None:
                grad = grads[tensor.node]

            if grad is None:
                grad = np.zeros(tensor.shape)

            result.append(np.asarray(grad, dtype=np.float64).reshape(tensor.shape))

        return result


def _accumulate(current: np.ndarray | None, grad: np.ndarray) -> np.ndarray:
    if current is None:
        return grad

    return current + grad


class ConstantLedger:
    """
    Replayable record of the zero-gradient constants produced by a forward pass.

    Stop-gradient values, comparison indicators, sort permutations and argmax
    one-hots are all routed through :func:`freeze`. While a ledger records,
    they are computed and stored in call order; while it replays, the stored
    values are returned instead, so a forward pass at perturbed inputs keeps
    every discrete decision of the recorded pass.
    """

    def __init__(self):
        self._values: list[np.ndarray] = []
        self._cursor = 0
        self._replaying = False

    def __len__(self):
        return len(self._values)

    @property
    def cursor(self) -> int:
        return self._cursor

    @property
    def replaying(self) -> bool:
        return self._replaying

    def resolve(self, compute: Callable[[], np.ndarray]) -> np.ndarray:
        if not self._replaying:
            value = compute()
            self._values.append(value)
            self._cursor += 1
            return value

        if self._cursor >= len(self._values):
            raise TapeError("Replayed forward requested more constants than were recorded")

        value = self._values[self._cursor]
        self._cursor += 1
        return value

    def start_replay(self) -> None:
        self._replaying = True
        self._cursor = 0

    @contextmanager
    def rewind(self, start: int) -> Iterator["ConstantLedger"]:
        """Replay from ``start`` and restore the previous position afterwards"""
        saved = self._cursor, self._replaying
        self._cursor, self._replaying = start, True
        _LEDGERS.append(self)
        try:
            yield self
        finally:
            _LEDGERS.pop()
            self._cursor, self._replaying = saved


_LEDGERS: list[ConstantLedger] = []


@contextmanager
def frozen_constants(ledger: ConstantLedger | None = None) -> Iterator[ConstantLedger]:
    """
    Record constants into a fresh ledger, or replay an existing one.

    Example: ::

        with frozen_constants() as ledger:
            base = forward(theta)

        with frozen_constants(ledger):
            shifted = forward(theta + h)
    """
    if ledger is None:
        ledger = ConstantLedger()
    else:
        ledger.start_replay()

    _LEDGERS.append(ledger)
    try:
        yield ledger
    finally:
        _LEDGERS.pop()


def active_ledger() -> ConstantLedger | None:
    return _LEDGERS[-1] if _LEDGERS else None


def freeze(compute: Callable[[], np.ndarray]) -> np.ndarray:
    """Compute a constant, or take it from the active ledger"""
    ledger = active_ledger()
    if ledger is None:
        return compute()

    return ledger.resolve(compute)


from traffic_twin.autodiff import ops  # noqa: E402
