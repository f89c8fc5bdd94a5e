from typing import Callable

from traffic_twin.autodiff.tensor import Tape, Tensor, active_ledger
from traffic_twin.errors import TapeError

__all__ = ["checkpoint"]


def checkpoint(fn: Callable[..., Tensor], *inputs: Tensor) -> Tensor:
    """
    Run ``fn(*inputs)`` without keeping its intermediate nodes.

    The outer tape receives a single node; its backward re-runs ``fn`` on a
    private tape and pulls the incoming gradient back to ``inputs``. ``fn``
    must be a deterministic function of ``inputs`` alone: tensors it closes
    over are treated as constants during the recompute.
    """
    tapes = {id(t.tape): t.tape for t in inputs if t.requires_grad and t.tape.recording}

    if not tapes:
        return fn(*inputs)

    if len(tapes) > 1:
        raise TapeError("checkpoint inputs are recorded on different tapes")

    (tape,) = tapes.values()
    ledger = active_ledger()
    start = ledger.cursor if ledger is not None else 0

    with tape.paused():
        output = fn(*inputs)

    values = [t.data for t in inputs]

    def vjp(grad):
        inner = Tape()
        leaves = [inner.watch(value) for value in values]

        if ledger is None:
            rerun = fn(*leaves)
        else:
            with ledger.rewind(start):
                rerun = fn(*leaves)

        return inner.pullback([rerun], [grad], leaves)

    return tape.record("checkpoint", output.data, inputs, vjp)
