from .tensor import Tape, Tensor, ConstantLedger, frozen_constants, active_ledger
from .checkpoint import checkpoint
from .rng import RngStream
from . import ops
