from .autodiff import RngStream, Tape, Tensor
from .network import LinkParams, Network, ParameterRanges
from .simulation import CountSeries, ObservationMask, Scenario, SimConfig, simulate

__version__ = "0.1.0"
