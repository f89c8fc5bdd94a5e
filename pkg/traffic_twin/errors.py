from pathlib import Path


class TrafficTwinException(BaseException):
    """Something went wrong. Base class of all exceptions that raises traffic-twin or its components"""

    def __init__(self, message: str):
        self.args = (message,)


class ShapeMismatch(TrafficTwinException):
    """Operands of a tensor operation have incompatible shapes"""


class DomainError(TrafficTwinException):
    """Operation input lies outside the operation's domain"""


class IndexOutOfRange(TrafficTwinException):
    """Gather/scatter index is outside the indexed axis or targets one entry twice"""


class TapeError(TrafficTwinException):
    """Backward pass cannot be run for the requested tensors"""


class NetworkInvalid(TrafficTwinException):
    """Road network is inconsistent"""


class TntpParseError(NetworkInvalid):
    """TNTP network file is malformed"""

    def __init__(self, message: str, line: int | None = None, source: str | Path = "<string>"):
        self.message = message
        self.line = line
        self.source = source
        self.args = (str(self),)

    def __str__(self):
        if self.line is None:
            return "{message} <==> TNTP source: {source}".format(
                message=self.message, source=self.source
            )

        return "{message} <==> TNTP source: {source}, line {line}".format(
            message=self.message, source=self.source, line=self.line
        )


class ParameterInvalid(TrafficTwinException):
    """Link parameters violate their invariants"""


class SimulationError(TrafficTwinException):
    """Scenario cannot be simulated as configured"""


class SeedingError(SimulationError):
    """Initial vehicles do not fit into the virtual inflow links"""


class ObservationError(TrafficTwinException):
    """Traffic count observation is inconsistent"""


class DivergenceError(TrafficTwinException):
    """Optimization produced non-finite loss or gradients"""

    def __init__(self, message: str, block: str | None = None):
        self.message = message
        self.block = block
        self.args = (str(self),)

    def __str__(self):
        if self.block is None:
            return self.message

        return "{message} <==> Parameter block: {block}".format(
            message=self.message, block=self.block
        )


class ConfigInvalid(TrafficTwinException):
    """Run configuration is invalid"""

    def __init__(self, message: str, path: Path | str | None = None):
        self.message = message
        self.path = path
        self.args = (str(self),)

    def __str__(self):
        return "{message} <==> Config path: {path}".format(path=self.path, message=self.message)
