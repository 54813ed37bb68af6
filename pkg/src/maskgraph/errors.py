"""Exceptions raised by maskgraph modules.

Library code raises these; the command line translates them into a one-line
message on standard error and exit code 1.
"""

from pathlib import Path


class MaskGraphError(Exception):
    """Base class for every error a maskgraph module raises on purpose."""


class MaskFormatError(MaskGraphError, ValueError):
    """A mask or image file could not be parsed.

    Attributes:
        path (Path): the offending file
        offset (int): byte offset where parsing stopped
    """

    def __init__(self, path: Path | str, offset: int, reason: str):
        self.path = Path(path)
        self.offset = offset
        self.reason = reason
        super().__init__(f"{self.path}: {reason} at byte {offset}")


class ConfigError(MaskGraphError, ValueError):
    """A configuration file or override is invalid."""


class ContourError(MaskGraphError, ValueError):
    """Contour extraction or contour statistics failed."""


class TopologyError(MaskGraphError, ValueError):
    """A graph topology cannot be built from the given inputs."""


class ShapeError(MaskGraphError, ValueError):
    """A shape, array or synthetic shape specification is invalid."""


class CheckpointError(MaskGraphError, ValueError):
    """A checkpoint file is corrupt or does not match the current run."""


class TrainingDivergedError(MaskGraphError, RuntimeError):
    """Optimization produced a non-finite gradient or loss.

    Attributes:
        parameter (str | None): name of the parameter whose gradient was not finite
        iteration (int | None): iteration at which the loss was not finite
        terms (dict[str, float]): loss term breakdown at that iteration
    """

    def __init__(
        self,
        message: str,
        parameter: str | None = None,
        iteration: int | None = None,
        terms: dict[str, float] | None = None,
    ):
        self.parameter = parameter
        self.iteration = iteration
        self.terms = dict(terms or {})
        super().__init__(message)
