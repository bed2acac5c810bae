"""Exception types shared across the engine."""


class PanoweaveError(Exception):
    """Base class for engine errors."""


class BoundsError(PanoweaveError):
    """A region falls outside a non-ring axis."""


class CoverageError(PanoweaveError):
    """A plan left part of the latent unwritten (or claimed it twice)."""


class ConfigError(PanoweaveError):
    """Invalid run or CLI configuration."""


class PipelineError(PanoweaveError):
    """A run aborted; message names the step and window."""


class ProtocolError(PanoweaveError):
    """Plugin wire-protocol violation.

    ``byte_offset`` is the stream position (bytes consumed from the peer)
    at which the violation was detected, when known.
    """

    def __init__(self, message: str, byte_offset: int | None = None):
        if byte_offset is not None:
            message = f"{message} (at byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset
