"""Exception hierarchy. Every failure the CLI reports maps to one of these."""


class QpfError(Exception):
    """Base class for all codec errors."""


class InvalidInputError(QpfError):
    """Rejected input data (bad image size, out-of-range index, ...)."""


class ShapeError(InvalidInputError):
    """Array dimensions incompatible with the requested operation."""


class ConfigError(QpfError):
    """Inconsistent or unsupported configuration."""


class DigestMismatchError(QpfError):
    """Bitstream was produced by a different model than the one supplied."""


class BitstreamError(QpfError):
    """Malformed, truncated, or otherwise undecodable bitstream."""


class EncodeError(QpfError):
    """Symbol outside the coder's table support."""


class LatentRangeError(QpfError):
    """Latent values outside the codable range (diverged model)."""


class MissingWeightsError(QpfError):
    """A required weight file is absent; the message names the file."""


class TrainingDivergedError(QpfError):
    """Loss became non-finite; a diagnostic snapshot path is in the message."""
