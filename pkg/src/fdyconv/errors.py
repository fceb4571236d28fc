"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor shapes do not satisfy an operation's contract."""


class ConfigError(ValueError):
    """A configuration object or model description is invalid."""


class ContractError(RuntimeError):
    """An operation was called without its required prior state."""


class DecodeError(ValueError):
    """An input file could not be decoded."""


class WeightFileError(ValueError):
    """Base class for weight/tensor container failures."""


class BadMagicError(WeightFileError):
    """Container does not start with the expected magic bytes."""


class BadVersionError(WeightFileError):
    """Container format version is unsupported."""


class ManifestError(WeightFileError):
    """Manifest is malformed or does not match the target model."""


class TruncatedPayloadError(WeightFileError):
    """Payload is shorter than the manifest requires."""
