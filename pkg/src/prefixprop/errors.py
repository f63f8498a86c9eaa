"""Exception types shared across the package."""


class PrefixPropError(Exception):
    """Base class for all library errors."""


class ShapeError(PrefixPropError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DegenerateRowError(PrefixPropError, ValueError):
    """A softmax row has no unmasked entries."""


class DeterminismError(PrefixPropError, RuntimeError):
    """A function expected to be deterministic returned differing values."""


class ConfigError(PrefixPropError, ValueError):
    """Invalid configuration value or mode mismatch."""


class VocabError(PrefixPropError, ValueError):
    """Token id outside the embedding table."""


class SequenceLengthError(PrefixPropError, ValueError):
    """Input sequence longer than the model's maximum length."""


class LabelError(PrefixPropError, ValueError):
    """Class label outside the valid range or unknown at evaluation time."""


class ParseError(PrefixPropError, ValueError):
    """Malformed input file; message carries the offending line number."""


class DivergenceError(PrefixPropError, RuntimeError):
    """Training loss became non-finite; message names the step."""


class EmptyKeysError(PrefixPropError, ValueError):
    """Kernel attention called with zero key/value rows."""


class VerificationError(PrefixPropError, RuntimeError):
    """A numerical verification (identity check, grad check) failed."""
