"""Exception hierarchy shared by all bbe modules."""


class BBEError(Exception):
    """Base class for all errors raised by this package."""


class NonPositiveParameter(BBEError):
    """A physical parameter that must be strictly positive is not."""


class DegenerateBohrSpectrum(BBEError):
    """Two distinct level pairs share a Bohr frequency within tolerance."""


class IndexOutOfRange(BBEError, IndexError):
    """Level or node index outside the valid range."""


class NonHermitianReactionMatrix(BBEError):
    """A reaction matrix supplied for a partial-wave model is not Hermitian."""


class MalformedTable(BBEError):
    """A tabulated-amplitude file does not match the documented schema."""


class ClosedEntranceChannel(BBEError):
    """Cross-section query for a channel that is closed at the given energy."""


class OffShellAmplitude(BBEError):
    """Amplitude requested at velocities violating energy conservation."""


class SecularViolation(BBEError):
    """Kernel entry requested outside the secular support (unequal Bohr frequencies)."""


class GridMismatch(BBEError):
    """Two objects built on different velocity grids (or models) were combined."""


class NonPositiveInitialState(BBEError):
    """Initial density field has a node matrix with a negative eigenvalue."""


class NormalizationFailure(BBEError):
    """Initial density field cannot be normalized to unit total trace."""


class StabilityGuardTripped(BBEError):
    """Requested RK4 step size exceeds the stability guard dt*||G|| <= 0.5."""


class PositivityBreach(BBEError):
    """Minimum node eigenvalue dropped below tolerance during evolution (abort mode)."""


class ConfigError(BBEError):
    """Base class for CLI configuration problems."""


class ParseError(ConfigError):
    """Config file is syntactically invalid or missing."""


class ValidationError(ConfigError):
    """Config value fails validation (wrong type, sign, range, ...)."""


class UnknownKey(ConfigError):
    """Config contains a key that no section defines."""


class CacheError(BBEError):
    """Kernel cache file is unreadable or fails its hash check."""
