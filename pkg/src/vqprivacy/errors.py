"""Exception hierarchy shared by all modules."""


class VQPrivacyError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(VQPrivacyError, ValueError):
    pass


class EmptyInputError(VQPrivacyError, ValueError):
    pass


class ConfigError(VQPrivacyError, ValueError):
    pass


class OracleError(VQPrivacyError, ArithmeticError):
    """A finite-difference probe evaluated to a non-finite value."""


class NumericError(VQPrivacyError, ArithmeticError):
    pass


class CacheError(VQPrivacyError, RuntimeError):
    """Backward was called with a cache from a different forward pass."""


class LabelError(VQPrivacyError, ValueError):
    pass


class TooShortInputError(VQPrivacyError, ValueError):
    pass


class InsufficientSamplesError(VQPrivacyError, ValueError):
    pass


class BudgetError(VQPrivacyError, ValueError):
    """Not enough frames to meet an enrollment budget."""


class ProtocolError(VQPrivacyError, ValueError):
    """A verification trial references a speaker without enrollment data."""


class FormatError(VQPrivacyError, ValueError):
    """A snapshot or export file has an unexpected layout or version."""
