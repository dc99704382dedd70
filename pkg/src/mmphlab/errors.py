class MmphError(Exception):
    """Base class for every error raised by :mod:`mmphlab`."""


class RankRangeError(MmphError, IndexError):
    """A rank position outside ``[0..length]``."""


class SelectRangeError(MmphError, IndexError):
    """A select index outside ``[1..popcount]``."""


class KeyOrderError(MmphError, ValueError):
    """Keys are not strictly increasing or fall outside the universe."""


class DuplicateKeyError(MmphError, ValueError):
    pass


class PayloadOverflowError(MmphError, ValueError):
    pass


class QueryRangeError(MmphError, ValueError):
    """A query key outside ``[0..u)``."""


class EmptyStructureError(MmphError, ValueError):
    pass


class BuildFailure(MmphError, RuntimeError):
    """Randomised construction ran out of restarts."""


class BudgetExceededError(MmphError):
    """An exact computation would exceed its configured budget."""


class InstanceTooLargeError(BudgetExceededError):
    pass


class FormatError(MmphError, ValueError):
    """Malformed or unsupported serialized data."""
