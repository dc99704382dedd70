"""Monotone minimal perfect hashing in three regimes, plus a lower-bound lab."""
__version__ = "0.1.0"

from .bitvec import RankSelectBitVector, build_bitvector
from .config import Config, load_config
from .errors import (BudgetExceededError, FormatError, InstanceTooLargeError, KeyOrderError,
                     MmphError, QueryRangeError)
from .inner import LcpBucketMmphf, build_inner
from .mmphf import (BigUniverse, Bucketed, MonotoneHash, PlainBitArray, SortedKeySet, build,
                    from_bytes, load, save, select_regime)
from .mphf import PerfectHashWithPayload, build_mphf

__all__ = [
    "RankSelectBitVector", "build_bitvector", "Config", "load_config", "MmphError",
    "BudgetExceededError", "FormatError", "InstanceTooLargeError", "KeyOrderError",
    "QueryRangeError", "LcpBucketMmphf", "build_inner", "MonotoneHash", "PlainBitArray",
    "Bucketed", "BigUniverse", "SortedKeySet", "build", "from_bytes", "load", "save",
    "select_regime", "PerfectHashWithPayload", "build_mphf",
]
