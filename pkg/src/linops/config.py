"""Library-wide tunables.

The dense-fallback cap bounds the size at which operations may materialize an
operator and use a dense factorization.  It can be overridden per process with
the ``COLA_DENSE_CAP`` environment variable or programmatically with
:func:`set_dense_cap`.
"""

import os

DEFAULT_DENSE_CAP = 512

# Sum operators with at least this many equal-shape PSD terms dispatch solves
# to SVRG instead of CG.
DEFAULT_SVRG_MIN_TERMS = 8

_dense_cap_override = None
_svrg_min_terms = DEFAULT_SVRG_MIN_TERMS


def get_dense_cap() -> int:
    if _dense_cap_override is not None:
        return _dense_cap_override
    env = os.environ.get("COLA_DENSE_CAP")
    if env is not None:
        return int(env)
    return DEFAULT_DENSE_CAP


def set_dense_cap(value):
    """Set the dense-fallback cap for this process; ``None`` restores defaults."""
    global _dense_cap_override
    _dense_cap_override = None if value is None else int(value)


def get_svrg_min_terms() -> int:
    return _svrg_min_terms


def set_svrg_min_terms(value: int):
    global _svrg_min_terms
    _svrg_min_terms = int(value)
