"""Kernel backend selection.

The compiled extension is used when importable; setting the environment
variable ``STTOMO_PURE_PYTHON=1`` forces the numpy fallback.  ``BACKEND``
records which one is active.
"""
import os

from . import _fallback

if os.environ.get("STTOMO_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "numpy"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback
        BACKEND = "numpy"

bump_jet = _impl.bump_jet
inverse_jet = _impl.inverse_jet
hamilton_rhs = _impl.hamilton_rhs
pullback_jet = _impl.pullback_jet

__all__ = ["BACKEND", "bump_jet", "inverse_jet", "hamilton_rhs", "pullback_jet"]
