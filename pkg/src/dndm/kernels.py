"""Kernel backend selection.

The compiled Cython module is preferred; the numpy fallback is used when the
extension is not built or when ``DNDM_BACKEND=python`` is set. Both produce
bit-identical results, so the choice only affects speed.
"""
from __future__ import annotations

import os

from . import _fallback


def _select():
    choice = os.environ.get("DNDM_BACKEND", "auto").lower()
    if choice == "python":
        return _fallback
    try:
        from . import _kernels
    except ImportError:
        if choice == "compiled":
            raise
        return _fallback
    return _kernels


_impl = _select()

BACKEND: str = _impl.BACKEND
philox_uniform = _impl.philox_uniform
uniform_block = _impl.uniform_block
markov_forward_batch = _impl.markov_forward_batch
nonmarkov_forward_batch = _impl.nonmarkov_forward_batch
transition_batch = _impl.transition_batch
distinct_counts = _impl.distinct_counts
rows_inverse_cdf = _impl.rows_inverse_cdf


def available_backends() -> dict:
    """Map backend name to module for every backend importable here."""
    found = {"python": _fallback}
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        found["compiled"] = _kernels
    return found
