"""Backend selection for the hot kernels.

The compiled extension ``rossbylab._ckernels`` is used when it imports;
otherwise (or when ``ROSSBYLAB_PURE=1``) the numpy implementation in
``rossbylab._pykernels`` is used.  Both expose the same functions.
"""
from __future__ import annotations

import os

from . import _pykernels

_pure = os.environ.get("ROSSBYLAB_PURE", "") not in ("", "0")

_impl = _pykernels
BACKEND = "python"
if not _pure:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

bessel_j = _impl.bessel_j
bessel_j0 = _impl.bessel_j0
bessel_j1 = _impl.bessel_j1
eigenvalues_closed = _impl.eigenvalues_closed
mode_eigensystem = _impl.mode_eigensystem
normalize_phase = _pykernels.normalize_phase

DEGENERATE_XI = _pykernels.DEGENERATE_XI
DEGENERATE_GAP = _pykernels.DEGENERATE_GAP


def backends() -> dict:
    """All importable backends, keyed by name (used by tests and benchmarks)."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
