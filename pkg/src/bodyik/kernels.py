"""Backend selection for the kinematic-chain kernels.

The compiled extension is used when it was built; otherwise the numpy
reference implementation. Set ``BODYIK_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("BODYIK_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

fk_batch = _impl.fk_batch
ik_batch = _impl.ik_batch
twist_batch = _impl.twist_batch

__all__ = ["BACKEND", "fk_batch", "ik_batch", "twist_batch"]
