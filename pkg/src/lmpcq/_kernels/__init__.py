"""Numeric kernel backend selection.

The compiled extension (``_core``) is preferred; the pure-Python module
(``_pure``) is the fallback.  Set ``LMPCQ_PURE=1`` to force the fallback,
e.g. for the backend benchmark or when debugging.
"""

import os

if os.environ.get("LMPCQ_PURE", "").strip() not in ("", "0"):
    from lmpcq._kernels import _pure as impl
else:
    try:
        from lmpcq._kernels import _core as impl
    except ImportError:
        from lmpcq._kernels import _pure as impl

BACKEND = impl.BACKEND
EPS_QUAT_SQ = impl.EPS_QUAT_SQ

rotmat = impl.rotmat
rotate = impl.rotate
dyn_rhs = impl.dyn_rhs
rk4_step = impl.rk4_step
rollout = impl.rollout
linearize = impl.linearize
substeps = impl.substeps
