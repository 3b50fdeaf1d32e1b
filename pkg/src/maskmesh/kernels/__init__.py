"""Hot numeric kernels with a compiled core and a pure-numpy fallback.

The inner loop of training spends nearly all of its time in masked affine
forwards/backwards, RMSprop parameter updates and the advantage recursion.
Those five operations are implemented twice: in Cython (``_compiled``,
built by setup.py) and in numpy (``_fallback``). The compiled core is
preferred; set ``MASKMESH_KERNELS=numpy`` or ``=compiled`` to force one.

Both backends compute in float64 and agree to rounding noise (see
tests/test_kernels.py); within a process the backend is fixed at import so
every determinism guarantee holds regardless of which one is active.
"""

import os

from maskmesh.kernels import _fallback

_choice = os.environ.get("MASKMESH_KERNELS", "auto")
if _choice not in ("auto", "compiled", "numpy"):
    raise ValueError(f"MASKMESH_KERNELS must be auto|compiled|numpy, got {_choice!r}")

if _choice == "numpy":
    _impl = _fallback
else:
    try:
        from maskmesh.kernels import _compiled as _impl  # type: ignore[no-redef]
    except ImportError:
        if _choice == "compiled":
            raise
        _impl = _fallback

BACKEND = "compiled" if _impl is not _fallback else "numpy"

masked_weight = _impl.masked_weight
affine_fwd = _impl.affine_fwd
affine_tanh_fwd = _impl.affine_tanh_fwd
affine_bwd = _impl.affine_bwd
rmsprop_step = _impl.rmsprop_step
gae = _impl.gae

__all__ = [
    "BACKEND",
    "masked_weight",
    "affine_fwd",
    "affine_tanh_fwd",
    "affine_bwd",
    "rmsprop_step",
    "gae",
]
