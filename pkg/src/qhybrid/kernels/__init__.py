"""Statevector gate kernel with a compiled fast path.

The backend is chosen at import time: the Cython extension when it was
built, else the numpy fallback. ``QHYBRID_KERNEL=pure`` forces the fallback;
``QHYBRID_KERNEL=compiled`` makes a missing extension an import error.

Both backends share one signature::

    apply_gate(state, matrix, targets, ctrl_mask, ctrl_value)

``state`` is a contiguous complex128 vector modified in place; ``targets`` an
int64 array with local gate bit ``j`` on qubit ``targets[j]``.
"""
import os

from . import _pure

_choice = os.environ.get("QHYBRID_KERNEL", "auto").lower()
if _choice not in ("auto", "pure", "compiled"):
    raise ImportError(f"QHYBRID_KERNEL must be auto, pure or compiled, got {_choice!r}")

_compiled = None
if _choice != "pure":
    try:
        from . import _ckernel as _compiled
    except ImportError:
        if _choice == "compiled":
            raise

if _compiled is not None:
    apply_gate = _compiled.apply_gate
    BACKEND = "compiled"
else:
    apply_gate = _pure.apply_gate
    BACKEND = "pure"

BACKENDS = {"pure": _pure.apply_gate}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled.apply_gate

__all__ = ["apply_gate", "BACKEND", "BACKENDS"]
