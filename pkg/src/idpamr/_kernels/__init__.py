"""Hot loops of the low-order solver.

The compiled extension is used when it has been built; otherwise, or when
``IDPAMR_PURE_PYTHON=1`` is set, the numpy implementation is selected.
"""
import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels

if _ckernels is not None and os.environ.get("IDPAMR_PURE_PYTHON", "0") != "1":
    BACKEND = "cython"
else:
    BACKEND = "python"

low_order_rhs = BACKENDS[BACKEND].low_order_rhs


def get_backend(name: str):
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available; have {sorted(BACKENDS)}") from None


def element_limits_kernel():
    """Compiled pair limiter of the element projection, or None."""
    if BACKEND == "cython":
        return _ckernels.element_limits
    return None


def element_directions_kernel():
    """Compiled flux-direction builder of the element projection, or None."""
    if BACKEND == "cython":
        return _ckernels.element_directions
    return None
