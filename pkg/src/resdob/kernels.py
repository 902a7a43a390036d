"""Backend selection for the per-step kernels.

The compiled extension is preferred; the pure-Python twin is used when it is
not built or when ``RESDOB_PURE_PYTHON`` is set to a non-empty value.
"""
import os

from resdob import _pykernels

if os.environ.get("RESDOB_PURE_PYTHON"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from resdob import _ckernels as _impl
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"
    else:
        BACKEND = "cython"

plant_deriv = _impl.plant_deriv
plant_step = _impl.plant_step
qp_enumerate = _impl.qp_enumerate
hocbf_rows = _impl.hocbf_rows

__all__ = ["BACKEND", "plant_deriv", "plant_step", "qp_enumerate", "hocbf_rows"]
