"""Backend selection for the PMSM time-stepping kernel.

The compiled extension ``_kernel_c`` is used when it was built; otherwise the
pure-Python ``_kernel_py`` takes over with identical results (up to
floating-point summation order).  Setting ``TWOSCALE_PURE_PYTHON=1`` forces
the fallback, which is how the test-suite exercises both.
"""

import os

from . import _kernel_py
from ._kernel_py import NONFINITE, NONPHYSICAL, OK, PARAM_LAYOUT, SINGULAR

_backend = None
if os.environ.get("TWOSCALE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernel_c as _backend
    except ImportError:
        _backend = None

if _backend is None:
    _backend = _kernel_py
    BACKEND = "python"
else:
    BACKEND = "cython"

pmsm_run = _backend.pmsm_run
pmsm_run_python = _kernel_py.pmsm_run


def compiled_available():
    try:
        from . import _kernel_c  # noqa: F401
    except ImportError:
        return False
    return True


def compiled_run():
    """The compiled ``pmsm_run``; raises ImportError when it was not built."""
    from . import _kernel_c

    return _kernel_c.pmsm_run


def pack_params(p):
    """Flatten a :class:`~twoscale.plants.PmsmParams` into the kernel layout."""
    values = dict(
        rs=p.rs, ld=p.ld, lq=p.lq, lambda_m=p.lambda_m, omega_r=p.omega_r,
        r_load=p.r_load, c_bus=p.c_bus, kp_v=p.kp_v, ki_v=p.ki_v,
        kp_id=p.kp_id, ki_id=p.ki_id, kp_iq=p.kp_iq, ki_iq=p.ki_iq,
        iq_ref_sign=p.iq_ref_sign,
    )
    return [float(values[name]) for name in PARAM_LAYOUT]


__all__ = [
    "BACKEND", "OK", "NONPHYSICAL", "NONFINITE", "SINGULAR", "PARAM_LAYOUT",
    "pmsm_run", "pmsm_run_python", "compiled_available", "compiled_run", "pack_params",
]
