"""Hot-loop kernels, compiled when available.

The Cython extension ``lbl._ckernels`` is used if it was built; otherwise the
numpy implementations in ``lbl._kernels_py`` are used. Set ``LBL_PURE_PYTHON=1``
to force the fallback. ``BACKEND`` names the active implementation.
"""
import os

from lbl import _kernels_py

if os.environ.get("LBL_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from lbl import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

LOGVAR_MIN = _kernels_py.LOGVAR_MIN
LOGVAR_MAX = _kernels_py.LOGVAR_MAX
HALF_LOG_2PI = _kernels_py.HALF_LOG_2PI

clamp_logvar = _kernels_py.clamp_logvar
diag_nll_grad = _impl.diag_nll_grad
kl_diag_grad = _impl.kl_diag_grad
vjepa_terms = _impl.vjepa_terms
vicreg_reg_grad = _impl.vicreg_reg_grad
adam_update = _impl.adam_update
systematic_resample = _impl.systematic_resample


def backends():
    """Return ``{name: module}`` for every importable kernel implementation."""
    out = {"python": _kernels_py}
    try:
        from lbl import _ckernels
    except ImportError:
        return out
    out["cython"] = _ckernels
    return out
