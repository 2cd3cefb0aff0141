"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
implementations. Set ``MISSLAYER_BACKEND=python`` to force the fallback.
"""
import os

from . import _kernels_py

_forced = os.environ.get("MISSLAYER_BACKEND", "").lower()

if _forced == "python":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _forced == "compiled":
            raise
        _impl = _kernels_py
        BACKEND = "python"

erf = _impl.erf
erfc = _impl.erfc
norm_cdf = _impl.norm_cdf
norm_pdf = _impl.norm_pdf
nr = _impl.nr
relu_terms = _impl.relu_terms
log_coeffs = _impl.log_coeffs
log_coeffs_grad = _impl.log_coeffs_grad
completed = _impl.completed
rbf_log_terms = _impl.rbf_log_terms
rbf_log_terms_grad = _impl.rbf_log_terms_grad

__all__ = [
    "BACKEND", "erf", "erfc", "norm_cdf", "norm_pdf", "nr", "relu_terms",
    "log_coeffs", "log_coeffs_grad", "completed", "rbf_log_terms", "rbf_log_terms_grad",
]
