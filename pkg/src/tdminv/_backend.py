"""Kernel backend selection.

The compiled kernels are used when the extension imports; otherwise the numpy
versions are used. ``TDMINV_BACKEND=python`` forces the fallback and
``TDMINV_BACKEND=compiled`` makes a missing extension an import error.
"""
import os

from . import _pykernels

_choice = os.environ.get("TDMINV_BACKEND", "auto").lower()
if _choice not in ("auto", "python", "compiled"):
    raise ImportError(f"TDMINV_BACKEND must be auto, python or compiled, got {_choice!r}")

kernels = _pykernels
BACKEND = "python"
if _choice != "python":
    try:
        from . import _ckernels
    except ImportError:
        if _choice == "compiled":
            raise
    else:
        kernels = _ckernels
        BACKEND = "compiled"

bilinear_sample = kernels.bilinear_sample
bilinear_sample_grad = kernels.bilinear_sample_grad
bilinear_scatter = kernels.bilinear_scatter
shepard_resample = kernels.shepard_resample
