"""Kernel dispatch: compiled extension when importable, numpy otherwise.

Set ``PNNKIT_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from pnnkit import _fallback

BACKEND = "python"
fft_radix2 = _fallback.fft_radix2
max_of_bin = _fallback.max_of_bin
adam_update = _fallback.adam_update

if os.environ.get("PNNKIT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from pnnkit import _kernels
    except ImportError:
        pass
    else:
        BACKEND = "compiled"
        fft_radix2 = _kernels.fft_radix2
        max_of_bin = _kernels.max_of_bin
        adam_update = _kernels.adam_update

__all__ = ["BACKEND", "adam_update", "fft_radix2", "max_of_bin"]
