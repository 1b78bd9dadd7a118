"""Convolution kernels: compiled extension when built, numpy fallback otherwise.

Set ``DIFFUIR_KERNELS=python`` to force the fallback, ``compiled`` to fail
loudly if the extension is missing.
"""
import os

from . import _conv_numpy as python

try:
    from . import _conv_ext as compiled
except ImportError:  # extension not built
    compiled = None

_choice = os.environ.get("DIFFUIR_KERNELS", "auto")
if _choice == "python" or (_choice == "auto" and compiled is None):
    _impl, BACKEND = python, "python"
elif compiled is None:
    raise ImportError("DIFFUIR_KERNELS=compiled but diffuir.kernels._conv_ext is not built")
else:
    _impl, BACKEND = compiled, "compiled"


def conv3x3(x, w, b):
    """Same-padding 3x3 convolution: ``x`` (N, C, H, W), ``w`` (CO, C, 3, 3), ``b`` (CO,)."""
    return _impl.conv3x3(x, w, b)


def conv3x3_backward(x, w, g, need_input_grad=True):
    """Gradients ``(gx, gw, gb)`` of a conv3x3 given upstream ``g``; ``gx`` is None if skipped."""
    return _impl.conv3x3_backward(x, w, g, need_input_grad)
