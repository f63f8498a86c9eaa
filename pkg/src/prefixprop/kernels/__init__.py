"""Backend selection for the hot row-wise kernels.

The compiled Cython extension (masked/plain softmax, layer norm) is
preferred when built; the numpy fallback is otherwise selected at import
time.  ``PREFIXPROP_KERNELS`` overrides: ``compiled`` (fail loudly if
unavailable), ``python``, or ``auto``.  GELU always comes from the numpy
implementation -- it is purely elementwise and numpy's vectorized tanh
wins there.

``BACKEND`` names the backend in use.  ``bench-kernels`` and the parity
tests import the implementation modules directly to compare them.
"""

import os as _os

from ..errors import ConfigError
from . import _pykernels

_requested = _os.environ.get("PREFIXPROP_KERNELS", "auto")
if _requested not in ("auto", "compiled", "python"):
    raise ConfigError(
        f"PREFIXPROP_KERNELS must be 'auto', 'compiled' or 'python', got {_requested!r}"
    )

if _requested == "python":
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _requested == "compiled":
            raise
        _impl = _pykernels
        BACKEND = "python"

softmax_forward = _impl.softmax_forward
softmax_backward = _impl.softmax_backward
layer_norm_forward = _impl.layer_norm_forward
layer_norm_backward = _impl.layer_norm_backward
gelu_forward = _pykernels.gelu_forward
gelu_backward = _pykernels.gelu_backward

__all__ = [
    "BACKEND",
    "softmax_forward",
    "softmax_backward",
    "layer_norm_forward",
    "layer_norm_backward",
    "gelu_forward",
    "gelu_backward",
]
