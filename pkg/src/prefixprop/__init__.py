"""Prefix-propagation and prefix-tuning for long-sequence encoders.

Library layers, bottom up: ``tensor`` (autodiff core), ``attention``
(masked multi-head variants and the kernel decomposition), ``model``
(frozen-backbone encoder), ``tasks`` / ``training`` / ``calibration``
(experiments), ``cli`` (driver).  The hot row-wise kernels live in
``kernels`` with a compiled backend and a numpy fallback.
"""

__version__ = "0.1.0"

from .kernels import BACKEND as KERNEL_BACKEND
from .tensor import Tensor, no_grad

__all__ = ["KERNEL_BACKEND", "Tensor", "no_grad", "__version__"]
