"""Pure numpy implementations of the hot row-wise kernels.

Semantically identical to the compiled versions in ``_ckernels``; used as
the fallback when the extension is not built.  Results may differ from the
compiled backend in the last bits (numpy reduces with pairwise summation,
the C loops sequentially); each backend is deterministic on its own.
"""

from __future__ import annotations

import numpy as np

from ..errors import DegenerateRowError

GELU_C0 = 0.7978845608028654  # sqrt(2/pi)
GELU_C1 = 0.044715


def softmax_forward(scores: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Row softmax with max-subtraction; masked entries get exactly 0."""
    if mask is None:
        shifted = scores - scores.max(axis=1, keepdims=True)
        e = np.exp(shifted)
    else:
        neg = np.where(mask, scores, -np.inf)
        row_max = neg.max(axis=1, keepdims=True)
        dead = ~np.isfinite(row_max).ravel()
        if dead.any():
            raise DegenerateRowError(
                f"softmax row {int(np.flatnonzero(dead)[0])} has no unmasked entries"
            )
        e = np.exp(neg - row_max)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(probs: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    dot = (probs * grad_out).sum(axis=1, keepdims=True)
    return probs * (grad_out - dot)


def layer_norm_forward(x, gamma, beta, eps):
    """Per-row standardization followed by the affine (gamma, beta).

    Returns (y, mean, rstd); mean/rstd are kept for the backward pass.
    """
    mean = x.mean(axis=1, keepdims=True)
    var = np.square(x - mean).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (x - mean) * rstd * gamma + beta
    return y, mean.ravel(), rstd.ravel()


def layer_norm_backward(x, gamma, mean, rstd, grad_y):
    xhat = (x - mean[:, None]) * rstd[:, None]
    dxhat = grad_y * gamma
    c1 = dxhat.mean(axis=1, keepdims=True)
    c2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = (dxhat - c1 - xhat * c2) * rstd[:, None]
    dgamma = (grad_y * xhat).sum(axis=0)
    dbeta = grad_y.sum(axis=0)
    return dx, dgamma, dbeta


def gelu_forward(x: np.ndarray) -> np.ndarray:
    """tanh-approximation GELU: 0.5*x*(1 + tanh(c0*(x + c1*x^3)))."""
    t = np.tanh(GELU_C0 * (x + GELU_C1 * x * x * x))
    return 0.5 * x * (1.0 + t)


def gelu_backward(x: np.ndarray, grad_y: np.ndarray) -> np.ndarray:
    t = np.tanh(GELU_C0 * (x + GELU_C1 * x * x * x))
    du = GELU_C0 * (1.0 + 3.0 * GELU_C1 * x * x)
    dydx = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
    return grad_y * dydx
