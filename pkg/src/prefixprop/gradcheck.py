"""Finite-difference verification of the autodiff contract."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DeterminismError
from .tensor import Tensor

REL_TOL = 1e-5
ABS_TOL = 1e-8


@dataclass
class ParamReport:
    name: str
    n_checked: int
    max_rel_err: float
    max_abs_err: float
    worst_coord: tuple[int, int] | None
    analytic_at_worst: float
    numeric_at_worst: float
    passed: bool


@dataclass
class GradCheckReport:
    eps: float
    params: list[ParamReport] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(p.passed for p in self.params)

    @property
    def max_rel_err(self) -> float:
        return max((p.max_rel_err for p in self.params), default=0.0)

    def summary(self) -> str:
        lines = [f"grad check (eps={self.eps:g}): {'PASS' if self.passed else 'FAIL'}"]
        for p in self.params:
            lines.append(
                f"  {p.name}: checked {p.n_checked} coords, "
                f"max rel err {p.max_rel_err:.3e} -> {'ok' if p.passed else 'FAIL'}"
            )
        return "\n".join(lines)


def _coord_passes(analytic: float, numeric: float) -> tuple[bool, float, float]:
    """Blended tolerance: absolute below ABS_TOL always passes (covers the
    finite-difference noise floor on small gradients), relative below
    REL_TOL otherwise."""
    abs_err = abs(analytic - numeric)
    scale = max(abs(analytic), abs(numeric))
    rel_err = abs_err / scale if scale > 0 else 0.0
    return abs_err < ABS_TOL or rel_err < REL_TOL, rel_err, abs_err


def grad_check(
    loss_fn,
    params: dict[str, Tensor],
    eps: float = 1e-5,
    max_coords_per_param: int = 16,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients of ``loss_fn`` against central differences.

    ``loss_fn`` takes no arguments, reads the parameter tensors, and returns
    a scalar Tensor.  It must be deterministic (checked by double
    evaluation) and everything must be float64.  Up to
    ``max_coords_per_param`` coordinates are sampled per tensor; a
    coordinate passes when the relative error is below 1e-5 or the
    absolute error is below 1e-8 (the absolute branch covers tiny
    gradients, where central differences bottom out near 1e-9 regardless
    of the true value).
    """
    if not 1e-6 <= eps <= 1e-4:
        raise ConfigError(f"grad_check eps must lie in [1e-6, 1e-4], got {eps}")
    for name, p in params.items():
        if p.dtype != np.float64:
            raise ConfigError(f"grad_check requires float64 parameters; {name} is {p.dtype}")

    first = loss_fn().item()
    second = loss_fn().item()
    if first != second:
        raise DeterminismError(
            f"loss_fn is not deterministic: {first!r} != {second!r} on repeated evaluation"
        )

    for p in params.values():
        p.zero_grad()
    loss_fn().backward()
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    rng = np.random.default_rng(seed)
    report = GradCheckReport(eps=eps)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        size = flat.shape[0]
        if size <= max_coords_per_param:
            coords = np.arange(size)
        else:
            coords = rng.choice(size, size=max_coords_per_param, replace=False)
        a_flat = analytic[name].reshape(-1)
        max_rel = 0.0
        max_abs = 0.0
        worst = None
        worst_a = worst_n = 0.0
        ok = True
        for idx in coords:
            original = flat[idx]
            flat[idx] = original + eps
            f_plus = loss_fn().item()
            flat[idx] = original - eps
            f_minus = loss_fn().item()
            flat[idx] = original
            numeric = (f_plus - f_minus) / (2.0 * eps)
            passed, rel_err, abs_err = _coord_passes(float(a_flat[idx]), numeric)
            if rel_err >= max_rel:
                max_rel = rel_err
                worst = (int(idx) // p.shape[1], int(idx) % p.shape[1])
                worst_a, worst_n = float(a_flat[idx]), numeric
            max_abs = max(max_abs, abs_err)
            ok = ok and passed
        report.params.append(
            ParamReport(
                name=name,
                n_checked=len(coords),
                max_rel_err=max_rel,
                max_abs_err=max_abs,
                worst_coord=worst,
                analytic_at_worst=worst_a,
                numeric_at_worst=worst_n,
                passed=ok,
            )
        )
    return report
