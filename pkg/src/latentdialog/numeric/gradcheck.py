"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import ModelParams


@dataclass
class GradCheckReport:
    n_checked: int
    n_ok: int
    max_rel_error: float
    worst: tuple[str, int] | None
    violations: list[tuple[str, int, float, float, float]] = field(default_factory=list)

    @property
    def fraction_ok(self) -> float:
        return self.n_ok / self.n_checked if self.n_checked else 1.0


def grad_check(
    loss_fn: Callable[..., float],
    params: ModelParams,
    h: float = 1e-3,
    tol: float = 1e-4,
    atol: float = 1e-8,
    max_violations: int = 50,
) -> GradCheckReport:
    """Compare analytic gradients with central finite differences.

    loss_fn(compute_grad=False) must return the scalar loss for the
    current parameter values; loss_fn(compute_grad=True) must also
    accumulate analytic gradients into params (params are zeroed here
    first). Every scalar parameter is perturbed by +/- h in place.

    A coordinate passes when rel = |a - n| / max(|a|, |n|) <= tol, or
    both |a| and |n| are below atol. Use float64 params for meaningful
    tolerances.
    """
    params.zero_grad()
    loss_fn(compute_grad=True)
    analytic = {name: params.grad(name).copy() for name in params.names()}

    n_checked = 0
    n_ok = 0
    max_rel = 0.0
    worst = None
    violations: list[tuple[str, int, float, float, float]] = []

    for name in params.names():
        value = params.value(name)
        flat = value.reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = loss_fn(compute_grad=False)
            flat[i] = orig - h
            f_minus = loss_fn(compute_grad=False)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(a_flat[i])
            denom = max(abs(a), abs(numeric))
            if denom < atol:
                rel = 0.0
            else:
                rel = abs(a - numeric) / denom
            n_checked += 1
            if rel <= tol:
                n_ok += 1
            elif len(violations) < max_violations:
                violations.append((name, i, a, float(numeric), float(rel)))
            if rel > max_rel:
                max_rel = rel
                worst = (name, i)

    return GradCheckReport(
        n_checked=n_checked,
        n_ok=n_ok,
        max_rel_error=max_rel,
        worst=worst,
        violations=violations,
    )
