"""Finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    n_coords: int
    worst: str

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} max_rel_err={self.max_rel_error:.3e} tol={self.tolerance:.0e} coords={self.n_coords} worst={self.worst}"


def grad_check(
    closure: Callable[[], Tensor],
    params: Sequence[Parameter],
    tolerance: float = 1e-4,
    n_coords: int = 20,
    h: float = 1e-5,
    rng: np.random.Generator | None = None,
    floor: float = 1e-6,
) -> GradCheckReport:
    """Compare tape gradients with central differences at sampled coordinates.

    ``closure`` must be deterministic (no dropout) and rebuild the forward
    pass on every call.  The relative error of a coordinate is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``; the floor
    keeps near-zero gradients from turning round-off into huge ratios.
    """
    rng = rng or np.random.default_rng(0)
    params = list(params)
    for p in params:
        p.zero_grad()
    closure().backward()
    analytic = {p.name: p.grad.copy() for p in params}

    sizes = np.array([p.data.size for p in params], dtype=float)
    picks = rng.choice(len(params), size=n_coords, p=sizes / sizes.sum())
    worst, worst_at = 0.0, ""
    for k in picks:
        p = params[k]
        i = int(rng.integers(p.data.size))
        flat = p.data.reshape(-1)
        old = flat[i]
        flat[i] = old + h
        fp = closure().item()
        flat[i] = old - h
        fm = closure().item()
        flat[i] = old
        num = (fp - fm) / (2 * h)
        ana = float(analytic[p.name].reshape(-1)[i])
        err = abs(ana - num) / max(abs(ana), abs(num), floor)
        if err > worst or not worst_at:
            worst, worst_at = err, f"{p.name}[{i}] analytic={ana:.6e} numeric={num:.6e}"
    return GradCheckReport(worst, tolerance, n_coords, worst_at)
