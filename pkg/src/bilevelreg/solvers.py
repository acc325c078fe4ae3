"""Lower-level gradient descent and a matrix-free conjugate-gradient solver."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DivergenceError, SpdViolationError
from .lower import LowerProblem


@dataclass
class GDConfig:
    """Gradient-descent settings for the reconstruction problem.

    ``step`` is either an explicit positive number or "one-over-L" to use the
    reciprocal of the analytic Lipschitz constant.  ``grad_tol`` of 0 disables
    the gradient-norm stop.  ``warm_start`` is consumed by the upper-level
    drivers (reuse of the previous sample solution as the initializer).
    """

    step: float | str = "one-over-L"
    max_iters: int = 1000
    grad_tol: float = 0.0
    record_trajectory: bool = False
    warm_start: bool = False

    def __post_init__(self):
        if isinstance(self.step, str):
            if self.step != "one-over-L":
                raise ValueError(f"unknown step rule {self.step!r}")
        elif not self.step > 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.grad_tol < 0:
            raise ValueError("grad_tol must be >= 0")


@dataclass
class GDResult:
    x: np.ndarray
    iters_run: int
    final_grad_norm: float
    trajectory: list[np.ndarray] | None = None


def resolve_step(problem: LowerProblem, cfg: GDConfig) -> float:
    if cfg.step == "one-over-L":
        return 1.0 / problem.lipschitz_grad()
    return float(cfg.step)


def gd_minimize(problem: LowerProblem, x0: np.ndarray, cfg: GDConfig) -> GDResult:
    """Plain gradient descent, stopping at grad_tol or max_iters."""
    step = resolve_step(problem, cfg)
    x = np.array(x0, dtype=np.float64, copy=True)
    trajectory = [x.copy()] if cfg.record_trajectory else None
    grad = problem.grad_x(x)
    gnorm = float(np.linalg.norm(grad))
    iters = 0
    while iters < cfg.max_iters:
        if not np.isfinite(gnorm):
            raise DivergenceError(
                f"non-finite cost/gradient at lower-level iteration {iters}",
                iteration=iters,
            )
        if cfg.grad_tol > 0 and gnorm <= cfg.grad_tol:
            break
        x -= step * grad
        iters += 1
        if trajectory is not None:
            trajectory.append(x.copy())
        grad = problem.grad_x(x)
        gnorm = float(np.linalg.norm(grad))
    if not np.isfinite(gnorm):
        raise DivergenceError(
            f"non-finite cost/gradient at lower-level iteration {iters}",
            iteration=iters,
        )
    return GDResult(x=x, iters_run=iters, final_grad_norm=gnorm, trajectory=trajectory)


@dataclass
class CGResult:
    x: np.ndarray
    iters_run: int
    residual_norm: float


def cg_solve(
    hess_action: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    tol: float,
    max_iters: int,
) -> CGResult:
    """Conjugate gradients for SPD systems, from a zero initializer.

    Stops when ||H q - b|| <= tol; otherwise returns the max_iters iterate
    with which residual it reached.  Raises SpdViolationError on detecting a
    direction of non-positive curvature.
    """
    x = np.zeros_like(b)
    r = b.copy()
    rnorm = float(np.linalg.norm(r))
    if rnorm <= tol:
        return CGResult(x=x, iters_run=0, residual_norm=rnorm)
    p = r.copy()
    rr = rnorm**2
    iters = 0
    while iters < max_iters:
        hp = hess_action(p)
        php = float(np.vdot(p, hp))
        if php <= 0.0:
            raise SpdViolationError(
                f"non-positive curvature p'Hp = {php:.3e} at CG iteration {iters}"
            )
        alpha = rr / php
        x += alpha * p
        r -= alpha * hp
        iters += 1
        rr_new = float(np.vdot(r, r))
        rnorm = float(np.sqrt(rr_new))
        if rnorm <= tol:
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    return CGResult(x=x, iters_run=iters, residual_norm=rnorm)
