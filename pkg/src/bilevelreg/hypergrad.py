"""Hypergradient engines: implicit (minimizer), unrolled reverse, unrolled forward.

All supported upper losses depend on the hyperparameters only through the
reconstruction, so the explicit theta-partial of the loss is zero and every
engine returns the chain-rule term alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .lower import LowerProblem
from .signals import circ_conv, circ_conv_adjoint
from .solvers import GDConfig, cg_solve, gd_minimize


@dataclass
class UpperLoss:
    """Per-sample loss callbacks: value and gradient w.r.t. the reconstruction.

    ``grad_x`` is None for value-only losses (e.g. Monte-Carlo SURE), which
    cannot drive gradient engines.
    """

    value: Callable[[np.ndarray], float]
    grad_x: Callable[[np.ndarray], np.ndarray] | None


@dataclass
class HypergradResult:
    grad: np.ndarray
    method: str
    lower_iters: int
    lower_final_grad_norm: float
    cg_residual: float | None = None
    warning: str | None = None
    x_final: np.ndarray | None = None


def _require_grad(loss: UpperLoss) -> Callable[[np.ndarray], np.ndarray]:
    if loss.grad_x is None:
        raise ValueError("loss has no x-gradient; cannot compute a hypergradient")
    return loss.grad_x


def hypergrad_minimizer(
    problem: LowerProblem,
    loss: UpperLoss,
    x_approx: np.ndarray,
    cg_tol: float,
    cg_max_iters: int | None = None,
    lower_iters: int = 0,
) -> HypergradResult:
    """Implicit-differentiation hypergradient at an (approximate) minimizer.

    Solves H(x) q = grad_x loss by CG and returns -J(x)' q, where H is the
    lower-level Hessian and J the mixed x-theta Jacobian, both evaluated at
    ``x_approx``.  Accuracy degrades with the stationarity gap at x_approx;
    a large lower-level gradient norm is surfaced via ``warning``.
    """
    grad_loss = _require_grad(loss)(x_approx)
    if cg_max_iters is None:
        cg_max_iters = 10 * x_approx.size
    cg = cg_solve(
        lambda v: problem.hess_vec(x_approx, v), grad_loss, cg_tol, cg_max_iters
    )
    grad = -problem.jac_adjoint_apply(x_approx, cg.x)
    gnorm = float(np.linalg.norm(problem.grad_x(x_approx)))
    warning = None
    if gnorm > 1e-4 * (1.0 + float(np.linalg.norm(grad_loss))):
        warning = (
            f"lower-level gradient norm {gnorm:.3e} is large; "
            "hypergradient may be inaccurate"
        )
    return HypergradResult(
        grad=grad,
        method="minimizer",
        lower_iters=lower_iters,
        lower_final_grad_norm=gnorm,
        cg_residual=cg.residual_norm,
        warning=warning,
        x_final=x_approx,
    )


def hypergrad_unrolled_reverse(
    problem: LowerProblem,
    loss: UpperLoss,
    x0: np.ndarray,
    n_steps: int,
    step: float,
) -> HypergradResult:
    """Backpropagation through ``n_steps`` gradient-descent updates.

    Stores the full trajectory (memory O(T N)) and sweeps it backwards with
    one Hessian-vector and one Jacobian-adjoint product per step.
    """
    grad_loss = _require_grad(loss)
    cfg = GDConfig(step=step, max_iters=n_steps, grad_tol=0.0, record_trajectory=True)
    run = gd_minimize(problem, x0, cfg)
    trajectory = run.trajectory
    grad = np.zeros(problem.theta.theta_size())
    delta = grad_loss(run.x)
    for t in range(n_steps, 0, -1):
        x_prev = trajectory[t - 1]
        grad -= step * problem.jac_adjoint_apply(x_prev, delta)
        delta = delta - step * problem.hess_vec(x_prev, delta)
    return HypergradResult(
        grad=grad,
        method="reverse",
        lower_iters=run.iters_run,
        lower_final_grad_norm=run.final_grad_norm,
        x_final=run.x,
    )


def unrolled_forward_sensitivity(
    problem: LowerProblem, x0: np.ndarray, n_steps: int, step: float
) -> tuple[np.ndarray, np.ndarray]:
    """Iterate GD while accumulating dx^T/dtheta.

    Returns (x_T, Z) with Z[p] the sensitivity of x_T to theta coordinate p;
    Z starts at zero because the initializer does not depend on theta.
    """
    n_params = problem.theta.theta_size()
    x = np.array(x0, dtype=np.float64, copy=True)
    z = np.zeros((n_params,) + x.shape)
    for _ in range(n_steps):
        cols = _mixed_jacobian_columns(problem, x)
        for p in range(n_params):
            z[p] -= step * (problem.hess_vec(x, z[p]) + cols[p])
        x -= step * problem.grad_x(x)
    return x, z


def hypergrad_unrolled_forward(
    problem: LowerProblem,
    loss: UpperLoss,
    x0: np.ndarray,
    n_steps: int,
    step: float,
) -> HypergradResult:
    """Forward-mode accumulation of the unrolled gradient (memory O(N P))."""
    grad_loss = _require_grad(loss)
    x, z = unrolled_forward_sensitivity(problem, x0, n_steps, step)
    g = grad_loss(x)
    grad = np.array([float(np.vdot(z[p], g)) for p in range(z.shape[0])])
    return HypergradResult(
        grad=grad,
        method="forward",
        lower_iters=n_steps,
        lower_final_grad_norm=float(np.linalg.norm(problem.grad_x(x))),
        x_final=x,
    )


def _mixed_jacobian_columns(problem: LowerProblem, x: np.ndarray) -> np.ndarray:
    """All columns of d(grad_x Phi)/d theta at x, shaped (P, *grid)."""
    hp = problem.theta
    pot = hp.potential
    cols = np.zeros((hp.theta_size(),) + x.shape)
    pos = 1 if hp.learn_beta0 else 0
    tap_pos = pos + hp.n_filters
    axes = tuple(range(x.ndim))
    for k, (w, c) in enumerate(zip(hp.weights(), hp.filters)):
        z = circ_conv(x, c)
        slope = pot.dphi(z)
        curv = pot.ddphi(z)
        beta_col = w * circ_conv_adjoint(slope, c)
        cols[pos + k] = beta_col
        if hp.learn_beta0:
            cols[0] += beta_col
        for s in np.ndindex(c.shape):
            neg = tuple(-i for i in s)
            cols[tap_pos] = w * (
                np.roll(slope, neg, axis=axes)
                + circ_conv_adjoint(curv * np.roll(x, s, axis=axes), c)
            )
            tap_pos += 1
    return cols


def grad_compare(g_est: np.ndarray, g_ref: np.ndarray) -> tuple[float, float]:
    """(angle in radians, relative norm error) between two theta gradients."""
    ref_norm = float(np.linalg.norm(g_ref))
    est_norm = float(np.linalg.norm(g_est))
    if ref_norm == 0.0:
        raise ValueError("undefined angle: reference gradient is zero")
    if est_norm == 0.0:
        raise ValueError("undefined angle: estimated gradient is zero")
    cosine = float(np.vdot(g_est, g_ref)) / (est_norm * ref_norm)
    angle = float(np.arccos(np.clip(cosine, -1.0, 1.0)))
    rel_err = float(np.linalg.norm(g_est - g_ref)) / ref_norm
    return angle, rel_err
