"""Lower-level reconstruction cost, its derivatives, and regularity constants.

The cost is

    Phi(x; theta, y) = 0.5 ||A x - y||^2
                       + e^{b0} sum_k e^{bk} sum_i phi((c_k * x)_i),

with log tuning weights b0, b1..bK and circular filters c_k.  The learnable
parameter vector packs [b0 (optional), b1..bK, c_1 taps, ..., c_K taps] in
row-major tap order; the layout is frozen and tagged so parameter files stay
forward-compatible.

Derivative conventions (validated against finite differences; see README):

    grad_x Phi = A'(Ax - y) + sum_k w_k c~_k * phi'.(z_k)
    hess(x) v  = A'(Av) + sum_k w_k c~_k * (phi''.(z_k) .* (c_k * v))
    d(grad_x Phi)/d b_k     = w_k c~_k * phi'.(z_k)
    d(grad_x Phi)/d c_{k,s} = w_k [circshift(phi'.(z_k), -s)
                                   + c~_k * (phi''.(z_k) .* circshift(x, s))]

where z_k = c_k * x and w_k = e^{b0 + b_k}.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .forward import ForwardModel
from .potentials import Potential
from .signals import as_filter, circ_conv, circ_conv_adjoint, filter_spectrum_max

THETA_LAYOUT = "b0?:betas:taps-rowmajor:v1"


@dataclass
class HyperParams:
    """Regularizer hyperparameters: log tuning weights and filters."""

    beta0: float
    betas: np.ndarray
    filters: list[np.ndarray]
    potential: Potential
    learn_beta0: bool = False

    def __post_init__(self):
        self.beta0 = float(self.beta0)
        self.betas = np.asarray(self.betas, dtype=np.float64).reshape(-1)
        self.filters = [as_filter(c) for c in self.filters]
        if len(self.filters) != self.betas.size:
            raise ValueError(
                f"{len(self.filters)} filters but {self.betas.size} tuning weights"
            )
        if not np.isfinite(self.beta0) or not np.all(np.isfinite(self.betas)):
            raise ValueError("tuning parameters must be finite")

    @property
    def n_filters(self) -> int:
        return len(self.filters)

    def weights(self) -> np.ndarray:
        """Effective per-filter weights e^{b0 + b_k}."""
        return np.exp(self.beta0 + self.betas)

    def theta_size(self) -> int:
        taps = sum(c.size for c in self.filters)
        return taps + self.n_filters + (1 if self.learn_beta0 else 0)


def pack_theta(hp: HyperParams) -> np.ndarray:
    parts = []
    if hp.learn_beta0:
        parts.append([hp.beta0])
    parts.append(hp.betas)
    for c in hp.filters:
        parts.append(c.ravel())
    if not parts:
        return np.zeros(0)
    return np.concatenate([np.asarray(p, dtype=np.float64) for p in parts])


def unpack_theta(hp: HyperParams, theta: np.ndarray) -> HyperParams:
    """Rebuild HyperParams from a flat vector using ``hp`` as the template."""
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    if theta.size != hp.theta_size():
        raise ValueError(
            f"theta length {theta.size} does not match layout size {hp.theta_size()}"
        )
    pos = 0
    beta0 = hp.beta0
    if hp.learn_beta0:
        beta0 = float(theta[0])
        pos = 1
    k = hp.n_filters
    betas = theta[pos : pos + k].copy()
    pos += k
    filters = []
    for c in hp.filters:
        filters.append(theta[pos : pos + c.size].reshape(c.shape).copy())
        pos += c.size
    return replace(hp, beta0=beta0, betas=betas, filters=filters)


def theta_mask(
    hp: HyperParams,
    beta0: bool = True,
    betas: bool = True,
    taps: bool = True,
) -> np.ndarray:
    """0/1 mask over the flat theta layout, selecting coordinate groups.

    Used by the upper-level drivers to freeze coordinates (e.g. train tuning
    weights with fixed filters, or filters with fixed weights).
    """
    parts = []
    if hp.learn_beta0:
        parts.append(np.full(1, 1.0 if beta0 else 0.0))
    parts.append(np.full(hp.n_filters, 1.0 if betas else 0.0))
    for c in hp.filters:
        parts.append(np.full(c.size, 1.0 if taps else 0.0))
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)


@dataclass
class LowerProblem:
    """One reconstruction instance: operator, data, and hyperparameters."""

    A: ForwardModel
    y: np.ndarray
    theta: HyperParams

    def __post_init__(self):
        if self.y.shape != self.A.grid.dims:
            raise ValueError(
                f"data shape {self.y.shape} does not match grid {self.A.grid.dims}"
            )

    def cost(self, x: np.ndarray) -> float:
        r = self.A.apply(x) - self.y
        total = 0.5 * float(np.vdot(r, r))
        pot = self.theta.potential
        for w, c in zip(self.theta.weights(), self.theta.filters):
            total += w * float(np.sum(pot.phi(circ_conv(x, c))))
        return total

    def grad_x(self, x: np.ndarray) -> np.ndarray:
        g = self.A.adjoint(self.A.apply(x) - self.y)
        pot = self.theta.potential
        for w, c in zip(self.theta.weights(), self.theta.filters):
            g += w * circ_conv_adjoint(pot.dphi(circ_conv(x, c)), c)
        return g

    def hess_vec(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        h = self.A.adjoint(self.A.apply(v))
        pot = self.theta.potential
        for w, c in zip(self.theta.weights(), self.theta.filters):
            curv = pot.ddphi(circ_conv(x, c))
            h += w * circ_conv_adjoint(curv * circ_conv(v, c), c)
        return h

    def jac_adjoint_apply(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """(d(grad_x Phi)/d theta)' u as a flat theta-shaped vector."""
        hp = self.theta
        pot = hp.potential
        out = np.zeros(hp.theta_size())
        pos = 1 if hp.learn_beta0 else 0
        tap_pos = pos + hp.n_filters
        beta_total = 0.0
        axes = tuple(range(x.ndim))
        for k, (w, c) in enumerate(zip(hp.weights(), hp.filters)):
            z = circ_conv(x, c)
            slope = pot.dphi(z)
            curv_cu = pot.ddphi(z) * circ_conv(u, c)
            beta_entry = w * float(np.vdot(circ_conv_adjoint(slope, c), u))
            out[pos + k] = beta_entry
            beta_total += beta_entry
            for s in np.ndindex(c.shape):
                # <circshift(slope,-s), u> = <slope, circshift(u,s)>;
                # <c~*(curv.*circshift(x,s)), u> = <circshift(x,s), curv.*(c*u)>
                out[tap_pos] = w * (
                    float(np.vdot(slope, np.roll(u, s, axis=axes)))
                    + float(np.vdot(np.roll(x, s, axis=axes), curv_cu))
                )
                tap_pos += 1
        if hp.learn_beta0:
            out[0] = beta_total
        return out

    def jac_apply(self, x: np.ndarray, dtheta: np.ndarray) -> np.ndarray:
        """d(grad_x Phi)/d theta applied to a flat direction dtheta."""
        hp = self.theta
        pot = hp.potential
        dtheta = np.asarray(dtheta, dtype=np.float64).reshape(-1)
        if dtheta.size != hp.theta_size():
            raise ValueError(
                f"dtheta length {dtheta.size} does not match layout size {hp.theta_size()}"
            )
        pos = 1 if hp.learn_beta0 else 0
        db0 = dtheta[0] if hp.learn_beta0 else 0.0
        tap_pos = pos + hp.n_filters
        out = np.zeros_like(x)
        for k, (w, c) in enumerate(zip(hp.weights(), hp.filters)):
            z = circ_conv(x, c)
            slope = pot.dphi(z)
            dbk = dtheta[pos + k] + db0
            if dbk != 0.0:
                out += dbk * w * circ_conv_adjoint(slope, c)
            dc = dtheta[tap_pos : tap_pos + c.size].reshape(c.shape)
            tap_pos += c.size
            if np.any(dc != 0.0):
                # sum_s dc_s circshift(slope,-s) = dc~ * slope, and the
                # curvature terms collapse into one convolution with dc.
                out += w * (
                    circ_conv_adjoint(slope, dc)
                    + circ_conv_adjoint(pot.ddphi(z) * circ_conv(x, dc), c)
                )
        return out

    def lipschitz_grad(self) -> float:
        """L = sigma1^2(A) + e^{b0} L_phi' sum_k e^{bk} sigma1^2(C_k)."""
        sigma1_sq, _ = self.A.spectral_bounds()
        l_dphi = self.theta.potential.curvature_bound()
        total = sigma1_sq
        for w, c in zip(self.theta.weights(), self.theta.filters):
            total += w * l_dphi * filter_spectrum_max(c, self.A.grid) ** 2
        return float(total)

    def regularity_report(self, x_norm_bound: float) -> dict:
        """Named regularity constants for the current hyperparameters."""
        pot = self.theta.potential
        sigma1_sq, sigman_sq = self.A.spectral_bounds()
        l_dphi = pot.curvature_bound()
        l_ddphi = pot.curvature_lipschitz()
        sig1 = [
            filter_spectrum_max(c, self.A.grid) for c in self.theta.filters
        ]
        weights = self.theta.weights()
        reg_curv = float(sum(w * l_dphi * s**2 for w, s in zip(weights, sig1)))
        report = {
            "mu": float(sigman_sq),
            "strongly_convex": bool(sigman_sq > 0.0),
            "L_grad_x": float(sigma1_sq + reg_curv),
            "L_hess_x": reg_curv,
            "L_mixed_beta": [
                float(w * l_dphi * s**2) for w, s in zip(weights, sig1)
            ],
            "L_mixed_tap": [
                float(w * s * (2.0 * l_dphi + s * l_ddphi * x_norm_bound))
                for w, s in zip(weights, sig1)
            ],
        }
        return report
