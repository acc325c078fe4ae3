"""Upper-level losses (value + x-gradient) and evaluation metrics.

Supervised losses compare the reconstruction against a reference image;
unsupervised ones use only the measurements and the known noise level.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .forward import ForwardModel
from .hypergrad import UpperLoss
from .potentials import CornerRounded1Norm


@dataclass(frozen=True)
class MSELoss:
    kind: str = field(default="mse", init=False)


@dataclass(frozen=True)
class HuberLoss:
    """Smoothed absolute-error loss: sum of sqrt(d_i^2 + eps^2) over residuals."""

    epsilon: float

    kind: str = field(default="huber", init=False)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("huber epsilon must be positive")


@dataclass(frozen=True)
class DiscrepancyLoss:
    """Squared gap between measurement-residual power and the noise variance."""

    sigma: float

    kind: str = field(default="discrepancy", init=False)

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")


@dataclass(frozen=True)
class NoiseCorridorLoss:
    """Penalty on weighted squared residuals outside [var_low, var_high]."""

    var_low: float
    var_high: float
    weights: np.ndarray | None = None

    kind: str = field(default="noise-corridor", init=False)

    def __post_init__(self):
        if not 0 <= self.var_low <= self.var_high:
            raise ValueError("corridor bounds must satisfy 0 <= low <= high")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if np.any(w < 0):
                raise ValueError("corridor weights must be nonnegative")
            object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class SureMCLoss:
    """Monte-Carlo SURE estimate of the denoising MSE; value only."""

    sigma: float
    probe_eps: float | None = None
    n_probes: int = 1
    seed: int = 0

    kind: str = field(default="sure-mc", init=False)

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.probe_eps is not None and not self.probe_eps > 0:
            raise ValueError("probe_eps must be positive")
        if self.n_probes < 1:
            raise ValueError("n_probes must be >= 1")


LossSpec = MSELoss | HuberLoss | DiscrepancyLoss | NoiseCorridorLoss | SureMCLoss


def loss_value_grad(
    spec: LossSpec,
    xhat: np.ndarray,
    y: np.ndarray,
    A: ForwardModel,
    x_true: np.ndarray | None = None,
    denoiser: Callable[[np.ndarray], np.ndarray] | None = None,
) -> tuple[float, np.ndarray | None]:
    """Loss value and its gradient w.r.t. the reconstruction.

    Returns (value, grad) where grad is None for value-only variants.
    Supervised variants require ``x_true``; the Monte-Carlo SURE variant
    requires ``denoiser`` (a y -> xhat map, called twice per probe).
    """
    if isinstance(spec, MSELoss):
        if x_true is None:
            raise ValueError("mse loss requires a reference image")
        d = xhat - x_true
        return 0.5 * float(np.vdot(d, d)), d
    if isinstance(spec, HuberLoss):
        if x_true is None:
            raise ValueError("huber loss requires a reference image")
        pot = CornerRounded1Norm(spec.epsilon)
        d = xhat - x_true
        return float(np.sum(pot.phi(d))), pot.dphi(d)
    if isinstance(spec, DiscrepancyLoss):
        r = A.apply(xhat) - y
        n = r.size
        gap = float(np.vdot(r, r)) / n - spec.sigma**2
        grad = (4.0 * gap / n) * A.adjoint(r)
        return gap**2, grad
    if isinstance(spec, NoiseCorridorLoss):
        r = A.apply(xhat) - y
        w = spec.weights if spec.weights is not None else np.ones_like(r)
        p = w * r * r
        over = np.maximum(p - spec.var_high, 0.0)
        under = np.minimum(p - spec.var_low, 0.0)
        value = 0.5 * float(np.sum(over**2 + under**2))
        grad = A.adjoint((over + under) * 2.0 * w * r)
        return value, grad
    if isinstance(spec, SureMCLoss):
        if denoiser is None:
            raise ValueError("sure-mc loss requires a denoiser callable")
        value = sure_mc(
            denoiser, y, spec.sigma, spec.probe_eps, spec.n_probes, spec.seed
        )
        return value, None
    raise TypeError(f"unknown loss spec {spec!r}")


def bind_loss(
    spec: LossSpec,
    y: np.ndarray,
    A: ForwardModel,
    x_true: np.ndarray | None = None,
    denoiser: Callable[[np.ndarray], np.ndarray] | None = None,
) -> UpperLoss:
    """Close a loss spec over one sample, yielding value/grad callbacks."""

    def value(x):
        return loss_value_grad(spec, x, y, A, x_true, denoiser)[0]

    if isinstance(spec, SureMCLoss):
        return UpperLoss(value=value, grad_x=None)

    def grad(x):
        return loss_value_grad(spec, x, y, A, x_true, denoiser)[1]

    return UpperLoss(value=value, grad_x=grad)


def sure_mc(
    denoiser: Callable[[np.ndarray], np.ndarray],
    y: np.ndarray,
    sigma: float,
    probe_eps: float | None = None,
    n_probes: int = 1,
    seed: int = 0,
) -> float:
    """Monte-Carlo SURE: residual power - sigma^2 + (2 sigma^2 / N) div.

    The divergence of the denoiser is probed with Rademacher vectors b:
    div ~ b' (xhat(y + eps b) - xhat(y)) / eps, averaged over probes.
    """
    n = y.size
    if probe_eps is None:
        probe_eps = 1e-3 * float(np.linalg.norm(y)) / np.sqrt(n)
        if probe_eps == 0.0:
            probe_eps = 1e-3
    rng = np.random.Generator(np.random.PCG64(seed))
    x_base = denoiser(y)
    div_total = 0.0
    for _ in range(n_probes):
        b = rng.integers(0, 2, size=y.shape).astype(np.float64) * 2.0 - 1.0
        x_probe = denoiser(y + probe_eps * b)
        div_total += float(np.vdot(b, x_probe - x_base)) / probe_eps
    div = div_total / n_probes
    r = y - x_base
    return float(np.vdot(r, r)) / n - sigma**2 + (2.0 * sigma**2 / n) * div


class Metrics(NamedTuple):
    mse: float
    mae: float
    snr_db: float
    psnr_db: float


def metrics(xhat: np.ndarray, x_true: np.ndarray) -> Metrics:
    """Per-pixel MSE/MAE and SNR/PSNR in dB (squared-peak PSNR convention)."""
    if xhat.shape != x_true.shape:
        raise ValueError(
            f"shape mismatch: estimate {xhat.shape} vs reference {x_true.shape}"
        )
    d = xhat - x_true
    n = d.size
    err_power = float(np.vdot(d, d))
    mse = err_power / n
    mae = float(np.sum(np.abs(d))) / n
    if err_power == 0.0:
        return Metrics(mse=0.0, mae=mae, snr_db=np.inf, psnr_db=np.inf)
    snr = 10.0 * np.log10(float(np.vdot(x_true, x_true)) / err_power)
    peak = float(np.max(np.abs(x_true)))
    psnr = 10.0 * np.log10(n * peak**2 / err_power)
    return Metrics(mse=mse, mae=mae, snr_db=float(snr), psnr_db=float(psnr))
