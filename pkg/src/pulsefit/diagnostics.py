"""Closed-form accuracy predictions for the single-impulse first-order setup.

A single impulse of weight d at time zero, observed at the sampling times
with i.i.d. Gaussian noise, admits analytic expressions for the expected
residual curvature, the predicted Newton step, the variance floor of the
refined estimate, and the sensitivity to cubic model error. These serve
both as analysis reports and as independent checks of the estimator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import SamplingGrid


@dataclass(frozen=True)
class ImpulseResponseDesign:
    """Single-impulse design: true rate b, impulse weight d at t = 0, noise
    standard deviation sigma, and the sampling grid."""

    b: float
    d: float
    sigma: float
    grid: SamplingGrid

    def __post_init__(self):
        if not (self.b > 0.0 and self.d > 0.0 and self.sigma > 0.0):
            raise ValueError("b, d and sigma must be positive")

    @property
    def n_samples(self) -> int:
        return len(self.grid)

    @property
    def period(self) -> float:
        """Sampling period; requires an equidistant grid."""
        steps = np.diff(self.grid.times)
        if not np.allclose(steps, steps[0], rtol=1e-12, atol=0.0):
            raise ValueError("design grid is not equidistant")
        return float(steps[0])

    @classmethod
    def equidistant(cls, b, d, sigma, n_samples, period, start=0.0):
        return cls(b, d, sigma, SamplingGrid.uniform(n_samples, period, start))


def best_single_weight(design: ImpulseResponseDesign, omega) -> float:
    """Weight of the impulse-at-zero fit with decay rate omega that best
    matches the noise-free response in the least-squares sense."""
    t = design.grid.times
    b, d = design.b, design.d
    return d * float(np.sum(np.exp(-(omega + b) * t)) / np.sum(np.exp(-2.0 * omega * t)))


def best_single_weight_deriv(design: ImpulseResponseDesign, omega) -> float:
    """Analytic derivative of best_single_weight (quotient rule), kept
    symbolic so it can serve as an oracle for finite differences."""
    t = design.grid.times
    b, d = design.b, design.d
    A = np.sum(np.exp(-(omega + b) * t))
    B = np.sum(np.exp(-2.0 * omega * t))
    dA = np.sum(-t * np.exp(-(omega + b) * t))
    dB = np.sum(-2.0 * t * np.exp(-2.0 * omega * t))
    return d * float((dA * B - A * dB) / B**2)


def noise_free_restricted_rss(design: ImpulseResponseDesign, omega) -> float:
    """Noise-free residual of the single-column fit at rate omega."""
    t = design.grid.times
    alpha = best_single_weight(design, omega)
    resid = alpha * np.exp(-omega * t) - design.d * np.exp(-design.b * t)
    return float(np.sum(resid**2))


def quadratic_coefficients(design: ImpulseResponseDesign):
    """Constant and quadratic coefficients (c0, c2) of the expected
    restricted residual around the true rate.

    c0 = (K - 1) sigma^2 is the noise floor; c2 is half the curvature,
    c2 = sum_k (alpha'(b) - t_k d)^2 exp(-2 b t_k), and c2 / sigma^2 is the
    Fisher information for the rate.
    """
    t = design.grid.times
    c0 = (design.n_samples - 1) * design.sigma**2
    da = best_single_weight_deriv(design, design.b)
    c2 = float(np.sum((da - t * design.d) ** 2 * np.exp(-2.0 * design.b * t)))
    return c0, c2


def predicted_newton_step(design: ImpulseResponseDesign) -> float:
    """Predicted Newton quotient at the preliminary point: sqrt(c0 / c2)."""
    c0, c2 = quadratic_coefficients(design)
    return math.sqrt(c0 / c2)


def variance_lower_bound(design: ImpulseResponseDesign) -> float:
    """Approximate floor on Var(omega_hat): step^2 / (K - 1). A short
    Newton step with many samples means an accurate estimate."""
    return predicted_newton_step(design) ** 2 / (design.n_samples - 1)


def single_impulse_rate_limit(design: ImpulseResponseDesign) -> float:
    """Approximate upper limit on the preliminary rate below which the fit
    keeps a single estimated impulse (indicative, not exact)."""
    c0, c2 = quadratic_coefficients(design)
    b, T, K = design.b, design.period, design.n_samples
    return b - math.sqrt(c0 / c2) * math.exp(b * T) * math.sqrt(math.pi / 2.0) / math.sqrt(
        (K - 1) * (1.0 - math.exp(-2.0 * b * T))
    )


def sample_count_threshold(b, period) -> float:
    """Sample count above which the preliminary estimate is expected to stay
    in the single-impulse regime: pi e^{2bT} / (2 (1 - e^{-2bT})) + 1."""
    x = 2.0 * b * period
    return math.pi * math.exp(x) / (2.0 * (1.0 - math.exp(-x))) + 1.0


def cubic_sensitivity(c0, c2, c3):
    """First-order effect of a cubic term c3 (omega - b)^3 in the residual.

    Returns (dz_dc3, dstep_dc3, error): the sensitivities of the
    preliminary point and of the Newton step, and the resulting one-step
    estimation error 3 c0 / (2 c2^2) * c3 (to first order in c3).
    """
    dz = c0 / (2.0 * c2**2)
    dstep = c0 / c2**2
    return dz, dstep, (dz + dstep) * c3
