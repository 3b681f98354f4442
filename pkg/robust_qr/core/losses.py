"""
Quantile losses and their residual derivatives.

Residuals are r = y - f(x). Every function accepts scalars or numpy arrays
and returns the same kind.

The robust loss is the density-power (beta-divergence) specialization of
the pinball loss,

    (1 - exp(-beta * rho_alpha(r / sigma))) / beta,

which is increasing and saturating in rho and tends to rho as beta -> 0.
The commonly printed form (exp(-beta * rho) - 1) / beta has the opposite
sign; minimizing it would push residuals to infinity.
"""
import numpy as np

from robust_qr.exceptions import NumericalFailureError
from robust_qr.models import BetaConfig


def _scalar_or_array(value):
    value = np.asarray(value, dtype=float)
    return float(value) if value.ndim == 0 else value


def check_alpha(alpha: float):
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"Quantile level {alpha} must lie strictly inside (0, 1).")


def _residuals(residual) -> np.ndarray:
    r = np.asarray(residual, dtype=float)
    if not np.all(np.isfinite(r)):
        raise NumericalFailureError("Non-finite residual passed to a quantile loss")
    return r


def pinball(residual, alpha: float):
    """Check loss: r * alpha for r >= 0, (-r) * (1 - alpha) otherwise."""
    check_alpha(alpha)
    r = _residuals(residual)
    return _scalar_or_array(np.where(r >= 0.0, r * alpha, -r * (1.0 - alpha)))


def pinball_dr(residual, alpha: float):
    """Subgradient of the pinball loss in r. r == 0 takes the r >= 0 branch (value alpha)."""
    check_alpha(alpha)
    r = _residuals(residual)
    return _scalar_or_array(np.where(r >= 0.0, alpha, alpha - 1.0))


def beta_pinball(residual, alpha: float, cfg: BetaConfig):
    check_alpha(alpha)
    r = _residuals(residual)
    z = cfg.beta * np.asarray(pinball(r / cfg.sigma, alpha))
    # -expm1(-z) == 1 - exp(-z) without cancellation for tiny beta
    return _scalar_or_array(-np.expm1(-z) / cfg.beta)


def beta_pinball_dr(residual, alpha: float, cfg: BetaConfig):
    """
    Derivative of beta_pinball in r.

    Bounded by max(alpha, 1 - alpha) / sigma and vanishing exponentially
    fast as |r| grows: gross outliers contribute almost no gradient.
    """
    check_alpha(alpha)
    r = _residuals(residual)
    scaled = r / cfg.sigma
    weight = np.exp(-cfg.beta * np.asarray(pinball(scaled, alpha)))
    return _scalar_or_array(weight * np.asarray(pinball_dr(scaled, alpha)) / cfg.sigma)


def soft_threshold(x, lam: float):
    """
    Proximal operator of lam * |x|.

    x - lam if x > lam, x + lam if x < -lam, 0 otherwise.
    """
    if lam < 0:
        raise ValueError(f"Soft-threshold level must be non-negative, got {lam}.")
    x = np.asarray(x, dtype=float)
    return _scalar_or_array(
        np.where(x > lam, x - lam, np.where(x < -lam, x + lam, 0.0))
    )


def asymmetric_laplace_nll(residual, alpha: float, sigma: float = 1.0):
    """
    Negative log-density of the asymmetric Laplace law with location 0.

    Equals pinball(r) / sigma - log(alpha * (1 - alpha) / sigma), so maximizing
    the joint likelihood over a model's parameters minimizes the summed pinball loss.
    """
    if sigma <= 0:
        raise ValueError(f"Scale must be positive, got {sigma}.")
    check_alpha(alpha)
    return _scalar_or_array(
        np.asarray(pinball(residual, alpha)) / sigma - np.log(alpha * (1.0 - alpha) / sigma)
    )
