"""Generalized extreme value and generalized Pareto distribution kernels.

Log density, distribution function, quantile, and return level with a
guarded shape-to-zero branch.  Points outside the support evaluate to the
``-inf`` sentinel rather than raising or returning NaN, so likelihood
maximizers can probe infeasible parameter values and be repelled by the
barrier instead of crashing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

# Shape magnitudes below this threshold evaluate through the Gumbel or
# exponential limit form.  Under double precision the xi != 0 expressions
# lose more accuracy than the limit form once |xi| falls under ~1e-8.
XI_EPS = 1e-8


@dataclass(frozen=True)
class GevParams:
    """Location, scale, and shape of one conditional GEV distribution."""

    mu: float
    sigma: float
    xi: float

    def __post_init__(self):
        for name in ("mu", "sigma", "xi"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise DomainError(f"{name} must be finite, got {value!r}")
        if self.sigma <= 0.0:
            raise DomainError(f"sigma must be positive, got {self.sigma!r}")

    def support(self):
        """Open interval of y values with positive density."""
        if self.xi > XI_EPS:
            return (self.mu - self.sigma / self.xi, np.inf)
        if self.xi < -XI_EPS:
            return (-np.inf, self.mu - self.sigma / self.xi)
        return (-np.inf, np.inf)


@dataclass(frozen=True)
class GpParams:
    """Scale and shape of one conditional generalized Pareto distribution."""

    sigma: float
    xi: float

    def __post_init__(self):
        for name in ("sigma", "xi"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise DomainError(f"{name} must be finite, got {value!r}")
        if self.sigma <= 0.0:
            raise DomainError(f"sigma must be positive, got {self.sigma!r}")

    def support(self):
        """Open interval of excess values z with positive density."""
        if self.xi < -XI_EPS:
            return (0.0, -self.sigma / self.xi)
        return (0.0, np.inf)


def _as_float_arrays(*values):
    return tuple(np.asarray(v, dtype=float) for v in values)


def _gev_logpdf_raw(y, mu, sigma, xi):
    """Vectorized GEV log density; no validation, -inf off support.

    Any argument may be scalar or array; standard broadcasting applies.
    sigma <= 0 and non-finite y evaluate to -inf so optimizers see a
    barrier.  The result never contains NaN.
    """
    y, mu, sigma, xi = _as_float_arrays(y, mu, sigma, xi)
    with np.errstate(all="ignore"):
        w = (y - mu) / sigma
        xw = xi * w
        near_zero = np.abs(xi) < XI_EPS
        # Gumbel limit branch.
        gum = -np.log(sigma) - w - np.exp(-w)
        # General branch: with t = 1 + xi*w, log h = -log(sigma)
        # - (1 + 1/xi) log(t) - t**(-1/xi).  log1p keeps the two branches
        # mutually consistent as xi -> 0.
        lt = np.log1p(xw)
        gen = -np.log(sigma) - (1.0 + 1.0 / xi) * lt - np.exp(-lt / xi)
        out = np.where(near_zero, gum, gen)
        ok = (sigma > 0) & np.isfinite(y) & (near_zero | (xw > -1.0))
        out = np.where(ok & np.isfinite(out), out, -np.inf)
    return out


def _gev_cdf_raw(y, mu, sigma, xi):
    """Vectorized GEV distribution function; no validation."""
    y, mu, sigma, xi = _as_float_arrays(y, mu, sigma, xi)
    with np.errstate(all="ignore"):
        w = (y - mu) / sigma
        xw = xi * w
        near_zero = np.abs(xi) < XI_EPS
        gum = np.exp(-np.exp(-w))
        gen = np.exp(-np.exp(-np.log1p(xw) / xi))
        # Outside the support the cdf saturates: 0 below a lower endpoint
        # (xi > 0), 1 above an upper endpoint (xi < 0).
        saturated = np.where(xi > 0, 0.0, 1.0)
        out = np.where(near_zero, gum, np.where(xw > -1.0, gen, saturated))
    return out


def _gev_quantile_raw(p, mu, sigma, xi):
    """Vectorized GEV quantile; p must already lie in (0, 1)."""
    p, mu, sigma, xi = _as_float_arrays(p, mu, sigma, xi)
    with np.errstate(all="ignore"):
        a = np.log(-np.log(p))
        near_zero = np.abs(xi) < XI_EPS
        gum = mu - sigma * a
        # mu + sigma * ((-log p)**(-xi) - 1) / xi, written through expm1
        # so the branches agree to rounding error near xi = 0.
        gen = mu + sigma * np.expm1(-xi * a) / np.where(near_zero, 1.0, xi)
        out = np.where(near_zero, gum, gen)
    return out


def _gp_logpdf_raw(z, sigma, xi):
    """Vectorized generalized Pareto log density; no validation."""
    z, sigma, xi = _as_float_arrays(z, sigma, xi)
    with np.errstate(all="ignore"):
        w = z / sigma
        xw = xi * w
        near_zero = np.abs(xi) < XI_EPS
        expo = -np.log(sigma) - w
        gen = -np.log(sigma) - (1.0 + 1.0 / xi) * np.log1p(xw)
        out = np.where(near_zero, expo, gen)
        ok = (sigma > 0) & np.isfinite(z) & (z >= 0) & (near_zero | (xw > -1.0))
        out = np.where(ok & np.isfinite(out), out, -np.inf)
    return out


def _require_finite(name, value):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    return arr


def _scalar_or_array(reference, out):
    return out.item() if np.ndim(reference) == 0 else out


def gev_logpdf(y, params: GevParams):
    """GEV log density at y; -inf when y falls outside the support."""
    _require_finite("y", y)
    out = _gev_logpdf_raw(y, params.mu, params.sigma, params.xi)
    return _scalar_or_array(y, out)


def gev_cdf(y, params: GevParams):
    """GEV distribution function at y."""
    _require_finite("y", y)
    out = _gev_cdf_raw(y, params.mu, params.sigma, params.xi)
    return _scalar_or_array(y, out)


def gev_quantile(p, params: GevParams):
    """GEV quantile at probability p, p strictly inside (0, 1)."""
    arr = _require_finite("p", p)
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise DomainError("p must lie strictly inside (0, 1)")
    out = _gev_quantile_raw(arr, params.mu, params.sigma, params.xi)
    return _scalar_or_array(p, out)


def return_level(return_period, params: GevParams):
    """Level exceeded once every `return_period` periods on average.

    Equals the GEV quantile at probability 1 - 1/return_period.
    """
    arr = _require_finite("return_period", return_period)
    if np.any(arr <= 1.0):
        raise DomainError("return_period must exceed 1")
    out = _gev_quantile_raw(1.0 - 1.0 / arr, params.mu, params.sigma, params.xi)
    return _scalar_or_array(return_period, out)


def gp_logpdf(z, params: GpParams):
    """Generalized Pareto log density at excess z; -inf off support."""
    _require_finite("z", z)
    out = _gp_logpdf_raw(z, params.sigma, params.xi)
    return _scalar_or_array(z, out)
