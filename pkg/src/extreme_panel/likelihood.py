"""Vectorized panel log-likelihoods and analytic scores.

Internal machinery shared by the block-maxima (GEV) and exceedance (GP)
fitting paths.  Observations are stacked into flat arrays with
per-parameter design matrices, so one likelihood evaluation is a few
matrix-vector products plus one distribution kernel pass.  The common case
of an intercept-only shape gets a fused single-branch kernel; shape
regressions fall back to the general masked kernels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distributions import (
    XI_EPS,
    _gev_logpdf_raw,
    _gev_quantile_raw,
    _gp_logpdf_raw,
)
from .errors import ConfigError
from .links import GroupCoefficients, LinkKind, LinkSpec, design_matrix, link_intercept

# Number of feasibility fallback steps tried when a starting point has
# -inf likelihood: each step doubles the scale intercept's implied sigma
# and halves the shape intercept's implied xi.
N_FALLBACK_STEPS = 6


@dataclass
class StackedObs:
    """Flattened non-missing observations for one member set."""

    y: np.ndarray          # (n,) block maxima, or excesses for GP fits
    designs: tuple         # per-parameter design matrices, each (n, p_block)
    t_index: np.ndarray    # (n,) originating period of each observation

    @property
    def n_obs(self) -> int:
        return self.y.size

    def subset(self, mask) -> "StackedObs":
        return StackedObs(
            self.y[mask], tuple(d[mask] for d in self.designs), self.t_index[mask]
        )


def _gev_score_raw(y, mu, sigma, xi):
    """Parameter-space GEV score (d log h / d mu, d sigma, d xi) per cell.

    Valid only in the interior of the support; off-support cells come back
    NaN and callers must not use them.
    """
    with np.errstate(all="ignore"):
        w = (y - mu) / sigma
        near_zero = np.abs(xi) < XI_EPS

        # Gumbel limit branch; the xi derivative is the limit of the
        # general expression as xi -> 0.
        em = np.exp(-w)
        g_mu = (1.0 - em) / sigma
        g_sigma = (w * (1.0 - em) - 1.0) / sigma
        g_xi = -w + 0.5 * w * w * (1.0 - em)

        # General branch with t = 1 + xi*w.
        xw = xi * w
        t = 1.0 + xw
        lt = np.log1p(xw)
        inv_xi = 1.0 / np.where(near_zero, 1.0, xi)
        t_pow = np.exp(-(inv_xi + 1.0) * lt)      # t**(-1/xi - 1)
        t_inv_pow = np.exp(-inv_xi * lt)          # t**(-1/xi)
        a = (1.0 + xi) / t - t_pow
        d_mu = a / sigma
        d_sigma = (w * a - 1.0) / sigma
        common = lt * inv_xi * inv_xi
        d_xi = common - (1.0 + inv_xi) * w / t - t_inv_pow * (common - w * inv_xi / t)

        s_mu = np.where(near_zero, g_mu, d_mu)
        s_sigma = np.where(near_zero, g_sigma, d_sigma)
        s_xi = np.where(near_zero, g_xi, d_xi)
        bad = ~(near_zero | (xw > -1.0)) | (sigma <= 0)
        nan = np.where(bad, np.nan, 0.0)
    return s_mu + nan, s_sigma + nan, s_xi + nan


def _gp_score_raw(z, sigma, xi):
    """Parameter-space GP score (d log w / d sigma, d xi) per excess."""
    with np.errstate(all="ignore"):
        w = z / sigma
        near_zero = np.abs(xi) < XI_EPS

        e_sigma = (w - 1.0) / sigma
        e_xi = -w + 0.5 * w * w

        xw = xi * w
        t = 1.0 + xw
        lt = np.log1p(xw)
        inv_xi = 1.0 / np.where(near_zero, 1.0, xi)
        d_sigma = ((1.0 + xi) * w / t - 1.0) / sigma
        d_xi = lt * inv_xi * inv_xi - (1.0 + inv_xi) * w / t

        s_sigma = np.where(near_zero, e_sigma, d_sigma)
        s_xi = np.where(near_zero, e_xi, d_xi)
        bad = ~(near_zero | (xw > -1.0)) | (sigma <= 0) | (z < 0)
        nan = np.where(bad, np.nan, 0.0)
    return s_sigma + nan, s_xi + nan


def _write_block(out, start, design, s_values):
    """Score block s_values * design written into out columns in place."""
    stop = start + design.shape[1]
    if design.shape[1] == 1:
        out[:, start] = s_values
    else:
        np.multiply(s_values[:, None], design, out=out[:, start:stop])
    return stop


class GevPanelLikelihood:
    """GEV regression likelihood on a fixed link specification."""

    def __init__(self, spec: LinkSpec):
        self.spec = spec
        self._sizes = (spec.n_mu, spec.n_sigma, spec.n_xi)
        self._scalar_xi = spec.n_xi == 1

    @property
    def n_params(self) -> int:
        return sum(self._sizes)

    def designs(self, x) -> tuple:
        s = self.spec
        return (
            design_matrix(x, s.mu_terms),
            design_matrix(x, s.sigma_terms),
            design_matrix(x, s.xi_terms),
        )

    def stack(self, y, x, t_index) -> StackedObs:
        return StackedObs(
            np.asarray(y, dtype=float),
            self.designs(x),
            np.asarray(t_index, dtype=np.intp),
        )

    def split(self, theta):
        a, b = self._sizes[0], self._sizes[0] + self._sizes[1]
        return theta[:a], theta[a:b], theta[b:]

    def coefficients(self, theta) -> GroupCoefficients:
        kappa, gamma, delta = self.split(np.asarray(theta, dtype=float))
        return GroupCoefficients(kappa.copy(), gamma.copy(), delta.copy())

    def flatten(self, coeffs: GroupCoefficients) -> np.ndarray:
        coeffs.validate(self.spec)
        return coeffs.flatten()

    def cell_params(self, theta, obs: StackedObs):
        """(mu, sigma, xi) per cell; xi is scalar when intercept-only."""
        kappa, gamma, delta = self.split(theta)
        x_mu, x_sigma, x_xi = obs.designs
        with np.errstate(all="ignore"):
            mu = x_mu @ kappa
            if self.spec.mu_link is LinkKind.EXP:
                mu = np.exp(mu)
            sigma = x_sigma @ gamma
            if self.spec.sigma_link is LinkKind.EXP:
                sigma = np.exp(sigma)
            if self._scalar_xi:
                xi = float(delta[0])
                if self.spec.xi_link is LinkKind.EXP:
                    xi = float(np.exp(xi))
            else:
                xi = x_xi @ delta
                if self.spec.xi_link is LinkKind.EXP:
                    xi = np.exp(xi)
        return mu, sigma, xi

    def _eval(self, theta, obs: StackedObs, want_scores: bool):
        """Fused log-likelihood cells and, optionally, coefficient scores."""
        kappa, gamma, delta = self.split(theta)
        x_mu, x_sigma, x_xi = obs.designs
        spec = self.spec
        with np.errstate(all="ignore"):
            mu = x_mu @ kappa
            if spec.mu_link is LinkKind.EXP:
                mu = np.exp(mu)
            eta_sigma = x_sigma @ gamma
            if spec.sigma_link is LinkKind.EXP:
                sigma = np.exp(eta_sigma)
                log_sigma = eta_sigma
            else:
                sigma = eta_sigma
                log_sigma = np.log(sigma)

            if not self._scalar_xi:
                xi = x_xi @ delta
                if spec.xi_link is LinkKind.EXP:
                    xi = np.exp(xi)
                cells = _gev_logpdf_raw(obs.y, mu, sigma, xi)
                if not want_scores:
                    return cells, None
                s_mu, s_sigma, s_xi = _gev_score_raw(obs.y, mu, sigma, xi)
                return cells, self._score_blocks(obs, s_mu, s_sigma, s_xi, mu, sigma, xi)

            xi = float(delta[0])
            if spec.xi_link is LinkKind.EXP:
                xi = float(np.exp(xi))
            w = (obs.y - mu) / sigma
            if abs(xi) < XI_EPS:
                em = np.exp(-w)
                cells = -log_sigma - w - em
                cells = np.where(np.isfinite(cells), cells, -np.inf)
                if not want_scores:
                    return cells, None
                one_em = 1.0 - em
                s_mu = one_em / sigma
                s_sigma = (w * one_em - 1.0) / sigma
                s_xi = (-1.0 + 0.5 * w * one_em) * w
            else:
                xw = xi * w
                lt = np.log1p(xw)
                inv = 1.0 / xi
                t_inv_pow = np.exp(-inv * lt)          # t**(-1/xi)
                cells = -log_sigma - (1.0 + inv) * lt - t_inv_pow
                cells = np.where(
                    (xw > -1.0) & np.isfinite(cells), cells, -np.inf
                )
                if not want_scores:
                    return cells, None
                t = 1.0 + xw
                a = (1.0 + xi) / t - t_inv_pow / t
                s_mu = a / sigma
                s_sigma = (w * a - 1.0) / sigma
                common = lt * inv * inv
                wt = w / t
                s_xi = common - (1.0 + inv) * wt - t_inv_pow * (common - wt * inv)
            return cells, self._score_blocks(obs, s_mu, s_sigma, s_xi, mu, sigma, xi)

    def _score_blocks(self, obs, s_mu, s_sigma, s_xi, mu, sigma, xi):
        spec = self.spec
        x_mu, x_sigma, x_xi = obs.designs
        n = obs.n_obs
        out = np.empty((n, self.n_params))
        if spec.mu_link is LinkKind.EXP:
            s_mu = s_mu * mu
        pos = _write_block(out, 0, x_mu, s_mu)
        if spec.sigma_link is LinkKind.EXP:
            s_sigma = s_sigma * sigma
        pos = _write_block(out, pos, x_sigma, s_sigma)
        if spec.xi_link is LinkKind.EXP:
            s_xi = s_xi * xi
        s_xi = np.broadcast_to(s_xi, (n,))
        _write_block(out, pos, x_xi, s_xi)
        return out

    def cell_loglik(self, theta, obs: StackedObs) -> np.ndarray:
        cells, _ = self._eval(theta, obs, want_scores=False)
        return cells

    def total_loglik(self, theta, obs: StackedObs) -> float:
        return float(self.cell_loglik(theta, obs).sum()) if obs.n_obs else 0.0

    def cell_scores(self, theta, obs: StackedObs) -> np.ndarray:
        """Per-observation score rows in coefficient space, shape (n, P)."""
        _, scores = self._eval(theta, obs, want_scores=True)
        return scores

    def cell_loglik_and_scores(self, theta, obs: StackedObs):
        return self._eval(theta, obs, want_scores=True)

    def cell_quantile(self, theta, obs: StackedObs, p: float) -> np.ndarray:
        mu, sigma, xi = self.cell_params(theta, obs)
        q = _gev_quantile_raw(p, mu, sigma, xi)
        return np.broadcast_to(q, obs.y.shape).astype(float)

    def initial_coefficients(self, y) -> GroupCoefficients:
        """Moment-style starting point: pooled intercepts, zero slopes.

        The scale intercept targets sigma ~ 0.78 * sd(y), the Gumbel
        relation between scale and standard deviation; the shape starts at
        a mildly heavy-tailed 0.1.
        """
        y = np.asarray(y, dtype=float)
        med = float(np.median(y)) if y.size else 0.0
        sd = float(np.std(y)) if y.size else 1.0
        if not np.isfinite(sd) or sd <= 0.0:
            sd = 1.0
        kappa = np.zeros(self._sizes[0])
        kappa[0] = link_intercept(self.spec.mu_link, med)
        gamma = np.zeros(self._sizes[1])
        gamma[0] = link_intercept(self.spec.sigma_link, 0.78 * sd)
        delta = np.zeros(self._sizes[2])
        delta[0] = link_intercept(self.spec.xi_link, 0.1)
        return GroupCoefficients(kappa, gamma, delta)

    def relax_initial(self, coeffs: GroupCoefficients, step: int) -> GroupCoefficients:
        """Feasibility fallback step: sigma doubled and xi halved, step times."""
        return _relaxed(coeffs, step, self.spec.sigma_link, self.spec.xi_link)


class GpPanelLikelihood:
    """Generalized Pareto regression likelihood for threshold excesses.

    Mirrors the GEV class with the location block absent: theta stacks the
    scale coefficients (gamma) then the shape coefficients (delta).
    """

    def __init__(self, spec: LinkSpec):
        self.spec = spec
        self._sizes = (spec.n_sigma, spec.n_xi)
        self._scalar_xi = spec.n_xi == 1

    @property
    def n_params(self) -> int:
        return sum(self._sizes)

    def designs(self, x) -> tuple:
        s = self.spec
        return (design_matrix(x, s.sigma_terms), design_matrix(x, s.xi_terms))

    def stack(self, z, x, t_index) -> StackedObs:
        return StackedObs(
            np.asarray(z, dtype=float),
            self.designs(x),
            np.asarray(t_index, dtype=np.intp),
        )

    def split(self, theta):
        return theta[: self._sizes[0]], theta[self._sizes[0]:]

    def coefficients(self, theta) -> GroupCoefficients:
        gamma, delta = self.split(np.asarray(theta, dtype=float))
        return GroupCoefficients(np.zeros(0), gamma.copy(), delta.copy())

    def flatten(self, coeffs: GroupCoefficients) -> np.ndarray:
        if coeffs.kappa.size:
            raise ConfigError(
                "exceedance fits take no location coefficients, "
                f"got kappa of length {coeffs.kappa.size}"
            )
        return np.concatenate([coeffs.gamma, coeffs.delta])

    def cell_params(self, theta, obs: StackedObs):
        gamma, delta = self.split(theta)
        x_sigma, x_xi = obs.designs
        with np.errstate(all="ignore"):
            sigma = x_sigma @ gamma
            if self.spec.sigma_link is LinkKind.EXP:
                sigma = np.exp(sigma)
            if self._scalar_xi:
                xi = float(delta[0])
                if self.spec.xi_link is LinkKind.EXP:
                    xi = float(np.exp(xi))
            else:
                xi = x_xi @ delta
                if self.spec.xi_link is LinkKind.EXP:
                    xi = np.exp(xi)
        return sigma, xi

    def _eval(self, theta, obs: StackedObs, want_scores: bool):
        gamma, delta = self.split(theta)
        x_sigma, x_xi = obs.designs
        spec = self.spec
        with np.errstate(all="ignore"):
            eta_sigma = x_sigma @ gamma
            if spec.sigma_link is LinkKind.EXP:
                sigma = np.exp(eta_sigma)
                log_sigma = eta_sigma
            else:
                sigma = eta_sigma
                log_sigma = np.log(sigma)

            if not self._scalar_xi:
                xi = x_xi @ delta
                if spec.xi_link is LinkKind.EXP:
                    xi = np.exp(xi)
                cells = _gp_logpdf_raw(obs.y, sigma, xi)
                if not want_scores:
                    return cells, None
                s_sigma, s_xi = _gp_score_raw(obs.y, sigma, xi)
                return cells, self._score_blocks(obs, s_sigma, s_xi, sigma, xi)

            xi = float(delta[0])
            if spec.xi_link is LinkKind.EXP:
                xi = float(np.exp(xi))
            w = obs.y / sigma
            if abs(xi) < XI_EPS:
                cells = -log_sigma - w
                cells = np.where(np.isfinite(cells), cells, -np.inf)
                if not want_scores:
                    return cells, None
                s_sigma = (w - 1.0) / sigma
                s_xi = (-1.0 + 0.5 * w) * w
            else:
                xw = xi * w
                lt = np.log1p(xw)
                inv = 1.0 / xi
                cells = -log_sigma - (1.0 + inv) * lt
                cells = np.where(
                    (xw > -1.0) & np.isfinite(cells), cells, -np.inf
                )
                if not want_scores:
                    return cells, None
                t = 1.0 + xw
                wt = w / t
                s_sigma = ((1.0 + xi) * wt - 1.0) / sigma
                s_xi = lt * inv * inv - (1.0 + inv) * wt
            return cells, self._score_blocks(obs, s_sigma, s_xi, sigma, xi)

    def _score_blocks(self, obs, s_sigma, s_xi, sigma, xi):
        spec = self.spec
        x_sigma, x_xi = obs.designs
        n = obs.n_obs
        out = np.empty((n, self.n_params))
        if spec.sigma_link is LinkKind.EXP:
            s_sigma = s_sigma * sigma
        pos = _write_block(out, 0, x_sigma, s_sigma)
        if spec.xi_link is LinkKind.EXP:
            s_xi = s_xi * xi
        s_xi = np.broadcast_to(s_xi, (n,))
        _write_block(out, pos, x_xi, s_xi)
        return out

    def cell_loglik(self, theta, obs: StackedObs) -> np.ndarray:
        cells, _ = self._eval(theta, obs, want_scores=False)
        return cells

    def total_loglik(self, theta, obs: StackedObs) -> float:
        return float(self.cell_loglik(theta, obs).sum()) if obs.n_obs else 0.0

    def cell_scores(self, theta, obs: StackedObs) -> np.ndarray:
        _, scores = self._eval(theta, obs, want_scores=True)
        return scores

    def cell_loglik_and_scores(self, theta, obs: StackedObs):
        return self._eval(theta, obs, want_scores=True)

    def initial_coefficients(self, z) -> GroupCoefficients:
        """Exponential-moment starting point: sigma ~ mean excess, xi = 0.1."""
        z = np.asarray(z, dtype=float)
        mean = float(np.mean(z)) if z.size else 1.0
        if not np.isfinite(mean) or mean <= 0.0:
            mean = 1.0
        gamma = np.zeros(self._sizes[0])
        gamma[0] = link_intercept(self.spec.sigma_link, mean)
        delta = np.zeros(self._sizes[1])
        delta[0] = link_intercept(self.spec.xi_link, 0.1)
        return GroupCoefficients(np.zeros(0), gamma, delta)

    def relax_initial(self, coeffs: GroupCoefficients, step: int) -> GroupCoefficients:
        return _relaxed(coeffs, step, self.spec.sigma_link, self.spec.xi_link)


def _relaxed(coeffs: GroupCoefficients, step: int, sigma_link, xi_link):
    """Double the implied sigma intercept and halve the implied xi, step times."""
    gamma = coeffs.gamma.copy()
    delta = coeffs.delta.copy()
    log2 = np.log(2.0)
    if sigma_link is LinkKind.EXP:
        gamma[0] += step * log2
    else:
        base = gamma[0] if gamma[0] > 0 else 1.0
        gamma[0] = base * 2.0 ** step
    if xi_link is LinkKind.EXP:
        delta[0] -= step * log2
    else:
        delta[0] = delta[0] / 2.0 ** step
    return GroupCoefficients(coeffs.kappa.copy(), gamma, delta)
