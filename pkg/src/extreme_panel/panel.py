"""Panel containers, per-group quasi-maximum-likelihood fits, and
period-clustered sandwich standard errors.

Observations within a period may be dependent across individuals (the
margins are modeled, not the joint law), so the variance estimate clusters
scores by period: V sums outer products of within-period score sums, and
the covariance is H^-1 V H^-1 with H the observed log-likelihood Hessian.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .distributions import _gev_quantile_raw
from .errors import (
    ConfigError,
    DomainError,
    FitError,
    NumericalRankError,
    UnderdeterminedError,
)
from .likelihood import (
    N_FALLBACK_STEPS,
    GevPanelLikelihood,
    StackedObs,
)
from .links import GroupCoefficients, LinkSpec, coefficient_count

# Relative step for central finite differences on the Hessian, scaled per
# coordinate as h_j = FD_STEP * (1 + |theta_j|).
FD_STEP = 1e-5

# Condition numbers above this mark a Hessian as numerically singular.
MAX_CONDITION = 1e12


@dataclass
class PanelData:
    """Rectangular panel of maxima with per-cell covariates.

    y has shape (N, T); x has shape (N, T, K); missing marks absent cells.
    Missing cells take no part in any computation.  Optional id and time
    labels preserve the original identifiers from a data file.
    """

    y: np.ndarray
    x: np.ndarray
    missing: np.ndarray
    column_names: list = field(default_factory=list)
    individual_ids: list = field(default_factory=list)
    time_labels: list = field(default_factory=list)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.x = np.asarray(self.x, dtype=float)
        if self.y.ndim != 2:
            raise ConfigError(f"y must be N x T, got shape {self.y.shape}")
        n, t = self.y.shape
        if n < 1 or t < 1:
            raise ConfigError(f"panel needs at least one row and column, got {self.y.shape}")
        if self.x.ndim == 2 and self.x.shape == (n, t):
            # Allow a covariate-free panel passed as an (N, T, 0) array only.
            raise ConfigError("x must be N x T x K; reshape covariates to 3 dimensions")
        if self.x.ndim != 3 or self.x.shape[:2] != (n, t):
            raise ConfigError(
                f"x must have shape ({n}, {t}, K), got {self.x.shape}"
            )
        if self.missing is None:
            self.missing = ~np.isfinite(self.y)
        self.missing = np.asarray(self.missing, dtype=bool)
        if self.missing.shape != (n, t):
            raise ConfigError(
                f"missing mask must have shape {(n, t)}, got {self.missing.shape}"
            )
        observed = ~self.missing
        if not np.all(np.isfinite(self.y[observed])):
            raise DomainError("non-missing y cells must be finite")
        if self.x.shape[2] and not np.all(np.isfinite(self.x[observed])):
            raise DomainError("covariates at non-missing cells must be finite")
        if not self.column_names:
            self.column_names = [f"x{j + 1}" for j in range(self.x.shape[2])]
        if len(self.column_names) != self.x.shape[2]:
            raise ConfigError(
                f"{len(self.column_names)} column names for {self.x.shape[2]} covariates"
            )
        if not self.individual_ids:
            self.individual_ids = [str(i + 1) for i in range(n)]
        if not self.time_labels:
            self.time_labels = [str(t_ + 1) for t_ in range(t)]

    @property
    def n_individuals(self) -> int:
        return self.y.shape[0]

    @property
    def n_periods(self) -> int:
        return self.y.shape[1]

    @property
    def n_covariates(self) -> int:
        return self.x.shape[2]


@dataclass
class GroupAssignment:
    """Hard assignment of each individual to one of n_groups labels (1-based)."""

    labels: np.ndarray
    n_groups: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        if self.labels.ndim != 1:
            raise ConfigError("labels must be a vector")
        if self.n_groups < 1:
            raise ConfigError(f"n_groups must be >= 1, got {self.n_groups}")
        if self.labels.size and (
            self.labels.min() < 1 or self.labels.max() > self.n_groups
        ):
            raise ConfigError(
                f"labels must lie in 1..{self.n_groups}, got range "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )

    @property
    def n_individuals(self) -> int:
        return self.labels.size

    def members(self, group: int) -> np.ndarray:
        """Indices of the individuals carrying 1-based label `group`."""
        return np.flatnonzero(self.labels == group)

    def counts(self) -> np.ndarray:
        return np.bincount(self.labels - 1, minlength=self.n_groups)


@dataclass
class OptimOptions:
    """Controls for the two-stage simplex-then-gradient maximizer."""

    simplex_max_iter: int = 2000
    polish_max_iter: int = 2000
    rel_tol: float = 1e-8

    def __post_init__(self):
        if self.simplex_max_iter < 1 or self.polish_max_iter < 1:
            raise ConfigError("iteration limits must be positive")
        if not 0 < self.rel_tol < 1:
            raise ConfigError(f"rel_tol must lie in (0, 1), got {self.rel_tol}")


@dataclass
class FitResult:
    """A fitted grouped panel model.

    coefficients, covariance, and std_errors are per-group lists in label
    order.  Groups whose Hessian was numerically singular carry NaN
    covariance entries and a note in diagnostics.
    """

    coefficients: list
    assignment: GroupAssignment
    loglik: float
    covariance: list
    std_errors: list
    n_iterations: int
    converged: bool
    diagnostics: list = field(default_factory=list)

    @property
    def n_groups(self) -> int:
        return len(self.coefficients)


def member_observations(data: PanelData, members, lik) -> StackedObs:
    """Stack the non-missing cells of the given individuals."""
    members = np.asarray(members, dtype=np.intp)
    keep = ~data.missing[members]
    y = data.y[members][keep]
    x = data.x[members][keep]
    t_index = np.broadcast_to(
        np.arange(data.n_periods), (members.size, data.n_periods)
    )[keep]
    return lik.stack(y, x, t_index)


def _feasible_start(lik, obs: StackedObs, init) -> np.ndarray:
    """A starting point with finite likelihood, or a fit error.

    Tries the supplied warm start first, then its fallback ladder, then the
    moment heuristic and its ladder.
    """
    candidates = []
    if init is not None:
        candidates.append(init)
        candidates.extend(lik.relax_initial(init, k) for k in range(1, N_FALLBACK_STEPS + 1))
    heuristic = lik.initial_coefficients(obs.y)
    candidates.append(heuristic)
    candidates.extend(
        lik.relax_initial(heuristic, k) for k in range(1, N_FALLBACK_STEPS + 1)
    )
    for cand in candidates:
        theta = lik.flatten(cand)
        if np.isfinite(lik.total_loglik(theta, obs)):
            return theta
    raise FitError(
        "no feasible starting point found after scale/shape fallbacks"
    )


def maximize_loglik(lik, obs: StackedObs, theta0, opts: OptimOptions, mode="full"):
    """Maximize the stacked log likelihood from a feasible starting point.

    mode "full" runs the derivative-free simplex stage then a gradient
    polish; "polish" runs the gradient stage alone (for warm starts already
    near an optimum); "auto" tries the polish first and adds the simplex
    stage only when the polish stalls without converging, which is the
    boundary-wall case the simplex exists for.  The best of the starting
    point and every stage is kept, so the returned value never falls below
    the start.  Degenerate +inf log likelihoods (density blow-ups at a
    support boundary) are rejected as infeasible rather than chased.
    """

    def neg(theta):
        total = lik.total_loglik(theta, obs)
        return -total if np.isfinite(total) else np.inf

    def neg_with_grad(theta):
        cells, scores = lik.cell_loglik_and_scores(theta, obs)
        total = cells.sum()
        if not np.isfinite(total):
            return np.inf, np.zeros_like(theta)
        grad = scores.sum(axis=0)
        if not np.all(np.isfinite(grad)):
            return np.inf, np.zeros_like(theta)
        return -float(total), -grad

    def polish(start):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return scipy.optimize.minimize(
                neg_with_grad,
                start,
                jac=True,
                method="BFGS",
                options={"gtol": 1e-6, "maxiter": opts.polish_max_iter},
            )

    def simplex_stage(start, f_start):
        steps = 0.1 * np.maximum(np.abs(start), 1.0)
        simplex = np.vstack([start, start + np.diag(steps)])
        return scipy.optimize.minimize(
            neg,
            start,
            method="Nelder-Mead",
            options={
                "maxiter": opts.simplex_max_iter,
                "fatol": opts.rel_tol * (1.0 + abs(f_start if np.isfinite(f_start) else 1.0)),
                # Position accuracy near a quadratic optimum scales as the
                # square root of the value accuracy; the gradient polish
                # supplies the final precision.
                "xatol": np.sqrt(opts.rel_tol),
                "initial_simplex": simplex,
            },
        )

    theta0 = np.asarray(theta0, dtype=float)
    f0 = neg(theta0)
    best_theta, best_f = theta0, f0

    run_simplex = mode == "full"
    if mode in ("polish", "auto"):
        polished = polish(theta0)
        if polished.fun < best_f:
            best_theta, best_f = polished.x, polished.fun
        if mode == "auto":
            # A polish that neither converged nor moved the value is the
            # classic sign of a line search walled in by the support
            # boundary; bring in the simplex stage.
            stalled = not polished.success and polished.fun > f0 - 1e-4 * (1.0 + abs(f0))
            run_simplex = stalled or not np.isfinite(polished.fun)

    if run_simplex:
        result = simplex_stage(best_theta, best_f)
        if result.fun < best_f:
            best_theta, best_f = result.x, result.fun
        polished = polish(best_theta)
        if polished.fun < best_f:
            best_theta, best_f = polished.x, polished.fun

    return np.asarray(best_theta, dtype=float), -float(best_f)


def fit_stacked(lik, obs: StackedObs, init, opts: OptimOptions, mode="full"):
    """Fit one coefficient vector to stacked observations."""
    if obs.n_obs < lik.n_params:
        raise UnderdeterminedError(
            f"{obs.n_obs} observations cannot identify {lik.n_params} coefficients"
        )
    theta0 = _feasible_start(lik, obs, init)
    theta, loglik = maximize_loglik(lik, obs, theta0, opts, mode)
    return theta, loglik


def fit_qml_group(
    data: PanelData,
    members,
    spec: LinkSpec,
    init: GroupCoefficients | None = None,
    opts: OptimOptions | None = None,
):
    """Quasi-maximum-likelihood fit of one group's coefficients.

    members indexes the individuals pooled into the fit.  Returns
    (coefficients, loglik).
    """
    spec.check_columns(data.n_covariates)
    members = np.asarray(members, dtype=np.intp)
    if members.size == 0:
        raise UnderdeterminedError("cannot fit a group with no members")
    lik = GevPanelLikelihood(spec)
    obs = member_observations(data, members, lik)
    theta, loglik = fit_stacked(lik, obs, init, opts or OptimOptions(), mode="full")
    return lik.coefficients(theta), loglik


def _grouped_obs(data: PanelData, coefficients, assignment: GroupAssignment, spec, lik):
    if len(coefficients) != assignment.n_groups:
        raise ConfigError(
            f"{len(coefficients)} coefficient sets for {assignment.n_groups} groups"
        )
    if assignment.n_individuals != data.n_individuals:
        raise ConfigError(
            f"assignment covers {assignment.n_individuals} individuals, "
            f"panel has {data.n_individuals}"
        )
    spec.check_columns(data.n_covariates)
    for coeffs in coefficients:
        coeffs.validate(spec)
    for g in range(1, assignment.n_groups + 1):
        yield g, member_observations(data, assignment.members(g), lik)


def panel_loglik(
    data: PanelData,
    coefficients,
    assignment: GroupAssignment,
    spec: LinkSpec,
) -> float:
    """Total log likelihood of the panel under hard group assignments."""
    lik = GevPanelLikelihood(spec)
    total = 0.0
    for g, obs in _grouped_obs(data, coefficients, assignment, spec, lik):
        total += lik.total_loglik(lik.flatten(coefficients[g - 1]), obs)
    return float(total)


def score_vector(
    data: PanelData,
    coefficients,
    assignment: GroupAssignment,
    spec: LinkSpec,
    individual: int,
    period: int,
) -> np.ndarray:
    """Score contribution of one cell in its group's coefficient space."""
    if not 0 <= individual < data.n_individuals:
        raise ConfigError(f"individual {individual} outside 0..{data.n_individuals - 1}")
    if not 0 <= period < data.n_periods:
        raise ConfigError(f"period {period} outside 0..{data.n_periods - 1}")
    if data.missing[individual, period]:
        raise DomainError(f"cell ({individual}, {period}) is missing")
    lik = GevPanelLikelihood(spec)
    group = int(assignment.labels[individual])
    coeffs = coefficients[group - 1]
    coeffs.validate(spec)
    obs = lik.stack(
        data.y[individual, period : period + 1],
        data.x[individual, period : period + 1],
        [period],
    )
    theta = lik.flatten(coeffs)
    if not np.isfinite(lik.cell_loglik(theta, obs))[0]:
        raise DomainError(
            f"cell ({individual}, {period}) lies outside the fitted support"
        )
    return lik.cell_scores(theta, obs)[0]


def _score_hessian(lik, obs: StackedObs, theta) -> np.ndarray:
    """Observed Hessian of the group log likelihood by central differences
    of the analytic score."""
    p = theta.size
    hess = np.empty((p, p))
    for j in range(p):
        h = FD_STEP * (1.0 + abs(theta[j]))
        for _ in range(3):
            up = theta.copy()
            up[j] += h
            down = theta.copy()
            down[j] -= h
            g_up = lik.cell_scores(up, obs).sum(axis=0)
            g_down = lik.cell_scores(down, obs).sum(axis=0)
            col = (g_up - g_down) / (2.0 * h)
            if np.all(np.isfinite(col)):
                break
            # A step crossed the support boundary; shrink and retry.
            h /= 10.0
        else:
            raise NumericalRankError(
                f"Hessian column {j} not computable near the fitted value"
            )
        hess[:, j] = col
    return 0.5 * (hess + hess.T)


def _sandwich_one(lik, obs: StackedObs, theta, n_periods: int) -> np.ndarray:
    scores = lik.cell_scores(theta, obs)
    if not np.all(np.isfinite(scores)):
        raise DomainError("observations outside the support at the fitted value")
    period_sums = np.empty((n_periods, theta.size))
    for j in range(theta.size):
        period_sums[:, j] = np.bincount(
            obs.t_index, weights=scores[:, j], minlength=n_periods
        )
    meat = period_sums.T @ period_sums
    hess = _score_hessian(lik, obs, theta)
    condition = np.linalg.cond(hess)
    if not np.isfinite(condition) or condition > MAX_CONDITION:
        raise NumericalRankError("Hessian numerically singular", condition)
    half = np.linalg.solve(hess, meat)
    cov = np.linalg.solve(hess, half.T).T
    return 0.5 * (cov + cov.T)


def sandwich_covariance(
    data: PanelData,
    coefficients,
    assignment: GroupAssignment,
    spec: LinkSpec,
) -> list:
    """Period-clustered sandwich covariance H^-1 V H^-1 per group.

    Scores are summed within each period before forming V, so arbitrary
    cross-sectional dependence inside a period is allowed for.
    """
    lik = GevPanelLikelihood(spec)
    out = []
    for g, obs in _grouped_obs(data, coefficients, assignment, spec, lik):
        theta = lik.flatten(coefficients[g - 1])
        out.append(_sandwich_one(lik, obs, theta, data.n_periods))
    return out


def inverse_hessian_covariance(
    data: PanelData,
    coefficients,
    assignment: GroupAssignment,
    spec: LinkSpec,
) -> list:
    """Inverse observed-information covariance, a no-clustering diagnostic."""
    lik = GevPanelLikelihood(spec)
    out = []
    for g, obs in _grouped_obs(data, coefficients, assignment, spec, lik):
        theta = lik.flatten(coefficients[g - 1])
        hess = _score_hessian(lik, obs, theta)
        condition = np.linalg.cond(hess)
        if not np.isfinite(condition) or condition > MAX_CONDITION:
            raise NumericalRankError("Hessian numerically singular", condition)
        cov = np.linalg.inv(-hess)
        out.append(0.5 * (cov + cov.T))
    return out


def std_errors_from(covariance: np.ndarray) -> np.ndarray:
    """Standard errors from a covariance matrix, clipping tiny negative
    diagonal noise to zero."""
    diag = np.clip(np.diag(covariance), 0.0, None)
    return np.sqrt(diag)


def exceedance_rates(
    data: PanelData,
    coefficients,
    assignment: GroupAssignment,
    spec: LinkSpec,
    p: float,
) -> np.ndarray:
    """Per-individual fraction of observations above the fitted p-quantile.

    Well-calibrated fits give rates near 1 - p.  Individuals with no
    observed cells come back NaN.
    """
    if not 0.0 < p < 1.0:
        raise DomainError(f"p must lie strictly inside (0, 1), got {p}")
    lik = GevPanelLikelihood(spec)
    rates = np.full(data.n_individuals, np.nan)
    for g, obs in _grouped_obs(data, coefficients, assignment, spec, lik):
        members = assignment.members(g)
        if obs.n_obs == 0:
            continue
        theta = lik.flatten(coefficients[g - 1])
        mu, sigma, xi = lik.cell_params(theta, obs)
        q = _gev_quantile_raw(p, mu, sigma, xi)
        exceeded = (obs.y > q).astype(float)
        keep = ~data.missing[members]
        owner = np.repeat(np.arange(members.size), keep.sum(axis=1))
        counts = np.bincount(owner, minlength=members.size)
        hits = np.bincount(owner, weights=exceeded, minlength=members.size)
        with np.errstate(invalid="ignore"):
            rates[members] = hits / counts
    return rates
