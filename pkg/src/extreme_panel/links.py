"""Link functions mapping covariates and coefficients to GEV/GP parameters.

Each distribution parameter (location mu, scale sigma, shape xi) gets its
own link and its own list of covariate columns.  Coefficient vectors always
carry the intercept at index 0 followed by one slope per listed column.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .distributions import GevParams
from .errors import ConfigError, DomainError


class LinkKind(Enum):
    """Transform applied to a linear predictor."""

    IDENTITY = "identity"
    EXP = "exp"


def apply_link(kind: LinkKind, eta):
    return np.exp(eta) if kind is LinkKind.EXP else eta


def link_intercept(kind: LinkKind, target: float) -> float:
    """Intercept value that reproduces `target` with all slopes at zero.

    Under the exp link nonpositive targets have no preimage; they are
    floored at a small positive value so starting points stay usable.
    """
    if kind is LinkKind.EXP:
        return math.log(max(target, 1e-8))
    return float(target)


@dataclass(frozen=True)
class LinkSpec:
    """Which link and which covariate columns feed each parameter.

    Term tuples hold zero-based covariate column indices.  An intercept is
    implicit and always present, so each coefficient block has length
    ``len(terms) + 1``.
    """

    mu_link: LinkKind = LinkKind.IDENTITY
    sigma_link: LinkKind = LinkKind.EXP
    xi_link: LinkKind = LinkKind.IDENTITY
    mu_terms: tuple = ()
    sigma_terms: tuple = ()
    xi_terms: tuple = ()

    def __post_init__(self):
        for name in ("mu_link", "sigma_link", "xi_link"):
            if not isinstance(getattr(self, name), LinkKind):
                raise ConfigError(f"{name} must be a LinkKind")
        for name in ("mu_terms", "sigma_terms", "xi_terms"):
            terms = tuple(int(i) for i in getattr(self, name))
            if any(i < 0 for i in terms):
                raise ConfigError(f"{name} indices must be nonnegative, got {terms}")
            if len(set(terms)) != len(terms):
                raise ConfigError(f"{name} lists a column twice: {terms}")
            object.__setattr__(self, name, terms)

    @property
    def n_mu(self) -> int:
        return len(self.mu_terms) + 1

    @property
    def n_sigma(self) -> int:
        return len(self.sigma_terms) + 1

    @property
    def n_xi(self) -> int:
        return len(self.xi_terms) + 1

    def max_column(self) -> int:
        """Largest covariate index referenced, or -1 when intercept-only."""
        all_terms = self.mu_terms + self.sigma_terms + self.xi_terms
        return max(all_terms) if all_terms else -1

    def check_columns(self, n_columns: int):
        if self.max_column() >= n_columns:
            raise ConfigError(
                f"link spec references covariate column {self.max_column()} "
                f"but the data has only {n_columns} columns"
            )


def coefficient_count(spec: LinkSpec) -> int:
    """Number of free coefficients per group under this specification."""
    return spec.n_mu + spec.n_sigma + spec.n_xi


@dataclass(eq=False)
class GroupCoefficients:
    """One group's regression coefficients.

    kappa feeds the location link, gamma the scale link, delta the shape
    link; each block is intercept-first.
    """

    kappa: np.ndarray
    gamma: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        self.kappa = np.atleast_1d(np.asarray(self.kappa, dtype=float))
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        self.delta = np.atleast_1d(np.asarray(self.delta, dtype=float))

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.kappa, self.gamma, self.delta])

    @classmethod
    def from_flat(cls, theta, spec: LinkSpec) -> "GroupCoefficients":
        theta = np.asarray(theta, dtype=float)
        if theta.size != coefficient_count(spec):
            raise ConfigError(
                f"expected {coefficient_count(spec)} coefficients, got {theta.size}"
            )
        a, b = spec.n_mu, spec.n_mu + spec.n_sigma
        return cls(theta[:a].copy(), theta[a:b].copy(), theta[b:].copy())

    def validate(self, spec: LinkSpec):
        sizes = (self.kappa.size, self.gamma.size, self.delta.size)
        expected = (spec.n_mu, spec.n_sigma, spec.n_xi)
        if sizes != expected:
            raise ConfigError(
                f"coefficient block sizes {sizes} do not match the link "
                f"specification {expected}"
            )


def design_matrix(x, terms) -> np.ndarray:
    """Intercept-augmented design matrix for the given covariate columns.

    x has shape (n, K); the result has shape (n, len(terms) + 1) with a
    leading column of ones.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty((x.shape[0], len(terms) + 1))
    out[:, 0] = 1.0
    for j, col in enumerate(terms):
        out[:, j + 1] = x[:, col]
    return out


def eval_params(coeffs: GroupCoefficients, x_row, spec: LinkSpec) -> GevParams:
    """Conditional GEV parameters for one covariate row.

    Raises a config error on dimension mismatch and a domain error when the
    identity scale link produces sigma <= 0.
    """
    x_row = np.asarray(x_row, dtype=float)
    if x_row.ndim != 1:
        raise ConfigError(f"x_row must be one-dimensional, got shape {x_row.shape}")
    spec.check_columns(x_row.size)
    coeffs.validate(spec)
    if not np.all(np.isfinite(x_row)):
        raise DomainError("x_row must be finite")

    def block(block_coeffs, terms, kind):
        eta = block_coeffs[0]
        if terms:
            eta = eta + x_row[list(terms)] @ block_coeffs[1:]
        return float(apply_link(kind, eta))

    mu = block(coeffs.kappa, spec.mu_terms, spec.mu_link)
    sigma = block(coeffs.gamma, spec.sigma_terms, spec.sigma_link)
    xi = block(coeffs.delta, spec.xi_terms, spec.xi_link)
    if sigma <= 0.0 or not np.isfinite(sigma):
        raise DomainError(f"scale link produced sigma = {sigma!r}")
    if not (np.isfinite(mu) and np.isfinite(xi)):
        raise DomainError("link evaluation overflowed")
    return GevParams(mu, sigma, xi)
