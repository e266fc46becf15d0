"""Hard-assignment EM for grouped panel fits.

Each iteration refits every group's coefficients on its current members
(M-step), then reassigns every individual to the group whose fitted
distribution gives it the highest log likelihood (E-step).  Both steps can
only improve the joint objective, so the per-iteration log likelihood is
monotone up to optimizer tolerance.  Multiple randomly initialized chains
guard against the local optima hard assignment is prone to.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, FitError, NumericalRankError, UnderdeterminedError
from .likelihood import GevPanelLikelihood, StackedObs
from .links import GroupCoefficients, LinkSpec
from .panel import (
    FitResult,
    GroupAssignment,
    OptimOptions,
    PanelData,
    _sandwich_one,
    fit_stacked,
    member_observations,
    std_errors_from,
)


@dataclass
class EmOptions:
    """Controls for the EM search."""

    max_em_iterations: int = 100
    n_restarts: int = 10
    seed: int = 0
    loglik_tolerance: float = 1e-6
    optim: OptimOptions = field(default_factory=OptimOptions)

    def __post_init__(self):
        if self.max_em_iterations < 1:
            raise ConfigError("max_em_iterations must be >= 1")
        if self.n_restarts < 1:
            raise ConfigError("n_restarts must be >= 1")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if self.loglik_tolerance <= 0:
            raise ConfigError("loglik_tolerance must be positive")


@dataclass
class EmTrace:
    """Per-iteration record of one EM chain."""

    loglik: list = field(default_factory=list)
    assignment_changes: list = field(default_factory=list)
    reseeded_groups: list = field(default_factory=list)      # (iteration, group)
    fallback_individuals: list = field(default_factory=list)  # (iteration, individual)
    chain_index: int = 0
    converged: bool = False

    @property
    def n_iterations(self) -> int:
        return len(self.loglik)


@dataclass
class EmFit:
    """An EM estimate together with its optimization history."""

    result: FitResult
    trace: EmTrace
    chain_traces: list = field(default_factory=list)


@dataclass
class _Cells:
    """All non-missing cells of a panel, stacked once and shared by chains."""

    obs: StackedObs
    owner: np.ndarray          # (n_cells,) individual index of each cell
    n_individuals: int
    n_periods: int

    def group_obs(self, cell_labels, group) -> StackedObs:
        return self.obs.subset(cell_labels == group)


def _build_cells(data: PanelData, lik) -> _Cells:
    all_members = np.arange(data.n_individuals)
    obs = member_observations(data, all_members, lik)
    keep = ~data.missing
    owner = np.repeat(all_members, keep.sum(axis=1))
    return _Cells(obs, owner, data.n_individuals, data.n_periods)


def _initial_labels(rng, n_individuals: int, n_groups: int) -> np.ndarray:
    """Uniform random labels with every group seeded by one individual."""
    labels = rng.integers(0, n_groups, n_individuals)
    seeds = rng.choice(n_individuals, size=n_groups, replace=False)
    labels[seeds] = np.arange(n_groups)
    return labels


class _ChainFailed(Exception):
    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


def _membership_loglik(lik, cells: _Cells, thetas, active) -> np.ndarray:
    """Matrix L with L[i, g] = individual i's log likelihood under group g.

    Inactive (dropped) groups get -inf columns.
    """
    n, g_total = cells.n_individuals, len(thetas)
    out = np.full((n, g_total), -np.inf)
    for g in range(g_total):
        if not active[g]:
            continue
        cell_ll = lik.cell_loglik(thetas[g], cells.obs)
        out[:, g] = np.bincount(cells.owner, weights=cell_ll, minlength=n)
    return out


def _support_counts(lik, cells: _Cells, thetas, active) -> np.ndarray:
    n, g_total = cells.n_individuals, len(thetas)
    out = np.zeros((n, g_total))
    for g in range(g_total):
        if not active[g]:
            continue
        finite = np.isfinite(lik.cell_loglik(thetas[g], cells.obs)).astype(float)
        out[:, g] = np.bincount(cells.owner, weights=finite, minlength=n)
    return out


def _assign_from_loglik(member_ll, support_counts_fn, trace, iteration):
    """Argmax assignment with the all-infeasible fallback.

    Ties break toward the smallest label.  Individuals infeasible under
    every group go to the group covering the most of their cells, and are
    recorded in the trace.
    """
    labels = np.argmax(member_ll, axis=1)
    hopeless = np.flatnonzero(~np.isfinite(member_ll.max(axis=1)))
    if hopeless.size:
        counts = support_counts_fn()
        for i in hopeless:
            labels[i] = int(np.argmax(counts[i]))
            trace.fallback_individuals.append((iteration, int(i)))
    return labels


def _run_chain(cells: _Cells, lik, n_groups, labels0, opts: EmOptions, chain_index):
    """One EM chain from a fixed initial assignment.

    Returns (thetas, labels, loglik, trace) with dropped groups already
    removed from thetas and labels relabeled accordingly.
    """
    trace = EmTrace(chain_index=chain_index)
    labels = np.asarray(labels0, dtype=int).copy()
    thetas = [None] * n_groups
    active = np.ones(n_groups, dtype=bool)
    reseeds_left = np.ones(n_groups, dtype=int)
    needs_simplex = np.ones(n_groups, dtype=bool)
    prev_ll = -np.inf
    loglik = -np.inf

    for iteration in range(1, opts.max_em_iterations + 1):
        cell_labels = labels[cells.owner]
        for g in range(n_groups):
            if not active[g]:
                continue
            obs = cells.group_obs(cell_labels, g)
            init = lik.coefficients(thetas[g]) if thetas[g] is not None else None
            mode = "auto" if needs_simplex[g] else "polish"
            try:
                thetas[g], _ = fit_stacked(lik, obs, init, opts.optim, mode=mode)
            except (UnderdeterminedError, FitError) as exc:
                raise _ChainFailed(
                    f"chain {chain_index}, iteration {iteration}, group {g + 1}: {exc}",
                    trace,
                ) from exc
            needs_simplex[g] = False

        member_ll = _membership_loglik(lik, cells, thetas, active)
        member_ll[:, ~active] = -np.inf
        new_labels = _assign_from_loglik(
            member_ll,
            lambda: _support_counts(lik, cells, thetas, active),
            trace,
            iteration,
        )

        # Re-seed groups that lost all members with the worst-fitting
        # individual; a group emptying twice is dropped for good.
        sizes = np.bincount(new_labels, minlength=n_groups)
        for g in np.flatnonzero(active & (sizes == 0)):
            if reseeds_left[g] <= 0:
                active[g] = False
                continue
            movable = sizes[new_labels] >= 2
            if not movable.any():
                active[g] = False
                continue
            fit_quality = member_ll[np.arange(new_labels.size), new_labels]
            fit_quality = np.where(movable, fit_quality, np.inf)
            worst = int(np.argmin(fit_quality))
            sizes[new_labels[worst]] -= 1
            new_labels[worst] = g
            sizes[g] += 1
            reseeds_left[g] -= 1
            needs_simplex[g] = True
            trace.reseeded_groups.append((iteration, g + 1))

        member_ll[:, ~active] = -np.inf
        loglik = float(member_ll[np.arange(new_labels.size), new_labels].sum())
        changes = int((new_labels != labels).sum())
        trace.loglik.append(loglik)
        trace.assignment_changes.append(changes)

        reseeded_now = bool(
            trace.reseeded_groups and trace.reseeded_groups[-1][0] == iteration
        )
        if changes == 0:
            trace.converged = True
            break
        labels = new_labels
        if (
            not reseeded_now
            and np.isfinite(prev_ll)
            and abs(loglik - prev_ll) < opts.loglik_tolerance
        ):
            trace.converged = True
            break
        prev_ll = loglik

    kept = [g for g in range(n_groups) if active[g] and np.any(labels == g)]
    if not kept:
        raise _ChainFailed(f"chain {chain_index}: no group survived", trace)
    relabel = {g: j for j, g in enumerate(kept)}
    labels = np.array([relabel[g] for g in labels])
    thetas = [thetas[g] for g in kept]
    return thetas, labels, loglik, trace


def _canonical_order(labels: np.ndarray, n_groups: int) -> np.ndarray:
    """Group order sorted by each group's first member index."""
    first = np.full(n_groups, np.iinfo(np.int64).max)
    for g in range(n_groups):
        members = np.flatnonzero(labels == g)
        if members.size:
            first[g] = members[0]
    return np.argsort(first, kind="stable")


def _em_core(
    cells: _Cells,
    lik,
    n_groups: int,
    opts: EmOptions,
    init_labels0=None,
    workers: int = 1,
) -> tuple:
    """Shared EM driver.  Returns (thetas, labels, loglik, trace, all_traces)."""
    if n_groups < 1:
        raise ConfigError(f"n_groups must be >= 1, got {n_groups}")
    if n_groups > cells.n_individuals:
        raise ConfigError(
            f"cannot split {cells.n_individuals} individuals into {n_groups} groups"
        )

    if init_labels0 is not None:
        starts = [np.asarray(init_labels0, dtype=int)]
    elif n_groups == 1:
        starts = [np.zeros(cells.n_individuals, dtype=int)]
    else:
        root = np.random.SeedSequence([int(opts.seed), int(n_groups)])
        starts = [
            _initial_labels(np.random.default_rng(child), cells.n_individuals, n_groups)
            for child in root.spawn(opts.n_restarts)
        ]

    tasks = [
        (cells, lik, n_groups, labels0, opts, k) for k, labels0 in enumerate(starts)
    ]
    outcomes = []
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_chain_task, tasks))
    else:
        outcomes = [_chain_task(t) for t in tasks]

    best = None
    all_traces = []
    errors = []
    for outcome in outcomes:
        if isinstance(outcome, _ChainFailed):
            all_traces.append(outcome.trace)
            errors.append(str(outcome))
            continue
        thetas, labels, loglik, trace = outcome
        all_traces.append(trace)
        if best is None or loglik > best[2]:
            best = (thetas, labels, loglik, trace)
    if best is None:
        raise FitError(
            f"all {len(tasks)} EM chains failed; first error: {errors[0]}",
            chain_traces=all_traces,
        )
    thetas, labels, loglik, trace = best

    order = _canonical_order(labels, len(thetas))
    position = np.empty_like(order)
    position[order] = np.arange(order.size)
    labels = position[labels]
    thetas = [thetas[g] for g in order]
    return thetas, labels, loglik, trace, all_traces


def _chain_task(args):
    cells, lik, n_groups, labels0, opts, chain_index = args
    try:
        return _run_chain(cells, lik, n_groups, labels0, opts, chain_index)
    except _ChainFailed as exc:
        return exc


def _finish_fit(lik, cells: _Cells, thetas, labels, loglik, trace) -> FitResult:
    """Package a chain's output with sandwich standard errors."""
    n_groups = len(thetas)
    coefficients = [lik.coefficients(theta) for theta in thetas]
    covariance = []
    std_errors = []
    diagnostics = []
    cell_labels = labels[cells.owner]
    for g in range(n_groups):
        obs = cells.group_obs(cell_labels, g)
        try:
            cov = _sandwich_one(lik, obs, thetas[g], cells.n_periods)
        except NumericalRankError as exc:
            p = lik.n_params
            cov = np.full((p, p), np.nan)
            diagnostics.append(f"group {g + 1}: {exc}")
        covariance.append(cov)
        std_errors.append(std_errors_from(cov))
    return FitResult(
        coefficients=coefficients,
        assignment=GroupAssignment(labels + 1, n_groups),
        loglik=loglik,
        covariance=covariance,
        std_errors=std_errors,
        n_iterations=trace.n_iterations,
        converged=trace.converged,
        diagnostics=diagnostics,
    )


def em_fit(
    data: PanelData,
    n_groups: int,
    spec: LinkSpec,
    opts: EmOptions | None = None,
    init_assignment: GroupAssignment | None = None,
    workers: int = 1,
) -> EmFit:
    """Estimate group memberships and coefficients jointly by EM.

    With init_assignment the search runs a single chain from that
    assignment; otherwise opts.n_restarts randomly seeded chains run and
    the best final log likelihood wins (earliest chain on ties).
    """
    opts = opts or EmOptions()
    spec.check_columns(data.n_covariates)
    lik = GevPanelLikelihood(spec)
    cells = _build_cells(data, lik)
    init_labels0 = None
    if init_assignment is not None:
        if init_assignment.n_individuals != data.n_individuals:
            raise ConfigError("init_assignment does not cover the panel")
        if init_assignment.n_groups != n_groups:
            raise ConfigError(
                f"init_assignment has {init_assignment.n_groups} groups, expected {n_groups}"
            )
        init_labels0 = init_assignment.labels - 1
    thetas, labels, loglik, trace, all_traces = _em_core(
        cells, lik, n_groups, opts, init_labels0, workers
    )
    result = _finish_fit(lik, cells, thetas, labels, loglik, trace)
    return EmFit(result=result, trace=trace, chain_traces=all_traces)


def assign_groups(
    data: PanelData,
    coefficients,
    spec: LinkSpec,
) -> GroupAssignment:
    """Assign each individual to its best-likelihood group under fixed
    coefficients, ties toward the smallest label."""
    spec.check_columns(data.n_covariates)
    lik = GevPanelLikelihood(spec)
    for coeffs in coefficients:
        coeffs.validate(spec)
    cells = _build_cells(data, lik)
    thetas = [lik.flatten(c) for c in coefficients]
    active = np.ones(len(thetas), dtype=bool)
    member_ll = _membership_loglik(lik, cells, thetas, active)
    trace = EmTrace()
    labels = _assign_from_loglik(
        member_ll, lambda: _support_counts(lik, cells, thetas, active), trace, 0
    )
    if trace.fallback_individuals:
        warnings.warn(
            f"{len(trace.fallback_individuals)} individuals were infeasible under "
            "every group and were assigned by support coverage",
            stacklevel=2,
        )
    return GroupAssignment(labels + 1, len(coefficients))


def canonicalize_labels(result: FitResult) -> FitResult:
    """Relabel groups by order of first appearance and permute all
    per-group blocks to match.  Estimates are unchanged."""
    labels0 = result.assignment.labels - 1
    order = _canonical_order(labels0, result.n_groups)
    position = np.empty_like(order)
    position[order] = np.arange(order.size)
    return FitResult(
        coefficients=[result.coefficients[g] for g in order],
        assignment=GroupAssignment(position[labels0] + 1, result.n_groups),
        loglik=result.loglik,
        covariance=[result.covariance[g] for g in order],
        std_errors=[result.std_errors[g] for g in order],
        n_iterations=result.n_iterations,
        converged=result.converged,
        diagnostics=list(result.diagnostics),
    )
