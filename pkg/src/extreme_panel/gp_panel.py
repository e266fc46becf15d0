"""Threshold exceedance extraction and grouped generalized Pareto fits.

The exceedance route models amounts above a high per-individual empirical
quantile instead of block maxima: excesses are approximately generalized
Pareto, and the same EM machinery estimates latent groups on the excess
likelihood.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .em import EmFit, EmOptions, _Cells, _em_core, _finish_fit
from .errors import ConfigError, DomainError, ExtremePanelError
from .likelihood import GpPanelLikelihood
from .links import LinkSpec
from .panel import GroupAssignment, PanelData
from .selection import _N_RANDOM_SPLITS, SweepResult, _split_candidates, _sweep


@dataclass
class ExceedancePanel:
    """Per-individual threshold excesses with their covariate rows.

    Individuals with no observations above their threshold are dropped at
    extraction, so lists here index the retained individuals;
    source_individuals maps back to rows of the originating panel.
    """

    p0: float
    thresholds: np.ndarray       # (M,) per retained individual
    excesses: list               # (M) arrays of strictly positive excesses
    x_rows: list                 # (M) arrays (m_i, K) of matching covariates
    t_index: list                # (M) arrays of originating periods
    source_individuals: list
    excluded: list
    column_names: list = field(default_factory=list)
    n_source_periods: int = 0

    @property
    def n_individuals(self) -> int:
        return len(self.excesses)

    @property
    def n_exceedances(self) -> int:
        return int(sum(z.size for z in self.excesses))


def _empirical_quantile(values: np.ndarray, p: float) -> float:
    """Order statistic x_(ceil(p * n)), the inverse empirical distribution
    function evaluated at p."""
    ordered = np.sort(values)
    k = int(math.ceil(p * ordered.size))
    k = min(max(k, 1), ordered.size)
    return float(ordered[k - 1])


def extract_exceedances(data: PanelData, p0: float) -> ExceedancePanel:
    """Excesses above each individual's empirical p0-quantile.

    The threshold is the order statistic at ceil(p0 * n_i) of the
    individual's observed values; only strictly larger observations count
    as exceedances.  Individuals with no observations or no exceedances
    are excluded with a warning.
    """
    if not 0.0 < p0 < 1.0:
        raise DomainError(f"p0 must lie strictly inside (0, 1), got {p0}")
    thresholds = []
    excesses = []
    x_rows = []
    t_index = []
    kept = []
    excluded = []
    for i in range(data.n_individuals):
        observed = ~data.missing[i]
        values = data.y[i, observed]
        if values.size == 0:
            excluded.append(i)
            continue
        threshold = _empirical_quantile(values, p0)
        above = observed & (data.y[i] > threshold)
        if not above.any():
            excluded.append(i)
            continue
        kept.append(i)
        thresholds.append(threshold)
        excesses.append(data.y[i, above] - threshold)
        x_rows.append(data.x[i, above])
        t_index.append(np.flatnonzero(above))
    if excluded:
        warnings.warn(
            f"{len(excluded)} individuals had no exceedances above their "
            f"{p0:.3g}-quantile threshold and were excluded",
            stacklevel=2,
        )
    if not kept:
        raise DomainError("no individual has observations above its threshold")
    return ExceedancePanel(
        p0=p0,
        thresholds=np.asarray(thresholds),
        excesses=excesses,
        x_rows=x_rows,
        t_index=t_index,
        source_individuals=kept,
        excluded=excluded,
        column_names=list(data.column_names),
        n_source_periods=data.n_periods,
    )


def _build_gp_cells(panel: ExceedancePanel, lik: GpPanelLikelihood) -> _Cells:
    z = np.concatenate(panel.excesses)
    x = np.vstack(panel.x_rows)
    t = np.concatenate(panel.t_index)
    owner = np.repeat(
        np.arange(panel.n_individuals), [e.size for e in panel.excesses]
    )
    obs = lik.stack(z, x, t)
    n_periods = panel.n_source_periods or int(t.max()) + 1
    return _Cells(obs, owner, panel.n_individuals, n_periods)


def em_fit_gp(
    panel: ExceedancePanel,
    n_groups: int,
    spec: LinkSpec,
    opts: EmOptions | None = None,
    init_assignment: GroupAssignment | None = None,
    workers: int = 1,
) -> EmFit:
    """Grouped generalized Pareto fit of threshold excesses by EM.

    spec's scale and shape blocks apply; no location block exists on the
    excess scale.  Assignment labels index the retained individuals of the
    exceedance panel.
    """
    opts = opts or EmOptions()
    spec.check_columns(len(panel.column_names))
    lik = GpPanelLikelihood(spec)
    cells = _build_gp_cells(panel, lik)
    init_labels0 = None
    if init_assignment is not None:
        if init_assignment.n_individuals != panel.n_individuals:
            raise ConfigError("init_assignment does not cover the exceedance panel")
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


def _excess_scores(panel: ExceedancePanel, fit: EmFit, spec: LinkSpec) -> np.ndarray:
    """Mean scaled excess z / sigma per individual under its own group's
    fit, the ranking used to warm-start splits in the selection sweep."""
    lik = GpPanelLikelihood(spec)
    labels = fit.result.assignment.labels
    thetas = [lik.flatten(c) for c in fit.result.coefficients]
    scores = np.zeros(panel.n_individuals)
    for i in range(panel.n_individuals):
        obs = lik.stack(panel.excesses[i], panel.x_rows[i], panel.t_index[i])
        sigma, _ = lik.cell_params(thetas[labels[i] - 1], obs)
        with np.errstate(all="ignore"):
            scaled = obs.y / sigma
        scaled = scaled[np.isfinite(scaled)]
        if scaled.size:
            scores[i] = float(np.mean(scaled))
    return scores


def select_groups_gp(
    panel: ExceedancePanel,
    spec: LinkSpec,
    g_max: int,
    opts: EmOptions | None = None,
    workers: int = 1,
) -> SweepResult:
    """BIC sweep over group counts for the exceedance model.

    Like the block-maxima sweep, each count augments its random restarts
    with warm-started chains splitting the previous winner's groups.  The
    BIC sample size is the total exceedance count, the number of
    likelihood terms actually fitted.
    """
    opts = opts or EmOptions()

    def fit_one(g, prev):
        fit = em_fit_gp(panel, g, spec, opts, workers=workers)
        if prev is None or prev.result.n_groups != g - 1:
            return fit
        rng = np.random.default_rng(np.random.SeedSequence([opts.seed, g]))
        warm_seed = int(np.random.SeedSequence([opts.seed, g, 1]).generate_state(1)[0])
        warm = replace(opts, n_restarts=1, seed=warm_seed)
        scores = _excess_scores(panel, prev, spec)
        for init in _split_candidates(prev, scores, rng, _N_RANDOM_SPLITS):
            try:
                cand = em_fit_gp(panel, g, spec, warm, init_assignment=init, workers=workers)
            except ExtremePanelError:
                continue
            if cand.result.loglik > fit.result.loglik + 1e-9:
                fit = cand
        return fit

    n_params = spec.n_sigma + spec.n_xi
    return _sweep(fit_one, panel.n_exceedances, n_params, g_max)
