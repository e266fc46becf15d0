import numpy as np
import pytest

from extreme_panel import (
    DomainError,
    EmOptions,
    GroupAssignment,
    LinkKind,
    LinkSpec,
    PanelData,
    em_fit_gp,
    extract_exceedances,
    select_groups_gp,
)
from extreme_panel.likelihood import GpPanelLikelihood


def gp_spec():
    return LinkSpec(
        mu_link=LinkKind.IDENTITY,
        sigma_link=LinkKind.EXP,
        xi_link=LinkKind.IDENTITY,
    )


def panel_from_matrix(y):
    y = np.asarray(y, dtype=float)
    return PanelData(
        y=y, x=np.zeros(y.shape + (1,)), missing=None
    )


def test_threshold_order_statistic():
    data = panel_from_matrix([np.arange(1.0, 11.0)])
    panel = extract_exceedances(data, 0.8)
    # ceil(0.8 * 10) = 8th order statistic
    assert panel.thresholds[0] == 8.0
    assert np.array_equal(panel.excesses[0], [1.0, 2.0])
    assert np.array_equal(panel.t_index[0], [8, 9])
    assert panel.n_exceedances == 2


def test_constant_series_excluded_with_warning():
    data = panel_from_matrix([[3.0] * 8, list(range(8))])
    with pytest.warns(UserWarning):
        panel = extract_exceedances(data, 0.5)
    assert panel.excluded == [0]
    assert panel.source_individuals == [1]


def test_low_p0_keeps_nearly_everything():
    data = panel_from_matrix([np.arange(100.0)])
    panel = extract_exceedances(data, 0.01)
    assert len(panel.excesses[0]) == 99


def test_p0_validation_and_empty_result():
    data = panel_from_matrix([[1.0, 1.0]])
    with pytest.raises(DomainError):
        extract_exceedances(data, 0.0)
    with pytest.raises(DomainError):
        extract_exceedances(data, 1.0)
    with pytest.warns(UserWarning):
        with pytest.raises(DomainError):
            extract_exceedances(data, 0.5)  # every individual degenerate


def test_threshold_shift_equivariance():
    rng = np.random.default_rng(3)
    base = rng.pareto(3.0, size=(2, 200)) + rng.normal(0, 0.1, (2, 200))
    shifted = base.copy()
    shifted[0] += 17.5
    a = extract_exceedances(panel_from_matrix(base), 0.9)
    b = extract_exceedances(panel_from_matrix(shifted), 0.9)
    assert b.thresholds[0] == pytest.approx(a.thresholds[0] + 17.5, abs=1e-12)
    assert np.allclose(a.excesses[0], b.excesses[0], atol=1e-12)
    assert np.array_equal(a.excesses[1], b.excesses[1])


def test_single_group_recovery_within_3_se():
    """Pooled GP fit on 5000 simulated excesses recovers (sigma, xi)."""
    rng = np.random.default_rng(7)
    sigma, xi = 2.0, 0.2
    n = 5000
    # inverse-cdf draws: z = sigma/xi * ((1-u)^(-xi) - 1)
    u = rng.uniform(size=(4, n // 4))
    z = sigma / xi * ((1.0 - u) ** (-xi) - 1.0)
    raw = np.concatenate([np.zeros((4, 1)), z], axis=1)  # keep min as threshold
    data = panel_from_matrix(raw)
    panel = extract_exceedances(data, 1e-6)
    fit = em_fit_gp(panel, 1, gp_spec(), EmOptions(n_restarts=1, seed=0))
    coeffs = fit.result.coefficients[0]
    se = fit.result.std_errors[0]
    est_sigma = float(np.exp(coeffs.gamma[0]))
    est_xi = float(coeffs.delta[0])
    # delta method for the exp-scale intercept
    assert abs(est_sigma - sigma) < 3.0 * se[0] * est_sigma
    assert abs(est_xi - xi) < 3.0 * se[1]


def test_two_group_partition_recovery():
    """Scale 1 vs 50 splits exactly, matching the brute-force optimum."""
    rng = np.random.default_rng(11)
    small = rng.exponential(1.0, size=(3, 220))
    large = rng.exponential(50.0, size=(3, 220))
    data = panel_from_matrix(np.vstack([small, large]))
    panel = extract_exceedances(data, 0.08)
    fit = em_fit_gp(panel, 2, gp_spec(), EmOptions(n_restarts=5, seed=2))
    labels = fit.result.assignment.labels
    assert np.array_equal(labels, [1, 1, 1, 2, 2, 2])


def test_gp_em_reduces_to_pooled_like_gev_variant():
    rng = np.random.default_rng(13)
    data = panel_from_matrix(rng.exponential(2.0, size=(3, 150)))
    panel = extract_exceedances(data, 0.5)
    fit = em_fit_gp(panel, 1, gp_spec(), EmOptions(n_restarts=1, seed=0))
    assert fit.result.n_groups == 1
    assert np.array_equal(
        fit.result.assignment.labels, np.ones(panel.n_individuals, dtype=int)
    )
    lik = GpPanelLikelihood(gp_spec())
    assert np.isfinite(fit.result.loglik)


def test_select_groups_gp_smoke():
    rng = np.random.default_rng(17)
    small = rng.exponential(1.0, size=(3, 200))
    large = rng.exponential(40.0, size=(3, 200))
    data = panel_from_matrix(np.vstack([small, large]))
    panel = extract_exceedances(data, 0.1)
    sweep = select_groups_gp(panel, gp_spec(), 3, EmOptions(n_restarts=3, seed=1))
    assert sweep.g_star == 2
    assert len(sweep.entries) == 3
