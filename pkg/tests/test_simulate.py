import numpy as np
import pytest
from scipy import stats

from extreme_panel import (
    ConfigError,
    CopulaSpec,
    DgpConfig,
    DgpGroupParams,
    GevParams,
    dgp_link_spec,
    gev_cdf,
    gev_quantile,
    reference_config,
    run_study,
    sample_copula,
    simulate_covariates,
    simulate_panel,
    true_assignment,
)


def draw_pairs(spec, n_draws=20_000, seed=0):
    rng = np.random.default_rng(seed)
    out = np.empty((n_draws, 2))
    for k in range(n_draws):
        out[k] = sample_copula(spec, 2, rng)
    return out


def test_copula_kendall_tau_calibration():
    """Pairwise dependence matches the closed-form Kendall tau of each
    family: 0, 1/3 at rho=0.5, 1/2 at alpha=2."""
    targets = [
        (CopulaSpec(kind="independence"), 0.0),
        (CopulaSpec(kind="gaussian", rho=0.5), 1.0 / 3.0),
        (CopulaSpec(kind="gumbel", alpha=2.0), 0.5),
    ]
    for spec, target in targets:
        u = draw_pairs(spec, seed=5)
        tau = stats.kendalltau(u[:, 0], u[:, 1]).statistic
        assert abs(tau - target) < 0.02, (spec.kind, tau)


def test_gumbel_alpha_one_degenerates_to_independence():
    u = draw_pairs(CopulaSpec(kind="gumbel", alpha=1.0), seed=11)
    tau = stats.kendalltau(u[:, 0], u[:, 1]).statistic
    assert abs(tau) < 0.02


def test_copula_margins_are_uniform():
    for kind, kwargs in (
        ("independence", {}),
        ("gaussian", {"rho": 0.5}),
        ("gumbel", {"alpha": 2.0}),
    ):
        u = draw_pairs(CopulaSpec(kind=kind, **kwargs), seed=23)
        for col in range(2):
            ks = stats.kstest(u[:, col], "uniform").statistic
            assert ks < 0.015, (kind, col, ks)
        assert u.min() > 0.0 and u.max() < 1.0


def test_copula_spec_validation():
    with pytest.raises(ConfigError):
        CopulaSpec(kind="clayton")
    with pytest.raises(ConfigError):
        CopulaSpec(kind="gaussian", rho=1.0)
    with pytest.raises(ConfigError):
        CopulaSpec(kind="gumbel", alpha=0.5)


def test_simulate_covariates_deterministic_limit():
    cfg = DgpConfig(
        groups=reference_config().groups,
        beta=0.0,
        nu_f=0.0,
        nu_i=1e-12,
        n_individuals=5,
        n_periods=10,
        seed=1,
    )
    x = simulate_covariates(cfg, np.random.default_rng(1))
    t_grid = np.arange(1, 11)
    expected = cfg.omega + (cfg.lam / 10.0) * t_grid
    assert np.allclose(x[:, :, 0], expected[None, :], atol=1e-5)


def test_simulate_covariates_first_period_mean():
    # beta=0 drops the common factor, which is shared across individuals
    # at fixed t and so would not average out in a cross-sectional mean
    cfg = DgpConfig(
        groups=reference_config().groups,
        beta=0.0,
        n_individuals=10_000,
        n_periods=1,
        seed=2,
    )
    x = simulate_covariates(cfg, np.random.default_rng(2))
    target = cfg.omega + cfg.lam / 1.0
    spread = 3.0 * np.sqrt(cfg.nu_f + cfg.nu_i) / 100.0
    assert abs(float(x[:, 0, 0].mean()) - target) < spread


def test_simulate_covariates_x2_constant_and_bounded():
    cfg = reference_config(n_periods=12, seed=3)
    x = simulate_covariates(cfg, np.random.default_rng(3))
    x2 = x[:, :, 1]
    assert np.all(x2 == x2[:, :1])
    lo, hi = cfg.u_bounds
    assert x2.min() > lo and x2.max() < hi


def test_true_assignment_blocks():
    cfg = reference_config()
    tau = true_assignment(cfg)
    assert np.array_equal(tau.counts(), [6, 6, 6, 6])
    ragged = DgpConfig(groups=cfg.groups, n_individuals=10, n_periods=5)
    tau = true_assignment(ragged)
    assert np.array_equal(tau.counts(), [2, 2, 2, 4])
    assert np.array_equal(tau.labels[:2], [1, 1])
    assert np.array_equal(tau.labels[-4:], [4, 4, 4, 4])


def test_simulate_panel_reproducible_and_consistent():
    cfg = reference_config(n_periods=8, seed=17)
    data_a, coeffs_a, tau_a, q_a = simulate_panel(cfg)
    data_b, coeffs_b, tau_b, q_b = simulate_panel(cfg)
    assert np.array_equal(data_a.y, data_b.y)
    assert np.array_equal(data_a.x, data_b.x)
    assert np.array_equal(q_a, q_b)
    assert np.array_equal(tau_a.labels, tau_b.labels)
    assert data_a.y.shape == (24, 8)
    assert data_a.x.shape == (24, 8, 2)
    assert not data_a.missing.any()


def test_true_q99_matches_cell_quantiles():
    cfg = reference_config(n_periods=6, seed=19)
    data, coeffs, tau, q99 = simulate_panel(cfg)
    for i in (0, 7, 23):
        g = tau.labels[i] - 1
        c = coeffs[g]
        for t in (0, 5):
            x1, x2 = data.x[i, t]
            p = GevParams(
                float(c.kappa @ [1.0, x1, x2]),
                float(np.exp(c.gamma @ [1.0, x1, x2])),
                float(c.delta[0]),
            )
            assert q99[i, t] == pytest.approx(gev_quantile(0.99, p), rel=1e-12)


def test_unit_reduction_gives_standard_gumbel():
    """Zero coefficients collapse the generator to standard Gumbel draws."""
    flat = DgpGroupParams(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    cfg = DgpConfig(groups=(flat,), n_individuals=1, n_periods=20_000, seed=29)
    data, _, _, _ = simulate_panel(cfg)
    ks = stats.kstest(data.y[0], stats.gumbel_r.cdf).statistic
    assert ks < 0.015


def test_marginal_distribution_matches_gev_cdf():
    """With frozen covariates the draws follow the conditional GEV law."""
    g1 = reference_config().groups[0]
    cfg = DgpConfig(
        groups=(g1,),
        lam=0.0,
        beta=0.0,
        nu_f=0.0,
        nu_i=0.0,
        n_individuals=1,
        n_periods=20_000,
        seed=31,
    )
    data, coeffs, _, _ = simulate_panel(cfg)
    x1, x2 = data.x[0, 0]
    c = coeffs[0]
    p = GevParams(
        float(c.kappa @ [1.0, x1, x2]),
        float(np.exp(c.gamma @ [1.0, x1, x2])),
        float(c.delta[0]),
    )
    ks = stats.kstest(data.y[0], lambda v: gev_cdf(v, p)).statistic
    assert ks < 0.015


def test_run_study_smoke_and_determinism():
    cfg = DgpConfig(
        groups=reference_config().groups[:2],
        n_individuals=6,
        n_periods=15,
        seed=37,
    )
    from extreme_panel import EmOptions

    opts = EmOptions(n_restarts=2, seed=0)
    a = run_study(cfg, g_max=2, n_replications=2, opts=opts)
    b = run_study(cfg, g_max=2, n_replications=2, opts=opts)
    assert a.n_replications == 2
    assert a.select_fraction == b.select_fraction
    assert a.mean_rand == b.mean_rand
    assert a.median_mrae_by_g == b.median_mrae_by_g
    assert set(a.median_mrae_by_g) == {1, 2}
    with pytest.raises(ConfigError):
        run_study(cfg, g_max=1, n_replications=1, opts=opts)
