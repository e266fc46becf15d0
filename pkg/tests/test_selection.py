import numpy as np
import pytest

from extreme_panel import (
    ConfigError,
    DgpConfig,
    EmOptions,
    GroupAssignment,
    bic,
    dgp_link_spec,
    mrae,
    rand_index,
    reference_config,
    select_groups,
    simulate_panel,
)


def test_bic_known_values():
    assert bic(0.0, 1, 3, 1, 1) == 0.0
    # plug-in arithmetic: -2*(-4065.24) + log(48*69)*5*4
    assert bic(-4065.24, 4, 5, 48, 69) == pytest.approx(
        8292.586150310102, abs=1e-6
    )
    base = bic(-100.0, 2, 3, 10, 5)
    doubled_p = bic(-100.0, 2, 6, 10, 5)
    assert doubled_p - 200.0 == pytest.approx(2.0 * (base - 200.0))


def test_bic_monotone_in_groups_at_fixed_loglik():
    values = [bic(-500.0, g, 4, 12, 20) for g in range(1, 7)]
    assert all(b2 > b1 for b1, b2 in zip(values, values[1:]))


def test_bic_validation():
    with pytest.raises(ConfigError):
        bic(0.0, 0, 3, 5, 5)
    with pytest.raises(ConfigError):
        bic(0.0, 1, 0, 5, 5)
    with pytest.raises(ConfigError):
        bic(0.0, 1, 3, 0, 5)


def test_rand_index_known_values():
    a = GroupAssignment(np.array([1, 1, 2, 2]), 2)
    b = GroupAssignment(np.array([1, 2, 1, 2]), 2)
    assert rand_index(a, a) == 1.0
    assert rand_index(a, b) == pytest.approx(1.0 / 3.0)
    relabeled = GroupAssignment(np.array([2, 2, 1, 1]), 2)
    assert rand_index(a, relabeled) == 1.0
    assert rand_index(a, b) == rand_index(b, a)


def test_rand_index_accepts_plain_arrays_and_matches_sklearn():
    pytest.importorskip("sklearn")
    from sklearn.metrics import rand_score

    rng = np.random.default_rng(2)
    for _ in range(20):
        a = rng.integers(1, 5, size=30)
        b = rng.integers(1, 5, size=30)
        assert rand_index(a, b) == pytest.approx(rand_score(a, b), abs=1e-12)


def test_rand_index_length_mismatch():
    with pytest.raises(ConfigError):
        rand_index(np.array([1, 2]), np.array([1, 2, 3]))


def test_mrae_known_values():
    true = np.array([[1.0, 2.0], [4.0, 5.0]])
    assert mrae(true, true) == 0.0
    assert mrae(1.1 * true, true) == pytest.approx(0.1)
    est = true * np.array([[1.05, 0.95], [1.05, 0.95]])
    assert mrae(est, true) == pytest.approx(0.05)


def test_mrae_excludes_zero_truth_cells():
    true = np.array([[1.0, 0.0], [2.0, 4.0]])
    est = np.array([[1.1, 7.0], [2.2, 4.4]])
    with pytest.warns(UserWarning):
        value = mrae(est, true)
    assert value == pytest.approx(0.1)


def test_select_groups_gmax_one():
    cfg = reference_config(seed=21)
    single = DgpConfig(groups=cfg.groups[:1], n_individuals=4, n_periods=25, seed=21)
    data, _, _, _ = simulate_panel(single)
    sweep = select_groups(data, dgp_link_spec(), 1, EmOptions(n_restarts=1, seed=0))
    assert sweep.g_star == 1
    assert len(sweep.entries) == 1
    assert sweep.best is sweep.entry(1)


def test_select_groups_prefers_one_group_on_pooled_data():
    """A single-group generator should not be split: the penalty wins."""
    cfg = reference_config(seed=33)
    single = DgpConfig(groups=cfg.groups[:1], n_individuals=8, n_periods=50, seed=33)
    data, _, _, _ = simulate_panel(single)
    sweep = select_groups(data, dgp_link_spec(), 3, EmOptions(n_restarts=3, seed=1))
    assert sweep.g_star == 1
    assert [e.n_groups for e in sweep.entries] == [1, 2, 3]
    # BIC rows carry the realized fits
    for entry in sweep.entries:
        assert np.isfinite(entry.bic)
        assert entry.fit.result.n_groups == entry.realized_groups


def test_select_groups_label_permutation_invariance():
    data_cfg = reference_config(n_periods=30, seed=41)
    data, _, _, _ = simulate_panel(data_cfg)
    opts = EmOptions(n_restarts=3, seed=2)
    a = select_groups(data, dgp_link_spec(), 3, opts)
    b = select_groups(data, dgp_link_spec(), 3, opts)
    assert a.g_star == b.g_star
    assert [e.bic for e in a.entries] == [e.bic for e in b.entries]
