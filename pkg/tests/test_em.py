import itertools

import numpy as np
import pytest

from extreme_panel import (
    ConfigError,
    DgpConfig,
    EmOptions,
    GroupAssignment,
    GroupCoefficients,
    LinkKind,
    LinkSpec,
    PanelData,
    assign_groups,
    canonicalize_labels,
    dgp_link_spec,
    em_fit,
    fit_qml_group,
    panel_loglik,
    reference_config,
    simulate_panel,
)
from extreme_panel.panel import FitResult


def two_block_panel(mu_gap=100.0, n=6, t=50, seed=0):
    """Two far-separated Gumbel-like blocks, first half low, second high."""
    rng = np.random.default_rng(seed)
    y = rng.gumbel(0.0, 1.0, size=(n, t))
    y[n // 2 :] += mu_gap
    return PanelData(y=y, x=np.zeros((n, t, 1)), missing=None)


def plain_spec():
    return LinkSpec(
        mu_link=LinkKind.IDENTITY,
        sigma_link=LinkKind.EXP,
        xi_link=LinkKind.IDENTITY,
    )


def test_g1_equals_pooled_qml():
    cfg = reference_config(seed=3)
    single = DgpConfig(groups=cfg.groups[:1], n_individuals=5, n_periods=30, seed=3)
    data, _, _, _ = simulate_panel(single)
    spec = dgp_link_spec()
    fit = em_fit(data, 1, spec, EmOptions(n_restarts=1, seed=0))
    pooled, pooled_ll = fit_qml_group(data, np.arange(5), spec)
    assert np.array_equal(fit.result.assignment.labels, np.ones(5, dtype=int))
    assert fit.result.loglik == pytest.approx(pooled_ll, abs=1e-9)
    assert np.allclose(
        fit.result.coefficients[0].flatten(), pooled.flatten(), atol=1e-9
    )


def test_separated_groups_exact_recovery_and_brute_force():
    """On a wildly separated two-group panel the EM partition is the
    global profile-likelihood maximizer over every 2-partition."""
    data = two_block_panel()
    spec = plain_spec()
    fit = em_fit(data, 2, spec, EmOptions(n_restarts=4, seed=1))
    labels = fit.result.assignment.labels
    assert np.array_equal(labels, [1, 1, 1, 2, 2, 2])

    best_ll = -np.inf
    best_sets = None
    individuals = range(6)
    for size in range(1, 6):
        for left in itertools.combinations(individuals, size):
            if 0 not in left:
                continue  # fix individual 0 on the left to kill mirror duplicates
            right = tuple(i for i in individuals if i not in left)
            ll = 0.0
            for side in (left, right):
                _, side_ll = fit_qml_group(data, np.array(side), spec)
                ll += side_ll
            if ll > best_ll:
                best_ll = ll
                best_sets = (left, right)
    assert best_sets == ((0, 1, 2), (3, 4, 5))
    assert fit.result.loglik == pytest.approx(best_ll, abs=1e-4)


def test_monotone_ascent_on_all_chains():
    cfg = reference_config(n_periods=25, seed=5)
    data, _, _, _ = simulate_panel(cfg)
    opts = EmOptions(n_restarts=6, seed=2, loglik_tolerance=1e-6)
    fit = em_fit(data, 3, dgp_link_spec(), opts)
    assert fit.chain_traces
    for trace in fit.chain_traces:
        reseed_iters = {it for it, _ in trace.reseeded_groups}
        lls = trace.loglik
        for k in range(1, len(lls)):
            if k in reseed_iters or (k - 1) in reseed_iters:
                continue  # forced reseeds may move the objective down
            assert lls[k] >= lls[k - 1] - opts.loglik_tolerance


def test_fixed_point_idempotence():
    cfg = reference_config(n_periods=40, seed=8)
    data, _, _, _ = simulate_panel(cfg)
    opts = EmOptions(n_restarts=5, seed=4)
    fit = em_fit(data, 3, dgp_link_spec(), opts)
    again = em_fit(
        data,
        fit.result.n_groups,
        dgp_link_spec(),
        opts,
        init_assignment=fit.result.assignment,
    )
    assert again.trace.n_iterations == 1
    assert again.trace.converged
    assert abs(again.result.loglik - fit.result.loglik) < 1e-6
    assert np.array_equal(
        again.result.assignment.labels, fit.result.assignment.labels
    )


def test_determinism():
    cfg = reference_config(n_periods=30, seed=12)
    data, _, _, _ = simulate_panel(cfg)
    opts = EmOptions(n_restarts=4, seed=9)
    a = em_fit(data, 3, dgp_link_spec(), opts)
    b = em_fit(data, 3, dgp_link_spec(), opts)
    assert a.result.loglik == b.result.loglik
    assert np.array_equal(a.result.assignment.labels, b.result.assignment.labels)
    for ca, cb in zip(a.result.coefficients, b.result.coefficients):
        assert np.array_equal(ca.flatten(), cb.flatten())


def test_canonicalize_orbit_invariance():
    cfg = reference_config(n_periods=30, seed=15)
    data, _, _, _ = simulate_panel(cfg)
    fit = em_fit(data, 3, dgp_link_spec(), EmOptions(n_restarts=4, seed=1))
    base = canonicalize_labels(fit.result)
    # canonical form is a fixed point
    again = canonicalize_labels(base)
    assert np.array_equal(again.assignment.labels, base.assignment.labels)
    # every relabeling collapses back to the same canonical form
    g = base.n_groups
    for perm in itertools.permutations(range(g)):
        perm = np.array(perm)
        shuffled = FitResult(
            coefficients=[base.coefficients[perm[k]] for k in range(g)],
            assignment=GroupAssignment(
                np.argsort(perm)[base.assignment.labels - 1] + 1, g
            ),
            loglik=base.loglik,
            covariance=[base.covariance[perm[k]] for k in range(g)],
            std_errors=[base.std_errors[perm[k]] for k in range(g)],
            n_iterations=base.n_iterations,
            converged=base.converged,
        )
        canon = canonicalize_labels(shuffled)
        assert np.array_equal(canon.assignment.labels, base.assignment.labels)
        assert canon.loglik == base.loglik
        for ca, cb in zip(canon.coefficients, base.coefficients):
            assert np.array_equal(ca.flatten(), cb.flatten())
    # first-member ordering holds
    firsts = [
        int(np.flatnonzero(base.assignment.labels == k + 1)[0])
        for k in range(g)
    ]
    assert firsts == sorted(firsts)


def test_label_permutation_leaves_loglik_alone():
    data = two_block_panel()
    spec = plain_spec()
    fit = em_fit(data, 2, spec, EmOptions(n_restarts=3, seed=6))
    flipped = GroupAssignment(3 - fit.result.assignment.labels, 2)
    coeffs = list(reversed(fit.result.coefficients))
    assert panel_loglik(data, coeffs, flipped, spec) == pytest.approx(
        fit.result.loglik, abs=1e-9
    )


def test_assign_groups_basics():
    data = two_block_panel()
    spec = plain_spec()
    low = GroupCoefficients(kappa=[0.0], gamma=[0.0], delta=[0.01])
    high = GroupCoefficients(kappa=[100.0], gamma=[0.0], delta=[0.01])
    tau = assign_groups(data, [low, high], spec)
    assert np.array_equal(tau.labels, [1, 1, 1, 2, 2, 2])
    only = assign_groups(data, [low], spec)
    assert np.array_equal(only.labels, np.ones(6, dtype=int))
    # exact tie: duplicate coefficients, smallest label wins
    tie = assign_groups(data, [low, low], spec)
    assert np.array_equal(tie.labels, np.ones(6, dtype=int))


def test_assign_groups_fallback_counts_support():
    """All-minus-inf individuals go to the group covering the most cells."""
    y = np.array([[-5.0, 0.4, 1.5]])
    data = PanelData(y=y, x=np.zeros((1, 3, 1)), missing=None)
    spec = LinkSpec(
        mu_link=LinkKind.IDENTITY,
        sigma_link=LinkKind.IDENTITY,
        xi_link=LinkKind.IDENTITY,
    )
    # group 1 support (-inf, 0.25]; group 2 support [-2, inf)
    narrow = GroupCoefficients(kappa=[0.0], gamma=[0.25], delta=[-1.0])
    wide = GroupCoefficients(kappa=[0.0], gamma=[1.0], delta=[0.5])
    with pytest.warns(UserWarning):
        tau = assign_groups(data, [narrow, wide], spec)
    assert tau.labels[0] == 2


def test_em_fit_input_validation():
    data = two_block_panel(n=4, t=10)
    spec = plain_spec()
    with pytest.raises(ConfigError):
        em_fit(data, 5, spec)  # more groups than individuals
    with pytest.raises(ConfigError):
        em_fit(data, 0, spec)
    bad_init = GroupAssignment(np.array([1, 1, 1, 1]), 1)
    with pytest.raises(ConfigError):
        em_fit(data, 2, spec, init_assignment=bad_init)


def test_empty_group_degenerates_gracefully():
    """With duplicated patterns a 3-group request collapses; the fit
    reports its realized group count."""
    rng = np.random.default_rng(7)
    base = rng.gumbel(0.0, 1.0, size=(1, 60))
    y = np.concatenate([base + 0.0, base + 0.1, base + 100.0], axis=0)
    data = PanelData(y=y, x=np.zeros((3, 60, 1)), missing=None)
    fit = em_fit(data, 3, plain_spec(), EmOptions(n_restarts=4, seed=3))
    assert fit.result.n_groups <= 3
    labels = fit.result.assignment.labels
    assert labels.min() == 1
    assert labels.max() == fit.result.n_groups
    # the separated individual always sits alone
    assert labels[2] != labels[0]


def test_trace_shape():
    data = two_block_panel()
    fit = em_fit(data, 2, plain_spec(), EmOptions(n_restarts=3, seed=5))
    assert fit.trace.n_iterations >= 1
    assert len(fit.trace.loglik) == len(fit.trace.assignment_changes)
    assert 0 <= fit.trace.chain_index < 3
    assert len(fit.chain_traces) == 3
    assert fit.trace.converged
