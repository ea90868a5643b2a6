from __future__ import annotations

import numpy as np
import pytest
from scipy.special import expit, logit

import oracles
from trajmsm.errors import DegenerateClass, DomainError
from trajmsm.lcgm import (
    LcgmModel,
    assign_groups,
    bic,
    class_trajectory_prob,
    e_step,
    fit_lcgm,
    m_step,
    mixture_loglik,
    run_em,
)
from trajmsm.numerics import fit_logistic


def two_class_data(n=500, K=5, seed=42):
    rng = np.random.default_rng(seed)
    cls = rng.random(n) < 0.4
    p = np.where(cls, 0.9, 0.1)
    return (rng.random((n, K)) < p[:, None]).astype(int), cls


def model(pi, theta, K):
    return LcgmModel(np.asarray(pi, float), np.asarray(theta, float), K, 0.0, 1)


def test_constant_half_class_probability():
    assert class_trajectory_prob([0.0], [1, 0, 1]) == pytest.approx(0.125)


def test_product_of_constant_probabilities():
    assert class_trajectory_prob([logit(0.9)], [1, 1, 1]) == pytest.approx(0.729)


def test_linear_logit_hand_evaluation():
    expected = expit(0.5) * (1 - expit(1.0))
    assert class_trajectory_prob([0.0, 0.5], [1, 0]) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.1674, abs=1e-4)


def test_e_step_single_class():
    Z = e_step(model([1.0], [[0.3, 0.1]], 3), np.random.default_rng(0).integers(0, 2, (10, 3)))
    np.testing.assert_array_equal(Z, 1.0)


def test_e_step_identical_classes_return_prior():
    Z = e_step(model([0.2, 0.8], [[0.3, 0.1], [0.3, 0.1]], 3), np.eye(3, dtype=int))
    np.testing.assert_allclose(Z, [[0.2, 0.8]] * 3, atol=1e-14)


def test_e_step_bayes_rule():
    # class likelihoods 0.2 and 0.1 for the single-period code (1,)
    m = model([0.5, 0.5], [[logit(0.2)], [logit(0.1)]], 1)
    np.testing.assert_allclose(e_step(m, [[1]]), [[2 / 3, 1 / 3]], atol=1e-12)


def test_e_step_dimension_check():
    with pytest.raises(DomainError):
        e_step(model([1.0], [[0.0]], 3), np.zeros((2, 4)))


def test_m_step_mixing_is_column_mean():
    rng = np.random.default_rng(0)
    Z = rng.dirichlet([1, 1], size=50)
    Z[:, 0] = np.linspace(0.1, 0.5, 50)
    Z[:, 1] = 1 - Z[:, 0]
    pi, _ = m_step(Z, rng.integers(0, 2, (50, 4)), degree=1)
    assert pi[0] == pytest.approx(0.3)


def test_m_step_intercept_only():
    a = np.zeros((10, 4), dtype=int)
    a[:6, 2] = 1
    a[:, [0, 1, 3]] = a[:, [2]]
    _, theta = m_step(np.ones((10, 1)), a, degree=0)
    assert theta[0, 0] == pytest.approx(logit(0.6), abs=1e-10)


@pytest.mark.parametrize("seed", range(3))
def test_m_step_matches_stacked_weighted_logistic_oracle(seed):
    rng = np.random.default_rng(seed)
    n, K, J = 30, 4, 2
    a = rng.integers(0, 2, (n, K))
    Z = rng.dirichlet([1] * J, size=n)
    _, theta = m_step(Z, a, degree=1)
    t = np.tile(np.arange(1, K + 1), n)
    X = np.column_stack([np.ones(n * K), t]).tolist()
    for j in range(J):
        ref = oracles.mp_logistic(X, a.reshape(-1).tolist(), np.repeat(Z[:, j], K).tolist())
        np.testing.assert_allclose(theta[j], ref, atol=1e-8, rtol=0)


def test_m_step_degenerate_class():
    Z = np.column_stack([np.ones(20), np.zeros(20)])
    with pytest.raises(DegenerateClass):
        m_step(Z, np.zeros((20, 3)), degree=1)


def test_batched_em_matches_reference_steps():
    """One batched EM iteration equals an e_step/m_step pair on subjects."""
    a, _ = two_class_data(n=200, K=4, seed=1)
    patterns, inverse, counts = np.unique(a, axis=0, return_inverse=True, return_counts=True)
    init = np.random.default_rng(3).dirichlet([1, 1], size=len(patterns))
    chain = run_em(patterns, counts, 1, init[None], max_iter=2)[0]
    pi, theta = m_step(init[inverse.ravel()], a, degree=1)
    Z = e_step(model(pi, theta, 4), a)
    pi2, theta2 = m_step(Z, a, degree=1, start=theta)
    np.testing.assert_allclose(chain.pi, pi2, atol=1e-12)
    np.testing.assert_allclose(chain.theta, theta2, atol=1e-8)
    assert chain.trace[0] == pytest.approx(mixture_loglik(pi, theta, a), rel=1e-12)


def test_recovers_two_separated_classes():
    a, cls = two_class_data()
    fit, Z = fit_lcgm(a, J=2, degree=1, restarts=10, seed=5)
    probs = fit.class_probabilities()
    np.testing.assert_allclose(probs[0], 0.1, atol=0.05)
    np.testing.assert_allclose(probs[1], 0.9, atol=0.05)
    np.testing.assert_allclose(fit.pi, [0.6, 0.4], atol=0.05)
    assert np.mean(assign_groups(Z) == cls + 1) > 0.95


def test_single_class_is_pooled_logistic():
    a, _ = two_class_data(n=100, K=4)
    fit, Z = fit_lcgm(a, J=1, degree=1, restarts=2)
    t = np.tile(np.arange(1.0, 5.0), 100)
    ref = fit_logistic(np.column_stack([np.ones(400), t]), a.reshape(-1)).coef
    np.testing.assert_allclose(fit.theta[0], ref, atol=1e-8)
    np.testing.assert_array_equal(fit.pi, [1.0])
    np.testing.assert_array_equal(Z, 1.0)


def test_em_trace_monotone():
    a, _ = two_class_data(n=300, K=5, seed=9)
    fit, _ = fit_lcgm(a, J=3, restarts=5, seed=1, require_populated=False)
    assert np.all(np.diff(fit.trace) >= -1e-12)


def test_canonical_order_ascending():
    rng = np.random.default_rng(3)
    p = rng.choice([0.1, 0.5, 0.9], size=600)
    a = (rng.random((600, 5)) < p[:, None]).astype(int)
    fit, _ = fit_lcgm(a, J=3, restarts=5)
    means = fit.class_probabilities().mean(axis=1)
    assert np.all(np.diff(means) > 0)


def test_fit_is_reproducible():
    a, _ = two_class_data(n=200)
    f1, Z1 = fit_lcgm(a, J=2, seed=7)
    f2, Z2 = fit_lcgm(a, J=2, seed=7)
    np.testing.assert_array_equal(f1.theta, f2.theta)
    np.testing.assert_array_equal(Z1, Z2)


def test_assign_groups_argmax_and_ties():
    assert assign_groups([[0.2, 0.5, 0.3]]).tolist() == [2]
    assert assign_groups([[0.5, 0.5]]).tolist() == [1]
    assert assign_groups(np.ones((4, 1))).tolist() == [1, 1, 1, 1]


def test_bic_arithmetic():
    m = LcgmModel(np.array([0.5, 0.5]), np.zeros((2, 1)), 3, -100.0, 100)
    assert m.n_params == 3
    m5 = LcgmModel(np.array([0.5, 0.5]), np.zeros((2, 2)), 3, -100.0, 100)
    assert m5.n_params == 5
    assert bic(m5, 100) == pytest.approx(200 + 5 * np.log(100))
    assert bic(m5, 100) == pytest.approx(223.026, abs=1e-3)


def test_n_params_monotone_in_classes():
    counts = [LcgmModel(np.ones(J) / J, np.zeros((J, 2)), 3, 0.0, 10).n_params for J in range(1, 6)]
    assert counts == sorted(counts)


def test_bic_selects_two_classes():
    a, _ = two_class_data()
    scores = [bic(fit_lcgm(a, J=J, restarts=10, seed=2)[0], len(a)) for J in (1, 2, 3)]
    assert int(np.argmin(scores)) == 1


def test_saturated_mixture_matches_empirical_frequencies():
    rng = np.random.default_rng(12)
    probs = np.array([0.4, 0.1, 0.2, 0.3])
    idx = rng.choice(4, size=20000, p=probs)
    a = np.array([[0, 0], [0, 1], [1, 0], [1, 1]])[idx]
    fit, _ = fit_lcgm(a, J=4, degree=1, restarts=10, seed=0, require_populated=False)
    codes = np.array([[0, 0], [0, 1], [1, 0], [1, 1]])
    marg = [sum(fit.pi[j] * class_trajectory_prob(fit.theta[j], c) for j in range(4)) for c in codes]
    emp = np.bincount(idx, minlength=4) / len(idx)
    np.testing.assert_allclose(marg, emp, atol=0.01)


def test_unpopulated_class_rejected():
    a, _ = two_class_data(seed=3)
    with pytest.raises(DegenerateClass, match="populated"):
        fit_lcgm(a, J=3, restarts=5)
    fit, Z = fit_lcgm(a, J=3, restarts=5, require_populated=False)
    assert np.unique(assign_groups(Z)).size < 3


def test_to_dict_schema():
    a, _ = two_class_data(n=100)
    d = fit_lcgm(a, J=2)[0].to_dict()
    assert set(d) == {"J", "degree", "pi", "theta", "loglik", "bic", "converged"}
