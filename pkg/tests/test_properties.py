"""Property-based checks of the invariants."""
from __future__ import annotations

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from conftest import long_records
from trajmsm.data import build_panel, enumerate_trajectories, trajectory_index
from trajmsm.lcgm import assign_groups, e_step, fit_lcgm, mixture_loglik
from trajmsm.msm import fit_msm_binary, fit_msm_continuous, fit_msm_survival
from trajmsm.numerics import fit_logistic, fit_wls

FAST = settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@FAST
@given(K=st.integers(1, 12))
def test_enumeration_is_complete_and_unique(K):
    codes = enumerate_trajectories(K)
    assert codes.shape == (2**K, K)
    np.testing.assert_array_equal(trajectory_index(codes), np.arange(2**K))


@FAST
@given(n=st.integers(1, 8), K=st.integers(2, 5), seed=st.integers(0, 10**6),
       outcome=st.sampled_from(["continuous", "binary", "survival"]))
def test_long_format_round_trip(n, K, seed, outcome):
    panel = build_panel(long_records(n, K, outcome, seed), outcome)
    assert build_panel(panel.to_long(), outcome).equals(panel)


def _treatment(seed, n, K):
    rng = np.random.default_rng(seed)
    p = rng.choice([0.15, 0.5, 0.85], size=n)
    return (rng.random((n, K)) < p[:, None]).astype(int)


@FAST
@given(seed=st.integers(0, 10**6), n=st.integers(40, 150), K=st.integers(2, 5), J=st.integers(1, 3))
def test_em_invariants(seed, n, K, J):
    a = _treatment(seed, n, K)
    model, Z = fit_lcgm(a, J, restarts=3, seed=seed, require_populated=False)
    assert np.all(np.diff(model.trace) >= -1e-12)
    np.testing.assert_allclose(Z.sum(axis=1), 1.0, atol=1e-12)
    assert abs(model.pi.sum() - 1.0) < 1e-12
    assert model.loglik == mixture_loglik(model.pi, model.theta, a) or np.isclose(
        model.loglik, mixture_loglik(model.pi, model.theta, a), rtol=1e-8)


@FAST
@given(seed=st.integers(0, 10**6))
def test_posteriors_equivariant_under_permutation(seed):
    a = _treatment(seed, 120, 4)
    perm = np.random.default_rng(seed).permutation(120)
    m1, Z1 = fit_lcgm(a, 2, restarts=3, seed=1, require_populated=False)
    m2, Z2 = fit_lcgm(a[perm], 2, restarts=3, seed=1, require_populated=False)
    np.testing.assert_allclose(m1.theta, m2.theta, atol=1e-10)
    np.testing.assert_allclose(Z1[perm], Z2, atol=1e-10)
    np.testing.assert_array_equal(assign_groups(Z1)[perm], assign_groups(Z2))
    np.testing.assert_allclose(e_step(m1, a[perm]), Z1[perm], atol=1e-14)


@FAST
@given(seed=st.integers(0, 10**6), c=st.floats(0.01, 100))
def test_logistic_and_wls_weight_scale_invariance(seed, c):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(80), rng.normal(size=80)])
    y = (rng.random(80) < 0.5).astype(float)
    w = rng.uniform(0.2, 2, 80)
    np.testing.assert_allclose(fit_logistic(X, y, c * w).coef, fit_logistic(X, y, w).coef, atol=1e-8)
    yc = rng.normal(size=80)
    np.testing.assert_allclose(fit_wls(X, yc, c * w).coef, fit_wls(X, yc, w).coef, atol=1e-10)


@FAST
@given(seed=st.integers(0, 10**6))
def test_solver_histories_monotone(seed):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(60), rng.normal(size=60)])
    y = (rng.random(60) < 0.4).astype(float)
    assert np.all(np.diff(fit_logistic(X, y).history) >= -1e-12)
    h = fit_wls(X, rng.normal(size=60)).history
    assert h[1] >= h[0] - 1e-12


@FAST
@given(seed=st.integers(0, 10**6), c=st.floats(0.05, 20))
def test_sandwich_invariant_to_weight_scale(seed, c):
    rng = np.random.default_rng(seed)
    n = 90
    labels = np.r_[1, 2, 3, rng.integers(1, 4, n - 3)]
    w = rng.uniform(0.3, 3, n)
    y = rng.normal(size=n)
    yb = np.r_[0, 1, 0, 1, 0, 1, (rng.random(n - 6) < 0.5)].astype(float)
    t = rng.exponential(size=n)
    d = np.r_[1, 1, 1, (rng.random(n - 3) < 0.7)].astype(int)
    for fit in (
        lambda ww: fit_msm_continuous(labels, None, y, ww),
        lambda ww: fit_msm_binary(labels, None, yb, ww),
        lambda ww: fit_msm_survival(t, d, labels, ww),
    ):
        a, b = fit(w), fit(c * w)
        np.testing.assert_allclose(a.sandwich, b.sandwich, rtol=1e-6, atol=1e-12)
        assert np.all(np.linalg.eigvalsh(a.sandwich) >= -1e-12)
        ci = a.ci
        assert np.all(ci[:, 0] <= ci[:, 1])
