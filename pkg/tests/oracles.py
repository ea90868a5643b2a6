"""Independent reference implementations used as test oracles.

Everything here is written from the model definitions with plain loops or
arbitrary precision arithmetic and shares no code with the package.
"""
from __future__ import annotations

import itertools
import math

import mpmath

mpmath.mp.dps = 50


def _expit(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def markov_confounder_marginals(dgp, code) -> list[float]:
    """Exact P(L_t = 1) under a fixed regime by forward recursion."""
    probs = [0.5]
    for t in range(1, len(code)):
        p_prev = probs[-1]
        p = (1 - p_prev) * _expit(dgp.gamma0 + dgp.gamma_A * code[t - 1]) + p_prev * _expit(
            dgp.gamma0 + dgp.gamma_A * code[t - 1] + dgp.gamma_L
        )
        probs.append(p)
    return probs


def continuous_counterfactual_mean(dgp, code) -> float:
    """E[Y^a] = beta_A sum a_t + beta_L sum_t P(L_t = 1)."""
    return dgp.beta_A * sum(code) + dgp.beta_L * sum(markov_confounder_marginals(dgp, code))


def binary_counterfactual_mean(dgp, code) -> float:
    """E[Y^a] by summing over every confounder path."""
    K = len(code)
    total = 0.0
    for path in itertools.product((0, 1), repeat=K):
        pr = 0.5
        for t in range(1, K):
            p = _expit(dgp.gamma0 + dgp.gamma_A * code[t - 1] + dgp.gamma_L * path[t - 1])
            pr *= p if path[t] else 1 - p
        total += pr * _expit(dgp.eta0 + dgp.beta_A * sum(code) + dgp.beta_L * sum(path))
    return total


def mp_solve_normal_equations(X, y, w):
    """Weighted least squares by exact normal equations in 50-digit precision."""
    n, d = len(X), len(X[0])
    A = mpmath.matrix(d, d)
    b = mpmath.matrix(d, 1)
    for i in range(n):
        wi = mpmath.mpf(float(w[i]))
        for r in range(d):
            b[r] += wi * mpmath.mpf(float(X[i][r])) * mpmath.mpf(float(y[i]))
            for s in range(d):
                A[r, s] += wi * mpmath.mpf(float(X[i][r])) * mpmath.mpf(float(X[i][s]))
    sol = mpmath.lu_solve(A, b)
    return [float(sol[k]) for k in range(d)]


def mp_logistic(X, y, w, iters: int = 60):
    """Weighted logistic MLE by plain Newton iterations in 50-digit precision."""
    n, d = len(X), len(X[0])
    Xm = [[mpmath.mpf(float(v)) for v in row] for row in X]
    beta = mpmath.matrix(d, 1)
    for _ in range(iters):
        g = mpmath.matrix(d, 1)
        H = mpmath.matrix(d, d)
        for i in range(n):
            eta = sum(Xm[i][k] * beta[k] for k in range(d))
            p = 1 / (1 + mpmath.exp(-eta))
            wi = mpmath.mpf(float(w[i]))
            for r in range(d):
                g[r] += wi * (float(y[i]) - p) * Xm[i][r]
                for s in range(d):
                    H[r, s] += wi * p * (1 - p) * Xm[i][r] * Xm[i][s]
        beta += mpmath.lu_solve(H, g)
    return [float(beta[k]) for k in range(d)]


def logistic_loglik(beta, X, y, w) -> float:
    ll = 0.0
    for xi, yi, wi in zip(X, y, w):
        eta = sum(b * x for b, x in zip(beta, xi))
        ll += wi * (yi * eta - math.log1p(math.exp(eta)))
    return ll


def breslow_loglik(beta, X, time, event, w) -> float:
    """Weighted Breslow partial log-likelihood with explicit risk sets."""
    ll = 0.0
    n = len(time)
    for i in range(n):
        if not event[i]:
            continue
        xb = sum(b * x for b, x in zip(beta, X[i]))
        risk = sum(w[l] * math.exp(sum(b * x for b, x in zip(beta, X[l])))
                   for l in range(n) if time[l] >= time[i])
        ll += w[i] * (xb - math.log(risk))
    return ll


def grid_argmax(f, lo, hi, dims: int, steps: int = 41, rounds: int = 12):
    """Coarse-to-fine grid search for the maximizer of ``f`` over a box."""
    lo, hi = [lo] * dims, [hi] * dims
    best = None
    for _ in range(rounds):
        axes = [[lo[k] + (hi[k] - lo[k]) * s / (steps - 1) for s in range(steps)] for k in range(dims)]
        best = max(itertools.product(*axes), key=f)
        span = [(hi[k] - lo[k]) / (steps - 1) * 2 for k in range(dims)]
        lo = [best[k] - span[k] for k in range(dims)]
        hi = [best[k] + span[k] for k in range(dims)]
    return list(best)


def brute_force_projection(means, groups, lam, J):
    """Weighted least squares of regime means on group dummies, in mpmath.

    With group dummies the solution is the lambda-weighted mean of each group:
    intercept = mean of group 1, contrast j = mean of group j minus that.
    """
    num = [mpmath.mpf(0)] * J
    den = [mpmath.mpf(0)] * J
    for m, g, l in zip(means, groups, lam):
        num[g - 1] += mpmath.mpf(float(l)) * mpmath.mpf(float(m))
        den[g - 1] += mpmath.mpf(float(l))
    gm = [num[j] / den[j] for j in range(J)]
    return [float(gm[0])] + [float(gm[j] - gm[0]) for j in range(1, J)]
