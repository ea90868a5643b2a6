"""Latent class growth model for binary treatment trajectories.

Each of J latent classes has treatment probabilities that follow a polynomial
of time on the logit scale; periods are independent given the class. The
mixture is fitted by EM from several random starts.

The EM engine works on the distinct observed trajectories weighted by their
counts, which gives exactly the subject-level likelihood at a fraction of the
cost, and advances all restarts together as one batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit, logsumexp

from trajmsm.errors import DegenerateClass, DomainError, Separation
from trajmsm.numerics import PROB_CLAMP, fit_binomial_batch, fit_logistic

DEGENERATE_PI = 1e-4
EM_TOL = 1e-8
EM_MAX_ITER = 500
DEFAULT_RESTARTS = 20
DEFAULT_DEGREE = 1


def time_design(K: int, degree: int) -> np.ndarray:
    """K x (degree+1) matrix of raw powers t**k for t = 1..K."""
    t = np.arange(1, K + 1, dtype=float)
    return t[:, None] ** np.arange(degree + 1)


@dataclass(frozen=True)
class LcgmModel:
    pi: np.ndarray
    theta: np.ndarray
    K: int
    loglik: float
    n_obs: int
    converged: bool = True
    iterations: int = 0
    trace: tuple[float, ...] = field(default=(), repr=False)

    @property
    def J(self) -> int:
        return self.theta.shape[0]

    @property
    def degree(self) -> int:
        return self.theta.shape[1] - 1

    @property
    def n_params(self) -> int:
        return (self.J - 1) + self.J * (self.degree + 1)

    def class_probabilities(self) -> np.ndarray:
        """J x K matrix of P(A_t = 1 | class j)."""
        return expit(self.theta @ time_design(self.K, self.degree).T)

    def to_dict(self) -> dict:
        return {
            "J": self.J,
            "degree": self.degree,
            "pi": self.pi.tolist(),
            "theta": self.theta.tolist(),
            "loglik": self.loglik,
            "bic": bic(self, self.n_obs),
            "converged": self.converged,
        }


def _log_bernoulli(theta: np.ndarray, K: int) -> tuple[np.ndarray, np.ndarray]:
    p = np.clip(expit(theta @ time_design(K, theta.shape[-1] - 1).T), PROB_CLAMP, 1 - PROB_CLAMP)
    return np.log(p), np.log1p(-p)


def class_trajectory_prob(theta_j, code) -> float:
    """P(A-bar = code | class) under local independence."""
    code = np.asarray(code, dtype=float)
    theta_j = np.atleast_1d(np.asarray(theta_j, dtype=float))
    lp1, lp0 = _log_bernoulli(theta_j[None, :], code.shape[0])
    return float(np.exp(code @ lp1[0] + (1 - code) @ lp0[0]))


def class_loglik_matrix(theta: np.ndarray, treatment: np.ndarray) -> np.ndarray:
    """n x J matrix of log P(A-bar_i | class j)."""
    a = np.asarray(treatment, dtype=float)
    lp1, lp0 = _log_bernoulli(np.asarray(theta, dtype=float), a.shape[1])
    return a @ lp1.T + (1 - a) @ lp0.T


def _check_dims(model: LcgmModel, treatment: np.ndarray) -> np.ndarray:
    a = np.asarray(treatment)
    if a.ndim != 2 or a.shape[1] != model.K:
        raise DomainError("treatment matrix does not match the model's K", K=model.K)
    return a


def e_step(model: LcgmModel, treatment) -> np.ndarray:
    """Posterior class probabilities Z (n x J), normalized by log-sum-exp."""
    a = _check_dims(model, treatment)
    with np.errstate(divide="ignore"):
        logw = np.log(model.pi)[None, :] + class_loglik_matrix(model.theta, a)
    Z = np.exp(logw - logsumexp(logw, axis=1, keepdims=True))
    return Z / Z.sum(axis=1, keepdims=True)


def mixture_loglik(pi, theta, treatment, counts=None) -> float:
    """sum_i log sum_j pi_j P(A-bar_i | class j)."""
    with np.errstate(divide="ignore"):
        logw = np.log(np.asarray(pi))[None, :] + class_loglik_matrix(theta, treatment)
    lse = logsumexp(logw, axis=1)
    return float(lse.sum() if counts is None else np.asarray(counts, dtype=float) @ lse)


def m_step(Z, treatment, degree: int, weights=None, start=None) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form mixing update and per-class weighted logistic fits.

    The nK stacked observations (A_it, t) with weights Z_ij are fitted through
    their sufficient statistics: for each period the Z-weighted count of
    treated and untreated subjects. ``weights`` optionally gives a
    multiplicity per row of ``treatment``.
    """
    Z = np.asarray(Z, dtype=float)
    a = np.asarray(treatment, dtype=float)
    n, K = a.shape
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    Zw = Z * w[:, None]
    tot = Zw.sum(axis=0)
    pi = tot / w.sum()
    if np.any(pi < DEGENERATE_PI):
        raise DegenerateClass("a latent class collapsed", pi=pi.tolist())
    T = time_design(K, degree)
    X = np.vstack([T, T])
    y = np.r_[np.ones(K), np.zeros(K)]
    succ = Zw.T @ a
    theta = np.empty((Z.shape[1], degree + 1))
    for j in range(Z.shape[1]):
        wj = np.r_[succ[j], tot[j] - succ[j]]
        s0 = None if start is None else start[j]
        try:
            theta[j] = fit_logistic(X, y, wj, start=s0).coef
        except Separation:
            theta[j] = fit_logistic(X, y, wj, ridge=1e-8, start=s0).coef
    return pi, theta


@dataclass
class EmChain:
    """Outcome of one EM run."""

    pi: np.ndarray
    theta: np.ndarray
    loglik: float
    trace: list[float]
    converged: bool
    iterations: int
    pi_sum_error: float = 0.0
    error: DegenerateClass | None = None


def run_em(
    patterns: np.ndarray,
    counts: np.ndarray,
    degree: int,
    init_resp: np.ndarray,
    *,
    tol: float = EM_TOL,
    max_iter: int = EM_MAX_ITER,
) -> list[EmChain]:
    """Run a batch of EM chains on distinct trajectories.

    Parameters
    ----------
    patterns : (U, K) distinct treatment trajectories
    counts : (U,) number of subjects with each trajectory
    init_resp : (R, U, J) initial responsibilities, one slice per chain

    Each chain starts with an M-step from its responsibilities and then
    alternates E- and M-steps until the relative log-likelihood change drops
    below ``tol`` or ``max_iter`` iterations have run. A chain whose mixing
    proportion falls below 1e-4 stops with a :class:`DegenerateClass` error.
    ``trace`` holds the observed-data log-likelihood after every M-step.
    """
    P = np.asarray(patterns, dtype=float)
    c = np.asarray(counts, dtype=float)
    resp = np.asarray(init_resp, dtype=float)
    R, U, J = resp.shape
    K = P.shape[1]
    n = c.sum()
    T = time_design(K, degree)
    d = degree + 1

    pi = np.empty((R, J))
    theta = np.zeros((R, J, d))
    traces: list[list[float]] = [[] for _ in range(R)]
    errors: list[DegenerateClass | None] = [None] * R
    pi_err = np.zeros(R)
    converged = np.zeros(R, dtype=bool)
    iters = np.zeros(R, dtype=int)
    active = np.ones(R, dtype=bool)
    ll_prev = np.full(R, np.nan)

    def m_update(idx: np.ndarray, Z: np.ndarray, warm: bool) -> np.ndarray:
        """M-step for chains ``idx``; returns the subset that did not collapse."""
        Zc = Z * c[None, :, None]
        tot = Zc.sum(axis=1)
        succ = np.einsum("ruj,uk->rjk", Zc, P)
        new_pi = tot / n
        pi_err[idx] = np.maximum(pi_err[idx], np.abs(new_pi.sum(axis=1) - 1.0))
        bad = np.any(new_pi < DEGENERATE_PI, axis=1)
        for r, b, p in zip(idx, bad, new_pi):
            if b:
                errors[r] = DegenerateClass("a latent class collapsed", pi=p.tolist())
                active[r] = False
        good = ~bad
        idx, succ, tot = idx[good], succ[good], tot[good]
        if idx.size:
            start = theta[idx].reshape(-1, d) if warm else None
            coef, _, _ = fit_binomial_batch(
                T,
                succ.reshape(-1, K),
                (tot[:, :, None] - succ).reshape(-1, K),
                start,
            )
            theta[idx] = coef.reshape(idx.size, J, d)
            pi[idx] = new_pi[good]
        return idx

    idx = m_update(np.arange(R), resp, warm=False)
    while idx.size:
        lp1, lp0 = _log_bernoulli(theta[idx], K)
        with np.errstate(divide="ignore"):
            logw = np.log(pi[idx])[:, None, :] + np.einsum("uk,rjk->ruj", P, lp1) + np.einsum(
                "uk,rjk->ruj", 1 - P, lp0
            )
        lse = logsumexp(logw, axis=2)
        ll = lse @ c
        for k, r in enumerate(idx):
            traces[r].append(float(ll[k]))
        iters[idx] += 1
        rel = np.abs(ll - ll_prev[idx]) / np.maximum(np.abs(ll_prev[idx]), 1e-300)
        ll_prev[idx] = ll
        done = rel < tol
        converged[idx[done]] = True
        capped = iters[idx] >= max_iter
        stop = done | capped
        active[idx[stop]] = False
        keep = ~stop
        idx, logw, lse = idx[keep], logw[keep], lse[keep]
        if not idx.size:
            break
        Z = np.exp(logw - lse[:, :, None])
        idx = m_update(idx, Z, warm=True)

    chains = []
    for r in range(R):
        chains.append(
            EmChain(
                pi=pi[r].copy(),
                theta=theta[r].copy(),
                loglik=traces[r][-1] if traces[r] else -np.inf,
                trace=traces[r],
                converged=bool(converged[r]),
                iterations=int(iters[r]),
                pi_sum_error=float(pi_err[r]),
                error=errors[r],
            )
        )
    return chains


def _populated(chain: EmChain, patterns: np.ndarray, K: int) -> bool:
    m = LcgmModel(chain.pi, chain.theta, K, chain.loglik, 0)
    J = chain.pi.shape[0]
    return np.unique(assign_groups(e_step(m, patterns))).size == J


def canonical_order(model: LcgmModel) -> LcgmModel:
    """Relabel classes by increasing mean fitted treatment probability."""
    order = np.argsort(model.class_probabilities().mean(axis=1), kind="stable")
    return replace(model, pi=model.pi[order], theta=model.theta[order])


def fit_lcgm(
    treatment,
    J: int,
    degree: int = DEFAULT_DEGREE,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
    *,
    tol: float = EM_TOL,
    max_iter: int = EM_MAX_ITER,
    require_populated: bool = True,
) -> tuple[LcgmModel, np.ndarray]:
    """Fit a J-class LCGM by multi-start EM.

    Restart ``r`` draws Dirichlet(1, ..., 1) initial responsibilities for every
    distinct trajectory from ``numpy.random.default_rng([seed, r])``; subjects
    sharing a trajectory share a start, which keeps the fit invariant to subject
    order. The chain with the largest final log-likelihood wins (lowest restart
    index on ties) and its classes are put in canonical order. With
    ``require_populated`` only chains in which every class is the posterior
    argmax of at least one observed trajectory are eligible: a class that no
    subject is assigned to cannot enter a group-based working model.

    Returns the model and the posterior matrix of the input rows.
    """
    a = np.asarray(treatment)
    if a.ndim != 2:
        raise DomainError("treatment must be an n x K matrix")
    n, K = a.shape
    if J < 1 or degree < 0 or restarts < 1:
        raise DomainError("need J >= 1, degree >= 0, restarts >= 1", J=J, degree=degree)
    n_params = (J - 1) + J * (degree + 1)
    if n_params >= n:
        raise DomainError("too many parameters for the sample size", n_params=n_params, n=n)
    patterns, counts = np.unique(a.astype(np.int8), axis=0, return_counts=True)
    U = patterns.shape[0]
    init = np.stack([np.random.default_rng([seed, r]).dirichlet(np.ones(J), size=U) for r in range(restarts)])
    chains = run_em(patterns, counts, degree, init, tol=tol, max_iter=max_iter)
    ok = [(r, ch) for r, ch in enumerate(chains) if ch.error is None]
    if not ok:
        raise DegenerateClass("every EM restart collapsed a class", J=J, restarts=restarts)
    if require_populated:
        ok = [(r, ch) for r, ch in ok if _populated(ch, patterns, K)]
        if not ok:
            raise DegenerateClass("no EM restart left every class populated", J=J, restarts=restarts)
    best_r, best = max(ok, key=lambda rc: (rc[1].loglik, -rc[0]))
    model = canonical_order(
        LcgmModel(
            pi=best.pi,
            theta=best.theta,
            K=K,
            loglik=best.loglik,
            n_obs=n,
            converged=best.converged,
            iterations=best.iterations,
            trace=tuple(best.trace),
        )
    )
    return model, e_step(model, a)


def assign_groups(Z) -> np.ndarray:
    """Hard labels 1..J by largest posterior; ties go to the smaller label."""
    return np.argmax(np.asarray(Z), axis=1) + 1


def bic(model: LcgmModel, n: int) -> float:
    return -2.0 * model.loglik + model.n_params * np.log(n)
