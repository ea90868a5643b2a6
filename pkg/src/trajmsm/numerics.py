"""Deterministic fitting kernels: weighted logistic (IRLS), multinomial logit,
weighted least squares, plus a batched grouped-binomial Newton solver used in
the EM hot loop.

All fitters return a :class:`GlmFit` and record the objective after every
accepted iteration in ``history`` so monotonicity can be audited.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.special import expit

from trajmsm.errors import EmptyClass, RankDeficient, Separation

PROB_CLAMP = 1e-12
REL_TOL = 1e-10
SCORE_TOL = 1e-8
MAX_ITER = 100
MAX_HALVINGS = 20
SEPARATION_NORM = 1e3
# linear predictors beyond this trigger the exact separation test
_ETA_SUSPICIOUS = 15.0


@dataclass(frozen=True)
class GlmFit:
    coef: np.ndarray
    info: np.ndarray
    converged: bool
    iterations: int
    loglik: float
    history: tuple[float, ...] = ()

    @property
    def cov(self) -> np.ndarray:
        """Model-based covariance, the inverse observed information."""
        return np.linalg.inv(self.info)


def _clamp(p: np.ndarray) -> np.ndarray:
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def _check_inputs(X, y, w):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if d < 1:
        raise ValueError("design needs at least one column")
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    if y.shape != (n,) or w.shape != (n,):
        raise ValueError("X, y and w have inconsistent lengths")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and nonnegative")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("X and y must be finite")
    return X, y, w


def _solve(info: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(info, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(info, rhs, rcond=None)[0]


def within_rounding(ll: float, ll_new: float, n_terms: int) -> bool:
    """Whether a log-likelihood decrease is within summation rounding error.

    Near the optimum a Newton step changes the objective by far less than
    the rounding error of an ``n_terms`` sum, so a full step may appear to
    lower it. Solvers then accept the step if it shrinks the score.
    """
    return ll - ll_new <= 4 * n_terms * np.finfo(float).eps * max(1.0, abs(ll))


def bernoulli_loglik(eta: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    p = _clamp(expit(eta))
    return float(np.sum(w * (y * np.log(p) + (1.0 - y) * np.log1p(-p))))


def is_separated(X: np.ndarray, y: np.ndarray) -> bool:
    """Exact test for complete or quasi-complete separation.

    Solves the linear program max sum_i s_i x_i'd subject to s_i x_i'd >= 0 and
    |d_k| <= 1, with s_i = +1 for events and -1 otherwise. A strictly positive
    optimum means some direction pushes the likelihood to its supremum without
    bound, i.e. the maximum likelihood estimate does not exist.
    """
    s = np.where(np.asarray(y) > 0.5, 1.0, -1.0)
    SX = s[:, None] * X
    scale = np.abs(X).max(axis=0)
    scale[scale == 0] = 1.0
    SX = SX / scale
    res = linprog(
        c=-SX.sum(axis=0),
        A_ub=-SX,
        b_ub=np.zeros(len(s)),
        bounds=[(-1.0, 1.0)] * X.shape[1],
        method="highs",
    )
    if res.status != 0:
        return False
    return -res.fun > 1e-7 * max(1.0, len(s))


def fit_logistic(
    X,
    y,
    w=None,
    ridge: float = 0.0,
    *,
    start=None,
    max_iter: int = MAX_ITER,
    separation_threshold: float = SEPARATION_NORM,
) -> GlmFit:
    """Weighted logistic regression by Newton/IRLS with step halving.

    Maximizes ``sum w_i log f(y_i | x_i'b) - ridge/2 * |b|^2``. Iteration stops
    when the relative change in the objective falls below 1e-10 (followed by
    one polishing Newton step) or the largest score component below 1e-8.
    Rows with zero weight are ignored.

    Raises
    ------
    RankDeficient
        Unpenalized fit on a design without full column rank.
    Separation
        Unpenalized fit whose maximum likelihood estimate does not exist
        (coefficients above ``separation_threshold`` or an exact LP
        separation certificate). Callers may retry with a small ridge.
    """
    X, y, w = _check_inputs(X, y, w)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("logistic responses must be 0/1")
    keep = w > 0
    X, y, w = X[keep], y[keep], w[keep]
    d = X.shape[1]
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    if ridge == 0 and (X.shape[0] < d or np.linalg.matrix_rank(X) < d):
        raise RankDeficient("logistic design is rank deficient", columns=d)

    def objective(b):
        return bernoulli_loglik(X @ b, y, w) - 0.5 * ridge * float(b @ b)

    beta = np.zeros(d) if start is None else np.array(start, dtype=float)
    ll = objective(beta)
    history = [ll]
    converged = polished = False
    it = 0
    penalty = ridge * np.eye(d)
    while it < max_iter:
        p = expit(X @ beta)
        score = X.T @ (w * (y - p)) - ridge * beta
        if np.max(np.abs(score)) < SCORE_TOL:
            converged = True
            break
        info = (X * (w * p * (1.0 - p))[:, None]).T @ X + penalty
        step = _solve(info, score)
        for h in range(MAX_HALVINGS + 1):
            cand = beta + step * 0.5**h
            ll_c = objective(cand)
            if ll_c >= ll:
                break
            if h == 0 and within_rounding(ll, ll_c, X.shape[0]):
                s_c = X.T @ (w * (y - expit(X @ cand))) - ridge * cand
                if np.max(np.abs(s_c)) < np.max(np.abs(score)):
                    break
        else:
            converged = np.max(np.abs(score)) < np.sqrt(SCORE_TOL)
            break
        it += 1
        rel = abs(ll_c - ll) / max(abs(ll), 1e-300)
        beta, ll = cand, ll_c
        history.append(ll)
        if rel < REL_TOL:
            converged = True
            if polished:
                break
            # one more Newton step: quadratic convergence takes the
            # coefficients from ~sqrt(tol) to machine precision
            polished = True

    if ridge == 0:
        norm = float(np.linalg.norm(beta))
        if norm > separation_threshold or (
            np.max(np.abs(X @ beta)) > _ETA_SUSPICIOUS and is_separated(X, y)
        ):
            raise Separation("logistic likelihood has no finite maximum", coef_norm=norm)
    p = expit(X @ beta)
    info = (X * (w * p * (1.0 - p))[:, None]).T @ X + penalty
    return GlmFit(beta, info, bool(converged), it, ll, tuple(history))


def _multinomial_probs(X: np.ndarray, B: np.ndarray) -> np.ndarray:
    eta = np.column_stack([np.zeros(X.shape[0]), X @ B.T])
    eta -= eta.max(axis=1, keepdims=True)
    e = np.exp(eta)
    return e / e.sum(axis=1, keepdims=True)


def fit_multinomial(
    X,
    y,
    w=None,
    *,
    max_iter: int = MAX_ITER,
    separation_threshold: float = SEPARATION_NORM,
) -> GlmFit:
    """Weighted multinomial logit with reference class 1.

    ``y`` holds labels 1..J. Returns a :class:`GlmFit` whose ``coef`` is the
    (J-1) x d matrix of contrasts against class 1; ``info`` is the observed
    information of the row-major flattened coefficients.
    """
    X, yf, w = _check_inputs(X, y, w)
    labels = yf.astype(int)
    if not np.array_equal(labels, yf) or labels.min() < 1:
        raise ValueError("multinomial labels must be integers 1..J")
    keep = w > 0
    X, labels, w = X[keep], labels[keep], w[keep]
    J = int(labels.max())
    counts = np.bincount(labels, minlength=J + 1)[1:]
    if np.any(counts == 0):
        raise EmptyClass("a class has no positive-weight observations",
                         classes=[int(j) + 1 for j in np.flatnonzero(counts == 0)])
    n, d = X.shape
    if np.linalg.matrix_rank(X) < d:
        raise RankDeficient("multinomial design is rank deficient", columns=d)
    Y = np.zeros((n, J))
    Y[np.arange(n), labels - 1] = 1.0
    m = J - 1

    def objective(B):
        P = np.clip(_multinomial_probs(X, B), PROB_CLAMP, 1.0)
        return float(np.sum(w * np.log(P[np.arange(n), labels - 1])))

    def info_at(B):
        P = _multinomial_probs(X, B)[:, 1:]
        # H[(k,a),(l,b)] = sum_i w_i x_ia x_ib (p_ik [k==l] - p_ik p_il)
        inner = np.einsum("ik,kl->ikl", P, np.eye(m)) - np.einsum("ik,il->ikl", P, P)
        H = np.einsum("i,ia,ib,ikl->kalb", w, X, X, inner)
        return H.reshape(m * d, m * d)

    B = np.zeros((m, d))
    ll = objective(B)
    history = [ll]
    converged = polished = False
    it = 0
    while it < max_iter:
        P = _multinomial_probs(X, B)
        score = ((w[:, None] * (Y - P))[:, 1:]).T @ X
        if np.max(np.abs(score)) < SCORE_TOL:
            converged = True
            break
        step = _solve(info_at(B), score.reshape(-1)).reshape(m, d)
        for h in range(MAX_HALVINGS + 1):
            cand = B + step * 0.5**h
            ll_c = objective(cand)
            if ll_c >= ll:
                break
        else:
            converged = np.max(np.abs(score)) < np.sqrt(SCORE_TOL)
            break
        it += 1
        rel = abs(ll_c - ll) / max(abs(ll), 1e-300)
        B, ll = cand, ll_c
        history.append(ll)
        if rel < REL_TOL:
            converged = True
            if polished:
                break
            polished = True
    norm = float(np.linalg.norm(B))
    if norm > separation_threshold:
        raise Separation("multinomial likelihood has no finite maximum", coef_norm=norm)
    return GlmFit(B, info_at(B), bool(converged), it, ll, tuple(history))


def fit_wls(X, y, w=None) -> GlmFit:
    """Weighted least squares, ``argmin sum w_i (y_i - x_i'b)^2``.

    Solved in one step by an SVD-based least-squares solve of the
    square-root-weighted system. ``loglik`` is ``-0.5 * weighted RSS``.
    """
    X, y, w = _check_inputs(X, y, w)
    keep = w > 0
    X, y, w = X[keep], y[keep], w[keep]
    d = X.shape[1]
    sw = np.sqrt(w)
    coef, _, rank, _ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    if rank < d:
        raise RankDeficient("least-squares design is rank deficient", columns=d, rank=int(rank))
    ll0 = -0.5 * float(np.sum(w * y**2))
    ll = -0.5 * float(np.sum(w * (y - X @ coef) ** 2))
    info = (X * w[:, None]).T @ X
    return GlmFit(coef, info, True, 1, ll, (ll0, ll))


def sandwich(bread: np.ndarray, meat: np.ndarray) -> np.ndarray:
    """Robust covariance ``B^-1 M B^-T``, symmetrized."""
    try:
        binv = np.linalg.inv(bread)
    except np.linalg.LinAlgError as exc:
        raise RankDeficient("bread matrix is singular") from exc
    cov = binv @ meat @ binv.T
    return 0.5 * (cov + cov.T)


def binomial_loglik(design: np.ndarray, coef: np.ndarray, succ: np.ndarray, fail: np.ndarray) -> np.ndarray:
    """Grouped-binomial log-likelihood for a batch of coefficient vectors.

    ``design`` is m x d, ``coef`` B x d, ``succ``/``fail`` B x m weights.
    """
    p = _clamp(expit(coef @ design.T))
    return np.sum(succ * np.log(p) + fail * np.log1p(-p), axis=1)


def fit_binomial_batch(
    design: np.ndarray,
    succ: np.ndarray,
    fail: np.ndarray,
    start: np.ndarray | None = None,
    *,
    max_iter: int = MAX_ITER,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Many small grouped-binomial logistic fits sharing one design.

    Equivalent to calling :func:`fit_logistic` on the 2m stacked rows
    ``(x_t, 1, succ_t)`` and ``(x_t, 0, fail_t)`` for every batch element,
    with the same Newton/step-halving/convergence rules. Returns
    ``(coef, loglik, converged)``.
    """
    design = np.asarray(design, dtype=float)
    succ = np.atleast_2d(np.asarray(succ, dtype=float))
    fail = np.atleast_2d(np.asarray(fail, dtype=float))
    B, d = succ.shape[0], design.shape[1]
    coef = np.zeros((B, d)) if start is None else np.array(start, dtype=float).reshape(B, d)
    tot = succ + fail
    ll = binomial_loglik(design, coef, succ, fail)
    active = np.ones(B, dtype=bool)
    converged = np.zeros(B, dtype=bool)
    polished = np.zeros(B, dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        b = coef[idx]
        p = expit(b @ design.T)
        score = (succ[idx] - tot[idx] * p) @ design
        done = np.max(np.abs(score), axis=1) < SCORE_TOL
        converged[idx[done]] = True
        active[idx[done]] = False
        keep = ~done
        idx, b, p, score = idx[keep], b[keep], p[keep], score[keep]
        if idx.size == 0:
            break
        wts = tot[idx] * p * (1.0 - p)
        info = np.einsum("bm,ma,mc->bac", wts, design, design)
        try:
            step = np.linalg.solve(info, score[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError:
            step = np.linalg.solve(info + 1e-8 * np.eye(d), score[:, :, None])[:, :, 0]
        new = b.copy()
        new_ll = ll[idx].copy()
        pending = np.ones(idx.size, dtype=bool)
        for h in range(MAX_HALVINGS + 1):
            sub = np.flatnonzero(pending)
            cand = b[sub] + step[sub] * 0.5**h
            ll_c = binomial_loglik(design, cand, succ[idx[sub]], fail[idx[sub]])
            ok = ll_c >= ll[idx[sub]]
            new[sub[ok]] = cand[ok]
            new_ll[sub[ok]] = ll_c[ok]
            pending[sub[ok]] = False
            if not pending.any():
                break
        stalled = pending
        old_ll = ll[idx]
        rel = np.abs(new_ll - old_ll) / np.maximum(np.abs(old_ll), 1e-300)
        coef[idx] = new
        ll[idx] = new_ll
        small = rel < REL_TOL
        fin = (small & polished[idx]) | stalled
        polished[idx[small]] = True
        converged[idx[fin]] = True
        active[idx[fin]] = False
    return coef, ll, converged
