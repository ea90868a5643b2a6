"""Working marginal structural models of outcome on trajectory group.

Continuous and binary outcomes are fitted by weighted estimating equations
with an independence working correlation (one record per subject); survival
outcomes by a weighted Cox model with Breslow ties. Every fit carries a robust
sandwich covariance that treats the weights as known.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from trajmsm.data import TrajectoryPanel
from trajmsm.errors import DomainError, MonotoneLikelihood, NoEvents, RankDeficient, Separation
from trajmsm.iptw import WeightVector
from trajmsm.numerics import (
    MAX_HALVINGS,
    SEPARATION_NORM,
    fit_logistic,
    fit_multinomial,
    fit_wls,
    sandwich,
    within_rounding,
)

METHODS = ("iptw-unstab", "iptw-stab", "crude", "baseline_adj", "tvc_adj", "iptgw")
ALTERNATIVES = ("crude", "baseline_adj", "tvc_adj", "iptgw")
COX_TOL = 1e-10
COX_MAX_ITER = 100


def confidence_intervals(fit: MsmFit, level: float = 0.95) -> np.ndarray:
    """Wald intervals ``beta_j -/+ z * se_j`` as a p x 2 array."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    z = norm.ppf(0.5 + level / 2)
    half = z * fit.se
    return np.column_stack([fit.beta - half, fit.beta + half])


@dataclass(frozen=True)
class MsmFit:
    beta: np.ndarray
    names: tuple[str, ...]
    sandwich: np.ndarray
    method: str
    converged: bool = True

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.sandwich), 0.0, None))

    @property
    def ci(self) -> np.ndarray:
        return confidence_intervals(self)

    def to_dict(self) -> dict:
        ci = self.ci
        return {
            "method": self.method,
            "beta": dict(zip(self.names, self.beta.tolist())),
            "se": dict(zip(self.names, self.se.tolist())),
            "ci": {nm: [lo, hi] for nm, (lo, hi) in zip(self.names, ci.tolist())},
            "converged": self.converged,
        }


def _weights(w, n: int) -> np.ndarray:
    if w is None:
        return np.ones(n)
    arr = np.asarray(w.w if isinstance(w, WeightVector) else w, dtype=float)
    if arr.shape != (n,):
        raise DomainError("weight vector length differs from the data", n=n)
    return arr


def group_design(
    labels,
    J: int | None = None,
    V=None,
    *,
    intercept: bool = True,
    interactions: bool = False,
    v_names=None,
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Design with dummies for groups 2..J (group 1 is the reference)."""
    labels = np.asarray(labels, dtype=int)
    J = int(labels.max()) if J is None else J
    if labels.min() < 1 or labels.max() > J:
        raise DomainError("group labels must lie in 1..J", J=J)
    cols = [np.ones(labels.size)] if intercept else []
    names = ["Intercept"] if intercept else []
    dummies = [(labels == j).astype(float) for j in range(2, J + 1)]
    cols += dummies
    names += [f"Group {j}" for j in range(2, J + 1)]
    if V is not None:
        V = np.asarray(V, dtype=float).reshape(labels.size, -1)
        vn = list(v_names) if v_names is not None else [f"V{k + 1}" for k in range(V.shape[1])]
        for k in range(V.shape[1]):
            cols.append(V[:, k])
            names.append(vn[k])
        if interactions:
            for j, dj in zip(range(2, J + 1), dummies):
                for k in range(V.shape[1]):
                    cols.append(dj * V[:, k])
                    names.append(f"Group {j}:{vn[k]}")
    if not cols:
        raise DomainError("empty working-model design")
    return np.column_stack(cols), tuple(names)


def _check_groups(X: np.ndarray, w: np.ndarray, names) -> None:
    pos = w > 0
    for k, nm in enumerate(names):
        if nm.startswith("Group ") and ":" not in nm and not np.any(X[pos, k] != 0):
            raise RankDeficient(f"{nm} has no subjects with positive weight", group=nm)


def fit_msm_continuous(labels, V, y, w=None, *, J=None, interactions=False, method="iptw", v_names=None) -> MsmFit:
    """Weighted least-squares working model with robust sandwich covariance.

    Bread ``sum w x x'``, meat ``sum w^2 x x' r^2``.
    """
    X, names = group_design(labels, J, V, interactions=interactions, v_names=v_names)
    y = np.asarray(y, dtype=float)
    w = _weights(w, y.size)
    _check_groups(X, w, names)
    fit = fit_wls(X, y, w)
    r = y - X @ fit.coef
    meat = (X * (w * r) [:, None]).T @ (X * (w * r)[:, None])
    return MsmFit(fit.coef, names, sandwich(fit.info, meat), method, True)


def fit_msm_binary(labels, V, y, w=None, *, J=None, interactions=False, method="iptw", v_names=None) -> MsmFit:
    """Weighted logistic working model (weighted GEE, independence)."""
    X, names = group_design(labels, J, V, interactions=interactions, v_names=v_names)
    y = np.asarray(y, dtype=float)
    w = _weights(w, y.size)
    _check_groups(X, w, names)
    pos = w > 0
    if np.all(y[pos] == y[pos][0]):
        raise Separation("binary outcome takes a single value", value=float(y[pos][0]))
    fit = fit_logistic(X, y, w)
    p = expit(X @ fit.coef)
    u = X * (w * (y - p))[:, None]
    return MsmFit(fit.coef, names, sandwich(fit.info, u.T @ u), method, fit.converged)


@dataclass(frozen=True)
class CoxFit:
    coef: np.ndarray
    info: np.ndarray
    loglik: float
    converged: bool
    iterations: int
    history: tuple[float, ...]
    robust_cov: np.ndarray | None = None


class _RiskSets:
    """Sorted survival data with tie bookkeeping for Breslow sums."""

    def __init__(self, X, time, event, w):
        order = np.argsort(time, kind="stable")
        self.t = np.asarray(time, dtype=float)[order]
        self.d = np.asarray(event, dtype=float)[order]
        self.X = np.asarray(X, dtype=float)[order]
        self.w = np.asarray(w, dtype=float)[order]
        self.order = order
        # first / last sorted index sharing each subject's time
        self.first = np.searchsorted(self.t, self.t, side="left")
        self.last = np.searchsorted(self.t, self.t, side="right") - 1
        self.ev = np.flatnonzero(self.d > 0)

    @staticmethod
    def _revcum(a: np.ndarray) -> np.ndarray:
        return np.cumsum(a[::-1], axis=0)[::-1]

    def evaluate(self, beta, need_info=True):
        X, w, ev = self.X, self.w, self.ev
        eta = X @ beta
        # subtract a constant for overflow safety; cancels in every ratio
        shift = eta.max() if eta.size else 0.0
        r = w * np.exp(eta - shift)
        fe = self.first[ev]
        S0 = self._revcum(r)[fe]
        S1 = self._revcum(r[:, None] * X)[fe]
        dw = self.d[ev] * w[ev]
        xbar = S1 / S0[:, None]
        ll = float(np.sum(dw * (eta[ev] - shift - np.log(S0))))
        score = (dw[:, None] * (X[ev] - xbar)).sum(axis=0)
        if not need_info:
            return ll, score, None
        p = X.shape[1]
        S2 = self._revcum(r[:, None, None] * (X[:, :, None] * X[:, None, :]))[fe]
        info = np.einsum("e,eab->ab", dw, S2 / S0[:, None, None] - xbar[:, :, None] * xbar[:, None, :])
        return ll, score, info.reshape(p, p)

    def score_residuals(self, beta) -> np.ndarray:
        """Per-subject score contributions (sorted order), unweighted."""
        X, w, ev = self.X, self.w, self.ev
        eta = X @ beta
        shift = eta.max()
        r = w * np.exp(eta - shift)
        S0 = self._revcum(r)[self.first]
        S1 = self._revcum(r[:, None] * X)[self.first]
        xbar = S1 / S0[:, None]
        a = np.zeros(len(w))
        b = np.zeros_like(X)
        a[ev] = (self.d * w)[ev] / S0[ev]
        b[ev] = a[ev, None] * xbar[ev]
        ca = np.cumsum(a)[self.last]
        cb = np.cumsum(b, axis=0)[self.last]
        er = np.exp(eta - shift)
        return self.d[:, None] * (X - xbar) - er[:, None] * (X * ca[:, None] - cb)


def fit_cox(X, time, event, w=None, *, robust: bool = True, max_iter: int = COX_MAX_ITER) -> CoxFit:
    """Weighted Cox partial likelihood, Breslow ties, Newton-Raphson from 0.

    Maximizes ``sum_i d_i w_i [x_i'b - log sum_{l: t_l >= t_i} w_l exp(x_l'b)]``
    until the absolute log-likelihood change drops below 1e-10. ``robust``
    adds the subject-level sandwich built from weighted score residuals.

    Raises
    ------
    NoEvents
        No event with positive weight.
    MonotoneLikelihood
        The partial likelihood keeps increasing along some direction: detected
        when a coefficient exceeds 1e3 in norm or when, after convergence, a
        further Newton step would still move a coefficient by more than 0.5.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=float)
    w = np.ones(time.size) if w is None else np.asarray(w, dtype=float)
    keep = w > 0
    X, time, event, w = X[keep], time[keep], event[keep], w[keep]
    if not np.any(event > 0):
        raise NoEvents("no events among positive-weight subjects")
    p = X.shape[1]
    if np.linalg.matrix_rank(X) < p:
        raise RankDeficient("Cox design is rank deficient", columns=p)
    rs = _RiskSets(X, time, event, w)
    beta = np.zeros(p)
    ll, score, info = rs.evaluate(beta)
    history = [ll]
    converged = polished = False
    it = 0
    while it < max_iter:
        step = np.linalg.lstsq(info, score, rcond=None)[0]
        for h in range(MAX_HALVINGS + 1):
            cand = beta + step * 0.5**h
            ll_c, score_c, info_c = rs.evaluate(cand)
            if ll_c >= ll:
                break
            if h == 0 and within_rounding(ll, ll_c, rs.ev.size) and (
                np.max(np.abs(score_c)) < np.max(np.abs(score))
            ):
                break
        else:
            converged = True
            break
        it += 1
        delta = ll_c - ll
        beta, ll, score, info = cand, ll_c, score_c, info_c
        history.append(ll)
        if abs(delta) < COX_TOL:
            converged = True
            if polished:
                break
            # one extra Newton step, as in the logistic solver
            polished = True
    next_step = np.linalg.lstsq(info, score, rcond=None)[0]
    if np.linalg.norm(beta) > SEPARATION_NORM or np.max(np.abs(next_step)) > 0.5:
        raise MonotoneLikelihood("Cox partial likelihood has no finite maximum",
                                 coef=beta.tolist())
    robust_cov = None
    if robust:
        U = rs.score_residuals(beta)
        Uw = U * rs.w[:, None]
        robust_cov = sandwich(info, Uw.T @ Uw)
    return CoxFit(beta, info, ll, converged, it, tuple(history), robust_cov)


def fit_msm_survival(time, event, labels, w=None, *, V=None, J=None, method="iptw", v_names=None) -> MsmFit:
    """Weighted Cox working model on group dummies (no intercept)."""
    X, names = group_design(labels, J, V, intercept=False, v_names=v_names)
    time = np.asarray(time, dtype=float)
    w = _weights(w, time.size)
    _check_groups(X, w, names)
    fit = fit_cox(X, time, event, w)
    return MsmFit(fit.coef, names, fit.robust_cov, method, fit.converged)


def fit_msm(panel: TrajectoryPanel, labels, weights=None, *, J=None, method=None, adjust_baseline=False) -> MsmFit:
    """Dispatch on the panel's outcome kind.

    ``method`` defaults to ``iptw-stab``/``iptw-unstab`` from the weight
    vector's provenance (``crude`` when unweighted).
    """
    if method is None:
        if weights is None:
            method = "crude"
        elif isinstance(weights, WeightVector):
            method = "iptw-stab" if weights.stabilized else "iptw-unstab"
        else:
            method = "iptw"
    V = panel.baseline if adjust_baseline and panel.q else None
    vn = panel.baseline_names if V is not None else None
    out = panel.outcome
    if out.kind == "continuous":
        return fit_msm_continuous(labels, V, out.y, weights, J=J, method=method, v_names=vn)
    if out.kind == "binary":
        return fit_msm_binary(labels, V, out.y, weights, J=J, method=method, v_names=vn)
    return fit_msm_survival(out.y, out.event, labels, weights, V=V, J=J, method=method, v_names=vn)


def _dedupe(cols: list[np.ndarray], names: list[str]):
    kept_c, kept_n = [], []
    for c, nm in zip(cols, names):
        if any(np.array_equal(c, k) for k in kept_c):
            continue
        kept_c.append(c)
        kept_n.append(nm)
    return (np.column_stack(kept_c) if kept_c else None), kept_n


def iptgw_weights(panel: TrajectoryPanel, labels, J: int | None = None) -> np.ndarray:
    """Stabilized inverse probability of trajectory-group weights.

    ``P(C_i) / P(C_i | V_i)`` with the denominator from a multinomial logit of
    group on baseline covariates and the numerator the sample group share.
    """
    labels = np.asarray(labels, dtype=int)
    J = int(labels.max()) if J is None else J
    X = np.column_stack([np.ones(panel.n), panel.baseline]) if panel.q else np.ones((panel.n, 1))
    fit = fit_multinomial(X, labels)
    eta = np.column_stack([np.zeros(panel.n), X @ fit.coef.T])
    eta -= eta.max(axis=1, keepdims=True)
    probs = np.exp(eta)
    probs /= probs.sum(axis=1, keepdims=True)
    cond = probs[np.arange(panel.n), labels - 1]
    marginal = np.bincount(labels, minlength=J + 1)[1:] / panel.n
    return marginal[labels - 1] / cond


def fit_alternative(panel: TrajectoryPanel, labels, method: str, J: int | None = None) -> MsmFit:
    """Comparison estimators that do not handle time-dependent confounding.

    ``crude``: unweighted regression on group. ``baseline_adj``: adds the
    baseline covariates V. ``tvc_adj``: adds V and every L_t main effect.
    ``iptgw``: weights by :func:`iptgw_weights`.
    """
    if method not in ALTERNATIVES:
        raise DomainError(f"unknown alternative method {method!r}", method=method)
    labels = np.asarray(labels, dtype=int)
    extra, extra_names, w = None, None, None
    if method in ("baseline_adj", "tvc_adj"):
        cols = [panel.baseline[:, k] for k in range(panel.q)]
        names = list(panel.baseline_names)
        if method == "tvc_adj":
            for t in range(panel.K):
                for j, nm in enumerate(panel.covariate_names):
                    cols.append(panel.covariates[:, t, j])
                    names.append(f"{nm}_t{t + 1}")
        extra, extra_names = _dedupe(cols, names)
    elif method == "iptgw":
        w = iptgw_weights(panel, labels, J)
    out = panel.outcome
    if out.kind == "continuous":
        return fit_msm_continuous(labels, extra, out.y, w, J=J, method=method, v_names=extra_names)
    if out.kind == "binary":
        return fit_msm_binary(labels, extra, out.y, w, J=J, method=method, v_names=extra_names)
    return fit_msm_survival(out.y, out.event, labels, w, V=extra, J=J, method=method, v_names=extra_names)
