"""True projection parameter for a fitted LCGM, from counterfactual draws."""
from __future__ import annotations

import numpy as np

from trajmsm.errors import ConfigError, EmptyGroup, MonotoneLikelihood
from trajmsm.iptw import TreatmentMechanism
from trajmsm.lcgm import LcgmModel, assign_groups, e_step
from trajmsm.msm import COX_MAX_ITER, COX_TOL, group_design
from trajmsm.numerics import MAX_HALVINGS, SEPARATION_NORM, fit_logistic, fit_wls, within_rounding
from trajmsm.simulation.config import ScenarioConfig
from trajmsm.simulation.dgp import CounterfactualTable, counterfactual_table


def regime_weights(codes, stabilized: bool, numerator: TreatmentMechanism | None = None, baseline=None) -> np.ndarray:
    """Projection weight of each regime: 1, or the fitted numerator probability."""
    if not stabilized:
        return np.ones(len(codes))
    if numerator is None:
        raise ConfigError("stabilized projection needs the fitted numerator model")
    return numerator.numerator_trajectory_prob(codes, baseline)


def true_projection(
    config: ScenarioConfig,
    model: LcgmModel,
    stabilized: bool,
    M: int | None = None,
    seed: int = 0,
    *,
    numerator: TreatmentMechanism | None = None,
    baseline=None,
    table: CounterfactualTable | None = None,
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Project the counterfactual regime means onto the group working model.

    Every regime is assigned to a group by the LCGM posterior argmax and
    weighted by :func:`regime_weights`; the working model is then fitted to the
    counterfactual outcomes (weighted least squares, weighted logistic on the
    regime means, or weighted Cox on the pooled survival draws with weight
    lambda/M per draw). ``table`` reuses precomputed counterfactuals.

    Returns ``(beta, names)``.
    """
    if table is None:
        table = counterfactual_table(config, M or config.oracle_m, seed)
    codes = table.codes
    groups = assign_groups(e_step(model, codes))
    J = model.J
    lam = regime_weights(codes, stabilized, numerator, baseline)
    mass = np.bincount(groups, weights=lam, minlength=J + 1)[1:]
    if np.any(mass <= 0):
        raise EmptyGroup("a trajectory group receives no regime weight",
                         groups=[int(j) + 1 for j in np.flatnonzero(mass <= 0)])
    if config.outcome == "continuous":
        X, names = group_design(groups, J)
        return fit_wls(X, table.means, lam).coef, names
    if config.outcome == "binary":
        X, names = group_design(groups, J)
        mu = table.means
        fit = fit_logistic(np.vstack([X, X]), np.r_[np.ones(len(mu)), np.zeros(len(mu))],
                           np.r_[lam * mu, lam * (1 - mu)])
        return fit.coef, names
    names = tuple(f"Group {j}" for j in range(2, J + 1))
    return grouped_cox(table, groups, lam / table.M, J), names


def grouped_cox(table: CounterfactualTable, groups: np.ndarray, c: np.ndarray, J: int) -> np.ndarray:
    """Breslow Cox fit on the pooled draws when the only covariate is the group.

    Draw ``i`` of regime ``r`` has weight ``c[r]`` and covariate group
    ``groups[r]``. The at-risk weight of each group at each event time is
    accumulated once, after which every Newton step costs O(events x J)
    instead of O(draws). Group 1 is the reference, as in the pooled fit.
    """
    t = table.draw_time
    g = groups[table.draw_regime] - 1
    w = c[table.draw_regime]
    ev = np.flatnonzero(table.draw_event > 0)
    first = np.searchsorted(t, t[ev], side="left")
    A = np.empty((ev.size, J))
    for j in range(J):
        # weighted count at risk in group j, from each tied block's first index
        A[:, j] = np.cumsum((w * (g == j))[::-1])[::-1][first]
    dw = w[ev]
    D = np.bincount(g[ev], weights=dw, minlength=J)

    def evaluate(beta):
        b = np.r_[0.0, beta]
        s = A * np.exp(b - b.max())
        S0 = s.sum(axis=1)
        p = s / S0[:, None]
        ll = float(D @ b - dw @ (np.log(S0) + b.max()))
        score = (D - dw @ p)[1:]
        pp = p[:, 1:]
        info = np.diag(dw @ pp) - (pp * dw[:, None]).T @ pp
        return ll, score, info

    beta = np.zeros(J - 1)
    ll, score, info = evaluate(beta)
    polished = False
    for _ in range(COX_MAX_ITER):
        step = np.linalg.lstsq(info, score, rcond=None)[0]
        for h in range(MAX_HALVINGS + 1):
            cand = beta + step * 0.5**h
            ll_c, score_c, info_c = evaluate(cand)
            if ll_c >= ll:
                break
            if h == 0 and within_rounding(ll, ll_c, ev.size) and (
                np.max(np.abs(score_c)) < np.max(np.abs(score))
            ):
                break
        else:
            break
        delta = ll_c - ll
        beta, ll, score, info = cand, ll_c, score_c, info_c
        if abs(delta) < COX_TOL:
            if polished:
                break
            polished = True
    next_step = np.linalg.lstsq(info, score, rcond=None)[0]
    if np.linalg.norm(beta) > SEPARATION_NORM or np.max(np.abs(next_step), initial=0) > 0.5:
        raise MonotoneLikelihood("projection partial likelihood has no finite maximum", coef=beta.tolist())
    return beta
