"""Data-generating process with treatment-confounder feedback and its
counterfactual (fixed-regime) version."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from trajmsm.data import OutcomeColumn, TrajectoryPanel, enumerate_trajectories
from trajmsm.errors import ConfigError
from trajmsm.simulation.config import DgpCoefficients, ScenarioConfig

POSITIVITY_BOUNDS = (0.05, 0.95)


def check_positivity(dgp: DgpCoefficients) -> None:
    lo, hi = POSITIVITY_BOUNDS
    for l in (0, 1):
        for a in (0, 1):
            p = float(expit(dgp.alpha0 + dgp.alpha_L * l + dgp.alpha_A * a))
            if not lo <= p <= hi:
                raise ConfigError(
                    "treatment probability violates positivity bounds",
                    L=l, A_prev=a, probability=p,
                )


def _confounder_step(rng, dgp, l_prev, a_prev):
    p = expit(dgp.gamma0 + dgp.gamma_A * a_prev + dgp.gamma_L * l_prev)
    return (rng.random(p.shape) < p).astype(float)


def _survival_times(rng, dgp, a, l, K):
    """Piecewise-exponential event times over unit intervals, censored at K."""
    hazard = dgp.h0 * np.exp(dgp.beta_A * a + dgp.beta_L * l)
    cum = np.cumsum(hazard, axis=-1)
    e = rng.exponential(size=hazard.shape[:-1])
    interval = np.sum(cum < e[..., None], axis=-1)  # 0-based interval of the event
    event = interval < K
    k = np.minimum(interval, K - 1)
    before = np.take_along_axis(cum, k[..., None], axis=-1)[..., 0] - np.take_along_axis(
        hazard, k[..., None], axis=-1
    )[..., 0]
    h = np.take_along_axis(hazard, k[..., None], axis=-1)[..., 0]
    t = np.where(event, k + (e - before) / h, float(K))
    return t, event.astype(float)


def generate_panel(config: ScenarioConfig, replicate_seed) -> TrajectoryPanel:
    """Draw one simulated panel.

    Per subject: L_1 ~ Bernoulli(0.5); A_1 from the treatment logistic with
    A_0 = 0; then for t >= 2, L_t given (A_{t-1}, L_{t-1}) and A_t given
    (L_t, A_{t-1}). V = L_1. The outcome is drawn last, so panels for
    different outcome kinds share their treatment and covariate paths.
    """
    dgp = config.dgp
    check_positivity(dgp)
    rng = np.random.default_rng(replicate_seed)
    n, K = config.n, config.K
    L = np.empty((n, K))
    A = np.empty((n, K))
    L[:, 0] = (rng.random(n) < 0.5).astype(float)
    a_prev = np.zeros(n)
    for t in range(K):
        if t > 0:
            L[:, t] = _confounder_step(rng, dgp, L[:, t - 1], a_prev)
        p = expit(dgp.alpha0 + dgp.alpha_L * L[:, t] + dgp.alpha_A * a_prev)
        A[:, t] = (rng.random(n) < p).astype(float)
        a_prev = A[:, t]
    linear = dgp.beta_A * A.sum(axis=1) + dgp.beta_L * L.sum(axis=1)
    if config.outcome == "continuous":
        outcome = OutcomeColumn("continuous", linear + rng.standard_normal(n))
    elif config.outcome == "binary":
        outcome = OutcomeColumn("binary", (rng.random(n) < expit(dgp.eta0 + linear)).astype(float))
    else:
        t, ev = _survival_times(rng, dgp, A, L, K)
        outcome = OutcomeColumn("survival", t, ev)
    width = len(str(n))
    return TrajectoryPanel(
        ids=tuple(f"{i + 1:0{width}d}" for i in range(n)),
        treatment=A.astype(np.int8),
        covariates=L[:, :, None],
        baseline=L[:, :1],
        outcome=outcome,
    )


@dataclass(frozen=True)
class CounterfactualOutcome:
    """Counterfactual outcome summary for one fixed regime.

    ``mean`` is E[Y^a] for continuous/binary outcomes and the mean follow-up
    time min(T^a, K) for survival, which also carries the draws.
    """

    code: tuple[int, ...]
    mean: float
    time: np.ndarray | None = None
    event: np.ndarray | None = None


def simulate_confounders(dgp: DgpCoefficients, code, M: int, rng) -> np.ndarray:
    """M draws of the confounder path with treatment fixed to ``code``."""
    code = np.asarray(code, dtype=float)
    K = code.shape[0]
    L = np.empty((M, K))
    L[:, 0] = (rng.random(M) < 0.5).astype(float)
    for t in range(1, K):
        L[:, t] = _confounder_step(rng, dgp, L[:, t - 1], np.full(M, code[t - 1]))
    return L


def generate_counterfactual_means(
    config: ScenarioConfig,
    code,
    M: int,
    seed,
    *,
    rao_blackwell: bool = True,
) -> CounterfactualOutcome:
    """Monte Carlo counterfactual outcome under the fixed regime ``code``.

    With ``rao_blackwell`` the continuous and binary means average the
    conditional mean of Y given each simulated confounder path instead of a
    noisy outcome draw; the estimate stays unbiased with lower variance.
    """
    if M < 10_000:
        raise ConfigError("counterfactual Monte Carlo size must be at least 1e4", M=M)
    dgp = config.dgp
    code = np.asarray(code, dtype=float)
    rng = np.random.default_rng(seed)
    L = simulate_confounders(dgp, code, M, rng)
    linear = dgp.beta_A * code.sum() + dgp.beta_L * L.sum(axis=1)
    key = tuple(int(c) for c in code)
    if config.outcome == "continuous":
        y = linear if rao_blackwell else linear + rng.standard_normal(M)
        return CounterfactualOutcome(key, float(y.mean()))
    if config.outcome == "binary":
        p = expit(dgp.eta0 + linear)
        y = p if rao_blackwell else (rng.random(M) < p).astype(float)
        return CounterfactualOutcome(key, float(y.mean()))
    t, ev = _survival_times(rng, dgp, np.broadcast_to(code, L.shape), L, code.shape[0])
    return CounterfactualOutcome(key, float(t.mean()), t, ev)


@dataclass(frozen=True)
class CounterfactualTable:
    """Counterfactual outcomes for every regime, shared across replicates.

    Survival draws are pooled (regime index per draw) and sorted by time.
    """

    codes: np.ndarray
    means: np.ndarray
    M: int
    draw_regime: np.ndarray | None = None
    draw_time: np.ndarray | None = None
    draw_event: np.ndarray | None = None


def counterfactual_table(config: ScenarioConfig, M: int, seed: int) -> CounterfactualTable:
    """Simulate every regime; regime ``k`` uses the stream ``(seed, k)``."""
    codes = enumerate_trajectories(config.K)
    outs = [generate_counterfactual_means(config, c, M, [seed, k]) for k, c in enumerate(codes)]
    means = np.array([o.mean for o in outs])
    if config.outcome != "survival":
        return CounterfactualTable(codes, means, M)
    regime = np.repeat(np.arange(len(codes)), M)
    time = np.concatenate([o.time for o in outs])
    event = np.concatenate([o.event for o in outs])
    order = np.argsort(time, kind="stable")
    return CounterfactualTable(codes, means, M, regime[order], time[order], event[order])
