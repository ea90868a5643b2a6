"""Treatment mechanism and inverse-probability-of-treatment weights."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from trajmsm.data import TrajectoryPanel
from trajmsm.errors import ConfigError, Separation
from trajmsm.numerics import PROB_CLAMP, fit_logistic

FULL_HISTORY_MAX_K = 5


@dataclass(frozen=True)
class HistorySpec:
    """Which history terms enter the per-period treatment models.

    ``treatment_lags`` / ``covariate_lags`` count past periods; ``None`` means
    the full history (main effects only, allowed for K <= 5). The denominator
    always includes the current covariates L_t.
    """

    treatment_lags: int | None = 1
    covariate_lags: int | None = 1
    denominator_baseline: bool = True
    numerator_baseline: bool = True


@dataclass(frozen=True)
class PeriodModel:
    names: tuple[str, ...]
    coef: np.ndarray


@dataclass(frozen=True)
class TreatmentMechanism:
    spec: HistorySpec
    K: int
    denominator: tuple[PeriodModel, ...]
    numerator: tuple[PeriodModel, ...]

    def predict_denominator(self, panel: TrajectoryPanel) -> np.ndarray:
        """n x K matrix of fitted P(A_t = 1 | past treatment, covariates)."""
        return _predict(self.denominator, panel.treatment, panel.covariates, panel.baseline,
                        self.spec, numerator=False)

    def predict_numerator(self, panel: TrajectoryPanel) -> np.ndarray:
        """n x K matrix of fitted P(A_t = 1 | past treatment, V)."""
        return _predict(self.numerator, panel.treatment, None, panel.baseline, self.spec,
                        numerator=True)

    def numerator_trajectory_prob(self, codes, baseline=None) -> np.ndarray:
        """Fitted numerator probability of each regime in ``codes``.

        When the numerator conditions on V the product over periods is averaged
        over the rows of ``baseline`` (the empirical distribution of V).
        """
        codes = np.atleast_2d(np.asarray(codes))
        uses_v = self.spec.numerator_baseline and any(
            nm.startswith("V") for pm in self.numerator for nm in pm.names
        )
        if not uses_v:
            b = np.empty((codes.shape[0], 0))
            probs = _predict(self.numerator, codes, None, b, self.spec, numerator=True)
            return np.exp(_log_observed(probs, codes).sum(axis=1))
        baseline = np.asarray(baseline, dtype=float)
        out = np.zeros(codes.shape[0])
        for v in baseline:
            b = np.repeat(v[None, :], codes.shape[0], axis=0)
            probs = _predict(self.numerator, codes, None, b, self.spec, numerator=True)
            out += np.exp(_log_observed(probs, codes).sum(axis=1))
        return out / baseline.shape[0]


def _lag_range(t: int, lags: int | None) -> range:
    """Past periods (1-based) entering the model for period ``t``."""
    lo = 1 if lags is None else max(1, t - lags)
    return range(t - 1, lo - 1, -1)


def _columns(t, treatment, covariates, baseline, spec, numerator, cov_names=None, base_names=None):
    n = treatment.shape[0]
    cols = {"Intercept": np.ones(n)}
    for s in _lag_range(t, spec.treatment_lags):
        cols[f"A{s}"] = treatment[:, s - 1].astype(float)
    if not numerator:
        p = covariates.shape[2]
        cov_names = cov_names or [f"L{j + 1}" for j in range(p)]
        periods = [t] + ([] if t == 1 else list(_lag_range(t, spec.covariate_lags)))
        for s in periods:
            for j in range(p):
                cols[f"{cov_names[j]}_t{s}"] = covariates[:, s - 1, j]
    if numerator and spec.numerator_baseline or not numerator and spec.denominator_baseline:
        base_names = base_names or [f"V{j + 1}" for j in range(baseline.shape[1])]
        for j in range(baseline.shape[1]):
            cols[base_names[j]] = baseline[:, j]
    return cols


def _select(cols: dict[str, np.ndarray]) -> tuple[str, ...]:
    """Drop constant columns (besides the intercept) and exact duplicates."""
    kept: list[str] = []
    for name, v in cols.items():
        if name != "Intercept" and np.all(v == v[0]):
            continue
        if any(np.array_equal(v, cols[k]) for k in kept):
            continue
        kept.append(name)
    return tuple(kept)


def _predict(models, treatment, covariates, baseline, spec, numerator) -> np.ndarray:
    treatment = np.asarray(treatment)
    out = np.empty(treatment.shape, dtype=float)
    for t, pm in enumerate(models, start=1):
        cols = _columns(t, treatment, covariates, baseline, spec, numerator)
        X = np.column_stack([cols[nm] for nm in pm.names])
        out[:, t - 1] = expit(X @ pm.coef)
    return out


def _log_observed(prob1: np.ndarray, treatment: np.ndarray) -> np.ndarray:
    p = np.clip(prob1, PROB_CLAMP, 1 - PROB_CLAMP)
    return np.where(np.asarray(treatment) == 1, np.log(p), np.log1p(-p))


def fit_treatment_mechanism(panel: TrajectoryPanel, history_spec: HistorySpec | None = None) -> TreatmentMechanism:
    """Fit per-period logistic models for the weight denominator and numerator.

    Default denominator for period t: A_{t-1}, L_t, L_{t-1}, V (period 1: L_1,
    which contains V). Default numerator: A_{t-1}, V (period 1: intercept and V).
    Constant and duplicated columns are dropped before fitting.
    """
    spec = history_spec or HistorySpec()
    K = panel.K
    if (spec.treatment_lags is None or spec.covariate_lags is None) and K > FULL_HISTORY_MAX_K:
        raise ConfigError("full-history treatment models are limited to K <= 5", K=K)
    den, num = [], []
    for t in range(1, K + 1):
        y = panel.treatment[:, t - 1]
        for which, store in (("denominator", den), ("numerator", num)):
            cols = _columns(t, panel.treatment, panel.covariates, panel.baseline, spec,
                            which == "numerator")
            names = _select(cols)
            X = np.column_stack([cols[nm] for nm in names])
            try:
                fit = fit_logistic(X, y)
            except Separation as exc:
                raise Separation(
                    f"treatment model separated at period {t}", period=t, model=which, **exc.context
                ) from exc
            store.append(PeriodModel(names, fit.coef))
    return TreatmentMechanism(spec, K, tuple(den), tuple(num))


@dataclass(frozen=True)
class WeightVector:
    w: np.ndarray
    stabilized: bool
    truncation: tuple[float, float] | None = None
    ids: tuple[str, ...] = ()

    def __len__(self) -> int:
        return self.w.shape[0]

    def scaled(self, c: float) -> WeightVector:
        return WeightVector(self.w * c, self.stabilized, self.truncation, self.ids)


def compute_weights(
    panel: TrajectoryPanel,
    mechanism: TreatmentMechanism,
    stabilized: bool = True,
    truncation: tuple[float, float] | None = None,
) -> WeightVector:
    """Per-subject IPT weights from the observed trajectories.

    Unstabilized: prod_t 1 / P(A_it | history). Stabilized: the same product
    with numerator prod_t P(A_it | A_{i,t-1}, V). ``truncation`` clips the
    result at the given empirical percentiles, e.g. ``(1, 99)``.
    """
    a = panel.treatment
    logw = -_log_observed(mechanism.predict_denominator(panel), a).sum(axis=1)
    if stabilized:
        logw += _log_observed(mechanism.predict_numerator(panel), a).sum(axis=1)
    w = np.exp(logw)
    if truncation is not None:
        lo, hi = truncation
        if not 0 <= lo <= hi <= 100:
            raise ConfigError("truncation percentiles must satisfy 0 <= low <= high <= 100")
        w = np.clip(w, np.percentile(w, lo), np.percentile(w, hi))
    return WeightVector(w, bool(stabilized), truncation, panel.ids)


def weight_diagnostics(weights: WeightVector | np.ndarray) -> dict[str, float]:
    w = np.asarray(weights.w if isinstance(weights, WeightVector) else weights, dtype=float)
    if w.size == 0:
        raise ValueError("no weights")
    mean = float(w.mean())
    return {
        "n": int(w.size),
        "mean": mean,
        "sd": float(w.std(ddof=1)) if w.size > 1 else 0.0,
        "min": float(w.min()),
        "max": float(w.max()),
        "p1": float(np.percentile(w, 1)),
        "p50": float(np.percentile(w, 50)),
        "p99": float(np.percentile(w, 99)),
        # weights beyond 20x the mean dominate estimating equations
        "n_extreme": int(np.sum(w > 20 * mean)),
    }
