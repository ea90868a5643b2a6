"""Replicate loop, aggregation and result serialization."""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from trajmsm import __version__
from trajmsm.errors import REPLICATE_FAILURES, TooManyFailures
from trajmsm.iptw import HistorySpec, compute_weights, fit_treatment_mechanism
from trajmsm.lcgm import assign_groups, fit_lcgm
from trajmsm.msm import fit_alternative, fit_msm
from trajmsm.simulation.config import ScenarioConfig
from trajmsm.simulation.dgp import CounterfactualTable, counterfactual_table, generate_panel
from trajmsm.simulation.truth import true_projection

#: Scenario weights and truth use V = empty in the working model, so the
#: numerator conditions on treatment history only.
SIM_HISTORY = HistorySpec(numerator_baseline=False)
# stream tags under (seed, replicate)
_PANEL, _LCGM = 0, 1


def target_of(method: str) -> str:
    """Which truth a method is scored against."""
    return "unstabilized" if method == "iptw-unstab" else "stabilized"


def replicate_seeds(seed: int, r: int) -> tuple[np.random.SeedSequence, int]:
    panel = np.random.SeedSequence([seed, r, _PANEL])
    lcgm = int(np.random.SeedSequence([seed, r, _LCGM]).generate_state(1)[0])
    return panel, lcgm


def run_replicate(config: ScenarioConfig, r: int, table: CounterfactualTable) -> dict:
    """One replicate: simulate, fit LCGM, compute truths, fit every method."""
    panel_ss, lcgm_seed = replicate_seeds(config.seed, r)
    try:
        panel = generate_panel(config, panel_ss)
        model, Z = fit_lcgm(panel.treatment, config.J, config.degree, config.restarts, lcgm_seed)
        labels = assign_groups(Z)
        mech = fit_treatment_mechanism(panel, SIM_HISTORY)
        truth = {}
        for target, stab in (("unstabilized", False), ("stabilized", True)):
            beta, names = true_projection(config, model, stab, numerator=mech, table=table)
            truth[target] = beta.tolist()
        estimates = {}
        for method in config.methods:
            if method in ("iptw-stab", "iptw-unstab"):
                w = compute_weights(panel, mech, stabilized=method == "iptw-stab")
                fit = fit_msm(panel, labels, w, J=config.J)
            else:
                fit = fit_alternative(panel, labels, method, J=config.J)
            ci = fit.ci
            estimates[method] = {
                "beta": fit.beta[: len(names)].tolist(),
                "low": ci[: len(names), 0].tolist(),
                "high": ci[: len(names), 1].tolist(),
                "converged": fit.converged,
            }
    except REPLICATE_FAILURES as exc:
        return {"replicate": r, "ok": False, "error": exc.to_dict()}
    return {
        "replicate": r,
        "ok": True,
        "names": list(names),
        "truth": truth,
        "estimates": estimates,
        "lcgm": {"pi": model.pi.tolist(), "loglik": model.loglik, "converged": model.converged},
    }


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    metrics: list[dict]
    records: list[dict] = field(repr=False)
    failures: list[dict]
    truth_mean: dict[str, dict[str, float]]

    @property
    def n_ok(self) -> int:
        return sum(r["ok"] for r in self.records)

    def metric(self, method: str, coefficient: str) -> dict:
        for row in self.metrics:
            if row["method"] == method and row["coefficient"] == coefficient:
                return row
        raise KeyError((method, coefficient))

    def to_dict(self) -> dict:
        return {
            "version": __version__,
            "config": self.config.to_dict(),
            "replicates_ok": self.n_ok,
            "failures": self.failures,
            "truth_mean": self.truth_mean,
            "metrics": self.metrics,
            "records": self.records,
        }


def aggregate(config: ScenarioConfig, records: list[dict]) -> ScenarioResult:
    """Bias, empirical SD and 95% CI coverage per method and coefficient.

    Records are consumed in replicate order so the summation order, and thus
    every float, is fixed.
    """
    records = sorted(records, key=lambda r: r["replicate"])
    ok = [r for r in records if r["ok"]]
    failures = [{"replicate": r["replicate"], **r["error"]} for r in records if not r["ok"]]
    metrics: list[dict] = []
    truth_mean: dict[str, dict[str, float]] = {}
    if ok:
        names = ok[0]["names"]
        for target in ("unstabilized", "stabilized"):
            tr = np.array([r["truth"][target] for r in ok])
            truth_mean[target] = dict(zip(names, tr.mean(axis=0).tolist()))
        for method in config.methods:
            est = np.array([r["estimates"][method]["beta"] for r in ok])
            lo = np.array([r["estimates"][method]["low"] for r in ok])
            hi = np.array([r["estimates"][method]["high"] for r in ok])
            tr = np.array([r["truth"][target_of(method)] for r in ok])
            covered = (lo <= tr) & (tr <= hi)
            for k, name in enumerate(names):
                metrics.append({
                    "method": method,
                    "coefficient": name,
                    "bias": float(np.mean(est[:, k] - tr[:, k])),
                    "sde": float(np.std(est[:, k], ddof=1)) if len(ok) > 1 else None,
                    "cp": float(np.mean(covered[:, k])),
                    "n": len(ok),
                })
    return ScenarioResult(config, metrics, records, failures, truth_mean)


_WORKER: dict = {}


def _init_worker(config: ScenarioConfig, table: CounterfactualTable) -> None:
    _WORKER["config"] = config
    _WORKER["table"] = table


def _work(r: int) -> dict:
    return run_replicate(_WORKER["config"], r, _WORKER["table"])


def run_scenario(config: ScenarioConfig, threads: int = 1, *, table: CounterfactualTable | None = None) -> ScenarioResult:
    """Run every replicate of ``config`` and aggregate.

    Replicate ``r`` draws from streams keyed by ``(seed, r)``, so results do not
    depend on ``threads``. Raises :class:`TooManyFailures` when more than
    ``max_failure_rate`` of the replicates fail.
    """
    if table is None:
        table = counterfactual_table(config, config.oracle_m, config.seed)
    R = config.replicates
    if threads <= 1:
        records = [run_replicate(config, r, table) for r in range(R)]
    else:
        with ProcessPoolExecutor(threads, initializer=_init_worker, initargs=(config, table)) as ex:
            records = list(ex.map(_work, range(R), chunksize=max(1, R // (4 * threads))))
    result = aggregate(config, records)
    if len(result.failures) > config.max_failure_rate * R:
        raise TooManyFailures(
            "too many failed replicates",
            scenario=config.label,
            failed=len(result.failures),
            replicates=R,
            codes=sorted({f["code"] for f in result.failures}),
        )
    return result


def dumps_result(result: ScenarioResult | list[ScenarioResult]) -> str:
    payload = [r.to_dict() for r in result] if isinstance(result, list) else result.to_dict()
    return json.dumps(payload, indent=2, sort_keys=False)


def table_csv(results: list[ScenarioResult]) -> str:
    """Metrics table; scenario columns are added when several scenarios are present."""
    grid = len(results) > 1
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    head = ["method", "coefficient", "bias", "sde", "cp"]
    writer.writerow((["outcome", "K", "J"] if grid else []) + head)
    for res in results:
        c = res.config
        for row in res.metrics:
            vals = [row["method"], row["coefficient"], f"{row['bias']:.6f}",
                    "" if row["sde"] is None else f"{row['sde']:.6f}", f"{row['cp']:.4f}"]
            writer.writerow(([c.outcome, c.K, c.J] if grid else []) + vals)
    return buf.getvalue()
