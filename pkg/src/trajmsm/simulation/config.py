"""Scenario configuration and JSON loading."""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from trajmsm.data import OUTCOME_KINDS
from trajmsm.errors import ConfigError
from trajmsm.msm import METHODS

#: Follow-up lengths and group counts of the full simulation design.
FULL_K = (3, 5, 10)
FULL_J = (3, 4, 5)


@dataclass(frozen=True)
class DgpCoefficients:
    """Coefficients of the binary treatment/confounder process and outcomes.

    Treatment: logit P(A_t=1) = alpha0 + alpha_L L_t + alpha_A A_{t-1}.
    Confounder: L_1 ~ Bernoulli(0.5); logit P(L_t=1) = gamma0 + gamma_A A_{t-1}
    + gamma_L L_{t-1}. Outcomes load on cumulative treatment and confounder
    (beta_A, beta_L); eta0 is the binary intercept and h0 the baseline hazard.
    """

    alpha0: float = -0.5
    alpha_L: float = 1.0
    alpha_A: float = 1.5
    gamma0: float = -0.5
    gamma_A: float = 1.0
    gamma_L: float = 0.8
    beta_A: float = 0.3
    beta_L: float = 0.4
    eta0: float = -1.0
    h0: float = 0.1


@dataclass(frozen=True)
class ScenarioConfig:
    outcome: str = "continuous"
    K: int = 3
    J: int = 3
    n: int = 1000
    replicates: int = 1000
    seed: int = 0
    dgp: DgpCoefficients = field(default_factory=DgpCoefficients)
    degree: int = 1
    methods: tuple[str, ...] = METHODS
    oracle_m: int = 20_000
    restarts: int = 20
    max_failure_rate: float = 0.10

    def __post_init__(self) -> None:
        if self.outcome not in OUTCOME_KINDS:
            raise ConfigError(f"unknown outcome {self.outcome!r}")
        for name in ("K", "J", "n", "replicates", "restarts"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.K < 2 or self.K > 20:
            raise ConfigError("K must lie in [2, 20]", K=self.K)
        if self.degree < 0:
            raise ConfigError("degree must be nonnegative")
        if self.oracle_m < 10_000:
            raise ConfigError("oracle Monte Carlo size must be at least 1e4", oracle_m=self.oracle_m)
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ConfigError("unknown or empty methods list", methods=list(self.methods))
        object.__setattr__(self, "methods", tuple(self.methods))

    @property
    def label(self) -> str:
        return f"{self.outcome}_K{self.K}_J{self.J}"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["methods"] = list(self.methods)
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> ScenarioConfig:
        raw = dict(raw)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError("unknown config keys", keys=sorted(unknown))
        dgp = raw.pop("dgp", {}) or {}
        dknown = {f.name for f in fields(DgpCoefficients)}
        if set(dgp) - dknown:
            raise ConfigError("unknown dgp keys", keys=sorted(set(dgp) - dknown))
        try:
            return cls(dgp=DgpCoefficients(**{k: float(v) for k, v in dgp.items()}), **raw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def expand_grid(raw: dict) -> list[ScenarioConfig]:
    """Scenario configs from a JSON object whose outcome/K/J may be lists."""
    axes = {k: raw.get(k, getattr(ScenarioConfig, k, None)) for k in ("outcome", "K", "J")}
    axes = {k: v if isinstance(v, list) else [v] for k, v in axes.items() if v is not None}
    base = {k: v for k, v in raw.items() if k not in axes}
    out = []
    for combo in itertools.product(*axes.values()):
        out.append(ScenarioConfig.from_dict({**base, **dict(zip(axes, combo))}))
    return out


def load_configs(path: str | Path) -> list[ScenarioConfig]:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return expand_grid(raw)


def with_replicates(configs: list[ScenarioConfig], replicates: int | None) -> list[ScenarioConfig]:
    if replicates is None:
        return configs
    return [replace(c, replicates=replicates) for c in configs]
