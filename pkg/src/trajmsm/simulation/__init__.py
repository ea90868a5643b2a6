"""Simulation harness: data generation, counterfactual truth and replicate loop."""
from trajmsm.simulation.config import DgpCoefficients, ScenarioConfig, expand_grid, load_configs
from trajmsm.simulation.dgp import (
    CounterfactualOutcome,
    CounterfactualTable,
    counterfactual_table,
    generate_counterfactual_means,
    generate_panel,
)
from trajmsm.simulation.runner import ScenarioResult, aggregate, run_replicate, run_scenario
from trajmsm.simulation.truth import regime_weights, true_projection

__all__ = [
    "CounterfactualOutcome",
    "CounterfactualTable",
    "DgpCoefficients",
    "ScenarioConfig",
    "ScenarioResult",
    "aggregate",
    "counterfactual_table",
    "expand_grid",
    "generate_counterfactual_means",
    "generate_panel",
    "load_configs",
    "regime_weights",
    "run_replicate",
    "run_scenario",
    "true_projection",
]
