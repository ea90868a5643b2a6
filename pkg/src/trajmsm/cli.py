"""Command-line interface: ``trajmsm fit | simulate | replicate-tables | example-data``.

Exit codes: 0 success, 1 domain or configuration error, 2 I/O error. Errors are
printed to stderr as JSON ``{"code", "message", "context"}``.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from trajmsm import __version__
from trajmsm.data import read_panel_csv
from trajmsm.errors import ConfigError, TrajMsmError
from trajmsm.iptw import HistorySpec, compute_weights, fit_treatment_mechanism, weight_diagnostics
from trajmsm.lcgm import assign_groups, bic, fit_lcgm
from trajmsm.msm import fit_msm
from trajmsm.simulation.config import load_configs, with_replicates
from trajmsm.simulation.patterns import check_patterns, default_grid
from trajmsm.simulation.runner import dumps_result, run_scenario, table_csv

EXIT_OK, EXIT_DOMAIN, EXIT_IO = 0, 1, 2
EXAMPLE_CSV = "example_panel.csv"


@dataclass
class RunManifest:
    command: str
    config: str | None
    inputs: list[str]
    outputs: list[str]
    seed: int | None
    version: str = __version__
    started: str = ""
    duration_seconds: float = 0.0
    arguments: dict = field(default_factory=dict)


def atomic_write(path: Path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json(obj) -> str:
    return json.dumps(obj, indent=2, default=str) + "\n"


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def _threads(value: int | None) -> int:
    if value is not None:
        return value
    env = os.environ.get("TRAJMSM_THREADS")
    if env is None:
        return 1
    try:
        return max(1, int(env))
    except ValueError as exc:
        raise ConfigError("TRAJMSM_THREADS must be an integer", value=env) from exc


def _write_manifest(out: Path, manifest: RunManifest, t0: float) -> None:
    manifest.duration_seconds = round(time.perf_counter() - t0, 3)
    atomic_write(out / "manifest.json", _json(asdict(manifest)))


def cmd_fit(args) -> int:
    t0 = time.perf_counter()
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    panel = read_panel_csv(args.input, args.outcome)
    model, Z = fit_lcgm(panel.treatment, args.groups, args.degree, args.restarts, args.seed)
    labels = assign_groups(Z)
    spec = HistorySpec(numerator_baseline=args.adjust_baseline)
    mech = fit_treatment_mechanism(panel, spec)
    trunc = tuple(args.truncate) if args.truncate else None
    weights = compute_weights(panel, mech, stabilized=args.stabilized, truncation=trunc)
    fit = fit_msm(panel, labels, weights, J=args.groups, adjust_baseline=args.adjust_baseline)

    out = Path(args.out)
    lines = ["id,group,weight," + ",".join(f"posterior_{j}" for j in range(1, model.J + 1))]
    for i, sid in enumerate(panel.ids):
        post = ",".join(f"{p:.10g}" for p in Z[i])
        lines.append(f"{sid},{labels[i]},{weights.w[i]:.10g},{post}")
    diagnostics = {
        "weights": weight_diagnostics(weights),
        "stabilized": weights.stabilized,
        "truncation": list(trunc) if trunc else None,
        "group_sizes": {str(j): int(np.sum(labels == j)) for j in range(1, model.J + 1)},
        "lcgm_bic": bic(model, panel.n),
        "lcgm_converged": model.converged,
        "n": panel.n,
        "K": panel.K,
    }
    files = {
        "lcgm.json": _json(model.to_dict()),
        "weights.csv": "\n".join(lines) + "\n",
        "diagnostics.json": _json(diagnostics),
        "msm.json": _json(fit.to_dict()),
    }
    for name, text in files.items():
        atomic_write(out / name, text)
    _write_manifest(out, RunManifest("fit", None, [str(args.input)], sorted(files), args.seed,
                                     started=started, arguments=_plain(args)), t0)
    return EXIT_OK


def cmd_simulate(args) -> int:
    t0 = time.perf_counter()
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    configs = with_replicates(load_configs(args.config), args.replicates)
    threads = _threads(args.threads)
    results = [run_scenario(c, threads) for c in configs]
    out = Path(args.out)
    atomic_write(out / "results.json", dumps_result(results if len(results) > 1 else results[0]) + "\n")
    atomic_write(out / "table.csv", table_csv(results))
    _write_manifest(out, RunManifest("simulate", str(args.config), [str(args.config)],
                                     ["results.json", "table.csv"], configs[0].seed,
                                     started=started, arguments=_plain(args)), t0)
    return EXIT_OK


def cmd_replicate_tables(args) -> int:
    t0 = time.perf_counter()
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    threads = _threads(args.threads)
    grid = default_grid(args.replicates, args.seed)
    results = []
    for cfg in grid:
        print(f"running {cfg.label} (R={cfg.replicates})", file=sys.stderr, flush=True)
        results.append(run_scenario(cfg, threads))
    rows = check_patterns(results)
    out = Path(args.out)
    header = "check,scenario,method,coefficient,metric,value,bound,passed"
    body = [
        ",".join([r["check"], r["scenario"], r["method"], r["coefficient"], r["metric"],
                  f"{r['value']:.6f}", r["bound"], str(r["passed"]).lower()])
        for r in rows
    ]
    atomic_write(out / "comparison.csv", "\n".join([header, *body]) + "\n")
    atomic_write(out / "results.json", dumps_result(results) + "\n")
    atomic_write(out / "table.csv", table_csv(results))
    _write_manifest(out, RunManifest("replicate-tables", None, [],
                                     ["comparison.csv", "results.json", "table.csv"], args.seed,
                                     started=started, arguments=_plain(args)), t0)
    failed = [r for r in rows if not r["passed"]]
    for r in rows:
        mark = "PASS" if r["passed"] else "FAIL"
        print(f"{mark} {r['check']:<22} {r['scenario']:<24} {r['method']:<13} "
              f"{r['coefficient']:<9} {r['metric']}={r['value']:.3f} ({r['bound']})")
    return EXIT_DOMAIN if failed else EXIT_OK


def cmd_example_data(args) -> int:
    text = resources.files("trajmsm.datasets").joinpath(EXAMPLE_CSV).read_text()
    atomic_write(Path(args.out), text)
    return EXIT_OK


def _plain(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trajmsm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"trajmsm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit LCGM, weights and the working MSM on a CSV panel")
    p.add_argument("--input", required=True, type=Path, help="long-format CSV")
    p.add_argument("--outcome", choices=["continuous", "binary", "survival"], default=None)
    p.add_argument("--groups", type=int, required=True, help="number of trajectory groups J")
    p.add_argument("--degree", type=int, default=1, help="polynomial degree in time")
    p.add_argument("--stabilized", type=_bool, default=True, help="true or false")
    p.add_argument("--restarts", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--adjust-baseline", action="store_true",
                   help="condition the weight numerator and the working model on V")
    p.add_argument("--truncate", type=float, nargs=2, metavar=("LOW", "HIGH"),
                   help="clip weights at these percentiles")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="run simulation scenarios from a JSON config")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--threads", type=int, default=None, help="worker processes (default: TRAJMSM_THREADS or 1)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replicate-tables", help="run the default grid and check qualitative patterns")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_replicate_tables)

    p = sub.add_parser("example-data", help="write the bundled 200-subject example CSV")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=cmd_example_data)
    return parser


def _report(code: str, message: str, context: dict) -> None:
    print(json.dumps({"code": code, "message": message, "context": context}, default=str),
          file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TrajMsmError as exc:
        context = dict(exc.context)
        if "row" in context and "line" not in context and getattr(args, "input", None):
            # header is line 1, record 0 is line 2
            context["line"] = int(context["row"]) + 2
        _report(exc.code, exc.message, context)
        return EXIT_DOMAIN
    except OSError as exc:
        _report("io_error", str(exc), {"path": getattr(exc, "filename", None)})
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
