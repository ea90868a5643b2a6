"""Panel data structures and long-format I/O."""
from __future__ import annotations

import re
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import pandas as pd

from trajmsm.errors import DomainError, MissingCell, RaggedPanel

OUTCOME_KINDS = ("continuous", "binary", "survival")
MAX_ENUM_K = 20

_L_COL = re.compile(r"^L(\d+)$")
_V_COL = re.compile(r"^V(\d+)$")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class OutcomeColumn:
    """Observed outcome, one value per subject.

    For ``kind == "survival"`` ``y`` holds the follow-up time min(T, U) and
    ``event`` the event indicator.
    """

    kind: str
    y: np.ndarray
    event: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.kind not in OUTCOME_KINDS:
            raise DomainError(f"unknown outcome kind {self.kind!r}", kind=self.kind)
        y = np.asarray(self.y, dtype=float)
        if y.ndim != 1 or not np.all(np.isfinite(y)):
            raise DomainError("outcome must be a finite 1-d array")
        event = None
        if self.kind == "binary" and not np.all((y == 0) | (y == 1)):
            raise DomainError("binary outcome must be 0/1")
        if self.kind == "survival":
            if self.event is None:
                raise DomainError("survival outcome needs an event indicator")
            event = np.asarray(self.event, dtype=float)
            if event.shape != y.shape:
                raise DomainError("event indicator length differs from follow-up times")
            if np.any(y <= 0):
                raise DomainError("survival times must be positive")
            if not np.all((event == 0) | (event == 1)):
                raise DomainError("event indicator must be 0/1")
            event = _frozen(event.astype(np.int8))
        object.__setattr__(self, "y", _frozen(y))
        object.__setattr__(self, "event", event)

    def __len__(self) -> int:
        return self.y.shape[0]

    def take(self, idx: np.ndarray) -> OutcomeColumn:
        ev = None if self.event is None else self.event[idx]
        return OutcomeColumn(self.kind, self.y[idx], ev)

    def equals(self, other: OutcomeColumn) -> bool:
        if self.kind != other.kind or not np.array_equal(self.y, other.y):
            return False
        if self.event is None:
            return other.event is None
        return other.event is not None and np.array_equal(self.event, other.event)


@dataclass(frozen=True, eq=False)
class TrajectoryPanel:
    """Complete n x K panel of binary treatments with confounders and outcome.

    ``covariates`` is n x K x p (time-varying confounders, period 1 first) and
    ``baseline`` is n x q. Every baseline column must also appear among the
    period-1 covariates.
    """

    ids: tuple[str, ...]
    treatment: np.ndarray
    covariates: np.ndarray
    baseline: np.ndarray
    outcome: OutcomeColumn
    covariate_names: tuple[str, ...] = field(default=())
    baseline_names: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        a = np.asarray(self.treatment)
        if a.ndim != 2:
            raise DomainError("treatment must be an n x K matrix")
        n, K = a.shape
        if n < 1 or K < 1:
            raise DomainError("panel needs at least one subject and one period", n=n, K=K)
        if not np.all((a == 0) | (a == 1)):
            raise DomainError("treatment entries must be 0/1")
        cov = np.asarray(self.covariates, dtype=float)
        if cov.ndim == 2:
            cov = cov[:, :, None]
        if cov.shape[:2] != (n, K) or cov.shape[2] < 1:
            raise DomainError("covariates must be n x K x p with p >= 1", shape=cov.shape)
        base = np.asarray(self.baseline, dtype=float).reshape(n, -1)
        if not (np.all(np.isfinite(cov)) and np.all(np.isfinite(base))):
            raise DomainError("covariates must be finite")
        if len(self.outcome) != n:
            raise DomainError("outcome length differs from subject count")
        if len(self.ids) != n or len(set(self.ids)) != n:
            raise DomainError("ids must be unique, one per subject")
        for k in range(base.shape[1]):
            if not any(np.array_equal(base[:, k], cov[:, 0, j]) for j in range(cov.shape[2])):
                raise DomainError(
                    "baseline covariates must be a subset of the period-1 covariates",
                    column=k,
                )
        p, q = cov.shape[2], base.shape[1]
        cnames = tuple(self.covariate_names) or tuple(f"L{j + 1}" for j in range(p))
        bnames = tuple(self.baseline_names) or tuple(f"V{j + 1}" for j in range(q))
        if len(cnames) != p or len(bnames) != q:
            raise DomainError("column name count mismatch")
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        object.__setattr__(self, "treatment", _frozen(a.astype(np.int8)))
        object.__setattr__(self, "covariates", _frozen(cov))
        object.__setattr__(self, "baseline", _frozen(base))
        object.__setattr__(self, "covariate_names", cnames)
        object.__setattr__(self, "baseline_names", bnames)

    @property
    def n(self) -> int:
        return self.treatment.shape[0]

    @property
    def K(self) -> int:
        return self.treatment.shape[1]

    @property
    def p(self) -> int:
        return self.covariates.shape[2]

    @property
    def q(self) -> int:
        return self.baseline.shape[1]

    def take(self, idx: Iterable[int]) -> TrajectoryPanel:
        """Subset or reorder subjects."""
        idx = np.asarray(list(idx), dtype=int)
        return TrajectoryPanel(
            ids=tuple(self.ids[i] for i in idx),
            treatment=self.treatment[idx],
            covariates=self.covariates[idx],
            baseline=self.baseline[idx],
            outcome=self.outcome.take(idx),
            covariate_names=self.covariate_names,
            baseline_names=self.baseline_names,
        )

    def equals(self, other: TrajectoryPanel) -> bool:
        return (
            self.ids == other.ids
            and np.array_equal(self.treatment, other.treatment)
            and np.array_equal(self.covariates, other.covariates)
            and np.array_equal(self.baseline, other.baseline)
            and self.covariate_names == other.covariate_names
            and self.baseline_names == other.baseline_names
            and self.outcome.equals(other.outcome)
        )

    def to_long(self) -> pd.DataFrame:
        """Serialize to the long format accepted by :func:`build_panel`."""
        n, K = self.n, self.K
        cols: dict[str, Any] = {
            "id": np.repeat(np.asarray(self.ids, dtype=object), K),
            "time": np.tile(np.arange(1, K + 1), n),
            "A": self.treatment.reshape(-1).astype(int),
        }
        for j, name in enumerate(self.covariate_names):
            cols[name] = self.covariates[:, :, j].reshape(-1)
        for j, name in enumerate(self.baseline_names):
            cols[name] = np.repeat(self.baseline[:, j], K)
        if self.outcome.kind == "survival":
            cols["time_to_event"] = np.repeat(self.outcome.y, K)
            cols["event"] = np.repeat(self.outcome.event, K).astype(int)
        else:
            y = self.outcome.y
            cols["Y"] = np.repeat(y.astype(int) if self.outcome.kind == "binary" else y, K)
        return pd.DataFrame(cols)


def _numeric(frame: pd.DataFrame, col: str) -> np.ndarray:
    values = pd.to_numeric(frame[col], errors="coerce").to_numpy(dtype=float)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        row = int(bad[0])
        raise DomainError(f"non-numeric or missing value in column {col!r}", row=row, column=col)
    return values


def _sorted_cols(columns: Iterable[str], pattern: re.Pattern[str]) -> list[str]:
    found = [c for c in columns if pattern.match(c)]
    return sorted(found, key=lambda c: int(pattern.match(c).group(1)))


def build_panel(
    records: pd.DataFrame | Iterable[Mapping[str, Any]],
    outcome: str | None = None,
) -> TrajectoryPanel:
    """Build a validated panel from long-format rows.

    Parameters
    ----------
    records : DataFrame or iterable of mappings
        One row per (id, time) with columns ``id, time, A, L1..Lp, V1..Vq`` and
        either ``Y`` or ``time_to_event, event``.
    outcome : {"continuous", "binary", "survival"}, optional
        Outcome kind. Inferred from the columns when omitted (``survival`` if
        ``time_to_event`` is present, else ``continuous``).

    Errors name the offending record through ``context["row"]`` (0-based
    position among the records).
    """
    frame = records if isinstance(records, pd.DataFrame) else pd.DataFrame(list(records))
    frame = frame.reset_index(drop=True)
    if outcome is None:
        outcome = "survival" if "time_to_event" in frame.columns else "continuous"
    if outcome not in OUTCOME_KINDS:
        raise DomainError(f"unknown outcome kind {outcome!r}")
    ycols = ["time_to_event", "event"] if outcome == "survival" else ["Y"]
    lcols = _sorted_cols(frame.columns, _L_COL)
    vcols = _sorted_cols(frame.columns, _V_COL)
    missing = [c for c in ["id", "time", "A", *ycols] if c not in frame.columns]
    if missing or not lcols:
        raise DomainError("missing required columns", missing=missing or ["L1"])
    if frame.empty:
        raise DomainError("no records")

    ids = frame["id"].astype(str).to_numpy()
    if np.any(frame["id"].isna().to_numpy()):
        raise DomainError("missing id", row=int(np.flatnonzero(frame["id"].isna().to_numpy())[0]))
    time = _numeric(frame, "time")
    bad = np.flatnonzero((time != np.round(time)) | (time < 1))
    if bad.size:
        raise DomainError("time must be a positive integer", row=int(bad[0]), column="time")
    time = time.astype(int)
    a = _numeric(frame, "A")
    bad = np.flatnonzero((a != 0) & (a != 1))
    if bad.size:
        raise DomainError("treatment must be 0/1", row=int(bad[0]), column="A", value=a[bad[0]])

    uniq, first = np.unique(ids, return_index=True)
    order = uniq[np.argsort(first)]
    index = {u: k for k, u in enumerate(order)}
    subj = np.fromiter((index[i] for i in ids), dtype=int, count=len(ids))
    n = len(order)
    present_times = np.unique(time)
    K = int(present_times.max())
    if not np.array_equal(present_times, np.arange(1, K + 1)):
        raise RaggedPanel("time values do not form 1..K", times=present_times.tolist())

    cell = subj * K + (time - 1)
    seen = np.full(n * K, -1)
    dup = np.flatnonzero(np.bincount(cell, minlength=n * K) > 1)
    if dup.size:
        rows = np.flatnonzero(cell == dup[0])
        raise DomainError(
            "duplicate (id, time) record",
            row=int(rows[1]),
            id=str(order[dup[0] // K]),
            time=int(dup[0] % K + 1),
        )
    seen[cell] = np.arange(len(cell))
    hole = np.flatnonzero(seen < 0)
    if hole.size:
        raise MissingCell(
            "panel is missing a cell",
            id=str(order[hole[0] // K]),
            time=int(hole[0] % K + 1),
        )
    if K < 2:
        raise RaggedPanel("panel needs at least two periods", K=K)
    pos = seen.reshape(n, K)

    def per_subject_constant(col: str, values: np.ndarray) -> np.ndarray:
        grid = values[pos]
        diff = np.flatnonzero(np.any(grid != grid[:, :1], axis=1))
        if diff.size:
            s = diff[0]
            t = int(np.flatnonzero(grid[s] != grid[s, 0])[0])
            raise DomainError(
                f"column {col!r} must be constant within id", row=int(pos[s, t]), column=col
            )
        return grid[:, 0]

    treatment = a[pos].astype(np.int8)
    covariates = np.stack([_numeric(frame, c)[pos] for c in lcols], axis=2)
    baseline = np.column_stack([per_subject_constant(c, _numeric(frame, c)) for c in vcols]) if vcols else np.empty((n, 0))

    if outcome == "survival":
        y = per_subject_constant("time_to_event", _numeric(frame, "time_to_event"))
        ev = per_subject_constant("event", _numeric(frame, "event"))
        bad = np.flatnonzero(y <= 0)
        if bad.size:
            raise DomainError("survival time must be positive", row=int(pos[bad[0], 0]), column="time_to_event")
        bad = np.flatnonzero((ev != 0) & (ev != 1))
        if bad.size:
            raise DomainError("event must be 0/1", row=int(pos[bad[0], 0]), column="event")
        out = OutcomeColumn("survival", y, ev)
    else:
        y = per_subject_constant("Y", _numeric(frame, "Y"))
        if outcome == "binary":
            bad = np.flatnonzero((y != 0) & (y != 1))
            if bad.size:
                raise DomainError("binary outcome must be 0/1", row=int(pos[bad[0], 0]), column="Y")
        out = OutcomeColumn(outcome, y)

    return TrajectoryPanel(
        ids=tuple(order.tolist()),
        treatment=treatment,
        covariates=covariates,
        baseline=baseline,
        outcome=out,
        covariate_names=tuple(lcols),
        baseline_names=tuple(vcols),
    )


def read_panel_csv(path, outcome: str | None = None) -> TrajectoryPanel:
    """Read a long-format CSV file. Ids are kept as strings."""
    try:
        frame = pd.read_csv(path, dtype={"id": str}, float_precision="round_trip")
    except pd.errors.ParserError as exc:
        found = re.search(r"line (\d+)", str(exc))
        context = {"line": int(found.group(1))} if found else {}
        if found:
            context["row"] = context["line"] - 2
        raise DomainError(f"malformed CSV: {exc}".strip(), **context) from exc
    except pd.errors.EmptyDataError as exc:
        raise DomainError("CSV file is empty") from exc
    return build_panel(frame, outcome=outcome)


def enumerate_trajectories(K: int) -> np.ndarray:
    """All 2**K binary treatment regimes, one per row, in lexicographic order.

    Row 0 is the all-zero regime and the last row the all-one regime.
    """
    if not (1 <= K <= MAX_ENUM_K):
        raise DomainError(f"K must lie in [1, {MAX_ENUM_K}]", K=K)
    codes = np.arange(2**K, dtype=np.int64)
    shifts = np.arange(K - 1, -1, -1, dtype=np.int64)
    return ((codes[:, None] >> shifts) & 1).astype(np.int8)


def trajectory_index(treatment: np.ndarray) -> np.ndarray:
    """Position of each row of ``treatment`` in :func:`enumerate_trajectories` order."""
    a = np.asarray(treatment, dtype=np.int64)
    K = a.shape[1]
    return a @ (1 << np.arange(K - 1, -1, -1, dtype=np.int64))
