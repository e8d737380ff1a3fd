"""Tracking error: RMSE per trial and the bias/random split across repetitions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def tracking_error(actual, target) -> float:
    a = np.asarray(actual, dtype=float)
    b = np.asarray(target, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("empty series")
    return float(np.sqrt(np.mean((a - b) ** 2)))


@dataclass
class ErrorReport:
    total: float
    bias: float | None
    random: float | None
    per_trial: list = field(default_factory=list)
    condition: str = ""

    @property
    def decomposed(self) -> bool:
        return self.bias is not None

    def as_row(self) -> dict:
        return {"condition": self.condition, "total": self.total, "bias": self.bias, "random": self.random}


def decompose(trials, condition: str = "") -> ErrorReport:
    """Split error series (one row per trial, aligned in time) into bias and random parts.

    bias(t) is the mean error over trials; random is what is left. With these
    definitions total^2 = bias^2 + random^2 holds exactly.
    """
    E = np.asarray(trials, dtype=float)
    if E.ndim != 2 or E.shape[1] == 0:
        raise ValueError("expected a (trials, samples) array")
    per_trial = [float(np.sqrt(np.mean(e**2))) for e in E]
    total = float(np.sqrt(np.mean(E**2)))
    if E.shape[0] < 2:
        return ErrorReport(total, None, None, per_trial, condition)
    b = E.mean(axis=0)
    bias = float(np.sqrt(np.mean(b**2)))
    random = float(np.sqrt(np.mean((E - b) ** 2)))
    return ErrorReport(total, bias, random, per_trial, condition)


def whole_periods(n_samples: int, dt: float, period: float, skip: int = 0) -> slice:
    """Window covering whole reference periods (after ``skip`` periods); partial tails dropped."""
    per = int(round(period / dt))
    if per <= 0:
        raise ValueError("period must be positive")
    k = n_samples // per
    if k <= skip:
        # phase shorter than the requested window: keep everything
        return slice(0, n_samples)
    return slice(skip * per, k * per)


def histogram(values, bins=20, range=None):
    """Counts include the range edges; values outside ``range`` land in the end bins."""
    v = np.asarray(values, dtype=float)
    if range is not None:
        v = np.clip(v, *range)
    counts, edges = np.histogram(v, bins=bins, range=range)
    return counts, edges


# -- logs ---------------------------------------------------------------------


class SchemaError(ValueError):
    pass


@dataclass
class LogTable:
    """A DyadLog CSV read back: metadata plus per-user column arrays."""

    meta: dict
    columns: dict  # user -> {column: array}
    path: str = ""

    @property
    def condition(self) -> str:
        return self.meta.get("condition") or self.meta.get("mode", "")

    def user(self, u: str) -> dict:
        return self.columns[u]


def read_log(path, schema: int | None = None) -> LogTable:
    import csv
    import json

    from .simulator import CSV_COLUMNS, SCHEMA_VERSION

    schema = SCHEMA_VERSION if schema is None else schema
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise SchemaError(f"{path}: missing metadata line")
        meta = json.loads(first[2:])
        if meta.get("schema") != schema:
            raise SchemaError(f"{path}: schema {meta.get('schema')!r}, expected {schema}")
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != tuple(CSV_COLUMNS):
            raise SchemaError(f"{path}: column set differs from schema {schema}")
        rows: dict = {}
        for row in reader:
            rows.setdefault(row[3], []).append(row)
    text_cols = {"phase", "user", "qp_status"}
    columns = {}
    for u, rs in rows.items():
        cols = list(zip(*rs))
        columns[u] = {
            name: (np.array(c) if name in text_cols else np.array(c, dtype=float))
            for name, c in zip(header, cols)
        }
    return LogTable(meta, columns, str(path))


def scored_phase(log: LogTable) -> str:
    """Coupled phases for coupled conditions, solo phases when the log is a solo run."""
    if log.meta.get("mode") == "transparent":
        return "solo"
    phases = next(iter(log.columns.values()))["phase"]
    return "coupled" if np.any(phases == "coupled") else "solo"


def trial_errors(cols: dict, phase: str, dt: float, per: float, skip: int = 0) -> list:
    """One error series (z_com - z_target) per trial, cut to whole periods and a common length."""
    mask = cols["phase"] == phase
    series = []
    for k in np.unique(cols["trial"][mask]):
        m = mask & (cols["trial"] == k)
        e = cols["z_com"][m] - cols["z_target"][m]
        series.append(e[whole_periods(e.size, dt, per, skip)])
    if not series:
        return []
    n = min(s.size for s in series)
    return [s[:n] for s in series]


def condition_report(log: LogTable, phase: str | None = None) -> dict:
    """ErrorReport per user for one log."""
    phase = phase or scored_phase(log)
    dt = float(log.meta["dt"])
    per = float(log.meta.get("period", 2.0))
    label = log.condition if phase != "solo" or log.meta.get("mode") == "transparent" else "solo"
    out = {}
    for u, cols in sorted(log.columns.items()):
        errs = trial_errors(cols, phase, dt, per)
        if not errs:
            raise ValueError(f"{log.path}: no {phase} ticks for user {u}")
        out[u] = decompose(errs, condition=label)
    return out


HIST_RANGES = {"z_com": (0.5, 1.0), "q2": (-2.1, 0.0), "q4": (-2.1, 0.0)}


def distributions(log: LogTable, bins: int = 20) -> dict:
    """CoM-height and knee-angle histograms per user over every logged tick."""
    out = {}
    for u, cols in sorted(log.columns.items()):
        out[u] = {name: histogram(cols[name], bins, rng) for name, rng in HIST_RANGES.items()}
    return out
