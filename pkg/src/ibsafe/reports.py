"""CSV and JSON emitters with fixed 17-significant-digit formatting.

Every float goes through :func:`fmt` so that identical inputs give
identical bytes on every platform.
"""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .gmdp import PolicyTable
from .model import Instance, members
from .segb import EpisodeResult, MonteCarloSummary
from .verification import CheckReport

VALUE_COLUMNS = ("state_bitmask", "above_size", "below_size", "value")
POLICY_COLUMNS = ("state_bitmask", "above_size", "below_size", "action_kind", "i", "j")
TRACE_COLUMNS = ("t", "portfolio", "realized_arm", "r_t", "safety_margin", "phase")
MC_COLUMNS = ("T", "episodes", "mean_utility", "std_error", "mean_exploration_rounds",
              "w_star", "floor")
SUMMARY_COLUMNS = ("check_name", "passed", "max_deviation", "trials", "elapsed_ms")


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".17g")
    return str(x)


def to_csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def read_csv(text: str) -> list[dict[str, str]]:
    return list(csv.DictReader(io.StringIO(text)))


def write_text(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="")
    return path


def _sizes(inst: Instance, s: int) -> tuple[int, int]:
    return len(members(s & inst.above_mask)), len(members(s & inst.below_mask))


def value_table_csv(inst: Instance, values: np.ndarray) -> str:
    rows = []
    for s in range(values.size):
        a, b = _sizes(inst, s)
        rows.append((s, a, b, float(values[s])))
    return to_csv(VALUE_COLUMNS, rows)


def policy_table_csv(inst: Instance, pol: PolicyTable) -> str:
    rows = []
    for s in range(1 << inst.k):
        a, b = _sizes(inst, s)
        act = pol.action(s)
        rows.append((s, a, b, act.kind, act.i, act.j))
    return to_csv(POLICY_COLUMNS, rows)


def trace_csv(result: EpisodeResult) -> str:
    return to_csv(TRACE_COLUMNS, ((r.t, r.portfolio.format(), r.realized_arm, r.reward,
                                   r.safety_margin, r.phase.value) for r in result.rounds))


def mc_row(s: MonteCarloSummary, w_star: float, floor: float | None) -> tuple:
    return (s.T, s.episodes, s.mean, s.std_error, s.mean_exploration_rounds, w_star, floor)


def mc_csv(rows: Iterable[tuple]) -> str:
    return to_csv(MC_COLUMNS, rows)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else fmt(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def report_json(report: CheckReport) -> str:
    return json.dumps(_jsonable(report.to_dict()), indent=2, sort_keys=True) + "\n"


def _unjson(x):
    if isinstance(x, str) and x in ("inf", "-inf", "nan"):
        return float(x)
    if isinstance(x, dict):
        return {k: _unjson(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_unjson(v) for v in x]
    return x


def report_from_json(text: str) -> CheckReport:
    return CheckReport.from_dict(_unjson(json.loads(text)))


def summary_csv(reports: Sequence[CheckReport]) -> str:
    return to_csv(SUMMARY_COLUMNS, ((r.check_name, r.passed, r.max_deviation, r.trials,
                                     r.elapsed_ms) for r in reports))


def summary_from_csv(text: str) -> list[dict]:
    out = []
    for row in read_csv(text):
        out.append({"check_name": row["check_name"], "passed": row["passed"] == "true",
                    "max_deviation": float(row["max_deviation"]),
                    "trials": int(row["trials"]), "elapsed_ms": int(row["elapsed_ms"])})
    return out
