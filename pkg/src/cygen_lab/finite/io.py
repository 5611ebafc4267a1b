"""CSV tables and JSON reports.

Tables are always stored over X x Z: row i is x-state i, column j is z-state
j.  A p file holds p(i|j); a q file holds q(j|i) and is transposed on load.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .theory import CompatReport, FiniteCond

HEADER = "# rows=x cols=z"


def write_table(path, table) -> None:
    t = np.asarray(table, dtype=float)
    lines = [HEADER] + [",".join(repr(float(v)) for v in row) for row in t]
    Path(path).write_text("\n".join(lines) + "\n")


def read_table(path) -> np.ndarray:
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != HEADER:
        raise ValueError(f"{path}: first line must be {HEADER!r}")
    rows = [line for line in text[1:] if line.strip()]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    out = np.array([[float(v) for v in line.split(",")] for line in rows])
    return out


def read_p(path) -> FiniteCond:
    return FiniteCond(read_table(path))


def read_q(path) -> FiniteCond:
    return FiniteCond(read_table(path).T)


def write_p(path, p: FiniteCond) -> None:
    write_table(path, p.table)


def write_q(path, q: FiniteCond) -> None:
    write_table(path, q.table.T)


def report_to_dict(report: CompatReport) -> dict:
    return {
        "compatible": report.compatible,
        "globally_determinate": report.globally_determinate,
        "complete_supports": [s.to_strings() for s in report.complete_supports],
        "joints": [j.table.tolist() for j in report.joints],
    }


def report_to_json(report: CompatReport) -> str:
    return json.dumps(report_to_dict(report), indent=2)
