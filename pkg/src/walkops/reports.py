"""Structured diagnostics results, serializable to JSON and CSV.

Every report records what was checked (inputs), the individual residuals,
a machine verdict with its tolerances, and provenance (cache depth,
rho_hat, acceleration, window parameters) so emitted numbers can be
re-audited.  Serialization is deterministic: sorted keys, repr floats.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field


@dataclass
class DiagnosticsReport:
    name: str
    inputs: dict
    residuals: list
    passed: bool
    verdict: str
    tolerances: dict
    provenance: dict
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        doc = {
            "name": self.name,
            "inputs": self.inputs,
            "residuals": self.residuals,
            "passed": self.passed,
            "verdict": self.verdict,
            "tolerances": self.tolerances,
            "provenance": self.provenance,
        }
        if self.extra:
            doc["extra"] = self.extra
        return doc

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, indent=2, default=_jsonable)


def _jsonable(obj):
    if isinstance(obj, (tuple, set)):
        return list(obj)
    if hasattr(obj, "as_dict"):
        return obj.as_dict()
    return repr(obj)


def write_text_atomic(path: str, text: str):
    """Write via a temp file + rename so partial outputs never appear."""
    tmp = f"{path}.tmp"
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_json(path: str, payload) -> None:
    if isinstance(payload, DiagnosticsReport):
        text = payload.to_json()
    else:
        text = json.dumps(payload, sort_keys=True, indent=2, default=_jsonable)
    write_text_atomic(path, text + "\n")


def rows_to_csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_csv_cell(row.get(c)) for c in columns])
    return buf.getvalue()


def _csv_cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(path: str, rows: list[dict], columns: list[str]) -> None:
    write_text_atomic(path, rows_to_csv(rows, columns))
