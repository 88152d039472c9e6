"""Evaluation tables: latency, trace breakdown and code size per schedule type.

Column order of ``results.csv`` is fixed by :data:`REPORT_COLUMNS`; the trace
breakdown written by :func:`trace_csv` uses the category order of
:class:`~rvvtune.machine.Category`.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .emulator import ExecTrace
from .ir import OpKind, TensorOpSpec
from .machine import Category
from .schedule import ScheduleTrace
from .tuner import Candidate, TuneResult

REPORT_COLUMNS = (
    "type", "workload", "matrix_size", "latency_cycles",
    "rvv_load_perc", "rvv_store_perc", "rvv_reduction_perc", "rvv_elementwise_perc",
    "rvv_configuration_perc", "rvv_other_perc", "code_size_reduction_perc",
)

ROW_TYPES = ("non-tuned", "rowstore", "tuned-RVV")

_PERC_COLUMN = {
    Category.LOAD: "rvv_load_perc",
    Category.STORE: "rvv_store_perc",
    Category.REDUCTION: "rvv_reduction_perc",
    Category.MULADD: "rvv_elementwise_perc",
    Category.CONFIGURATION: "rvv_configuration_perc",
    Category.OTHERS: "rvv_other_perc",
}


def matrix_size(spec: TensorOpSpec) -> str:
    if spec.kind is OpKind.MATMUL:
        return f"{spec.m}x{spec.n}x{spec.k}"
    return str(spec.n)


def schedule_hash(trace: ScheduleTrace | None, op_label: str = "") -> str:
    """Short stable digest of an (op, schedule) pair, used in emitted file names."""
    payload = {"scalar": True} if trace is None else {k: v for k, v in trace.to_dict().items()
                                                      if k != "seed_decisions"}
    payload["op"] = op_label
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:12]


def code_size_reduction(tuned_static: int, rowstore_static: int) -> float:
    return (1.0 - tuned_static / rowstore_static) * 100.0


@dataclass(frozen=True)
class ReportRow:
    type: str
    workload: str
    matrix_size: str
    latency_cycles: float
    rvv_load_perc: float = 0.0
    rvv_store_perc: float = 0.0
    rvv_reduction_perc: float = 0.0
    rvv_elementwise_perc: float = 0.0
    rvv_configuration_perc: float = 0.0
    rvv_other_perc: float = 0.0
    code_size_reduction_perc: float | None = None

    def __post_init__(self):
        if self.type not in ROW_TYPES:
            raise ValueError(f"row type must be one of {ROW_TYPES}, got {self.type!r}")

    @classmethod
    def from_trace(cls, type_: str, workload: str, size: str, trace: ExecTrace,
                   code_size_reduction_perc: float | None = None) -> "ReportRow":
        pct = trace.percentages()
        return cls(type_, workload, size, trace.total_cycles,
                   **{_PERC_COLUMN[c]: pct[c] for c in Category},
                   code_size_reduction_perc=code_size_reduction_perc)

    @property
    def perc_sum(self) -> float:
        return sum(getattr(self, col) for col in _PERC_COLUMN.values())

    def as_csv(self) -> list[str]:
        out = [self.type, self.workload, self.matrix_size, _num(self.latency_cycles)]
        out += [f"{getattr(self, col):.4f}" for col in REPORT_COLUMNS[4:10]]
        out.append("" if self.code_size_reduction_perc is None else f"{self.code_size_reduction_perc:.4f}")
        return out


def _num(x: float) -> str:
    return "inf" if math.isinf(x) else str(int(x))


@dataclass
class OpReport:
    """Everything measured for one op: the tuned best and the two baselines."""

    workload: str
    spec: TensorOpSpec
    tuned: TuneResult
    baselines: dict[str, Candidate]

    @property
    def rowstore(self) -> Candidate | None:
        return self.baselines.get("rowstore")

    def rows(self) -> list[ReportRow]:
        size = matrix_size(self.spec)
        name = f"{self.workload}/{self.spec.label}"
        scalar = self.baselines["scalar"]
        rows = [ReportRow.from_trace("non-tuned", name, size, scalar.exec_trace)]
        reduction = None
        rs = self.rowstore
        if rs is not None and rs.exec_trace is not None:
            rows.append(ReportRow.from_trace("rowstore", name, size, rs.exec_trace))
            reduction = code_size_reduction(self.tuned.best.exec_trace.static_instruction_count,
                                            rs.exec_trace.static_instruction_count)
        rows.append(ReportRow.from_trace("tuned-RVV", name, size, self.tuned.best.exec_trace, reduction))
        return rows


def report_csv(rows: Sequence[ReportRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        w.writerow(r.as_csv())
    return buf.getvalue()


def summary_text(reports: Sequence[OpReport]) -> str:
    lines = []
    tuned_total = scalar_total = 0.0
    tuned_static = rowstore_static = 0
    for rep in reports:
        best = rep.tuned.best
        scalar = rep.baselines["scalar"]
        tuned_total += best.cycles
        scalar_total += scalar.cycles
        variant = best.variant.name if best.variant else "scalar"
        line = (f"{rep.spec.label}: tuned {_num(best.cycles)} cycles ({variant}), "
                f"scalar {_num(scalar.cycles)}")
        if rep.rowstore is not None:
            line += f", rowstore {_num(rep.rowstore.cycles)}"
            tuned_static += best.exec_trace.static_instruction_count
            rowstore_static += rep.rowstore.exec_trace.static_instruction_count
        lines.append(line)
    lines.append(f"speedup vs scalar: {(1 - tuned_total / scalar_total) * 100:.2f}%")
    if rowstore_static:
        lines.append(f"code size reduction vs rowstore (static instructions): "
                     f"{code_size_reduction(tuned_static, rowstore_static):.2f}%")
    return "\n".join(lines) + "\n"


def write_report(reports: Sequence[OpReport], path: str | Path) -> str:
    """Write ``results.csv``-style rows to ``path`` and return the summary text.

    The summary is also written next to the CSV as ``<stem>_summary.txt``.
    """
    if not reports:
        raise ValueError("write_report needs at least one result")
    path = Path(path)
    rows = [row for rep in reports for row in rep.rows()]
    path.write_text(report_csv(rows))
    summary = summary_text(reports)
    path.with_name(path.stem + "_summary.txt").write_text(summary)
    return summary


def trace_csv(trace: ExecTrace) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(trace.csv_rows())
    return buf.getvalue()
