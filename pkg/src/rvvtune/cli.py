"""Command-line driver.

Exit status is 0 on success, 1 for usage or validation errors and 2 for
internal failures.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .codegen import emit_rvv_c, emit_scalar_c
from .dtypes import DType
from .errors import (ConfigError, NoMatchError, RVVTuneError, ScheduleError, SpecError, WorkloadError)
from .ir import build_nest, evaluate_nest, random_inputs
from .machine import MachineConfig
from .registry import IntrinsicKind, Registry
from .report import (OpReport, ReportRow, matrix_size, report_csv, schedule_hash, write_report)
from .schedule import ScheduleTrace, realize
from .tuner import baseline_schedules, evaluate_candidate, history_csv, tune_graph
from .workload import WorkloadDescriptor, parse_workload

log = logging.getLogger("rvvtune")

SCHEDULE_FORMAT = 1
_VALIDATION = (WorkloadError, ConfigError, SpecError, ScheduleError, NoMatchError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, help="override the tuner seed")
    common.add_argument("--trials", type=int, help="override the trial budget")
    common.add_argument("--vlen", type=int, help="override VLEN in bits")
    common.add_argument("--dlen", type=int, help="override the datapath width in bits")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="rvvtune", description="RVV tensor-intrinsic autotuner", parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("tune", parents=[common], help="tune a workload and write all outputs")
    t.add_argument("workload")
    t.add_argument("--out", default="rvvtune_out")

    e = sub.add_parser("eval", parents=[common], help="re-evaluate a saved schedule")
    e.add_argument("workload")
    e.add_argument("--schedule", required=True)

    tr = sub.add_parser("trace", parents=[common], help="instruction-class breakdown CSV")
    tr.add_argument("workload")
    tr.add_argument("--type", choices=("tuned", "rowstore", "scalar"), default="tuned")
    tr.add_argument("--schedule", help="use a saved schedule instead of tuning")
    tr.add_argument("--out", help="write trace.csv here instead of stdout")

    c = sub.add_parser("codegen", parents=[common], help="emit C for a saved schedule")
    c.add_argument("workload")
    c.add_argument("--schedule", required=True)
    c.add_argument("--out", default=".")

    r = sub.add_parser("registry", parents=[common], help="list registered intrinsic variants")
    r.add_argument("--dtype", required=True, choices=("int8", "float16", "float32"))
    return p


def _load(args) -> WorkloadDescriptor:
    desc = parse_workload(args.workload)
    return desc.with_overrides(seed=args.seed, trials=args.trials, vlen=args.vlen, dlen=args.dlen)


@dataclass
class WorkloadRun:
    desc: WorkloadDescriptor
    registry: Registry
    reports: list[OpReport]


def run_workload(desc: WorkloadDescriptor) -> WorkloadRun:
    """Tune every op of ``desc`` and measure the baselines on the same inputs."""
    registry = Registry(desc.machine)
    graph = tune_graph(desc.graph, registry, desc.machine, desc.tuner)
    reports = []
    for i, (spec, res) in enumerate(zip(desc.ops, graph.results)):
        base = baseline_schedules(spec, registry, desc.machine, seed=desc.tuner.seed + i)
        reports.append(OpReport(desc.name, spec, res, base))
    return WorkloadRun(desc, registry, reports)


def schedules_json(desc: WorkloadDescriptor, traces: Sequence[ScheduleTrace]) -> dict:
    return {
        "format": SCHEDULE_FORMAT,
        "workload": desc.name,
        "vlen": desc.machine.vlen,
        "ops": [{"op": spec.label, "schedule": t.to_dict()} for spec, t in zip(desc.ops, traces)],
    }


def load_schedules(path: str | Path, desc: WorkloadDescriptor, registry: Registry) -> list[ScheduleTrace]:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise WorkloadError("$", f"no such schedule file: {path}") from None
    except json.JSONDecodeError as exc:
        raise WorkloadError("$", f"invalid JSON in {path}: {exc}") from None
    if not isinstance(data, dict) or "ops" not in data:
        raise WorkloadError("$", "schedule file needs an 'ops' list")
    if data.get("vlen", desc.machine.vlen) != desc.machine.vlen:
        raise WorkloadError("$.vlen", f"schedule was tuned for VLEN={data['vlen']}, "
                                      f"machine has VLEN={desc.machine.vlen}")
    if len(data["ops"]) != len(desc.ops):
        raise WorkloadError("$.ops", f"schedule has {len(data['ops'])} ops, workload has {len(desc.ops)}")
    traces = []
    for i, entry in enumerate(data["ops"]):
        try:
            traces.append(ScheduleTrace.from_dict(entry["schedule"], registry))
        except (KeyError, TypeError, ValueError) as exc:
            raise WorkloadError(f"$.ops[{i}].schedule", f"malformed schedule: {exc}") from None
    return traces


def evaluate_schedules(desc: WorkloadDescriptor, registry: Registry, traces: Sequence[ScheduleTrace]):
    out = []
    for i, (spec, trace) in enumerate(zip(desc.ops, traces)):
        nest = build_nest(spec)
        inputs = random_inputs(nest, desc.tuner.seed + i)
        ref = evaluate_nest(nest, inputs)[nest.output]
        cand = evaluate_candidate(trace, nest, registry, desc.machine, inputs, ref)
        if not cand.valid:
            raise ScheduleError(f"{spec.label}: saved schedule is invalid ({cand.error})")
        out.append(cand)
    return out


def emit_sources(desc: WorkloadDescriptor, registry: Registry, traces: Sequence[ScheduleTrace], out: Path):
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for spec, trace in zip(desc.ops, traces):
        nest = realize(build_nest(spec), trace)
        if nest.is_tensorized:
            src = emit_rvv_c(nest, registry, desc.machine)
        else:
            src = emit_scalar_c(nest)
        path = out / f"{desc.name}_{schedule_hash(trace, spec.label)}.c"
        path.write_text(src.text)
        written.append(path)
    return written


def _cmd_tune(args) -> int:
    desc = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run = run_workload(desc)
    traces = [r.tuned.best.trace for r in run.reports]
    summary = write_report(run.reports, out / "results.csv")
    lines = ["op," + history_csv([]).strip()]
    for rep in run.reports:
        lines += [f"{rep.spec.label},{row}" for row in history_csv(rep.tuned.history).splitlines()[1:]]
    (out / "history.csv").write_text("\n".join(lines) + "\n")
    tuned_rows = [r for rep in run.reports for r in rep.rows() if r.type == "tuned-RVV"]
    (out / "trace.csv").write_text(report_csv(tuned_rows))
    (out / "schedule.json").write_text(json.dumps(schedules_json(desc, traces), indent=2) + "\n")
    sources = emit_sources(desc, run.registry, traces, out)
    print(summary, end="")
    print(f"wrote {out / 'results.csv'}, history.csv, trace.csv, schedule.json and "
          f"{len(sources)} C file(s) to {out}")
    return 0


def _cmd_eval(args) -> int:
    desc = _load(args)
    registry = Registry(desc.machine)
    traces = load_schedules(args.schedule, desc, registry)
    for spec, cand in zip(desc.ops, evaluate_schedules(desc, registry, traces)):
        et = cand.exec_trace
        print(f"{spec.label}: {int(cand.cycles)} cycles, {et.vector_instructions} vector instructions, "
              f"{et.scalar_instructions} scalar, {et.static_instruction_count} static")
    return 0


def _cmd_trace(args) -> int:
    desc = _load(args)
    registry = Registry(desc.machine)
    row_type = {"tuned": "tuned-RVV", "rowstore": "rowstore", "scalar": "non-tuned"}[args.type]
    rows: list[ReportRow] = []
    if args.type == "tuned":
        if args.schedule:
            cands = evaluate_schedules(desc, registry, load_schedules(args.schedule, desc, registry))
        else:
            graph = tune_graph(desc.graph, registry, desc.machine, desc.tuner)
            cands = [r.best for r in graph.results]
        for spec, cand in zip(desc.ops, cands):
            rows.append(ReportRow.from_trace(row_type, f"{desc.name}/{spec.label}", matrix_size(spec),
                                             cand.exec_trace))
    else:
        for i, spec in enumerate(desc.ops):
            base = baseline_schedules(spec, registry, desc.machine, seed=desc.tuner.seed + i)
            key = "scalar" if args.type == "scalar" else "rowstore"
            if key not in base:
                log.warning("%s: no row-store baseline for %s ops, skipped", spec.label, spec.kind.value)
                continue
            rows.append(ReportRow.from_trace(row_type, f"{desc.name}/{spec.label}", matrix_size(spec),
                                             base[key].exec_trace))
    if not rows:
        raise SpecError("no op of this workload has a row-store baseline")
    text = report_csv(rows)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trace.csv").write_text(text)
    else:
        print(text, end="")
    return 0


def _cmd_codegen(args) -> int:
    desc = _load(args)
    registry = Registry(desc.machine)
    traces = load_schedules(args.schedule, desc, registry)
    for path in emit_sources(desc, registry, traces, Path(args.out)):
        print(path)
    return 0


def _cmd_registry(args) -> int:
    machine = MachineConfig(args.vlen if args.vlen is not None else 1024, args.dlen)
    registry = Registry(machine)
    dtype = DType.parse(args.dtype)
    print("name,kind,vl,j,src_lmul,widen_factor,acc_dtype")
    for kind in IntrinsicKind:
        for v in registry.variants_for(kind, dtype):
            print(f"{v.name},{kind.value},{v.vl},{'' if v.j is None else v.j},{v.src_lmul},"
                  f"{v.widen_factor},{v.acc_dtype.label}")
    return 0


_COMMANDS = {"tune": _cmd_tune, "eval": _cmd_eval, "trace": _cmd_trace,
             "codegen": _cmd_codegen, "registry": _cmd_registry}


def run_cli(argv: Sequence[str] | None = None) -> int:
    try:
        args = _parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except _VALIDATION as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RVVTuneError as exc:
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort exit status
        log.exception("unexpected failure")
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())
