"""JSON workload descriptors.

A descriptor names a small sequential graph of ops together with the
emulated machine and the tuner budget::

    {
      "name": "qmm64",
      "ops": [{"kind": "matmul", "m": 64, "n": 64, "k": 64, "dtype": "int8"}],
      "machine": {"vlen": 1024},
      "tuner": {"trials": 100, "seed": 0}
    }
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import jsonschema

from .errors import RVVTuneError, WorkloadError
from .ir import OpKind, RequantParams, TensorOpSpec
from .machine import Category, MachineConfig
from .tuner import TunerConfig, WorkloadGraph

_EXTENT = {"type": "integer", "minimum": 1}
_COST = {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2}

SCHEMA: dict[str, Any] = {
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "ops"],
    "properties": {
        "name": {"type": "string", "pattern": r"^[A-Za-z0-9_.-]+$"},
        "ops": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["kind", "dtype"],
                "properties": {
                    "kind": {"enum": ["matmul", "macc"]},
                    "name": {"type": "string", "pattern": r"^[A-Za-z0-9_]+$"},
                    "m": _EXTENT, "n": _EXTENT, "k": _EXTENT,
                    "dtype": {"enum": ["int8", "float16", "float32"]},
                    "requant": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["multiplier", "shift"],
                        "properties": {
                            "multiplier": {"type": "integer"},
                            "shift": {"type": "integer"},
                            "zero_point": {"type": "integer"},
                        },
                    },
                },
            },
        },
        "machine": {
            "type": "object",
            "additionalProperties": False,
            "required": ["vlen"],
            "properties": {
                "vlen": {"type": "integer"},
                "dlen": {"type": "integer"},
                "scalar_cycle": {"type": "integer", "minimum": 1},
                "costs": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {c.value: _COST for c in Category},
                },
            },
        },
        "tuner": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "trials": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "population": {"type": "integer", "minimum": 1},
                "mutation_rate": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "min_per_op": {"type": "integer", "minimum": 1},
            },
        },
    },
}


@dataclass(frozen=True)
class WorkloadDescriptor:
    name: str
    ops: tuple[TensorOpSpec, ...]
    machine: MachineConfig
    tuner: TunerConfig

    @property
    def graph(self) -> WorkloadGraph:
        return WorkloadGraph(self.name, self.ops)

    def with_overrides(self, *, seed: int | None = None, trials: int | None = None,
                       vlen: int | None = None, dlen: int | None = None) -> "WorkloadDescriptor":
        """Apply command-line overrides; a new ``vlen`` resets ``dlen`` to its default."""
        tuner = self.tuner
        if seed is not None:
            tuner = replace(tuner, seed=seed)
        if trials is not None:
            tuner = replace(tuner, trials=trials)
        machine = self.machine
        if vlen is not None or dlen is not None:
            new_vlen = machine.vlen if vlen is None else vlen
            new_dlen = dlen if dlen is not None else (machine.dlen if vlen is None else None)
            machine = MachineConfig(new_vlen, new_dlen, machine.cost_table, machine.scalar_cycle)
        return replace(self, machine=machine, tuner=tuner)


def _json_path(error: jsonschema.ValidationError) -> str:
    path = "$"
    for part in error.absolute_path:
        path += f"[{part}]" if isinstance(part, int) else f".{part}"
    return path


def _op_extents(i: int, op: dict) -> None:
    needed = ("m", "n", "k") if op["kind"] == "matmul" else ("n",)
    for d in needed:
        if d not in op:
            raise WorkloadError(f"$.ops[{i}]", f"{op['kind']} needs extent {d!r}")
    if op["kind"] == "macc":
        for d in ("m", "k"):
            if op.get(d, 1) != 1:
                raise WorkloadError(f"$.ops[{i}].{d}", "macc ops are one-dimensional; only n is allowed")


def workload_from_dict(data: Any) -> WorkloadDescriptor:
    """Validate a decoded descriptor and apply defaults."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        raise WorkloadError(_json_path(errors[0]), errors[0].message)
    ops = []
    for i, op in enumerate(data["ops"]):
        _op_extents(i, op)
        try:
            if op["kind"] == OpKind.MATMUL.value:
                rq = op.get("requant")
                if rq is not None and op["dtype"] != "int8":
                    raise WorkloadError(f"$.ops[{i}].requant", "only int8 matmuls are requantized")
                params = RequantParams(rq["multiplier"], rq["shift"], rq.get("zero_point", 0)) if rq else None
                spec = TensorOpSpec.matmul(op["m"], op["n"], op["k"], op["dtype"], params, op.get("name", ""))
            else:
                if "requant" in op:
                    raise WorkloadError(f"$.ops[{i}].requant", "macc ops take no requant parameters")
                spec = TensorOpSpec.macc(op["n"], op["dtype"], name=op.get("name", ""))
        except WorkloadError:
            raise
        except RVVTuneError as exc:
            raise WorkloadError(f"$.ops[{i}]", str(exc)) from None
        ops.append(spec)
    m = data.get("machine", {"vlen": 1024})
    try:
        machine = MachineConfig(m["vlen"], m.get("dlen"), m.get("costs", {}), m.get("scalar_cycle", 1))
    except RVVTuneError as exc:
        field = "dlen" if str(exc).startswith("dlen") else "vlen"
        raise WorkloadError(f"$.machine.{field}", str(exc)) from None
    t = data.get("tuner", {})
    try:
        tuner = TunerConfig(trials=t.get("trials", 100), population=t.get("population", 16),
                            mutation_rate=t.get("mutation_rate", 0.3), seed=t.get("seed", 0),
                            min_per_op=t.get("min_per_op", 10))
    except RVVTuneError as exc:
        raise WorkloadError("$.tuner", str(exc)) from None
    return WorkloadDescriptor(data["name"], tuple(ops), machine, tuner)


def parse_workload(path: str | Path) -> WorkloadDescriptor:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise WorkloadError("$", f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise WorkloadError("$", f"invalid JSON in {path}: {exc}") from None
    return workload_from_dict(data)
