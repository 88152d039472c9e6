"""Functional RVV emulator for the instruction subset the intrinsics use.

Programs are trees of :class:`ProgLoop`, :class:`Instruction` and
:class:`ScalarBlock` nodes.  Memory operands are affine element offsets into
named buffers, resolved against a flat byte-addressed :class:`Memory`.
Every executed instruction is costed by the machine's cost table and counted
in an :class:`ExecTrace`.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dtypes import DType
from .errors import EmulatorFault, IllegalInstruction, MemoryFault
from .ir import AffineExpr, Buffer, Loop, exec_scalar_block
from .machine import LEGAL_LMUL, LEGAL_SEW, NUM_VREGS, Category, MachineConfig

OPCODES = (
    "vsetvl", "vle", "vse", "vmv_vx", "vmv_sx", "vmv_vv", "vmul", "vwmul", "vfmul",
    "vredsum", "vwredsum", "vfredsum", "vslideup", "vadd", "vfadd", "vmacc", "vfmacc", "scalar",
)

_CATEGORY = {
    "vle": Category.LOAD,
    "vse": Category.STORE,
    "vredsum": Category.REDUCTION,
    "vwredsum": Category.REDUCTION,
    "vfredsum": Category.REDUCTION,
    "vmul": Category.MULADD,
    "vwmul": Category.MULADD,
    "vfmul": Category.MULADD,
    "vadd": Category.MULADD,
    "vfadd": Category.MULADD,
    "vmacc": Category.MULADD,
    "vfmacc": Category.MULADD,
    "vsetvl": Category.CONFIGURATION,
    "vmv_vx": Category.OTHERS,
    "vmv_sx": Category.OTHERS,
    "vmv_vv": Category.OTHERS,
    "vslideup": Category.OTHERS,
}

WIDENING = {"vwmul", "vwredsum"}
REDUCTIONS = {"vredsum", "vwredsum", "vfredsum"}

# scalar instructions per statement instance and per loop iteration
SCALAR_COST = {"Mac": 6, "Copy": 2, "Requant": 8}
LOOP_OVERHEAD = 2


@dataclass(frozen=True)
class MemRef:
    buffer: str
    offset: AffineExpr  # in elements

    def __str__(self) -> str:
        return f"&{self.buffer}[{self.offset}]"


@dataclass(frozen=True)
class Instruction:
    """One vector instruction with the vtype it was emitted under.

    ``dtype``/``lmul`` describe the source element type and register group;
    for ``vsetvl`` they are the requested vtype and ``imm`` is the AVL.
    ``imm`` is also the scalar operand of ``vmv_vx``/``vmv_sx`` and the
    offset of ``vslideup``.  Register roles: ``vd`` destination (store data
    for ``vse``), ``vs2`` vector source, ``vs1`` second source or, for
    reductions, the accumulator element.
    """

    opcode: str
    dtype: DType
    lmul: int
    vd: int | None = None
    vs1: int | None = None
    vs2: int | None = None
    mem: MemRef | None = None
    imm: int | float | None = None

    def __post_init__(self):
        if self.opcode not in OPCODES or self.opcode == "scalar":
            raise IllegalInstruction(f"unknown vector opcode {self.opcode!r}")

    @property
    def sew(self) -> int:
        return self.dtype.sew_bits

    def __str__(self) -> str:
        ops = [f"v{r}" for r in (self.vd, self.vs2, self.vs1) if r is not None]
        if self.mem is not None:
            ops.append(str(self.mem))
        if self.imm is not None:
            ops.append(str(self.imm))
        return f"{self.opcode}.e{self.sew}m{self.lmul} " + ", ".join(ops)


@dataclass(frozen=True)
class ProgLoop:
    var: str
    extent: int
    body: tuple


@dataclass(frozen=True)
class ScalarBlock:
    """A scalar loop nest executed by the scalar core."""

    loops: tuple[Loop, ...]
    stmt: object

    @property
    def per_iteration(self) -> int:
        return SCALAR_COST[type(self.stmt).__name__]

    @property
    def dynamic_count(self) -> int:
        count = self.per_iteration * math.prod(l.extent for l in self.loops)
        trips = 1
        for l in self.loops:
            trips *= l.extent
            count += LOOP_OVERHEAD * trips
        return count

    @property
    def static_count(self) -> int:
        return self.per_iteration + LOOP_OVERHEAD * len(self.loops)


@dataclass(frozen=True)
class Program:
    name: str
    buffers: tuple[Buffer, ...]
    body: tuple
    vlen: int = 0

    def walk(self):
        stack = list(reversed(self.body))
        while stack:
            node = stack.pop()
            yield node
            if isinstance(node, ProgLoop):
                stack.extend(reversed(node.body))

    @property
    def static_instruction_count(self) -> int:
        total = 0
        for node in self.walk():
            if isinstance(node, Instruction):
                total += 1
            elif isinstance(node, ScalarBlock):
                total += node.static_count
            elif isinstance(node, ProgLoop):
                total += LOOP_OVERHEAD
        return total

    @property
    def instructions(self) -> list[Instruction]:
        return [n for n in self.walk() if isinstance(n, Instruction)]


def categorize_instruction(instr) -> Category | None:
    """Trace category of a vector instruction; ``None`` for scalar work."""
    if isinstance(instr, Instruction):
        return _CATEGORY[instr.opcode]
    if isinstance(instr, str):
        return _CATEGORY.get(instr)
    return None


@dataclass
class ExecTrace:
    counts: dict[str, int] = field(default_factory=dict)
    category_counts: dict[Category, int] = field(default_factory=lambda: {c: 0 for c in Category})
    total_cycles: int = 0
    scalar_instructions: int = 0
    static_instruction_count: int = 0

    @property
    def vector_instructions(self) -> int:
        return sum(self.category_counts.values())

    @property
    def total_instructions(self) -> int:
        return self.scalar_instructions + self.vector_instructions

    def percentages(self) -> dict[Category, float]:
        total = self.vector_instructions
        if not total:
            return {c: 0.0 for c in Category}
        return {c: 100.0 * n / total for c, n in self.category_counts.items()}

    def __add__(self, other: "ExecTrace") -> "ExecTrace":
        counts = dict(self.counts)
        for op, n in other.counts.items():
            counts[op] = counts.get(op, 0) + n
        return ExecTrace(
            counts,
            {c: self.category_counts[c] + other.category_counts[c] for c in Category},
            self.total_cycles + other.total_cycles,
            self.scalar_instructions + other.scalar_instructions,
            self.static_instruction_count + other.static_instruction_count,
        )

    def csv_rows(self) -> list[list]:
        """Category breakdown rows followed by the summary header and values."""
        pct = self.percentages()
        rows: list[list] = [["category", "count", "percent"]]
        for c in Category:
            rows.append([c.value, self.category_counts[c], f"{pct[c]:.4f}"])
        rows.append(["total_cycles", "total_instructions", "static_instruction_count"])
        rows.append([self.total_cycles, self.total_instructions, self.static_instruction_count])
        return rows


def vsetvl_sem(avl: int, sew: int, lmul: int, machine: MachineConfig) -> int:
    if sew not in LEGAL_SEW or lmul not in LEGAL_LMUL:
        raise IllegalInstruction(f"illegal vtype e{sew}m{lmul}")
    if avl < 0:
        raise IllegalInstruction(f"negative AVL {avl}")
    return min(avl, machine.vlmax(sew, lmul))


class VectorState:
    """32 VLEN-bit vector registers plus vl and vtype.

    The register file carries a leading lane axis: lane ``i`` holds the
    registers of one loop iteration when independent iterations are run
    side by side.  Ordinary execution uses a single lane.
    """

    def __init__(self, machine: MachineConfig, lanes: int = 1):
        self.machine = machine
        self.vlenb = machine.vlenb
        self.regs = np.zeros((lanes, NUM_VREGS * self.vlenb), dtype=np.uint8)
        self.vl = 0
        self.sew = 8
        self.lmul = 1
        self.vtype_valid = False

    @property
    def lanes(self) -> int:
        return self.regs.shape[0]

    def vsetvl(self, avl: int, sew: int, lmul: int) -> int:
        self.vl = vsetvl_sem(avl, sew, lmul, self.machine)
        self.sew, self.lmul, self.vtype_valid = sew, lmul, True
        return self.vl

    def group(self, reg: int, nregs: int, dtype: DType) -> np.ndarray:
        """Writable ``(lanes, elements)`` view of a register group."""
        if reg is None or reg < 0 or reg + nregs > NUM_VREGS:
            raise IllegalInstruction(f"register group v{reg} x{nregs} out of range")
        if reg % nregs:
            raise IllegalInstruction(f"register v{reg} is not aligned to a group of {nregs}")
        base = reg * self.vlenb
        return self.regs[:, base:base + nregs * self.vlenb].view(dtype.np_dtype)

    def read(self, reg: int, dtype: DType, count: int, nregs: int = 1, lane: int = 0) -> np.ndarray:
        return self.group(reg, nregs, dtype)[lane, :count].copy()

    def write(self, reg: int, dtype: DType, values, nregs: int = 1) -> None:
        values = np.asarray(values, dtype=dtype.np_dtype)
        self.group(reg, nregs, dtype)[:, :values.shape[-1]] = values

    def fork(self, lanes: int) -> "VectorState":
        other = VectorState.__new__(VectorState)
        other.__dict__.update(self.__dict__)
        other.regs = np.repeat(self.regs[-1:], lanes, axis=0)
        return other

    def join(self, forked: "VectorState") -> None:
        # registers of the sequentially last iteration survive the loop
        self.regs = forked.regs[-1:].copy()
        self.vl, self.sew, self.lmul, self.vtype_valid = forked.vl, forked.sew, forked.lmul, forked.vtype_valid


class Memory:
    """Flat byte-addressable memory with named buffers placed at aligned offsets."""

    ALIGN = 64

    def __init__(self, buffers: Sequence[Buffer], inputs: Mapping[str, np.ndarray] | None = None):
        self.layout: dict[str, tuple[int, Buffer]] = {}
        addr = 0
        for buf in buffers:
            self.layout[buf.name] = (addr, buf)
            addr += -(-buf.nbytes // self.ALIGN) * self.ALIGN
        self.data = np.zeros(addr, dtype=np.uint8)
        for name, arr in (inputs or {}).items():
            if name in self.layout:
                self.view(name)[...] = np.asarray(arr).astype(self.layout[name][1].dtype.np_dtype)

    def view(self, name: str) -> np.ndarray:
        addr, buf = self.layout[name]
        return self.data[addr:addr + buf.nbytes].view(buf.dtype.np_dtype).reshape(buf.shape)

    def views(self) -> dict[str, np.ndarray]:
        return {name: self.view(name) for name in self.layout}

    def address(self, ref: MemRef, env: Mapping[str, int | np.ndarray]):
        addr, buf = self.layout[ref.buffer]
        return addr + ref.offset.evaluate(env) * buf.dtype.itemsize

    def _span(self, addr, nbytes: int, lanes: int, index: int | None) -> np.ndarray:
        addr = np.broadcast_to(np.asarray(addr, dtype=np.int64), (lanes,))
        lo, hi = int(addr.min()), int(addr.max())
        if lo < 0:
            raise MemoryFault(lo, nbytes, index)
        if hi + nbytes > self.data.size:
            raise MemoryFault(hi, nbytes, index)
        return addr[:, None] + np.arange(nbytes)

    def load(self, addr, dtype: DType, count: int, lanes: int = 1, index: int | None = None) -> np.ndarray:
        """``(lanes, count)`` elements starting at each lane's byte address."""
        nbytes = count * dtype.itemsize
        if lanes == 1 and np.ndim(addr) == 0:
            a = int(addr)
            if a < 0 or a + nbytes > self.data.size:
                raise MemoryFault(a, nbytes, index)
            return self.data[a:a + nbytes].view(dtype.np_dtype)[None, :]
        return self.data[self._span(addr, nbytes, lanes, index)].view(dtype.np_dtype)

    def store(self, addr, values: np.ndarray, index: int | None = None) -> None:
        values = np.atleast_2d(values)
        raw = np.ascontiguousarray(values).view(np.uint8)
        lanes, nbytes = raw.shape
        if lanes == 1 and np.ndim(addr) == 0:
            a = int(addr)
            if a < 0 or a + nbytes > self.data.size:
                raise MemoryFault(a, nbytes, index)
            self.data[a:a + nbytes] = raw[0]
            return
        self.data[self._span(addr, nbytes, lanes, index)] = raw


def _ct(dtype: DType):
    # float16 payloads are computed in float32
    return np.float32 if dtype is DType.FLOAT16 else dtype.np_dtype


def _overlaps(a: int, na: int, b: int, nb: int) -> bool:
    return a < b + nb and b < a + na


def instruction_cost(instr: Instruction, vl: int, machine: MachineConfig) -> int:
    eff_sew = 2 * instr.sew if instr.opcode == "vwmul" else instr.sew
    return machine.vector_cost(_CATEGORY[instr.opcode], vl, eff_sew)


def exec_instruction(state: VectorState, mem: Memory, instr: Instruction,
                     env: Mapping[str, int] | None = None, index: int | None = None) -> int:
    """Apply one instruction to ``state``/``mem`` in place; returns its cycle cost per lane."""
    op = instr.opcode
    if op == "vsetvl":
        state.vsetvl(int(instr.imm), instr.sew, instr.lmul)
        return instruction_cost(instr, state.vl, state.machine)
    if not state.vtype_valid or (state.sew, state.lmul) != (instr.sew, instr.lmul):
        raise IllegalInstruction(f"{op} emitted for e{instr.sew}m{instr.lmul} but vtype is "
                                 f"e{state.sew}m{state.lmul}", index)
    vl = state.vl
    dt = instr.dtype
    lmul = instr.lmul
    cost = instruction_cost(instr, vl, state.machine)
    if vl == 0:
        return cost
    try:
        if op == "vle":
            addr = mem.address(instr.mem, env or {})
            state.group(instr.vd, lmul, dt)[:, :vl] = mem.load(addr, dt, vl, state.lanes, index)
        elif op == "vse":
            addr = mem.address(instr.mem, env or {})
            mem.store(addr, state.group(instr.vd, lmul, dt)[:, :vl], index)
        elif op == "vmv_vx":
            state.group(instr.vd, lmul, dt)[:, :vl] = instr.imm
        elif op == "vmv_sx":
            state.group(instr.vd, 1, dt)[:, 0] = instr.imm
        elif op == "vmv_vv":
            state.group(instr.vd, lmul, dt)[:, :vl] = state.group(instr.vs1, lmul, dt)[:, :vl]
        elif op in ("vmul", "vfmul", "vadd", "vfadd"):
            x = state.group(instr.vs2, lmul, dt)[:, :vl].astype(_ct(dt))
            y = state.group(instr.vs1, lmul, dt)[:, :vl].astype(_ct(dt))
            res = x * y if op in ("vmul", "vfmul") else x + y
            state.group(instr.vd, lmul, dt)[:, :vl] = res.astype(dt.np_dtype)
        elif op in ("vmacc", "vfmacc"):
            d = state.group(instr.vd, lmul, dt)
            acc = d[:, :vl].astype(_ct(dt))
            x = state.group(instr.vs1, lmul, dt)[:, :vl].astype(_ct(dt))
            y = state.group(instr.vs2, lmul, dt)[:, :vl].astype(_ct(dt))
            d[:, :vl] = (acc + x * y).astype(dt.np_dtype)
        elif op == "vwmul":
            if lmul * 2 > 8:
                raise IllegalInstruction(f"vwmul from LMUL={lmul} needs an illegal LMUL={2 * lmul}", index)
            wide = dt.widened()
            for src in (instr.vs1, instr.vs2):
                if _overlaps(instr.vd, 2 * lmul, src, lmul):
                    raise IllegalInstruction(f"vwmul destination v{instr.vd} overlaps source v{src}", index)
            x = state.group(instr.vs2, lmul, dt)[:, :vl].astype(wide.np_dtype)
            y = state.group(instr.vs1, lmul, dt)[:, :vl].astype(wide.np_dtype)
            state.group(instr.vd, 2 * lmul, wide)[:, :vl] = x * y
        elif op in REDUCTIONS:
            acc_dt = dt.widened() if op == "vwredsum" else dt
            src = state.group(instr.vs2, lmul, dt)[:, :vl]
            start = state.group(instr.vs1, 1, acc_dt)[:, 0]
            if acc_dt.is_float:
                total = start.astype(np.float32) + src.astype(np.float32).sum(axis=1, dtype=np.float32)
            else:
                total = start.astype(np.int64) + src.astype(np.int64).sum(axis=1)
            state.group(instr.vd, 1, acc_dt)[:, 0] = total.astype(acc_dt.np_dtype)
        elif op == "vslideup":
            off = int(instr.imm)
            if _overlaps(instr.vd, lmul, instr.vs2, lmul):
                raise IllegalInstruction("vslideup destination overlaps its source", index)
            if off < vl:
                state.group(instr.vd, lmul, dt)[:, off:vl] = state.group(instr.vs2, lmul, dt)[:, :vl - off]
        else:  # pragma: no cover - OPCODES is closed
            raise IllegalInstruction(f"unhandled opcode {op}", index)
    except EmulatorFault as exc:
        if exc.index is None and index is not None:
            exc.index = index
            exc.args = (f"instruction {index}: {exc.args[0]}",)
        raise
    return cost


# --------------------------------------------------------------------------
# Lane-parallel execution of independent loop iterations
# --------------------------------------------------------------------------

def _reads_writes(instr: Instruction) -> tuple[list[tuple[int, int]], list[tuple[int, int]]]:
    """Register groups (first register, count) read and written by ``instr``."""
    op, l = instr.opcode, instr.lmul
    if op == "vsetvl":
        return [], []
    if op == "vle" or op == "vmv_vx":
        return [], [(instr.vd, l)]
    if op == "vse":
        return [(instr.vd, l)], []
    if op == "vmv_sx":
        return [], [(instr.vd, 1)]
    if op == "vmv_vv":
        return [(instr.vs1, l)], [(instr.vd, l)]
    if op == "vwmul":
        return [(instr.vs1, l), (instr.vs2, l)], [(instr.vd, 2 * l)]
    if op in REDUCTIONS:
        return [(instr.vs2, l), (instr.vs1, 1)], [(instr.vd, 1)]
    if op in ("vmacc", "vfmacc", "vslideup"):
        srcs = [(instr.vs2, l), (instr.vd, l)] + ([(instr.vs1, l)] if instr.vs1 is not None else [])
        return srcs, [(instr.vd, l)]
    return [(instr.vs1, l), (instr.vs2, l)], [(instr.vd, l)]


@dataclass(frozen=True)
class _LanePlan:
    loops: tuple[ProgLoop, ...]  # the perfect loop prefix, outermost first
    lane_vars: tuple[str, ...]
    body: tuple


def _static_vls(body, machine: MachineConfig):
    """Per-instruction VL along one pass of ``body``; None if it depends on entry state."""
    vls: dict[int, int] = {}
    vtype = None

    def walk(nodes, vtype):
        for node in nodes:
            if isinstance(node, Instruction):
                if node.opcode == "vsetvl":
                    vtype = (node.sew, node.lmul, min(int(node.imm), machine.vlmax(node.sew, node.lmul)))
                elif vtype is None or vtype[:2] != (node.sew, node.lmul):
                    return None, False
                key = id(node)
                if key in vls and vls[key] != vtype[2]:
                    return None, False
                vls[key] = vtype[2]
            elif isinstance(node, ProgLoop):
                if node.extent == 0:
                    continue
                for _ in range(2):  # a second pass exposes loop-carried vtype changes
                    vtype, ok = walk(node.body, vtype)
                    if not ok:
                        return None, False
            else:
                return None, False
        return vtype, True

    _, ok = walk(body, vtype)
    return vls if ok else None


def _defs_before_uses(body) -> bool:
    defined: set[int] = set()

    def walk(nodes) -> bool:
        for node in nodes:
            if isinstance(node, ProgLoop):
                if not walk(node.body):
                    return False
                continue
            reads, writes = _reads_writes(node)
            for reg, n in reads:
                if any(r not in defined for r in range(reg, reg + n)):
                    return False
            for reg, n in writes:
                defined.update(range(reg, reg + n))
        return True

    return walk(body)


def _plan_lanes(loop: ProgLoop, memory: Memory, machine: MachineConfig) -> _LanePlan | None:
    prefix = [loop]
    body = loop.body
    while len(body) == 1 and isinstance(body[0], ProgLoop):
        prefix.append(body[0])
        body = body[0].body
    instrs = []
    stack = list(body)
    while stack:
        node = stack.pop()
        if isinstance(node, ProgLoop):
            stack.extend(node.body)
        elif isinstance(node, Instruction):
            instrs.append(node)
        else:
            return None
    if not instrs:
        return None
    written = {i.mem.buffer for i in instrs if i.opcode == "vse"}
    refs = [i for i in instrs if i.mem is not None and i.mem.buffer in written]
    offsets = {i.mem.offset for i in refs}
    if len(offsets) > 1:
        return None
    prefix_vars = [l.var for l in prefix]
    if offsets:
        (f,) = offsets
        if not f.vars <= set(prefix_vars):
            return None
        lane_vars = tuple(v for v in prefix_vars if v in f.vars)
    else:
        lane_vars = tuple(prefix_vars)
    if not lane_vars:
        return None
    vls = _static_vls(body, machine)
    if vls is None or not _defs_before_uses(body):
        return None
    if offsets:
        width = max(vls[id(i)] for i in refs)
        grids = np.meshgrid(*[np.arange(l.extent) for l in prefix if l.var in lane_vars], indexing="ij")
        env = {v: g.ravel() for v, g in zip(lane_vars, grids)}
        starts = np.sort(np.asarray(f.evaluate({**env, **{v: 0 for v in f.vars - set(lane_vars)}})).ravel())
        if starts.size > 1 and int(np.diff(starts).min()) < max(width, 1):
            return None
    return _LanePlan(tuple(prefix), lane_vars, body)


def _loop_overhead(loops: Sequence[ProgLoop]) -> int:
    total, trips = 0, 1
    for l in loops:
        trips *= l.extent
        total += LOOP_OVERHEAD * trips
    return total


def _run_nodes(nodes, state: VectorState, memory: Memory, machine: MachineConfig, env: dict,
               trace: ExecTrace, views: dict, lanes_ok: bool, counter: list[int]) -> None:
    counts, cats = trace.counts, trace.category_counts
    for node in nodes:
        if isinstance(node, Instruction):
            idx = counter[0]
            counter[0] += state.lanes
            trace.total_cycles += exec_instruction(state, memory, node, env, idx) * state.lanes
            counts[node.opcode] = counts.get(node.opcode, 0) + state.lanes
            cats[_CATEGORY[node.opcode]] += state.lanes
        elif isinstance(node, ProgLoop):
            plan = _plan_lanes(node, memory, machine) if lanes_ok and state.lanes == 1 else None
            if plan is not None:
                _run_lanes(plan, state, memory, machine, env, trace, views, counter)
                continue
            for i in range(node.extent):
                env[node.var] = i
                _run_nodes(node.body, state, memory, machine, env, trace, views, lanes_ok, counter)
                trace.scalar_instructions += LOOP_OVERHEAD * state.lanes
                trace.total_cycles += LOOP_OVERHEAD * machine.scalar_cycle * state.lanes
            env.pop(node.var, None)
        elif isinstance(node, ScalarBlock):
            if state.lanes != 1:
                raise EmulatorFault("scalar block inside a lane-parallel loop")
            exec_scalar_block(node.loops, node.stmt, views, env)
            n = node.dynamic_count
            counter[0] += n
            trace.scalar_instructions += n
            trace.total_cycles += n * machine.scalar_cycle
        else:
            raise EmulatorFault(f"unknown program node {node!r}")


def _run_lanes(plan: _LanePlan, state: VectorState, memory: Memory, machine: MachineConfig, env: dict,
               trace: ExecTrace, views: dict, counter: list[int]) -> None:
    lane_loops = [l for l in plan.loops if l.var in plan.lane_vars]
    seq_loops = [l for l in plan.loops if l.var not in plan.lane_vars]
    grids = np.meshgrid(*[np.arange(l.extent) for l in lane_loops], indexing="ij")
    for l, g in zip(lane_loops, grids):
        env[l.var] = g.ravel()
    lanes = state.fork(int(np.prod([l.extent for l in lane_loops])))
    for point in itertools.product(*[range(l.extent) for l in seq_loops]):
        env.update(zip((l.var for l in seq_loops), point))
        _run_nodes(plan.body, lanes, memory, machine, env, trace, views, False, counter)
    state.join(lanes)
    for l in plan.loops:
        env.pop(l.var, None)
    overhead = _loop_overhead(plan.loops)
    trace.scalar_instructions += overhead
    trace.total_cycles += overhead * machine.scalar_cycle


def run_program(program: Program, memory: Memory, machine: MachineConfig,
                lanes: bool = True) -> tuple[Memory, ExecTrace]:
    """Execute ``program`` on ``memory`` (in place); deterministic.

    With ``lanes`` set, loop nests whose iterations provably touch disjoint
    output memory and define every register before use run as parallel
    lanes; results and traces equal those of plain sequential execution.
    """
    state = VectorState(machine)
    trace = ExecTrace(static_instruction_count=program.static_instruction_count)
    _run_nodes(program.body, state, memory, machine, {}, trace, memory.views(), lanes, [0])
    if trace.scalar_instructions:
        trace.counts["scalar"] = trace.scalar_instructions
    return memory, trace
