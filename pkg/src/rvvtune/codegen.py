"""C emission with GCC-style RVV intrinsics.

The RVV source is printed from the lowered :class:`~rvvtune.emulator.Program`,
so each emitted intrinsic call is exactly one emulated vector instruction.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from .dtypes import DType
from .emulator import Instruction, ProgLoop, Program, ScalarBlock
from .errors import EmitError, NamingError
from .ir import AffineExpr, Access, Copy, LoopNest, Mac, Requant
from .lowering import lower_nest
from .machine import MachineConfig
from .registry import Registry

HEADER = "riscv_vector.h"

_INT_ONLY = {"vmul", "vwmul", "vredsum", "vwredsum", "vadd", "vmacc"}
_FLOAT_ONLY = {"vfmul", "vfredsum", "vfadd", "vfmacc"}


def _tcode(sew: int, is_float: bool) -> str:
    return ("f" if is_float else "i") + str(sew)


def _check_vtype(sew: int, lmul: int, is_float: bool):
    if sew not in (8, 16, 32) or lmul not in (1, 2, 4, 8):
        raise NamingError(f"illegal vtype e{sew}m{lmul}")
    if is_float and sew == 8:
        raise NamingError("there is no 8-bit float element type")


def intrinsic_name(opcode: str, sew: int, lmul: int, is_float: bool = False) -> str:
    """GCC RVV intrinsic identifier; ``sew``/``lmul`` are those of the source operands."""
    _check_vtype(sew, lmul, is_float)
    if opcode in _INT_ONLY and is_float:
        raise NamingError(f"{opcode} has no float form")
    if opcode in _FLOAT_ONLY and not is_float:
        raise NamingError(f"{opcode} has no integer form")
    t = f"{_tcode(sew, is_float)}m{lmul}"
    if opcode == "vsetvl":
        return f"__riscv_vsetvl_e{sew}m{lmul}"
    if opcode in ("vle", "vse"):
        return f"__riscv_{opcode}{sew}_v_{t}"
    if opcode in ("vwmul", "vwredsum"):
        if sew == 32:
            raise NamingError(f"{opcode} cannot widen beyond 32-bit elements")
        wide = _tcode(2 * sew, False)
        if opcode == "vwmul":
            if lmul == 8:
                raise NamingError("vwmul from LMUL=8 would need a 16-register group")
            return f"__riscv_vwmul_vv_{wide}m{2 * lmul}"
        return f"__riscv_vwredsum_vs_{t}_{wide}m1"
    if opcode == "vmv_vx":
        return f"__riscv_vfmv_v_f_{t}" if is_float else f"__riscv_vmv_v_x_{t}"
    if opcode == "vmv_sx":
        return f"__riscv_vfmv_s_f_{t}" if is_float else f"__riscv_vmv_s_x_{t}"
    if opcode == "vmv_vv":
        return f"__riscv_vmv_v_v_{t}"
    if opcode == "vredsum":
        return f"__riscv_vredsum_vs_{t}_{_tcode(sew, False)}m1"
    if opcode == "vfredsum":
        return f"__riscv_vfredusum_vs_{t}_{_tcode(sew, True)}m1"
    if opcode == "vslideup":
        return f"__riscv_vslideup_vx_{t}"
    if opcode in ("vmul", "vfmul", "vadd", "vfadd", "vmacc", "vfmacc"):
        return f"__riscv_{opcode}_vv_{t}"
    raise NamingError(f"unknown opcode {opcode!r}")


# Independent grammar for the subset above, written against the public
# naming scheme rather than derived from intrinsic_name.
_L = r"m(?P<l>[1248])"
_GRAMMAR = [
    re.compile(r"__riscv_vsetvl_e(?P<s>8|16|32)m[1248]"),
    re.compile(r"__riscv_v(?:le|se)(?P<s>8|16|32)_v_(?P<t>[if])(?P<s2>8|16|32)" + _L),
    re.compile(r"__riscv_v(?:mul|add|macc)_vv_i(?P<s>8|16|32)" + _L),
    re.compile(r"__riscv_vf(?:mul|add|macc)_vv_f(?P<s>16|32)" + _L),
    re.compile(r"__riscv_vwmul_vv_i(?P<w>16|32)m(?P<wl>[248])"),
    re.compile(r"__riscv_vredsum_vs_i(?P<s>8|16|32)" + _L + r"_i(?P<s2>8|16|32)m1"),
    re.compile(r"__riscv_vfredusum_vs_f(?P<s>16|32)" + _L + r"_f(?P<s2>16|32)m1"),
    re.compile(r"__riscv_vwredsum_vs_i(?P<s>8|16)" + _L + r"_i(?P<w>16|32)m1"),
    re.compile(r"__riscv_vmv_(?:v_x|s_x)_i(?P<s>8|16|32)" + _L),
    re.compile(r"__riscv_vfmv_(?:v_f|s_f)_f(?P<s>16|32)" + _L),
    re.compile(r"__riscv_vmv_v_v_(?P<t>[if])(?P<s>8|16|32)" + _L),
    re.compile(r"__riscv_vslideup_vx_(?P<t>[if])(?P<s>8|16|32)" + _L),
]


def is_legal_intrinsic_name(name: str) -> bool:
    for pat in _GRAMMAR:
        m = pat.fullmatch(name)
        if not m:
            continue
        g = m.groupdict()
        if g.get("t") == "f" and g.get("s") == "8":
            return False
        if g.get("s2") and g["s2"] != g["s"]:
            return False
        if "w" in g and g.get("w") and g.get("s") and int(g["w"]) != 2 * int(g["s"]):
            return False
        return True
    return False


INTRINSIC_CALL = re.compile(r"__riscv_[a-z0-9_]+")


@dataclass(frozen=True)
class EmittedSource:
    text: str
    entry_symbol: str
    kind: str  # "scalar" or "rvv"

    @property
    def byte_size(self) -> int:
        return len(self.text.encode())

    @property
    def intrinsic_calls(self) -> list[str]:
        return INTRINSIC_CALL.findall(self.text.split("{", 1)[1]) if "{" in self.text else []

    @property
    def static_vector_call_count(self) -> int:
        return len(self.intrinsic_calls)


def _vtype_name(dtype: DType, lmul: int) -> str:
    base = "vfloat" if dtype.is_float else "vint"
    return f"{base}{dtype.sew_bits}m{lmul}_t"


def _reg(reg: int, dtype: DType, lmul: int) -> str:
    return f"v{reg}_{dtype.type_code}m{lmul}"


def _c_ident(name: str) -> str:
    return re.sub(r"\W", "_", name)


class _Printer:
    def __init__(self, program: Program):
        self.program = program
        self.shapes = {b.name: b for b in program.buffers}
        self.lines: list[str] = []
        self.vars: dict[str, str] = {}
        self.uses_requant = False

    def line(self, depth: int, text: str):
        self.lines.append("  " * depth + text)

    def declare(self, reg: int, dtype: DType, lmul: int) -> str:
        name = _reg(reg, dtype, lmul)
        self.vars.setdefault(name, _vtype_name(dtype, lmul))
        return name

    def offset(self, expr: AffineExpr, subst) -> str:
        return str(expr.substitute(subst))

    def flat(self, access: Access, subst) -> str:
        buf = self.shapes[access.buffer]
        expr = AffineExpr()
        stride = 1
        for idx, dim in reversed(list(zip(access.indices, buf.shape))):
            expr = expr + idx.scale(stride)
            stride *= dim
        return f"{access.buffer}[{self.offset(expr, subst)}]"

    def instr(self, ins: Instruction, depth: int, subst):
        dt, l = ins.dtype, ins.lmul
        name = intrinsic_name(ins.opcode, dt.sew_bits, l, dt.is_float)
        op = ins.opcode
        if op == "vsetvl":
            self.line(depth, f"vl = {name}({ins.imm});")
            return
        if op in ("vle", "vse"):
            ptr = f"&{ins.mem.buffer}[{self.offset(ins.mem.offset, subst)}]"
            reg = self.declare(ins.vd, dt, l)
            if op == "vle":
                self.line(depth, f"{reg} = {name}({ptr}, vl);")
            else:
                self.line(depth, f"{name}({ptr}, {reg}, vl);")
            return
        if op in ("vmv_sx", "vmv_vx"):
            imm = f"{float(ins.imm)!r}f" if dt.is_float else str(int(ins.imm))
            self.line(depth, f"{self.declare(ins.vd, dt, l if op == 'vmv_vx' else 1)} = {name}({imm}, vl);")
            return
        if op == "vmv_vv":
            self.line(depth, f"{self.declare(ins.vd, dt, l)} = {name}({self.declare(ins.vs1, dt, l)}, vl);")
            return
        if op == "vwmul":
            wide = dt.widened()
            dst = self.declare(ins.vd, wide, 2 * l)
            self.line(depth, f"{dst} = {name}({self.declare(ins.vs2, dt, l)}, {self.declare(ins.vs1, dt, l)}, vl);")
            return
        if op in ("vredsum", "vwredsum", "vfredsum"):
            acc = dt.widened() if op == "vwredsum" else dt
            dst = self.declare(ins.vd, acc, 1)
            self.line(depth, f"{dst} = {name}({self.declare(ins.vs2, dt, l)}, {self.declare(ins.vs1, acc, 1)}, vl);")
            return
        if op == "vslideup":
            dst = self.declare(ins.vd, dt, l)
            self.line(depth, f"{dst} = {name}({dst}, {self.declare(ins.vs2, dt, l)}, {int(ins.imm)}, vl);")
            return
        if op in ("vmacc", "vfmacc"):
            dst = self.declare(ins.vd, dt, l)
            self.line(depth, f"{dst} = {name}({dst}, {self.declare(ins.vs1, dt, l)}, "
                             f"{self.declare(ins.vs2, dt, l)}, vl);")
            return
        dst = self.declare(ins.vd, dt, l)
        self.line(depth, f"{dst} = {name}({self.declare(ins.vs2, dt, l)}, {self.declare(ins.vs1, dt, l)}, vl);")

    def scalar(self, block: ScalarBlock, depth: int, subst):
        subst = dict(subst)
        for loop in block.loops:
            if loop.extent == 1:
                subst[loop.name] = AffineExpr()
            else:
                self.line(depth, f"for (int {loop.name} = 0; {loop.name} < {loop.extent}; ++{loop.name}) {{")
                depth += 1
        s = block.stmt
        if isinstance(s, Mac):
            ct = self.shapes[s.dst.buffer].dtype.c_type
            self.line(depth, f"{self.flat(s.dst, subst)} += ({ct}){self.flat(s.a, subst)} * "
                             f"({ct}){self.flat(s.b, subst)};")
        elif isinstance(s, Copy):
            self.line(depth, f"{self.flat(s.dst, subst)} = {self.flat(s.src, subst)};")
        elif isinstance(s, Requant):
            self.uses_requant = True
            p = s.params
            self.line(depth, f"{self.flat(s.dst, subst)} = requant_i8({self.flat(s.src, subst)}, "
                             f"{p.multiplier}, {p.shift}, {p.zero_point});")
        else:
            raise EmitError(f"cannot emit statement {s!r}")
        for loop in reversed(block.loops):
            if loop.extent != 1:
                depth -= 1
                self.line(depth, "}")

    def nodes(self, nodes, depth: int, subst):
        for node in nodes:
            if isinstance(node, Instruction):
                self.instr(node, depth, subst)
            elif isinstance(node, ScalarBlock):
                self.scalar(node, depth, subst)
            elif isinstance(node, ProgLoop):
                if node.extent == 1:
                    self.nodes(node.body, depth, {**subst, node.var: AffineExpr()})
                    continue
                self.line(depth, f"for (int {node.var} = 0; {node.var} < {node.extent}; ++{node.var}) {{")
                self.nodes(node.body, depth + 1, subst)
                self.line(depth, "}")
            else:
                raise EmitError(f"cannot emit node {node!r}")


_REQUANT_HELPER = """\
static inline int8_t requant_i8(int32_t acc, int32_t mult, int shift, int32_t zp) {
  int64_t prod = (int64_t)acc * mult;
  int s = 31 + shift;
  int64_t mag = ((prod < 0 ? -prod : prod) + ((int64_t)1 << (s - 1))) >> s;
  int64_t r = (prod < 0 ? -mag : mag) + zp;
  return (int8_t)(r < -128 ? -128 : (r > 127 ? 127 : r));
}
"""


def emit_program_c(program: Program, entry: str, kind: str) -> EmittedSource:
    p = _Printer(program)
    p.nodes(program.body, 1, {})
    params = []
    for buf in program.buffers:
        const = "const " if buf.role.value == "input" else ""
        params.append(f"{const}{buf.dtype.c_type} *{buf.name}")
    out = []
    if kind == "rvv":
        out.append(f"#include <{HEADER}>")
    out += ["#include <stddef.h>", "#include <stdint.h>", ""]
    if p.uses_requant:
        out += [_REQUANT_HELPER]
    out.append(f"void {entry}({', '.join(params)}) {{")
    if kind == "rvv":
        out.append("  size_t vl;")
        for name in sorted(p.vars):
            out.append(f"  {p.vars[name]} {name};")
    out += p.lines
    out.append("}")
    return EmittedSource("\n".join(out) + "\n", entry, kind)


def emit_rvv_c(nest: LoopNest, registry: Registry, machine: MachineConfig, entry: str | None = None) -> EmittedSource:
    if not nest.is_tensorized:
        raise EmitError(f"{nest.spec.label}: main block is not tensorized; use emit_scalar_c")
    program = lower_nest(nest, registry, machine)
    return emit_program_c(program, entry or _c_ident(nest.spec.label) + "_rvv", "rvv")


def emit_scalar_c(nest: LoopNest, entry: str | None = None) -> EmittedSource:
    if nest.is_tensorized:
        raise EmitError(f"{nest.spec.label}: scalar emission needs an untensorized nest")
    program = lower_nest(nest, None, MachineConfig())
    return emit_program_c(program, entry or _c_ident(nest.spec.label) + "_scalar", "scalar")
