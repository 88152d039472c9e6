"""Lowering of (possibly tensorized) loop nests to emulator programs.

Intrinsic calls expand into the fixed vector-matrix and elementwise-macc
instruction templates; everything else runs on the scalar core.  A
``vsetvl`` is emitted whenever the required vtype/VL changes inside a call.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dtypes import DType
from .errors import LoweringError
from .ir import AffineExpr, Access, Block, IntrinsicCall, Loop, LoopNest, OpKind, build_matmul_nest
from .emulator import Instruction, MemRef, ProgLoop, Program, ScalarBlock
from .machine import MachineConfig
from .registry import IntrinsicKind, IntrinsicVariant, Registry


@dataclass(frozen=True)
class _Regs:
    a: int
    b: int
    prod: int
    red: int = 1
    c: int = 2
    out: int = 3
    tmp: int = 4


def _regs(variant: IntrinsicVariant) -> _Regs:
    if variant.widen_factor > 1:
        # int8 sources at LMUL=4, widened products at LMUL=8
        return _Regs(a=8, b=12, prod=16)
    return _Regs(a=8, b=16, prod=24)


def _memref(access: Access, shape: tuple[int, ...], extra: int = 0) -> MemRef:
    offset = AffineExpr()
    stride = 1
    for idx, dim in reversed(list(zip(access.indices, shape))):
        offset = offset + idx.scale(stride)
        stride *= dim
    return MemRef(access.buffer, offset + extra)


class _Emitter:
    """Tracks the vtype across straight-line code so redundant vsetvls are skipped."""

    def __init__(self):
        self.out: list = []
        self.vtype = None

    def setvl(self, avl: int, dtype: DType, lmul: int):
        want = (avl, dtype.sew_bits, lmul)
        if self.vtype != want:
            self.out.append(Instruction("vsetvl", dtype, lmul, imm=avl))
            self.vtype = want

    def emit(self, opcode: str, dtype: DType, lmul: int, **kw):
        self.out.append(Instruction(opcode, dtype, lmul, **kw))


def expand_multivmul(call: IntrinsicCall, nest_shapes: dict[str, tuple[int, ...]]) -> list[Instruction]:
    """Vector-matrix multiply: J row dot products merged into one register, one store."""
    v = call.variant
    r = _regs(v)
    src, acc = v.in_dtype, v.acc_dtype
    k_stride = nest_shapes[call.b.buffer][1]
    e = _Emitter()
    e.setvl(v.vl, src, v.src_lmul)
    e.emit("vle", src, v.src_lmul, vd=r.a, mem=_memref(call.a, nest_shapes[call.a.buffer]))
    e.setvl(v.j, acc, 1)
    e.emit("vle", acc, 1, vd=r.c, mem=_memref(call.c, nest_shapes[call.c.buffer]))
    for j in range(v.j):
        e.emit("vmv_sx", acc, 1, vd=r.red, imm=0)
        e.setvl(v.vl, src, v.src_lmul)
        e.emit("vle", src, v.src_lmul, vd=r.b, mem=_memref(call.b, nest_shapes[call.b.buffer], j * k_stride))
        if v.widen_factor > 1:
            e.emit("vwmul", src, v.src_lmul, vd=r.prod, vs2=r.a, vs1=r.b)
            wide = src.widened()
            e.setvl(v.vl, wide, v.src_lmul * 2)
            e.emit("vwredsum", wide, v.src_lmul * 2, vd=r.red, vs2=r.prod, vs1=r.red)
        elif src.is_float:
            e.emit("vfmul", src, v.src_lmul, vd=r.prod, vs2=r.a, vs1=r.b)
            e.emit("vfredsum", src, v.src_lmul, vd=r.red, vs2=r.prod, vs1=r.red)
        else:
            e.emit("vmul", src, v.src_lmul, vd=r.prod, vs2=r.a, vs1=r.b)
            e.emit("vredsum", src, v.src_lmul, vd=r.red, vs2=r.prod, vs1=r.red)
        e.setvl(j + 1, acc, 1)
        if j == 0:
            e.emit("vmv_vv", acc, 1, vd=r.out, vs1=r.red)
        else:
            e.emit("vmv_vv", acc, 1, vd=r.tmp, vs1=r.red)
            e.emit("vslideup", acc, 1, vd=r.out, vs2=r.tmp, imm=j)
    e.setvl(v.j, acc, 1)
    e.emit("vfadd" if acc.is_float else "vadd", acc, 1, vd=r.out, vs2=r.out, vs1=r.c)
    e.emit("vse", acc, 1, vd=r.out, mem=_memref(call.c, nest_shapes[call.c.buffer]))
    return e.out


def expand_vmacc(call: IntrinsicCall, nest_shapes: dict[str, tuple[int, ...]]) -> list[Instruction]:
    v = call.variant
    dt = v.in_dtype
    e = _Emitter()
    e.setvl(v.vl, dt, v.src_lmul)
    e.emit("vle", dt, v.src_lmul, vd=8, mem=_memref(call.a, nest_shapes[call.a.buffer]))
    e.emit("vle", dt, v.src_lmul, vd=16, mem=_memref(call.b, nest_shapes[call.b.buffer]))
    e.emit("vle", dt, v.src_lmul, vd=24, mem=_memref(call.c, nest_shapes[call.c.buffer]))
    e.emit("vfmacc" if dt.is_float else "vmacc", dt, v.src_lmul, vd=24, vs1=8, vs2=16)
    e.emit("vse", dt, v.src_lmul, vd=24, mem=_memref(call.c, nest_shapes[call.c.buffer]))
    return e.out


def expand_call(call: IntrinsicCall, shapes) -> list[Instruction]:
    if call.variant.kind is IntrinsicKind.MULTIVMUL:
        return expand_multivmul(call, shapes)
    return expand_vmacc(call, shapes)


def _wrap(loops, body) -> tuple:
    for loop in reversed(loops):
        body = (ProgLoop(loop.name, loop.extent, tuple(body)),)
    return tuple(body)


def _lower_block(block: Block, shapes, registry: Registry | None) -> tuple:
    calls = block.intrinsic_calls
    if not calls:
        if len(block.body) != 1:
            raise LoweringError("scalar blocks must hold exactly one statement")
        return (ScalarBlock(block.loops, block.body[0]),)
    if len(calls) != len(block.body):
        raise LoweringError("cannot mix intrinsic calls and scalar statements in one block")
    body = []
    for call in calls:
        if registry is not None and call.variant not in registry:
            raise LoweringError(f"intrinsic {call.variant.name} is not registered")
        body.extend(expand_call(call, shapes))
    return _wrap(block.loops, body)


def lower_nest(nest: LoopNest, registry: Registry | None, machine: MachineConfig) -> Program:
    if registry is not None and registry.machine.vlen != machine.vlen:
        raise LoweringError("registry was built for a different VLEN")
    shapes = {b.name: b.shape for b in nest.buffers}
    body = []
    for block in nest.blocks:
        body.extend(_lower_block(block, shapes, registry))
    return Program(nest.spec.label, nest.buffers, tuple(body), machine.vlen)


def rowstore_vl(k: int, in_dtype: DType, machine: MachineConfig) -> int:
    src_lmul = 4 if in_dtype is DType.INT8 else 8
    return min(k, machine.vlmax(in_dtype.sew_bits, src_lmul))


def lower_rowstore(nest: LoopNest, machine: MachineConfig) -> Program:
    """Hand-library style matmul: vector dot product per output, one store per element.

    Partial sums stay in a register across k chunks; there is no
    cross-output merging, so every C element costs one ``vse``.
    """
    spec = nest.spec
    if spec.kind is not OpKind.MATMUL:
        raise LoweringError("the row-store baseline only exists for matmul")
    src, acc = spec.in_dtype, spec.acc_dtype
    src_lmul = 4 if src is DType.INT8 else 8
    vl = rowstore_vl(spec.k, src, machine)
    full, rem = divmod(spec.k, vl)
    shapes = {b.name: b.shape for b in nest.buffers}
    acc_buf = "ACC" if spec.requant is not None else "C"
    i, j, kc = AffineExpr.var("m"), AffineExpr.var("n"), AffineExpr.var("kc")
    out_ref = _memref(Access(acc_buf, (i, j)), shapes[acc_buf])

    def chunk(width: int, k_off: AffineExpr) -> list[Instruction]:
        e = _Emitter()
        e.setvl(width, src, src_lmul)
        e.emit("vle", src, src_lmul, vd=8, mem=_memref(Access("A", (i, k_off)), shapes["A"]))
        if src is DType.INT8:
            e.emit("vle", src, src_lmul, vd=12, mem=_memref(Access("B", (j, k_off)), shapes["B"]))
            e.emit("vwmul", src, src_lmul, vd=16, vs2=8, vs1=12)
            e.setvl(width, src.widened(), 8)
            e.emit("vwredsum", src.widened(), 8, vd=1, vs2=16, vs1=1)
        else:
            e.emit("vle", src, src_lmul, vd=16, mem=_memref(Access("B", (j, k_off)), shapes["B"]))
            e.emit("vfmul", src, src_lmul, vd=24, vs2=8, vs1=16)
            e.emit("vfredsum", src, src_lmul, vd=1, vs2=24, vs1=1)
        return e.out

    per_out: list = [Instruction("vsetvl", acc, 1, imm=1), Instruction("vle", acc, 1, vd=1, mem=out_ref)]
    if full:
        per_out.append(ProgLoop("kc", full, tuple(chunk(vl, kc.scale(vl)))))
    if rem:
        per_out.extend(chunk(rem, AffineExpr((), full * vl)))
    per_out += [Instruction("vsetvl", acc, 1, imm=1), Instruction("vse", acc, 1, vd=1, mem=out_ref)]
    main = _wrap((Loop("m", spec.m), Loop("n", spec.n)), per_out)
    body = []
    for block in nest.prologue:
        body.extend(_lower_block(block, shapes, None))
    body.extend(main)
    for block in nest.epilogue:
        body.extend(_lower_block(block, shapes, None))
    return Program(spec.label + "_rowstore", nest.buffers, tuple(body), machine.vlen)
