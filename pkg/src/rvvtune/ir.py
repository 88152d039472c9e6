"""Workload specs and the schedulable loop-nest IR.

A :class:`LoopNest` is a prologue (accumulator initialisation), one main
block that scheduling and tensorization act on, and an optional epilogue
(requantization).  Every block is a perfect nest of loops around a short
statement list.  Buffers are row-major; the matmul right-hand operand ``B``
is held as ``n x k`` (one contiguous row per output column), which is what a
unit-stride vector load of ``B[j][0:VL]`` needs.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .dtypes import DType
from .errors import SpecError
from .registry import IntrinsicVariant, IntrinsicKind, ref_multivmul, ref_vmacc


class OpKind(enum.Enum):
    MATMUL = "matmul"
    MACC = "macc"


@dataclass(frozen=True)
class RequantParams:
    multiplier: int
    shift: int
    zero_point: int = 0

    def __post_init__(self):
        if not 0 < self.multiplier < 2**31:
            raise SpecError(f"requant multiplier must be in (0, 2^31), got {self.multiplier}")
        if not 0 <= self.shift <= 31:
            raise SpecError(f"requant shift must be in [0, 31], got {self.shift}")
        if not -128 <= self.zero_point <= 127:
            raise SpecError(f"requant zero_point must be in [-128, 127], got {self.zero_point}")


DEFAULT_REQUANT = RequantParams(multiplier=1518500250, shift=9, zero_point=0)


def requantize(acc, params: RequantParams) -> np.ndarray:
    """int32 accumulator -> int8 via fixed-point multiply, rounding shift and saturation.

    ``(acc * multiplier) >> (31 + shift)`` with round-half-away-from-zero,
    then ``+ zero_point`` and clamp to [-128, 127].
    """
    prod = np.asarray(acc, dtype=np.int64) * np.int64(params.multiplier)
    s = 31 + params.shift
    mag = (np.abs(prod) + (np.int64(1) << (s - 1))) >> s
    rounded = np.where(prod < 0, -mag, mag)
    return np.clip(rounded + params.zero_point, -128, 127).astype(np.int8)


def requantize_scalar(acc: int, params: RequantParams) -> int:
    prod = int(acc) * params.multiplier
    s = 31 + params.shift
    mag = (abs(prod) + (1 << (s - 1))) >> s
    return max(-128, min(127, (-mag if prod < 0 else mag) + params.zero_point))


@dataclass(frozen=True)
class TensorOpSpec:
    kind: OpKind
    m: int = 1
    n: int = 1
    k: int = 1
    in_dtype: DType = DType.FLOAT32
    acc_dtype: DType = DType.FLOAT32
    out_dtype: DType = DType.FLOAT32
    requant: RequantParams | None = None
    name: str = ""

    def __post_init__(self):
        for f in ("in_dtype", "acc_dtype", "out_dtype"):
            object.__setattr__(self, f, DType.parse(getattr(self, f)))
        if not isinstance(self.kind, OpKind):
            object.__setattr__(self, "kind", OpKind(self.kind))
        for problem in self.violations():
            raise SpecError(problem)

    def violations(self) -> list[str]:
        out = []
        dims = ("m", "n", "k") if self.kind is OpKind.MATMUL else ("n",)
        for d in dims:
            v = getattr(self, d)
            if not isinstance(v, (int, np.integer)) or v < 1:
                out.append(f"extent {d}={v} must be a positive integer")
        if self.kind is OpKind.MATMUL:
            if self.in_dtype is DType.INT8:
                if self.acc_dtype is not DType.INT32 or self.out_dtype is not DType.INT8:
                    out.append("int8 matmul needs acc_dtype int32 and out_dtype int8")
                if self.requant is None:
                    out.append("int8 matmul needs requant parameters")
            elif self.in_dtype.is_float:
                if not self.in_dtype is self.acc_dtype is self.out_dtype:
                    out.append("float matmul needs in = acc = out dtype")
                if self.requant is not None:
                    out.append("float matmul takes no requant parameters")
            else:
                out.append(f"matmul does not support in_dtype {self.in_dtype.label}")
        else:
            same = self.in_dtype is self.acc_dtype is self.out_dtype
            widening = self.in_dtype is DType.INT8 and self.acc_dtype is self.out_dtype is DType.INT32
            if not (same or widening):
                out.append("macc needs in = acc = out dtype (or int8 -> int32)")
            if self.requant is not None:
                out.append("macc takes no requant parameters")
        return out

    @classmethod
    def matmul(cls, m: int, n: int, k: int, dtype: str | DType = "float32",
               requant: RequantParams | None = None, name: str = "") -> "TensorOpSpec":
        dt = DType.parse(dtype)
        if dt is DType.INT8:
            return cls(OpKind.MATMUL, m, n, k, dt, DType.INT32, DType.INT8, requant or DEFAULT_REQUANT, name)
        return cls(OpKind.MATMUL, m, n, k, dt, dt, dt, requant, name)

    @classmethod
    def macc(cls, n: int, dtype: str | DType = "float32", acc_dtype: str | DType | None = None,
             name: str = "") -> "TensorOpSpec":
        dt = DType.parse(dtype)
        acc = DType.parse(acc_dtype) if acc_dtype is not None else dt
        return cls(OpKind.MACC, 1, n, 1, dt, acc, acc, None, name)

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.kind is OpKind.MATMUL:
            return f"matmul_{self.m}x{self.n}x{self.k}_{self.in_dtype.label}"
        return f"macc_{self.n}_{self.in_dtype.label}"


# --------------------------------------------------------------------------
# Index expressions and statements
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AffineExpr:
    """``const + sum(coef * var)``; terms are kept sorted and non-zero."""

    terms: tuple[tuple[str, int], ...] = ()
    const: int = 0

    @classmethod
    def var(cls, name: str, coef: int = 1) -> "AffineExpr":
        return cls(((name, coef),), 0)

    @classmethod
    def of(cls, coeffs: Mapping[str, int], const: int = 0) -> "AffineExpr":
        return cls(tuple(sorted((v, c) for v, c in coeffs.items() if c)), const)

    def coeff(self, name: str) -> int:
        return dict(self.terms).get(name, 0)

    @property
    def vars(self) -> set[str]:
        return {v for v, _ in self.terms}

    def __add__(self, other: "AffineExpr | int") -> "AffineExpr":
        if isinstance(other, int):
            return AffineExpr(self.terms, self.const + other)
        coeffs = dict(self.terms)
        for v, c in other.terms:
            coeffs[v] = coeffs.get(v, 0) + c
        return AffineExpr.of(coeffs, self.const + other.const)

    def scale(self, factor: int) -> "AffineExpr":
        return AffineExpr.of({v: c * factor for v, c in self.terms}, self.const * factor)

    def substitute(self, mapping: Mapping[str, "AffineExpr"]) -> "AffineExpr":
        out = AffineExpr((), self.const)
        for v, c in self.terms:
            out = out + (mapping[v].scale(c) if v in mapping else AffineExpr.var(v, c))
        return out

    def evaluate(self, env: Mapping[str, int | np.ndarray]):
        val = self.const
        for v, c in self.terms:
            val = val + c * env[v]
        return val

    def __str__(self) -> str:
        parts = [(v if c == 1 else f"{c}*{v}") for v, c in self.terms]
        if self.const or not parts:
            parts.append(str(self.const))
        return " + ".join(parts)


@dataclass(frozen=True)
class Access:
    buffer: str
    indices: tuple

    def substitute(self, mapping: Mapping[str, AffineExpr]) -> "Access":
        return Access(self.buffer, tuple(i.substitute(mapping) if isinstance(i, AffineExpr) else i
                                         for i in self.indices))

    def __str__(self) -> str:
        return f"{self.buffer}[{', '.join(map(str, self.indices))}]"


@dataclass(frozen=True)
class Mac:
    """``dst += a * b`` computed in the destination dtype."""

    dst: Access
    a: Access
    b: Access

    @property
    def accesses(self):
        return (self.dst, self.a, self.b)

    def substitute(self, mapping):
        return Mac(*(x.substitute(mapping) for x in self.accesses))


@dataclass(frozen=True)
class Copy:
    dst: Access
    src: Access

    @property
    def accesses(self):
        return (self.dst, self.src)

    def substitute(self, mapping):
        return Copy(*(x.substitute(mapping) for x in self.accesses))


@dataclass(frozen=True)
class Requant:
    dst: Access
    src: Access
    params: RequantParams

    @property
    def accesses(self):
        return (self.dst, self.src)

    def substitute(self, mapping):
        return Requant(self.dst.substitute(mapping), self.src.substitute(mapping), self.params)


@dataclass(frozen=True)
class IntrinsicCall:
    """A tensorized inner block; accesses point at the first element of each operand."""

    variant: IntrinsicVariant
    a: Access
    b: Access
    c: Access

    @property
    def accesses(self):
        return (self.a, self.b, self.c)

    def substitute(self, mapping):
        return IntrinsicCall(self.variant, *(x.substitute(mapping) for x in self.accesses))


Stmt = Mac | Copy | Requant | IntrinsicCall


@dataclass(frozen=True)
class Loop:
    name: str
    extent: int
    origin: str = ""

    def __post_init__(self):
        if not self.origin:
            object.__setattr__(self, "origin", self.name)


@dataclass(frozen=True)
class Block:
    loops: tuple[Loop, ...]
    body: tuple

    @property
    def iterations(self) -> int:
        return math.prod(l.extent for l in self.loops)

    @property
    def intrinsic_calls(self) -> list[IntrinsicCall]:
        return [s for s in self.body if isinstance(s, IntrinsicCall)]


class Role(enum.Enum):
    INPUT = "input"
    OUTPUT = "output"
    ACCUMULATOR = "accumulator"


@dataclass(frozen=True)
class Buffer:
    name: str
    shape: tuple[int, ...]
    dtype: DType
    role: Role

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    @property
    def nbytes(self) -> int:
        return self.size * self.dtype.itemsize


@dataclass(frozen=True)
class LoopNest:
    spec: TensorOpSpec
    buffers: tuple[Buffer, ...]
    main: Block
    prologue: tuple[Block, ...] = ()
    epilogue: tuple[Block, ...] = ()

    @property
    def loops(self) -> list[tuple[str, int]]:
        return [(l.name, l.extent) for l in self.main.loops]

    @property
    def body(self) -> tuple:
        return self.main.body

    @property
    def blocks(self) -> tuple[Block, ...]:
        return (*self.prologue, self.main, *self.epilogue)

    def buffer(self, name: str) -> Buffer:
        for b in self.buffers:
            if b.name == name:
                return b
        raise KeyError(name)

    @property
    def output(self) -> str:
        return "C"

    @property
    def input_names(self) -> list[str]:
        return [b.name for b in self.buffers if b.role is Role.INPUT]

    @property
    def is_tensorized(self) -> bool:
        return bool(self.main.intrinsic_calls)

    def with_main(self, main: Block) -> "LoopNest":
        return replace(self, main=main)


def _v(name: str) -> AffineExpr:
    return AffineExpr.var(name)


def build_matmul_nest(spec: TensorOpSpec) -> LoopNest:
    """``C = A x B + D`` with ``A: m x k``, ``B: n x k`` and ``C, D: m x n``."""
    if spec.kind is not OpKind.MATMUL:
        raise SpecError(f"build_matmul_nest needs a matmul spec, got {spec.kind.value}")
    for problem in spec.violations():
        raise SpecError(problem)
    m, n, k = spec.m, spec.n, spec.k
    quant = spec.requant is not None
    acc = "ACC" if quant else "C"
    buffers = [
        Buffer("A", (m, k), spec.in_dtype, Role.INPUT),
        Buffer("B", (n, k), spec.in_dtype, Role.INPUT),
        Buffer("D", (m, n), spec.acc_dtype, Role.INPUT),
    ]
    if quant:
        buffers.append(Buffer("ACC", (m, n), spec.acc_dtype, Role.ACCUMULATOR))
        buffers.append(Buffer("C", (m, n), spec.out_dtype, Role.OUTPUT))
    else:
        buffers.append(Buffer("C", (m, n), spec.acc_dtype, Role.ACCUMULATOR))
    im, in_, ik = _v("m"), _v("n"), _v("k")
    mn = (Loop("m", m), Loop("n", n))
    init = Block(mn, (Copy(Access(acc, (im, in_)), Access("D", (im, in_))),))
    main = Block((*mn, Loop("k", k)),
                 (Mac(Access(acc, (im, in_)), Access("A", (im, ik)), Access("B", (in_, ik))),))
    epilogue = ()
    if quant:
        epilogue = (Block(mn, (Requant(Access("C", (im, in_)), Access(acc, (im, in_)), spec.requant),)),)
    return LoopNest(spec, tuple(buffers), main, (init,), epilogue)


def build_macc_nest(spec: TensorOpSpec) -> LoopNest:
    """In-place elementwise ``C[i] += A[i] * B[i]``."""
    if spec.kind is not OpKind.MACC:
        raise SpecError(f"build_macc_nest needs a macc spec, got {spec.kind.value}")
    for problem in spec.violations():
        raise SpecError(problem)
    n = spec.n
    buffers = (
        Buffer("A", (n,), spec.in_dtype, Role.INPUT),
        Buffer("B", (n,), spec.in_dtype, Role.INPUT),
        Buffer("C", (n,), spec.acc_dtype, Role.ACCUMULATOR),
    )
    i = _v("n")
    main = Block((Loop("n", n),), (Mac(Access("C", (i,)), Access("A", (i,)), Access("B", (i,))),))
    return LoopNest(spec, buffers, main)


def build_nest(spec: TensorOpSpec) -> LoopNest:
    return build_matmul_nest(spec) if spec.kind is OpKind.MATMUL else build_macc_nest(spec)


def validate_nest(nest: LoopNest) -> list[str]:
    """Human-readable invariant violations; empty when the nest is well formed."""
    problems = []
    bufs = {b.name: b for b in nest.buffers}
    for bi, block in enumerate(nest.blocks):
        scope = [l.name for l in block.loops]
        if len(set(scope)) != len(scope):
            problems.append(f"block {bi}: duplicate loop names {scope}")
        for l in block.loops:
            if not isinstance(l.extent, (int, np.integer)) or l.extent < 1:
                problems.append(f"block {bi}: loop {l.name} has extent {l.extent}")
        calls = block.intrinsic_calls
        if len(calls) > 1:
            problems.append(f"block {bi}: {len(calls)} intrinsic calls in one block (at most one allowed)")
        for stmt in block.body:
            for acc in stmt.accesses:
                buf = bufs.get(acc.buffer)
                if buf is None:
                    problems.append(f"block {bi}: access to unknown buffer {acc.buffer}")
                    continue
                if len(acc.indices) != len(buf.shape):
                    problems.append(f"block {bi}: {acc} has rank {len(acc.indices)}, buffer rank {len(buf.shape)}")
                for idx in acc.indices:
                    if not isinstance(idx, AffineExpr):
                        problems.append(f"block {bi}: non-affine index {idx!r} in access to {acc.buffer}")
                    elif not idx.vars <= set(scope):
                        problems.append(f"block {bi}: index {idx} uses loops not in scope")
    # perfect tiling of the main block against the op extents
    spec = nest.spec
    extents = {"m": spec.m, "n": spec.n, "k": spec.k} if spec.kind is OpKind.MATMUL else {"n": spec.n}
    covered: dict[str, int] = {}
    for l in nest.main.loops:
        covered[l.origin] = covered.get(l.origin, 1) * l.extent
    for call in nest.main.intrinsic_calls[:1]:  # extra calls are reported above
        v = call.variant
        if v.kind is IntrinsicKind.MULTIVMUL:
            covered["n"] = covered.get("n", 1) * v.j
            covered["k"] = covered.get("k", 1) * v.vl
        else:
            covered["n"] = covered.get("n", 1) * v.vl
    for name, ext in extents.items():
        if covered.get(name, 1) != ext:
            problems.append(f"loop {name}: tiled extents multiply to {covered.get(name, 1)}, expected {ext}")
    return problems


# --------------------------------------------------------------------------
# Scalar evaluation
# --------------------------------------------------------------------------

def _flat_index(acc: Access, shape, env) -> np.ndarray:
    idx = [np.broadcast_to(np.asarray(i.evaluate(env)), env["__shape__"]).ravel() for i in acc.indices]
    return np.ravel_multi_index(idx, shape)


def _work_dtype(dtype: DType):
    return np.float32 if dtype is DType.FLOAT16 else dtype.np_dtype


def exec_scalar_block(loops: Sequence[Loop], stmt, arrays: dict[str, np.ndarray],
                      env: Mapping[str, int] | None = None) -> None:
    """Execute one scalar statement over a perfect loop nest, in loop order.

    ``arrays`` maps buffer names to writable arrays (views are fine); the
    update is applied in place.  Accumulation runs sequentially in iteration
    order so float results match a plain scalar loop.
    """
    extents = [l.extent for l in loops]
    grid = np.indices(extents, dtype=np.int64) if loops else np.zeros((0,), dtype=np.int64)
    full_env = dict(env or {})
    full_env["__shape__"] = tuple(extents)
    for axis, l in enumerate(loops):
        full_env[l.name] = grid[axis]
    shp = lambda a: arrays[a.buffer].shape
    if isinstance(stmt, Mac):
        dst = arrays[stmt.dst.buffer]
        d = _flat_index(stmt.dst, dst.shape, full_env)
        a = arrays[stmt.a.buffer].ravel()[_flat_index(stmt.a, shp(stmt.a), full_env)]
        b = arrays[stmt.b.buffer].ravel()[_flat_index(stmt.b, shp(stmt.b), full_env)]
        flat = dst.reshape(-1)
        if np.issubdtype(dst.dtype, np.integer):
            # modular sums are order independent; wrap once at the end
            work = flat.astype(np.int64)
            np.add.at(work, d, a.astype(np.int64) * b.astype(np.int64))
            flat[...] = work.astype(dst.dtype)
        else:
            wt = np.float32 if dst.dtype == np.float16 else dst.dtype
            work = flat.astype(wt)
            np.add.at(work, d, a.astype(wt) * b.astype(wt))
            flat[...] = work.astype(dst.dtype)
    elif isinstance(stmt, Copy):
        dst = arrays[stmt.dst.buffer]
        d = _flat_index(stmt.dst, dst.shape, full_env)
        s = arrays[stmt.src.buffer].ravel()[_flat_index(stmt.src, shp(stmt.src), full_env)]
        dst.reshape(-1)[d] = s.astype(dst.dtype)
    elif isinstance(stmt, Requant):
        dst = arrays[stmt.dst.buffer]
        d = _flat_index(stmt.dst, dst.shape, full_env)
        s = arrays[stmt.src.buffer].ravel()[_flat_index(stmt.src, shp(stmt.src), full_env)]
        dst.reshape(-1)[d] = requantize(s, stmt.params)
    else:
        raise TypeError(f"not a scalar statement: {stmt!r}")


def _exec_intrinsic_block(block: Block, call: IntrinsicCall, arrays, env=None) -> None:
    v = call.variant
    for point in np.ndindex(*[l.extent for l in block.loops]):
        e = dict(env or {})
        e.update(zip((l.name for l in block.loops), point))
        ai = [int(i.evaluate(e)) for i in call.a.indices]
        bi = [int(i.evaluate(e)) for i in call.b.indices]
        ci = [int(i.evaluate(e)) for i in call.c.indices]
        A, B, C = arrays[call.a.buffer], arrays[call.b.buffer], arrays[call.c.buffer]
        if v.kind is IntrinsicKind.MULTIVMUL:
            a = A[ai[0], ai[1]:ai[1] + v.vl]
            b = B[bi[0]:bi[0] + v.j, bi[1]:bi[1] + v.vl]
            c = C[ci[0], ci[1]:ci[1] + v.j]
            C[ci[0], ci[1]:ci[1] + v.j] = ref_multivmul(a, b, c, v)
        else:
            sl = slice(ci[0], ci[0] + v.vl)
            C[sl] = ref_vmacc(A[ai[0]:ai[0] + v.vl], B[bi[0]:bi[0] + v.vl], C[sl], v)


def exec_block(block: Block, arrays: dict[str, np.ndarray]) -> None:
    if block.intrinsic_calls:
        for stmt in block.body:
            _exec_intrinsic_block(block, stmt, arrays)
        return
    if len(block.body) == 1:
        exec_scalar_block(block.loops, block.body[0], arrays)
        return
    # several statements: interleave per iteration
    for point in np.ndindex(*[l.extent for l in block.loops]):
        env = dict(zip((l.name for l in block.loops), point))
        for stmt in block.body:
            exec_scalar_block((), stmt, arrays, env)


def allocate(nest: LoopNest, inputs: Mapping[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    arrays = {}
    for buf in nest.buffers:
        if inputs and buf.name in inputs:
            arr = np.asarray(inputs[buf.name])
            if arr.shape != buf.shape:
                raise SpecError(f"input {buf.name} has shape {arr.shape}, expected {buf.shape}")
            arrays[buf.name] = arr.astype(buf.dtype.np_dtype, copy=True)
        else:
            arrays[buf.name] = np.zeros(buf.shape, dtype=buf.dtype.np_dtype)
    return arrays


def evaluate_nest(nest: LoopNest, inputs: Mapping[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """Reference evaluation of every block; returns all buffers after execution."""
    arrays = allocate(nest, inputs)
    for block in nest.blocks:
        exec_block(block, arrays)
    return arrays


def random_inputs(nest: LoopNest, seed: int = 0) -> dict[str, np.ndarray]:
    """Seeded pseudo-random inputs (and initial accumulator contents)."""
    rng = np.random.default_rng(seed)
    out = {}
    for buf in nest.buffers:
        if buf.role is Role.OUTPUT:
            continue
        if buf.role is Role.ACCUMULATOR and nest.spec.kind is OpKind.MATMUL:
            continue  # initialised from D by the prologue
        dt = buf.dtype
        if dt.is_float:
            out[buf.name] = rng.uniform(-1, 1, size=buf.shape).astype(dt.np_dtype)
        elif dt is DType.INT32:
            out[buf.name] = rng.integers(-(1 << 12), 1 << 12, size=buf.shape, dtype=np.int32)
        else:
            info = np.iinfo(dt.np_dtype)
            out[buf.name] = rng.integers(info.min, info.max, size=buf.shape, endpoint=True).astype(dt.np_dtype)
    return out
