"""Schedule traces, loop splitting/reordering and tensorization."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .dtypes import DType
from .errors import NoMatchError, ScheduleError
from .ir import AffineExpr, Access, Block, IntrinsicCall, Loop, LoopNest, Mac, OpKind
from .registry import BlockShape, IntrinsicKind, IntrinsicVariant, Registry, match_block


@dataclass(frozen=True)
class ScheduleTrace:
    """One point of the schedule space.

    ``tile_factors`` holds, per main-block loop in canonical order, the
    outer-to-inner factor list; ``loop_order`` names the resulting sub-loops
    outermost first.  ``seed_decisions`` are the raw sampler choices.
    """

    tile_factors: tuple[tuple[int, ...], ...]
    loop_order: tuple[str, ...]
    variant: IntrinsicVariant | None = None
    seed_decisions: tuple[int, ...] = field(default=(), compare=False)

    @classmethod
    def identity(cls, nest: LoopNest) -> "ScheduleTrace":
        return cls(tuple((l.extent,) for l in nest.main.loops),
                   tuple(l.name for l in nest.main.loops), None)

    @property
    def vl(self) -> int | None:
        return None if self.variant is None else self.variant.vl

    @property
    def j(self) -> int | None:
        return None if self.variant is None else self.variant.j

    def key(self) -> tuple:
        return (self.tile_factors, self.loop_order, None if self.variant is None else self.variant.key)

    def to_dict(self) -> dict:
        v = self.variant
        return {
            "tile_factors": [list(f) for f in self.tile_factors],
            "loop_order": list(self.loop_order),
            "variant": None if v is None else {"kind": v.kind.value, "dtype": v.in_dtype.label,
                                               "vl": v.vl, "j": v.j},
            "seed_decisions": list(self.seed_decisions),
        }

    @classmethod
    def from_dict(cls, data: dict, registry: Registry) -> "ScheduleTrace":
        v = data.get("variant")
        variant = None
        if v is not None:
            variant = registry.get(IntrinsicKind(v["kind"]), DType.parse(v["dtype"]), v["vl"], v.get("j"))
        return cls(tuple(tuple(f) for f in data["tile_factors"]), tuple(data["loop_order"]), variant,
                   tuple(data.get("seed_decisions", ())))


def sub_loop_names(name: str, nfactors: int) -> list[str]:
    return [name] if nfactors == 1 else [f"{name}{i}" for i in range(nfactors)]


def apply_schedule(nest: LoopNest, trace: ScheduleTrace) -> LoopNest:
    """Split the main-block loops by ``trace.tile_factors`` and reorder them."""
    if nest.is_tensorized:
        raise ScheduleError("cannot reschedule a tensorized nest")
    loops = nest.main.loops
    if len(trace.tile_factors) != len(loops):
        raise ScheduleError(f"trace has factors for {len(trace.tile_factors)} loops, nest has {len(loops)}")
    subs: dict[str, Loop] = {}
    mapping: dict[str, AffineExpr] = {}
    for loop, factors in zip(loops, trace.tile_factors):
        if not factors or any(f < 1 for f in factors):
            raise ScheduleError(f"loop {loop.name}: factors must be positive, got {list(factors)}")
        prod = math.prod(factors)
        if prod != loop.extent:
            raise ScheduleError(f"loop {loop.name}: factors {prod} ≠ extent {loop.extent}")
        names = sub_loop_names(loop.name, len(factors))
        expr = AffineExpr()
        stride = 1
        for sub, f in reversed(list(zip(names, factors))):
            subs[sub] = Loop(sub, f, loop.origin)
            expr = expr + AffineExpr.var(sub, stride)
            stride *= f
        mapping[loop.name] = expr
    if sorted(trace.loop_order) != sorted(subs):
        raise ScheduleError(f"loop order {list(trace.loop_order)} is not a permutation of {sorted(subs)}")
    body = tuple(s.substitute(mapping) for s in nest.main.body)
    return nest.with_main(Block(tuple(subs[n] for n in trace.loop_order), body))


def inner_block_shape(nest: LoopNest) -> BlockShape:
    """Shape of the innermost candidate block of the main nest."""
    spec = nest.spec
    loops = nest.main.loops
    if spec.kind is OpKind.MATMUL:
        if len(loops) < 2:
            raise NoMatchError("matmul block needs two inner loops")
        return BlockShape(IntrinsicKind.MULTIVMUL, spec.in_dtype, spec.acc_dtype, loops[-2].extent, loops[-1].extent)
    return BlockShape(IntrinsicKind.VMACC, spec.in_dtype, spec.acc_dtype, loops[-1].extent)


def _zero(access: Access, names) -> Access:
    return access.substitute({n: AffineExpr() for n in names})


def tensorize_block(nest: LoopNest, variant: IntrinsicVariant) -> LoopNest:
    """Replace the innermost block by a single call of ``variant``.

    The block must have exactly the intrinsic's definition shape and unit
    stride along the vector dimension; otherwise :class:`NoMatchError`.
    """
    if nest.is_tensorized:
        raise NoMatchError("nest is already tensorized")
    if len(nest.main.body) != 1 or not isinstance(nest.main.body[0], Mac):
        raise NoMatchError("main block is not a single multiply-accumulate")
    shape = inner_block_shape(nest)
    if not match_block(shape, variant):
        raise NoMatchError(f"block {shape.kind.value} (n={shape.n_inner}, k={shape.k_inner}, "
                           f"{shape.in_dtype.label}->{shape.acc_dtype.label}) does not match {variant.name}")
    stmt: Mac = nest.main.body[0]
    loops = nest.main.loops
    if variant.kind is IntrinsicKind.MULTIVMUL:
        jl, kl = loops[-2], loops[-1]
        if (jl.origin, kl.origin) != ("n", "k"):
            raise NoMatchError(f"inner loops {jl.name}, {kl.name} are not (n, k) sub-loops")
        # C[i, j] / A[i, kk] / B[j, kk] must walk their last (or row) index with unit step
        ok = (stmt.dst.indices[1].coeff(jl.name) == 1 and stmt.b.indices[0].coeff(jl.name) == 1
              and stmt.a.indices[1].coeff(kl.name) == 1 and stmt.b.indices[1].coeff(kl.name) == 1)
        inner = (jl.name, kl.name)
        outer = loops[:-2]
    else:
        il = loops[-1]
        ok = all(acc.indices[0].coeff(il.name) == 1 for acc in stmt.accesses)
        inner = (il.name,)
        outer = loops[:-1]
    if not ok:
        raise NoMatchError("inner loops do not have unit stride in the operands")
    call = IntrinsicCall(variant, _zero(stmt.a, inner), _zero(stmt.b, inner), _zero(stmt.dst, inner))
    return nest.with_main(Block(tuple(outer), (call,)))


def realize(nest: LoopNest, trace: ScheduleTrace) -> LoopNest:
    """Schedule and, when the trace selects an intrinsic, tensorize."""
    scheduled = apply_schedule(nest, trace)
    if trace.variant is not None:
        scheduled = tensorize_block(scheduled, trace.variant)
    return scheduled
