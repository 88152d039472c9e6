"""Tensor intrinsic variants: VL-halved registration, block matching and
reference semantics of the vector-matrix multiply and elementwise macc."""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .dtypes import DType
from .errors import ContractError
from .machine import MachineConfig, vlmax

MIN_VL = 4


class IntrinsicKind(enum.Enum):
    MULTIVMUL = "multivmul"
    VMACC = "vmacc"


@dataclass(frozen=True)
class IntrinsicVariant:
    kind: IntrinsicKind
    in_dtype: DType
    acc_dtype: DType
    vl: int
    j: int | None
    src_lmul: int
    widen_factor: int = 1

    @property
    def key(self) -> tuple:
        return (self.kind, self.in_dtype, self.vl, self.j)

    @property
    def name(self) -> str:
        base = f"rvv_{self.kind.value}_{self.in_dtype.label}_vl{self.vl}"
        return base if self.j is None else f"{base}_j{self.j}"

    def check(self, vlen: int) -> None:
        cap = vlmax(vlen, self.in_dtype.sew_bits, self.src_lmul)
        if not MIN_VL <= self.vl <= cap:
            raise ContractError(f"{self.name}: VL outside [{MIN_VL}, {cap}]")
        ratio = cap // self.vl
        if cap % self.vl or ratio & (ratio - 1):
            raise ContractError(f"{self.name}: VL is not VLMAX / 2^i")
        if self.src_lmul * self.widen_factor > 8:
            raise ContractError(f"{self.name}: widened register group exceeds LMUL=8")
        if self.kind is IntrinsicKind.MULTIVMUL and self.j not in (vlen // 32, 1):
            raise ContractError(f"{self.name}: J must be VLEN/32 or 1")


# (src_lmul, widen_factor, acc dtype) per (kind, input dtype).  Int8 products
# widen into an LMUL=8 int16 group, so sources can only use LMUL=4.
_LAYOUTS = {
    (IntrinsicKind.MULTIVMUL, DType.INT8): (4, 2, DType.INT32),
    (IntrinsicKind.MULTIVMUL, DType.FLOAT32): (8, 1, DType.FLOAT32),
    (IntrinsicKind.MULTIVMUL, DType.FLOAT16): (8, 1, DType.FLOAT16),
    (IntrinsicKind.VMACC, DType.INT8): (8, 1, DType.INT8),
    (IntrinsicKind.VMACC, DType.INT16): (8, 1, DType.INT16),
    (IntrinsicKind.VMACC, DType.INT32): (8, 1, DType.INT32),
    (IntrinsicKind.VMACC, DType.FLOAT32): (8, 1, DType.FLOAT32),
    (IntrinsicKind.VMACC, DType.FLOAT16): (8, 1, DType.FLOAT16),
}


def vl_ladder(cap: int) -> list[int]:
    """VLMAX, VLMAX/2, ... down to MIN_VL."""
    out = []
    vl = cap
    while vl >= MIN_VL:
        out.append(vl)
        vl //= 2
    return out


def enumerate_variants(machine: MachineConfig, in_dtype: DType,
                       kinds: tuple[IntrinsicKind, ...] = tuple(IntrinsicKind)) -> list[IntrinsicVariant]:
    in_dtype = DType.parse(in_dtype)
    out = []
    for kind in kinds:
        layout = _LAYOUTS.get((kind, in_dtype))
        if layout is None:
            continue
        src_lmul, widen, acc = layout
        js = (machine.vlen // 32, 1) if kind is IntrinsicKind.MULTIVMUL else (None,)
        for vl in vl_ladder(machine.vlmax(in_dtype.sew_bits, src_lmul)):
            for j in js:
                out.append(IntrinsicVariant(kind, in_dtype, acc, vl, j, src_lmul, widen))
    return out


@dataclass(frozen=True)
class BlockShape:
    """Innermost compute block as seen by the matcher.

    ``n_inner`` is the output-row extent (J) for matmul blocks and the
    elementwise extent for macc blocks; ``k_inner`` is the reduction extent.
    """

    kind: IntrinsicKind
    in_dtype: DType
    acc_dtype: DType
    n_inner: int
    k_inner: int | None = None


def match_block(block: BlockShape, variant: IntrinsicVariant) -> bool:
    if block.kind is not variant.kind:
        return False
    if block.in_dtype is not variant.in_dtype or block.acc_dtype is not variant.acc_dtype:
        return False
    if variant.kind is IntrinsicKind.MULTIVMUL:
        return block.n_inner == variant.j and block.k_inner == variant.vl
    return block.n_inner == variant.vl


class Registry:
    """Immutable set of intrinsic variants for one machine, widest VL first."""

    def __init__(self, machine: MachineConfig, dtypes=(DType.INT8, DType.FLOAT16, DType.FLOAT32,
                                                       DType.INT16, DType.INT32)):
        self.machine = machine
        variants: dict[tuple, IntrinsicVariant] = {}
        for dt in dtypes:
            for v in enumerate_variants(machine, dt):
                v.check(machine.vlen)
                if v.key in variants:
                    raise ContractError(f"duplicate intrinsic key {v.key}")
                variants[v.key] = v
        self._variants = variants

    def __iter__(self) -> Iterator[IntrinsicVariant]:
        return iter(self._variants.values())

    def __len__(self) -> int:
        return len(self._variants)

    def __contains__(self, variant: IntrinsicVariant) -> bool:
        return self._variants.get(variant.key) == variant

    def get(self, kind: IntrinsicKind, in_dtype: DType, vl: int, j: int | None = None) -> IntrinsicVariant:
        try:
            return self._variants[(kind, in_dtype, vl, j)]
        except KeyError:
            raise KeyError(f"no intrinsic ({kind.value}, {in_dtype.label}, VL={vl}, J={j})") from None

    def variants_for(self, kind: IntrinsicKind, in_dtype: DType, acc_dtype: DType | None = None):
        return [v for v in self if v.kind is kind and v.in_dtype is in_dtype
                and (acc_dtype is None or v.acc_dtype is acc_dtype)]

    def matching(self, block: BlockShape) -> list[IntrinsicVariant]:
        return [v for v in self if match_block(block, v)]


def _as(x, dtype: DType) -> np.ndarray:
    return np.asarray(x).astype(dtype.np_dtype, copy=False)


def _compute_dtype(dtype: DType):
    # float16 is stored as 16-bit payloads but computed in float32
    return np.float32 if dtype is DType.FLOAT16 else dtype.np_dtype


def ref_multivmul(a, b, c, variant: IntrinsicVariant) -> np.ndarray:
    """C'[j] = C[j] + sum_i A[i] * B[j][i] over one VL-wide row slice and J rows."""
    a = np.asarray(a)
    b = np.asarray(b)
    c = np.asarray(c)
    if a.shape != (variant.vl,) or b.shape != (variant.j, variant.vl) or c.shape != (variant.j,):
        raise ContractError(f"{variant.name}: got A{a.shape}, B{b.shape}, C{c.shape}")
    acc = variant.acc_dtype
    if acc.is_float:
        ct = _compute_dtype(acc)
        prods = _as(a, variant.in_dtype).astype(ct) * _as(b, variant.in_dtype).astype(ct)
        sums = prods.sum(axis=1, dtype=ct)
        return (_as(c, acc).astype(ct) + sums).astype(acc.np_dtype)
    # widened products are exact in int64; the sum wraps at the accumulator width
    prods = _as(a, variant.in_dtype).astype(np.int64) * _as(b, variant.in_dtype).astype(np.int64)
    total = prods.sum(axis=1) + _as(c, acc).astype(np.int64)
    return total.astype(acc.np_dtype)


def ref_vmacc(a, b, c, variant: IntrinsicVariant) -> np.ndarray:
    """C'[i] = C[i] + A[i] * B[i]."""
    a = np.asarray(a)
    b = np.asarray(b)
    c = np.asarray(c)
    if not (a.shape == b.shape == c.shape == (variant.vl,)):
        raise ContractError(f"{variant.name}: got A{a.shape}, B{b.shape}, C{c.shape}")
    acc = variant.acc_dtype
    ct = _compute_dtype(acc)
    if acc.is_float:
        out = _as(c, acc).astype(ct) + _as(a, variant.in_dtype).astype(ct) * _as(b, variant.in_dtype).astype(ct)
        return out.astype(acc.np_dtype)
    out = _as(c, acc).astype(np.int64) + _as(a, variant.in_dtype).astype(np.int64) * _as(b, variant.in_dtype)
    return out.astype(acc.np_dtype)
