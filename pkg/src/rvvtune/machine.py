"""Emulated machine parameters and the instruction-class cost table."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

from .errors import ConfigError

LEGAL_VLEN = (128, 256, 512, 1024, 2048)
LEGAL_SEW = (8, 16, 32)
LEGAL_LMUL = (1, 2, 4, 8)
NUM_VREGS = 32


class Category(enum.Enum):
    """Instruction groups of the trace breakdown."""

    LOAD = "Load"
    STORE = "Store"
    REDUCTION = "Reduction"
    MULADD = "MulAdd"
    CONFIGURATION = "Configuration"
    OTHERS = "Others"


def _is_pow2(x: int) -> bool:
    return isinstance(x, int) and x > 0 and x & (x - 1) == 0


def vlmax(vlen: int, sew: int, lmul: int) -> int:
    """Maximum number of elements one instruction can process: VLEN * LMUL / SEW."""
    if vlen not in LEGAL_VLEN:
        raise ConfigError(f"unsupported VLEN {vlen}; expected one of {LEGAL_VLEN}")
    if sew not in LEGAL_SEW:
        raise ConfigError(f"unsupported SEW {sew}; expected one of {LEGAL_SEW}")
    if lmul not in LEGAL_LMUL:
        raise ConfigError(f"unsupported LMUL {lmul}; expected one of {LEGAL_LMUL}")
    return vlen * lmul // sew


def _default_costs() -> dict[Category, tuple[int, int]]:
    costs = {c: (2, 1) for c in Category}
    costs[Category.CONFIGURATION] = (2, 0)
    return costs


@dataclass(frozen=True)
class MachineConfig:
    """VLEN-configurable RVV machine with a linear chunked cost model.

    A vector instruction costs ``issue + ceil(vl * sew / dlen) * per_chunk``
    cycles, reductions add ``ceil(log2(vl))``; scalar instructions cost
    ``scalar_cycle`` each.
    """

    vlen: int = 1024
    dlen: int | None = None
    cost_table: dict[Category, tuple[int, int]] = field(default_factory=_default_costs)
    scalar_cycle: int = 1

    def __post_init__(self):
        if not _is_pow2(self.vlen) or self.vlen < 128 or self.vlen > LEGAL_VLEN[-1]:
            raise ConfigError(f"vlen must be a power of two ≥ 128 (at most {LEGAL_VLEN[-1]}), got {self.vlen}")
        if self.dlen is None:
            object.__setattr__(self, "dlen", self.vlen // 2)
        if not _is_pow2(self.dlen) or self.dlen > self.vlen:
            raise ConfigError(f"dlen must be a power of two ≤ vlen, got {self.dlen}")
        table = _default_costs()
        for key, val in dict(self.cost_table).items():
            cat = key if isinstance(key, Category) else Category(key)
            issue, chunk = val
            if issue < 0 or chunk < 0:
                raise ConfigError(f"negative cost for {cat.value}")
            table[cat] = (int(issue), int(chunk))
        object.__setattr__(self, "cost_table", table)
        if self.scalar_cycle < 1:
            raise ConfigError("scalar_cycle must be ≥ 1")

    @property
    def vlenb(self) -> int:
        return self.vlen // 8

    def vlmax(self, sew: int, lmul: int) -> int:
        return vlmax(self.vlen, sew, lmul)

    def vector_cost(self, category: Category, vl: int, sew: int) -> int:
        issue, chunk = self.cost_table[category]
        cycles = issue + math.ceil(vl * sew / self.dlen) * chunk
        if category is Category.REDUCTION:
            cycles += math.ceil(math.log2(max(vl, 1)))
        return cycles

    def __hash__(self):
        return hash((self.vlen, self.dlen, tuple(sorted((c.value, v) for c, v in self.cost_table.items())),
                     self.scalar_cycle))
