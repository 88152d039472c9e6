"""Element types understood by the IR, the emulator and the code generator."""
from __future__ import annotations

import enum

import numpy as np


class DType(enum.Enum):
    INT8 = ("int8", 8)
    INT16 = ("int16", 16)
    INT32 = ("int32", 32)
    FLOAT16 = ("float16", 16)
    FLOAT32 = ("float32", 32)

    def __init__(self, label: str, sew_bits: int):
        self.label = label
        self.sew_bits = sew_bits

    @property
    def is_float(self) -> bool:
        return self.label.startswith("float")

    @property
    def np_dtype(self) -> np.dtype:
        return np.dtype(self.label)

    @property
    def itemsize(self) -> int:
        return self.sew_bits // 8

    @property
    def c_type(self) -> str:
        return {"float32": "float", "float16": "_Float16"}.get(self.label, self.label + "_t")

    @property
    def type_code(self) -> str:
        """Element-type code used in RVV intrinsic names, e.g. ``i8`` or ``f32``."""
        return ("f" if self.is_float else "i") + str(self.sew_bits)

    def widened(self) -> "DType":
        if self.is_float:
            raise ValueError(f"no widening type for {self.label}")
        return {DType.INT8: DType.INT16, DType.INT16: DType.INT32}[self]

    @classmethod
    def parse(cls, name: str | "DType") -> "DType":
        if isinstance(name, DType):
            return name
        for dt in cls:
            if dt.label == name:
                return dt
        raise ValueError(f"unknown dtype {name!r}")

    @classmethod
    def for_element(cls, sew: int, is_float: bool) -> "DType":
        for dt in cls:
            if dt.sew_bits == sew and dt.is_float == is_float:
                return dt
        raise ValueError(f"no {'float' if is_float else 'int'} type with sew={sew}")

    def __repr__(self) -> str:
        return f"DType.{self.name}"


INT8 = DType.INT8
INT16 = DType.INT16
INT32 = DType.INT32
FLOAT16 = DType.FLOAT16
FLOAT32 = DType.FLOAT32
