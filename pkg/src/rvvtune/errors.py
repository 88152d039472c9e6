"""Exception hierarchy shared across the package."""


class RVVTuneError(Exception):
    pass


class ConfigError(RVVTuneError, ValueError):
    """Illegal machine or vector configuration (VLEN, SEW, LMUL, budgets)."""


class SpecError(RVVTuneError, ValueError):
    """A workload description violates its invariants."""


class ScheduleError(RVVTuneError, ValueError):
    pass


class NoMatchError(RVVTuneError):
    """A nest block does not match the shape or dtypes of an intrinsic."""


class ContractError(RVVTuneError, ValueError):
    """Operand shapes handed to an intrinsic reference do not fit the variant."""


class LoweringError(RVVTuneError):
    pass


class EmitError(RVVTuneError):
    pass


class NamingError(RVVTuneError, ValueError):
    pass


class TuningError(RVVTuneError):
    pass


class EmulatorFault(RVVTuneError):
    def __init__(self, msg: str, index: int | None = None):
        self.index = index
        super().__init__(msg if index is None else f"instruction {index}: {msg}")


class MemoryFault(EmulatorFault):
    def __init__(self, address: int, nbytes: int, index: int | None = None):
        self.address = address
        self.nbytes = nbytes
        super().__init__(f"access of {nbytes} bytes at 0x{address:x} is out of bounds", index)


class IllegalInstruction(EmulatorFault):
    pass


class WorkloadError(RVVTuneError, ValueError):
    """Schema violation in a workload descriptor; ``path`` is the JSON path."""

    def __init__(self, path: str, msg: str):
        self.path = path
        super().__init__(f"{path}: {msg}")
