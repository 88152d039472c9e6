"""Autotuning of matrix-multiply and multiply-accumulate loop nests with
VL-parameterized RISC-V Vector tensor intrinsics, measured on a built-in
RVV emulator."""
from .dtypes import DType
from .errors import RVVTuneError
from .ir import OpKind, RequantParams, TensorOpSpec, build_nest, evaluate_nest, random_inputs
from .machine import Category, MachineConfig, vlmax
from .registry import IntrinsicKind, IntrinsicVariant, Registry, ref_multivmul, ref_vmacc
from .schedule import ScheduleTrace, apply_schedule, realize, tensorize_block
from .emulator import ExecTrace, Memory, run_program
from .lowering import lower_nest, lower_rowstore
from .tuner import TunerConfig, WorkloadGraph, baseline_schedules, tune_graph, tune_op
from .codegen import emit_rvv_c, emit_scalar_c, intrinsic_name, is_legal_intrinsic_name

__version__ = "0.1.0"
