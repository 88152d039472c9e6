"""Acceptance suite: one PASS/FAIL line per criterion, with its time limit.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are printed
even when output capture is on.
"""
import itertools
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from rvvtune.codegen import emit_rvv_c, emit_scalar_c, intrinsic_name, is_legal_intrinsic_name
from rvvtune.dtypes import DType
from rvvtune.emulator import OPCODES, Memory, categorize_instruction, run_program
from rvvtune.ir import DEFAULT_REQUANT, TensorOpSpec, build_nest, random_inputs
from rvvtune.lowering import lower_nest
from rvvtune.machine import LEGAL_LMUL, LEGAL_SEW, Category, MachineConfig, vlmax
from rvvtune.registry import IntrinsicKind, IntrinsicVariant, Registry, ref_multivmul
from rvvtune.schedule import ScheduleTrace, realize
from rvvtune.tuner import (SearchSpace, TunerConfig, WorkloadGraph, baseline_schedules, tune_graph, tune_op)

MV, VM = IntrinsicKind.MULTIVMUL, IntrinsicKind.VMACC
SIZES = (4, 8, 16, 32, 64)
VLENS = (256, 512, 1024)
DTYPES = ("int8", "float32")


@pytest.fixture
def verdict(capsys):
    """Print a PASS/FAIL line for a criterion and fail the test on FAIL."""
    def report(number, title, failures, elapsed, limit):
        ok = not failures and elapsed < limit
        with capsys.disabled():
            line = f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({elapsed:.2f}s, limit {limit}s)"
            print(line + "".join(f"\n    - {f}" for f in failures[:10]))
        assert not failures, failures[:10]
        assert elapsed < limit, f"took {elapsed:.1f}s, limit {limit}s"
    return report


# --------------------------------------------------------------------------
# Independent oracles
# --------------------------------------------------------------------------

def oracle_requant(acc, mult, shift, zp):
    exact = Fraction(acc * mult, 2 ** (31 + shift))
    mag = abs(exact)
    r = int(mag) + (1 if mag - int(mag) >= Fraction(1, 2) else 0)
    return max(-128, min(127, (-r if exact < 0 else r) + zp))


def oracle_matmul(spec, inputs):
    """Python-int or float64 triple loop; B is stored n x k."""
    A, B, D = (np.asarray(inputs[x]) for x in "ABD")
    if spec.in_dtype is DType.INT8:
        acc = D.astype(object) + A.astype(object).dot(B.astype(object).T)
        p = spec.requant
        return np.array([[oracle_requant(int(v), p.multiplier, p.shift, p.zero_point) for v in row]
                         for row in acc], dtype=np.int64)
    return D.astype(np.float64) + A.astype(np.float64) @ B.astype(np.float64).T


def oracle_vlmax(vlen, sew, lmul):
    # register bits times group size, counted in elements
    return sum(1 for _ in range(0, vlen * lmul, sew))


def oracle_ladder(vlen, sew, lmul):
    out, cap = [], vlen * lmul // sew
    for i in range(16):
        if cap >> i >= 4 and cap % (1 << i) == 0:
            out.append(cap >> i)
    return out


# --------------------------------------------------------------------------
# Criterion 1 sweep, shared with criterion 5
# --------------------------------------------------------------------------

@pytest.fixture(scope="module")
def sweep():
    results = []
    t0 = time.perf_counter()
    for vlen in VLENS:
        machine = MachineConfig(vlen)
        reg = Registry(machine)
        for (m, n, k), dtype in itertools.product(itertools.product(SIZES, repeat=3), DTYPES):
            rq = DEFAULT_REQUANT if dtype == "int8" else None
            spec = TensorOpSpec.matmul(m, n, k, dtype, rq)
            nest = build_nest(spec)
            seed = m * 10007 + n * 101 + k + vlen
            inputs = random_inputs(nest, seed)
            res = tune_op(spec, reg, machine, TunerConfig(trials=12, seed=seed), inputs=inputs)
            base = baseline_schedules(spec, reg, machine, inputs=inputs, seed=seed)
            results.append((vlen, spec, inputs, res, base))
    return results, time.perf_counter() - t0


def test_criterion_1_oracle_equivalence(sweep, verdict):
    results, elapsed = sweep
    failures = []
    for vlen, spec, inputs, res, _ in results:
        want = oracle_matmul(spec, inputs)
        got = res.best.output
        if spec.in_dtype is DType.INT8:
            if not np.array_equal(got.astype(np.int64), want):
                failures.append(f"{spec.label} VLEN={vlen}: int8 output differs")
        else:
            # normwise: single entries near zero after cancellation have no meaningful relative error
            rel = np.max(np.abs(got - want)) / np.max(np.abs(want))
            if rel > 1e-4:
                failures.append(f"{spec.label} VLEN={vlen}: relative error {rel:.2e}")
    assert len(results) == 750
    verdict(1, f"tuned outputs equal the oracle on {len(results)} configurations", failures, elapsed, 120)


def test_criterion_2_vlmax(verdict):
    t0 = time.perf_counter()
    failures = []
    for vlen in (128, 256, 512, 1024, 2048):
        for sew, lmul in itertools.product(LEGAL_SEW, LEGAL_LMUL):
            if vlmax(vlen, sew, lmul) != oracle_vlmax(vlen, sew, lmul):
                failures.append(f"vlmax({vlen},{sew},{lmul})")
    if vlmax(1024, 8, 8) != 1024:
        failures.append("vlmax(1024, 8, 8) != 1024")
    verdict(2, "VLMAX formula, exhaustive", failures, time.perf_counter() - t0, 1)


def test_criterion_3_registration(verdict):
    t0 = time.perf_counter()
    failures = []
    for vlen in (128, 256, 512, 1024, 2048):
        reg = Registry(MachineConfig(vlen))
        for dtype, sew, lmul in ((DType.INT8, 8, 4), (DType.FLOAT32, 32, 8), (DType.FLOAT16, 16, 8)):
            vs = reg.variants_for(MV, dtype)
            if sorted({v.vl for v in vs}, reverse=True) != oracle_ladder(vlen, sew, lmul):
                failures.append(f"VLEN={vlen} {dtype.label}: VL set {sorted({v.vl for v in vs})}")
            if {v.j for v in vs} != {vlen // 32, 1}:
                failures.append(f"VLEN={vlen} {dtype.label}: J set {sorted({v.j for v in vs})}")
        fm = reg.variants_for(VM, DType.FLOAT32)
        if sorted({v.vl for v in fm}, reverse=True) != oracle_ladder(vlen, 32, 8):
            failures.append(f"VLEN={vlen} vmacc float32 VL set")
    verdict(3, "VL halving ladder and J set", failures, time.perf_counter() - t0, 1)


def test_criterion_4_store_fraction(verdict):
    t0 = time.perf_counter()
    failures = []
    machine = MachineConfig(1024)
    reg = Registry(machine)
    for size in (32, 64):
        for dtype in DTYPES:
            spec = TensorOpSpec.matmul(size, size, size, dtype)
            res = tune_op(spec, reg, machine, TunerConfig(trials=30, seed=size))
            best = res.best
            if best.variant is None or best.variant.j != 32:
                failures.append(f"{spec.label}: best uses {best.variant.name if best.variant else 'scalar'}")
                continue
            store = best.exec_trace.percentages()[Category.STORE]
            if not store < 1.0:
                failures.append(f"{spec.label}: rvv_store_perc {store:.3f}%")
    res = tune_op(TensorOpSpec.matmul(16, 16, 16, "int8"), reg, machine, TunerConfig(trials=30))
    if res.best.variant is None or res.best.variant.j != 1:
        failures.append(f"16^3 selects {res.best.variant}")
    verdict(4, "store share below 1% with J=32, size 16 selects J=1", failures, time.perf_counter() - t0, 60)


def test_criterion_5_baseline_dominance(sweep, verdict):
    results, _ = sweep
    t0 = time.perf_counter()
    failures = []
    for vlen, spec, _, res, base in results:
        if res.best.cycles > base["scalar"].cycles:
            failures.append(f"{spec.label} VLEN={vlen}: tuned {res.best.cycles} > scalar {base['scalar'].cycles}")
        if min(spec.m, spec.n, spec.k) >= 32:
            tv = res.best.exec_trace.counts.get("vse", 0)
            rv = base["rowstore"].exec_trace.counts.get("vse", 0)
            if not tv < rv:
                failures.append(f"{spec.label} VLEN={vlen}: tuned vse {tv} >= rowstore vse {rv}")
    verdict(5, "tuned <= scalar cycles, fewer stores than row-store", failures, time.perf_counter() - t0, 60)


def test_criterion_6_search_properties(verdict):
    t0 = time.perf_counter()
    failures = []
    machine = MachineConfig(512)
    reg = Registry(machine)
    for spec, trials, seed in ((TensorOpSpec.matmul(8, 32, 32, "int8"), 37, 4), (TensorOpSpec.macc(256), 23, 9),
                               (TensorOpSpec.matmul(4, 16, 64), 1, 0), (TensorOpSpec.matmul(16, 16, 32), 50, 2)):
        cfg = TunerConfig(trials=trials, seed=seed, population=8)
        a, b = tune_op(spec, reg, machine, cfg), tune_op(spec, reg, machine, cfg)
        best = [h.best_so_far for h in a.history]
        if any(y > x for x, y in zip(best, best[1:])):
            failures.append(f"{spec.label}: best-so-far increases")
        if a.evaluations != trials or len(a.history) != trials:
            failures.append(f"{spec.label}: {a.evaluations} evaluations for {trials} trials")
        if a.best.trace.key() != b.best.trace.key() or a.best.cycles != b.best.cycles:
            failures.append(f"{spec.label}: same seed, different best")
        if a.candidates[0].trace.variant is not None:
            failures.append(f"{spec.label}: first candidate is not the scalar fallback")
    verdict(6, "search history, determinism, budget, scalar fallback", failures, time.perf_counter() - t0, 30)


def test_criterion_7_intrinsic_reference(verdict):
    t0 = time.perf_counter()
    failures = []
    rng = np.random.default_rng(77)
    for i in range(1000):
        vl = int(rng.choice([4, 8, 16, 32, 64]))
        j = int(rng.integers(1, 9))
        if i % 2:
            v = IntrinsicVariant(MV, DType.INT8, DType.INT32, vl, j, 4, 2)
            a, b, c = rng.integers(-128, 128, vl), rng.integers(-128, 128, (j, vl)), rng.integers(-999, 999, j)
            want = [int(c[r]) + sum(int(x) * int(y) for x, y in zip(a, b[r])) for r in range(j)]
            got = ref_multivmul(a, b, c, v).tolist()
            ok = got == want
        else:
            v = IntrinsicVariant(MV, DType.FLOAT32, DType.FLOAT32, vl, j, 8, 1)
            a, b, c = (rng.standard_normal(s).astype(np.float32) for s in (vl, (j, vl), j))
            want = [float(c[r]) + math.fsum(float(x) * float(y) for x, y in zip(a, b[r])) for r in range(j)]
            got = ref_multivmul(a, b, c, v)
            ok = np.allclose(got, want, rtol=1e-4, atol=1e-4)
        if not ok:
            failures.append(f"ref_multivmul mismatch at VL={vl} J={j}")
        # each row of a J-row call equals a J=1 call on that row alone
        one = IntrinsicVariant(MV, v.in_dtype, v.acc_dtype, vl, 1, v.src_lmul, v.widen_factor)
        rows = np.concatenate([ref_multivmul(a, b[r:r + 1], c[r:r + 1], one) for r in range(j)])
        if not np.array_equal(rows, ref_multivmul(a, b, c, v)):
            failures.append(f"row decomposition fails at VL={vl} J={j}")
    # the vslideup merge in the emulator reconstructs all J sums
    for vlen in (256, 512, 1024):
        machine = MachineConfig(vlen)
        reg = Registry(machine)
        j = vlen // 32
        for dtype in ("int8", "float32"):
            spec = TensorOpSpec.matmul(2, 2 * j, 64, dtype)
            nest = build_nest(spec)
            t = ScheduleTrace(((2,), (2, j), (1, 64)), ("m", "n0", "k0", "n1", "k1"),
                              reg.get(MV, DType.parse(dtype), 64, j))
            prog = lower_nest(realize(nest, t), reg, machine)
            if sum(i.opcode == "vslideup" for i in prog.instructions) != j - 1:
                failures.append(f"VLEN={vlen} {dtype}: expected {j - 1} vslideups per instance")
            inputs = random_inputs(nest, vlen)
            mem, _ = run_program(prog, Memory(nest.buffers, inputs), machine)
            want = oracle_matmul(spec, inputs) if dtype == "float32" else None
            if dtype == "int8":
                acc = inputs["D"].astype(object) + inputs["A"].astype(object).dot(inputs["B"].astype(object).T)
                ok = np.array_equal(mem.view("ACC").astype(np.int64), acc.astype(np.int64))
            else:
                ok = np.allclose(mem.view("C"), want, rtol=1e-4, atol=1e-4)
            if not ok:
                failures.append(f"VLEN={vlen} {dtype}: merged J={j} results differ")
    verdict(7, "intrinsic reference, row decomposition, slide merge", failures, time.perf_counter() - t0, 30)


GOLDEN_NAMES = ("rvv_qmm_4x8x16_j8_vl16.c", "rvv_fmm_2x8x32_j1_vl16.c", "rvv_macc_128_vl64.c",
                "scalar_qmm_4x4x4.c", "scalar_fmm_1x1x1.c")


def test_criterion_8_codegen_stability(verdict):
    from test_codegen import GOLDEN, _cases

    t0 = time.perf_counter()
    failures = []
    first, second = _cases(), _cases()
    for name in GOLDEN_NAMES:
        if first[name].text != second[name].text:
            failures.append(f"{name}: two runs differ")
        if (GOLDEN / name).read_text() != first[name].text:
            failures.append(f"{name}: differs from golden file")
    machine = MachineConfig(1024)
    reg = Registry(machine)
    for spec in (TensorOpSpec.matmul(4, 64, 64, "int8"), TensorOpSpec.matmul(2, 32, 128),
                 TensorOpSpec.matmul(2, 32, 64, "float16"), TensorOpSpec.macc(1024, "float32"),
                 TensorOpSpec.macc(1024, "int8")):
        nest = build_nest(spec)
        space = SearchSpace(nest, reg)
        for v in space.matchable:
            tnest = realize(nest, space.replay([space.variant_choices.index(v), 0, 0, 0, 0]))
            src = emit_rvv_c(tnest, reg, machine)
            bad = [c for c in src.intrinsic_calls if not is_legal_intrinsic_name(c)]
            if bad:
                failures.append(f"{v.name}: illegal names {bad[:3]}")
            expect = [intrinsic_name(i.opcode, i.sew, i.lmul, i.dtype.is_float)
                      for i in lower_nest(tnest, reg, machine).instructions]
            if src.intrinsic_calls != expect:
                failures.append(f"{v.name}: emitted calls differ from the lowered program")
        if emit_scalar_c(nest).text != emit_scalar_c(build_nest(spec)).text:
            failures.append(f"{spec.label}: scalar C not deterministic")
    verdict(8, "golden C files and intrinsic-name legality", failures, time.perf_counter() - t0, 10)


def test_criterion_9_trace_accounting(verdict):
    t0 = time.perf_counter()
    failures = []
    cats = set(Category)
    for op in OPCODES:
        if op == "scalar":
            continue
        c = categorize_instruction(op)
        if c not in cats:
            failures.append(f"{op} has no category")
    machine = MachineConfig(512)
    reg = Registry(machine)
    for spec in (TensorOpSpec.matmul(8, 32, 64, "int8"), TensorOpSpec.matmul(4, 16, 32), TensorOpSpec.macc(512)):
        res = tune_op(spec, reg, machine, TunerConfig(trials=10, seed=1))
        traces = [c.exec_trace for c in res.candidates if c.valid and c.exec_trace.vector_instructions]
        traces += [b.exec_trace for k, b in baseline_schedules(spec, reg, machine).items() if k != "scalar"]
        for et in traces:
            total = sum(et.percentages().values())
            if abs(total - 100) > 0.1:
                failures.append(f"{spec.label}: percentages sum to {total}")
            by_op = {}
            for op, n in et.counts.items():
                c = categorize_instruction(op)
                if c is not None:
                    by_op[c] = by_op.get(c, 0) + n
            if any(by_op.get(c, 0) != et.category_counts[c] for c in Category):
                failures.append(f"{spec.label}: category counts disagree with opcode counts")
    verdict(9, "category percentages and opcode mapping", failures, time.perf_counter() - t0, 10)


def test_criterion_10_graph_tuning(verdict):
    t0 = time.perf_counter()
    failures = []
    machine = MachineConfig(1024)
    reg = Registry(machine)
    graph = WorkloadGraph("desk", (TensorOpSpec.matmul(16, 64, 64, "int8", DEFAULT_REQUANT, "fc1"),
                                   TensorOpSpec.matmul(8, 32, 64, "int8", DEFAULT_REQUANT, "fc2"),
                                   TensorOpSpec.macc(1024, "float32", name="scale")))
    cfg = TunerConfig(trials=200, seed=5)
    result = tune_graph(graph, reg, machine, cfg)
    if sum(result.budgets) != 200 or min(result.budgets) < 10:
        failures.append(f"budgets {result.budgets}")
    for i, (spec, res) in enumerate(zip(graph.ops, result.results)):
        if res.evaluations < 10 or res.evaluations != result.budgets[i]:
            failures.append(f"{spec.label}: {res.evaluations} evaluations")
        if not res.best.valid:
            failures.append(f"{spec.label}: best not verified")
            continue
        inputs = random_inputs(build_nest(spec), cfg.seed + i)
        if spec.n == 1024:
            want = inputs["C"].astype(np.float64) + inputs["A"].astype(np.float64) * inputs["B"]
            ok = np.max(np.abs(res.best.output - want)) <= 1e-4 * np.max(np.abs(want))
        else:
            ok = np.array_equal(res.best.output.astype(np.int64), oracle_matmul(spec, inputs))
        if not ok:
            failures.append(f"{spec.label}: best output differs from the oracle")
    verdict(10, f"3-op graph, budgets {result.budgets}, verified bests", failures, time.perf_counter() - t0, 120)
