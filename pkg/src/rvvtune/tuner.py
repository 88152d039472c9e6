"""Schedule search: probabilistic trace sampling, evolutionary refinement and
direct measurement on the emulator, plus the scalar and row-store baselines."""
from __future__ import annotations

import csv
import io
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dtypes import DType
from .emulator import ExecTrace, Memory, run_program
from .errors import ConfigError, NoMatchError, RVVTuneError, ScheduleError, TuningError
from .ir import LoopNest, OpKind, TensorOpSpec, build_nest, evaluate_nest, random_inputs
from .lowering import lower_nest, lower_rowstore
from .machine import MachineConfig
from .registry import IntrinsicKind, IntrinsicVariant, Registry
from .schedule import ScheduleTrace, realize, sub_loop_names

log = logging.getLogger(__name__)

FLOAT_RTOL = {DType.FLOAT32: 1e-4, DType.FLOAT16: 1e-2}


@dataclass(frozen=True)
class TunerConfig:
    trials: int = 100
    population: int = 16
    mutation_rate: float = 0.3
    seed: int = 0
    min_per_op: int = 10
    workers: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError(f"trials must be ≥ 1, got {self.trials}")
        if not 1 <= self.population:
            raise ConfigError(f"population must be ≥ 1, got {self.population}")
        if not 0 < self.mutation_rate <= 1:
            raise ConfigError(f"mutation_rate must be in (0, 1], got {self.mutation_rate}")
        if self.min_per_op < 1:
            raise ConfigError("min_per_op must be ≥ 1")


@dataclass
class Candidate:
    trace: ScheduleTrace | None
    cycles: float
    exec_trace: ExecTrace | None
    valid: bool
    error: str = ""
    label: str = "tuned"
    output: np.ndarray | None = field(default=None, repr=False)

    @property
    def variant(self) -> IntrinsicVariant | None:
        return None if self.trace is None else self.trace.variant

    def rank_key(self, order: int = 0) -> tuple:
        instr = self.exec_trace.total_instructions if self.exec_trace is not None else math.inf
        return (self.cycles, instr, order)


@dataclass(frozen=True)
class WorkloadGraph:
    name: str
    ops: tuple[TensorOpSpec, ...]

    def __post_init__(self):
        if not self.ops:
            raise ConfigError(f"graph {self.name!r} has no ops")
        object.__setattr__(self, "ops", tuple(self.ops))


@dataclass(frozen=True)
class HistoryRow:
    trial: int
    cycles: float
    best_so_far: float
    valid: bool
    variant_vl: int | None
    variant_j: int | None


HISTORY_COLUMNS = ("trial", "cycles", "best_so_far", "valid", "variant_vl", "variant_j")


def history_csv(history: Sequence[HistoryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for h in history:
        w.writerow([h.trial, _fmt(h.cycles), _fmt(h.best_so_far), int(h.valid),
                    "" if h.variant_vl is None else h.variant_vl, "" if h.variant_j is None else h.variant_j])
    return buf.getvalue()


def _fmt(x: float) -> str:
    return "inf" if math.isinf(x) else str(int(x))


# --------------------------------------------------------------------------
# Search space
# --------------------------------------------------------------------------

def _divisors(n: int) -> list[int]:
    return [d for d in range(1, n + 1) if n % d == 0]


def _unrank_permutation(items: Sequence[str], index: int) -> tuple[str, ...]:
    pool = list(items)
    out = []
    for i in range(len(pool), 0, -1):
        f = math.factorial(i - 1)
        pos, index = divmod(index, f)
        out.append(pool.pop(pos))
    return tuple(out)


class SearchSpace:
    """Decision-encoded schedule space of one nest.

    A trace is a sequence of integer decisions: the intrinsic choice, one
    tile-factor choice per loop and a loop-order choice.  Every decision is
    reduced modulo its (context dependent) number of options, so any integer
    sequence replays to a legal trace.
    """

    def __init__(self, nest: LoopNest, registry: Registry, allow_scalar: bool = True):
        self.nest = nest
        self.registry = registry
        spec = nest.spec
        kind = IntrinsicKind.MULTIVMUL if spec.kind is OpKind.MATMUL else IntrinsicKind.VMACC
        fitting = [v for v in registry.variants_for(kind, spec.in_dtype, spec.acc_dtype) if self._fits(v)]
        self.variant_choices: list[IntrinsicVariant | None] = ([None] if allow_scalar else []) + fitting
        if not self.variant_choices:
            raise TuningError(f"no intrinsic can match {spec.label} and scalar schedules are disabled")

    def _fits(self, v: IntrinsicVariant) -> bool:
        spec = self.nest.spec
        if v.kind is IntrinsicKind.MULTIVMUL:
            return spec.n % v.j == 0 and spec.k % v.vl == 0
        return spec.n % v.vl == 0

    @property
    def matchable(self) -> list[IntrinsicVariant]:
        return [v for v in self.variant_choices if v is not None]

    def _inner(self, variant: IntrinsicVariant | None) -> dict[str, int]:
        if variant is None:
            return {}
        if variant.kind is IntrinsicKind.MULTIVMUL:
            return {"n": variant.j, "k": variant.vl}
        return {"n": variant.vl}

    def _factor_choices(self, extent: int, inner: int | None) -> list[tuple[int, ...]]:
        if inner is not None:
            return [(extent // inner, inner)]
        return [(extent,)] + [(d, extent // d) for d in _divisors(extent)]

    def replay(self, decisions: Sequence[int]) -> ScheduleTrace:
        it = iter(decisions)
        used = []

        def take(count: int) -> int:
            raw = next(it, 0)
            val = int(raw) % count
            used.append(val)
            return val

        variant = self.variant_choices[take(len(self.variant_choices))]
        inner = self._inner(variant)
        factors = []
        names: list[str] = []
        fixed: list[str] = []
        for loop in self.nest.main.loops:
            opts = self._factor_choices(loop.extent, inner.get(loop.name))
            f = opts[take(len(opts))]
            factors.append(f)
            subs = sub_loop_names(loop.name, len(f))
            if loop.name in inner:
                fixed.append(subs[-1])
                subs = subs[:-1]
            names.extend(subs)
        perm = _unrank_permutation(names, take(math.factorial(len(names))))
        return ScheduleTrace(tuple(factors), perm + tuple(fixed), variant, tuple(used))

    def option_counts(self, decisions: Sequence[int]) -> list[int]:
        """Number of options at each decision point of a (normalised) sequence."""
        variant = self.variant_choices[decisions[0]]
        inner = self._inner(variant)
        counts = [len(self.variant_choices)]
        nsub = 0
        for loop, d in zip(self.nest.main.loops, decisions[1:]):
            opts = self._factor_choices(loop.extent, inner.get(loop.name))
            counts.append(len(opts))
            nsub += len(opts[d]) - (1 if loop.name in inner else 0)
        counts.append(math.factorial(nsub))
        return counts

    def sample(self, rng: np.random.Generator) -> ScheduleTrace:
        decisions: list[int] = []
        nloops = len(self.nest.main.loops)
        # draw sequentially: later option counts depend on earlier choices
        for pos in range(nloops + 2):
            probe = decisions + [0] * (nloops + 2 - len(decisions))
            count = self.option_counts(probe)[pos]
            decisions.append(int(rng.integers(count)))
        return self.replay(decisions)

    def identity(self) -> ScheduleTrace:
        if self.variant_choices[0] is not None:
            raise TuningError("scalar schedules are disabled")
        return self.replay([0] * (len(self.nest.main.loops) + 2))

    def greedy(self) -> ScheduleTrace | None:
        """Widest matchable intrinsic, untiled outer loops in canonical order."""
        for idx, v in enumerate(self.variant_choices):
            if v is not None:
                return self.replay([idx] + [0] * (len(self.nest.main.loops) + 1))
        return None

    def mutate(self, trace: ScheduleTrace, rng: np.random.Generator, rate: float,
               max_attempts: int = 100) -> ScheduleTrace:
        parent = list(trace.seed_decisions) or list(self.find_decisions(trace))
        for _ in range(max_attempts):
            child = [int(rng.integers(1 << 31)) if rng.random() < rate else d for d in parent]
            candidate = self.replay(child)
            if self.is_legal(candidate):
                return candidate
        return trace

    def is_legal(self, trace: ScheduleTrace) -> bool:
        try:
            realize(self.nest, trace)
        except (ScheduleError, NoMatchError):
            return False
        return True

    def find_decisions(self, trace: ScheduleTrace) -> tuple[int, ...]:
        """Recover the decision sequence of a trace built outside the sampler."""
        vidx = self.variant_choices.index(trace.variant)
        inner = self._inner(trace.variant)
        decisions = [vidx]
        for loop, f in zip(self.nest.main.loops, trace.tile_factors):
            decisions.append(self._factor_choices(loop.extent, inner.get(loop.name)).index(tuple(f)))
        nfree = len(trace.loop_order) - len(inner)
        free = sorted(trace.loop_order[:nfree], key=lambda n: self.replay(decisions + [0]).loop_order.index(n))
        for p, perm in enumerate(itertools.permutations(free)):
            if perm == tuple(trace.loop_order[:nfree]):
                decisions.append(p)
                return tuple(decisions)
        raise ScheduleError("trace is not part of this search space")


def sample_trace(nest: LoopNest, registry: Registry, rng: np.random.Generator,
                 allow_scalar: bool = True) -> ScheduleTrace:
    return SearchSpace(nest, registry, allow_scalar).sample(rng)


def mutate_trace(trace: ScheduleTrace, nest: LoopNest, registry: Registry, rng: np.random.Generator,
                 mutation_rate: float = 0.3) -> ScheduleTrace:
    return SearchSpace(nest, registry).mutate(trace, rng, mutation_rate)


# --------------------------------------------------------------------------
# Evaluation
# --------------------------------------------------------------------------

def outputs_match(out: np.ndarray, ref: np.ndarray, dtype: DType) -> bool:
    if out.shape != ref.shape:
        return False
    if not dtype.is_float:
        return bool(np.array_equal(out, ref))
    o = out.astype(np.float64)
    r = ref.astype(np.float64)
    if not np.all(np.isfinite(o)):
        return False
    scale = max(float(np.max(np.abs(r))) if r.size else 0.0, 1e-30)
    return float(np.max(np.abs(o - r))) <= FLOAT_RTOL[dtype] * scale


def _run(program, nest: LoopNest, machine: MachineConfig, inputs) -> tuple[np.ndarray, ExecTrace]:
    mem, trace = run_program(program, Memory(nest.buffers, inputs), machine)
    return mem.view(nest.output).copy(), trace


def evaluate_candidate(trace: ScheduleTrace, nest: LoopNest, registry: Registry, machine: MachineConfig,
                       reference_inputs=None, reference_output: np.ndarray | None = None) -> Candidate:
    """Schedule, tensorize, lower and run ``trace``; verify against the scalar reference."""
    inputs = reference_inputs if reference_inputs is not None else random_inputs(nest)
    if reference_output is None:
        reference_output = evaluate_nest(nest, inputs)[nest.output]
    try:
        program = lower_nest(realize(nest, trace), registry, machine)
        out, etrace = _run(program, nest, machine, inputs)
    except RVVTuneError as exc:
        return Candidate(trace, math.inf, None, False, f"{type(exc).__name__}: {exc}")
    if not outputs_match(out, reference_output, nest.buffer(nest.output).dtype):
        return Candidate(trace, math.inf, etrace, False, "output does not match the scalar reference", output=out)
    return Candidate(trace, etrace.total_cycles, etrace, True, output=out)


@dataclass
class TuneResult:
    spec: TensorOpSpec
    best: Candidate
    history: list[HistoryRow]
    candidates: list[Candidate]

    @property
    def evaluations(self) -> int:
        return len(self.candidates)


class _Evaluator:
    """Evaluates traces, caching repeated ones (repeats still use budget)."""

    def __init__(self, nest, registry, machine, inputs, reference, workers: int = 1):
        self.args = (nest, registry, machine, inputs, reference)
        self.cache: dict[tuple, Candidate] = {}
        self.workers = workers

    def _one(self, trace):
        return evaluate_candidate(trace, *self.args)

    def __call__(self, traces: list[ScheduleTrace]) -> list[Candidate]:
        todo = []
        for t in traces:
            if t.key() not in self.cache and t.key() not in {x.key() for x in todo}:
                todo.append(t)
        if self.workers > 1 and len(todo) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                results = list(pool.map(self._one, todo))
        else:
            results = [self._one(t) for t in todo]
        for t, c in zip(todo, results):
            self.cache[t.key()] = c
        out = []
        for t in traces:
            c = self.cache[t.key()]
            out.append(Candidate(t, c.cycles, c.exec_trace, c.valid, c.error, c.label, c.output))
        return out


def tune_op(spec: TensorOpSpec, registry: Registry, machine: MachineConfig,
            config: TunerConfig = TunerConfig(), inputs=None) -> TuneResult:
    """Evolutionary search with exactly ``config.trials`` measured candidates."""
    nest = build_nest(spec)
    inputs = inputs if inputs is not None else random_inputs(nest, config.seed)
    reference = evaluate_nest(nest, inputs)[nest.output]
    space = SearchSpace(nest, registry)
    rng = np.random.default_rng(config.seed)
    evaluate = _Evaluator(nest, registry, machine, inputs, reference, config.workers)

    first = [space.identity()]
    greedy = space.greedy()
    if greedy is not None:
        first.append(greedy)
    seen = {t.key() for t in first}
    attempts = 0
    while len(first) < min(config.population, config.trials) and attempts < 20 * config.population:
        attempts += 1
        t = space.sample(rng)
        if t.key() not in seen:
            seen.add(t.key())
            first.append(t)
    generation = first[:config.trials]

    candidates: list[Candidate] = []
    history: list[HistoryRow] = []
    best: Candidate | None = None
    best_order = -1
    while True:
        for cand in evaluate(generation):
            order = len(candidates)
            candidates.append(cand)
            if cand.valid and (best is None or cand.rank_key(order) < best.rank_key(best_order)):
                best, best_order = cand, order
            history.append(HistoryRow(order, cand.cycles, best.cycles if best else math.inf, cand.valid,
                                      cand.trace.vl, cand.trace.j))
        remaining = config.trials - len(candidates)
        if remaining <= 0:
            break
        ranked = sorted(((c, i) for i, c in enumerate(candidates) if c.valid), key=lambda ci: ci[0].rank_key(ci[1]))
        parents = [c for c, _ in ranked[:config.population]] or [candidates[0]]
        generation = []
        for _ in range(min(config.population, remaining)):
            parent = parents[int(rng.integers(len(parents)))]
            child = space.mutate(parent.trace, rng, config.mutation_rate)
            tries = 0
            while child.key() in seen and tries < 8:
                tries += 1
                child = space.mutate(parent.trace, rng, config.mutation_rate) if tries < 4 else space.sample(rng)
            seen.add(child.key())
            generation.append(child)
    if best is None:
        raise TuningError(f"no valid candidate for {spec.label} after {config.trials} trials; "
                          "increase the trial budget")
    log.info("%s: best %s cycles (%s)", spec.label, best.cycles,
             best.variant.name if best.variant else "scalar")
    return TuneResult(spec, best, history, candidates)


@dataclass
class GraphResult:
    graph: WorkloadGraph
    budgets: list[int]
    results: list[TuneResult]

    @property
    def total_cycles(self) -> float:
        return sum(r.best.cycles for r in self.results)


def split_budget(trials: int, nops: int, min_per_op: int) -> list[int]:
    """Equal split of ``trials`` over ops, remainder to the earliest ones."""
    need = min_per_op * nops
    if trials < need:
        raise ConfigError(f"graph with {nops} ops needs at least {need} trials "
                          f"({min_per_op} per op), got {trials}")
    base, rem = divmod(trials, nops)
    return [base + (1 if i < rem else 0) for i in range(nops)]


def tune_graph(graph: WorkloadGraph, registry: Registry, machine: MachineConfig,
               config: TunerConfig = TunerConfig()) -> GraphResult:
    budgets = split_budget(config.trials, len(graph.ops), config.min_per_op)
    results = []
    for i, (op, budget) in enumerate(zip(graph.ops, budgets)):
        sub = TunerConfig(budget, min(config.population, budget), config.mutation_rate,
                          config.seed + i, config.min_per_op, config.workers)
        results.append(tune_op(op, registry, machine, sub))
    return GraphResult(graph, budgets, results)


def baseline_schedules(spec: TensorOpSpec, registry: Registry, machine: MachineConfig,
                       inputs=None, seed: int = 0) -> dict[str, Candidate]:
    """Untuned scalar schedule and the row-store vector library stand-in."""
    nest = build_nest(spec)
    inputs = inputs if inputs is not None else random_inputs(nest, seed)
    reference = evaluate_nest(nest, inputs)[nest.output]
    scalar = evaluate_candidate(ScheduleTrace.identity(nest), nest, registry, machine, inputs, reference)
    scalar.label = "non-tuned"
    out = {"scalar": scalar}
    if spec.kind is OpKind.MATMUL:
        res, etrace = _run(lower_rowstore(nest, machine), nest, machine, inputs)
        ok = outputs_match(res, reference, nest.buffer(nest.output).dtype)
        out["rowstore"] = Candidate(None, etrace.total_cycles if ok else math.inf, etrace, ok,
                                    "" if ok else "output does not match the scalar reference", "rowstore", res)
    return out
