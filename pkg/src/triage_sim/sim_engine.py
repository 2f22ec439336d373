"""Discrete-event loop: syndrome arrivals, decode completions, sync checks.

Syndrome layers arrive at t = 1, 2, ...; each arrival generates the next
timeline layer unless it carries a critical operation whose causal cone is
still undecoded, in which case an idle layer is inserted and generated in its
place.  Scheduling is retriggered after every completion and every arrival
(completions first at equal times).  A run aborts once inserted idle layers
exceed the termination factor times the original layer count.
"""

from __future__ import annotations

import heapq
import math
import random
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Sequence

from .decoder_model import (
    DecodeTask,
    DecoderPool,
    JitterModel,
    LatencyModel,
    block_decode_duration,
    decode_duration,
    sample_jitter_factor,
    sigma,
)
from .metrics import LerTable, Metrics, aggregate_ler, utilization, utilization_trace, wall_clock
from .schedulers import (
    EmergencyPlan,
    HeuristicWeights,
    PlanEntry,
    SpeculationParams,
    TriggerAction,
    TriggerState,
    backfill_budget,
    plan_emergency,
    schedule_steady,
    steady_order,
    triage_trigger,
)
from .slice_graph import ConstraintGraph, SliceState, select_conflict_free
from .timeline import (
    ConeCache,
    Slice,
    Timeline,
    build_timeline,
    causal_cone,
    cone_is_empty,
    compute_deadline,
)
from .workload import Workload

_EV_COMPLETION = 0
_EV_ARRIVAL = 1

_STEADY_POLICY_OF = {
    "st_fifo": "FIFO",
    "st_edf": "EDF",
    "st_mdf": "MDF",
    "st_weighted": "WEIGHTED",
}


class InvariantViolationError(RuntimeError):
    """A safety invariant (independent-set or conservation) was broken."""


@dataclass
class SimConfig:
    scheduler: str = "triage"
    m: int = 4
    speed: float | Sequence[float] = 1.0
    latency: LatencyModel = field(default_factory=LatencyModel)
    jitter: JitterModel = field(default_factory=JitterModel)
    weights: HeuristicWeights = field(default_factory=HeuristicWeights)
    tau_emergency: float = 4.0
    scope_cap: int | None = 100
    replan_fraction: float = 0.3
    min_replan_interval: float = 2.0
    backfill: bool = True
    speculation: SpeculationParams = field(default_factory=SpeculationParams)
    seed: int = 0
    termination_factor: float = 10.0
    delay_ratio: float = 0.0
    plan_cost_coeff: float = 0.01513
    plan_cost_ref: float = 1.0
    ler_table: LerTable = field(default_factory=LerTable)
    invariant_checks: bool = True
    event_log_enabled: bool = False
    event_log_limit: int = 100_000
    cone_cache_capacity: int = 64
    cone_traverse_completed: bool = False
    t_meas: float = 1e-6

    def pool_speeds(self) -> tuple[float, ...]:
        if isinstance(self.speed, (int, float)):
            return (float(self.speed),) * self.m
        speeds = tuple(float(x) for x in self.speed)
        if len(speeds) != self.m:
            raise ValueError(f"{len(speeds)} speeds given for {self.m} decoders")
        return speeds

    @property
    def mean_speed(self) -> float:
        speeds = self.pool_speeds()
        return sum(speeds) / len(speeds)


@dataclass
class SimResult:
    scheduler: str
    seed: int
    idle_layers_inserted: int
    total_layers: int
    original_layers: int
    generated_layers: int
    terminated_early: bool
    mean_utilization: float
    peak_decoders_used: int
    utilization_trace: list[tuple[float, int]]
    task_counts: dict[str, int]
    metrics: Metrics
    event_log: list[str]
    end_time: float


def check_termination(idle_inserted: int, original_layers: int, factor: float) -> bool:
    """Stop once inserted idles strictly exceed factor x original layers."""
    return idle_inserted > factor * original_layers


def check_sync(tl: Timeline, layer_index: int, cache: ConeCache | None = None, *, traverse_completed: bool = False) -> bool:
    """True iff every critical slice at the layer has an empty causal cone."""
    for s in tl.critical_slices(layer_index):
        if not cone_is_empty(tl, s, cache, traverse_completed=traverse_completed):
            return False
    return True


def scheduling_delay(
    delay_ratio: float,
    reference_decode: float,
    scope_size: int | None = None,
    plan_cost_coeff: float = 0.01513,
    plan_cost_ref: float = 1.0,
) -> float:
    """Simulated scheduler latency added to dispatch start times.

    Heuristic decisions cost ``delay_ratio`` reference decodes.  Emergency
    planning scales that by the fitted a * n * log(n) cost in scope size,
    normalized by ``plan_cost_ref``: the cost of one baseline heuristic
    decision expressed on the same fitted scale.
    """
    if delay_ratio <= 0:
        return 0.0
    if scope_size is None:
        return delay_ratio * reference_decode
    if scope_size < 2:
        return 0.0
    return (
        delay_ratio
        * reference_decode
        * (plan_cost_coeff / plan_cost_ref)
        * scope_size
        * math.log(scope_size)
    )


class Simulation:
    """One deterministic simulation run over a workload."""

    def __init__(self, cfg: SimConfig, workload: Workload):
        if cfg.scheduler not in ("sliding", "time_parallel", "swiper", "triage", *_STEADY_POLICY_OF):
            raise ValueError(f"unknown scheduler {cfg.scheduler!r}")
        self.cfg = cfg
        self.tl = build_timeline(workload)
        self.graph = ConstraintGraph(self.tl)
        self.pool = DecoderPool(cfg.pool_speeds())
        self.lm = cfg.latency
        self.cone_cache = ConeCache(cfg.cone_cache_capacity)
        self.jitter_rng = random.Random(f"{cfg.seed}:jitter")
        self.spec_rng = random.Random(f"{cfg.seed}:speculation")
        if cfg.jitter.enabled:
            if cfg.jitter.sigma_override is not None:
                self.jitter_sigma = cfg.jitter.sigma_override
            else:
                self.jitter_sigma = sigma(cfg.latency.d, cfg.jitter.p_phys, cfg.jitter)
        else:
            self.jitter_sigma = 0.0
        self.t_ref = decode_duration(0, self.lm, self.pool.mean_speed)

        self.pending: dict[int, Slice] = {}
        self.anchor_counts: dict[tuple, int] = {}
        self.anchor_heap: list[tuple[float, tuple]] = []
        self.events: list = []
        self._seq = 0
        self._task_seq = 0
        self.tasks: dict[int, DecodeTask] = {}
        self.active_tasks: dict[int, DecodeTask] = {}
        self.task_of_slice: dict[int, DecodeTask] = {}
        self.active_pool_tasks = 0
        self.idle_inserted = 0
        self.terminated_early = False
        self.t_now = 0.0
        self.end_time = 0.0
        self.task_counts = {"steady": 0, "emergency": 0, "backfill": 0, "speculative": 0}
        self.util_intervals: list[tuple[float, float]] = []
        self.event_log: list[str] = []
        self.driver = self._make_driver(cfg.scheduler)

    def _make_driver(self, name: str):
        if name in _STEADY_POLICY_OF:
            return _SteadyDriver(self, _STEADY_POLICY_OF[name])
        if name == "sliding":
            return _SlidingDriver(self)
        if name == "time_parallel":
            return _TimeParallelDriver(self)
        if name == "swiper":
            return _SwiperDriver(self)
        return _TriageDriver(self)

    # -- event plumbing --

    def _push(self, t: float, prio: int, payload) -> None:
        self._seq += 1
        heapq.heappush(self.events, (t, prio, self._seq, payload))

    def _log(self, kind: str, slice_id="", decoder="", detail="") -> None:
        if self.cfg.event_log_enabled and len(self.event_log) < self.cfg.event_log_limit:
            self.event_log.append(f"{self.t_now:.10g},{kind},{slice_id},{decoder},{detail}")

    # -- pending-set and deadline bookkeeping --

    def deadline_of(self, s: Slice) -> float:
        if s.anchor is None:
            return math.inf
        pos, k = s.anchor
        return self.tl.crit_layers[pos][k]

    def _pending_add(self, s: Slice) -> None:
        self.pending[s.id] = s
        a = s.anchor
        if a is not None:
            count = self.anchor_counts.get(a, 0)
            self.anchor_counts[a] = count + 1
            if count == 0:
                pos, k = a
                # Original indices are static keys whose order matches the
                # shifting current indices at all times.
                heapq.heappush(self.anchor_heap, (self.tl.orig_crit_layers[pos][k], a))

    def _pending_remove(self, s: Slice) -> None:
        if self.pending.pop(s.id, None) is not None and s.anchor is not None:
            self.anchor_counts[s.anchor] -= 1

    def _urgent_anchors(self, t_now: float, tau: float) -> list[tuple]:
        """Anchor keys whose critical layer is within tau layers of t_now."""
        out = []
        popped = []
        while self.anchor_heap:
            key, a = self.anchor_heap[0]
            if self.anchor_counts.get(a, 0) <= 0:
                heapq.heappop(self.anchor_heap)
                continue
            pos, k = a
            current = self.tl.crit_layers[pos][k]
            if current - t_now <= tau:
                heapq.heappop(self.anchor_heap)
                popped.append((key, a))
                out.append(a)
                continue
            break
        for item in popped:
            heapq.heappush(self.anchor_heap, item)
        return out

    # -- generation / sync --

    def _generate_layer(self) -> None:
        rec = self.tl.generate_next()
        for s in rec.slices:
            lst = self.tl.crit_layers[s.pos]
            i = bisect_left(lst, s.t)
            s.anchor = (s.pos, i) if i < len(lst) else None
            if self.graph.mark_generated(s) is SliceState.PENDING:
                self._pending_add(s)
        self._log("generate", detail=f"layer={self.tl.generated_count - 1}")

    def _check_sync(self, layer_index: int) -> bool:
        return check_sync(
            self.tl, layer_index, self.cone_cache, traverse_completed=self.cfg.cone_traverse_completed
        )

    def _insert_idle(self, layer_index: int) -> None:
        self.tl.insert_idle_layer(layer_index)
        self.graph.on_layer_inserted(layer_index)
        self.idle_inserted += 1
        self._log("insert_idle", detail=f"layer={layer_index};count={self.idle_inserted}")
        if check_termination(self.idle_inserted, self.tl.original_layer_count, self.cfg.termination_factor):
            self.terminated_early = True
            self._log("terminate", detail=f"idle={self.idle_inserted}")

    def _on_arrival(self) -> None:
        index = self.tl.generated_count
        if index >= len(self.tl.layers):
            return
        rec = self.tl.layers[index]
        if rec.has_critical and not self._check_sync(index):
            self._log("sync_fail", detail=f"layer={index}")
            self._insert_idle(index)
            if self.terminated_early:
                return
        self._generate_layer()
        if self.tl.generated_count < len(self.tl.layers):
            self._push(self.t_now + 1.0, _EV_ARRIVAL, None)
        self.driver.on_pass(self.t_now)

    # -- dispatch / completion --

    def dispatch(
        self,
        slices: tuple[Slice, ...],
        kind: str,
        start: float,
        *,
        speculative: bool = False,
        awaited_id: int | None = None,
        overhead: float = 1.0,
    ) -> DecodeTask:
        if speculative:
            decoder = -1
            speed = self.pool.mean_speed
        else:
            decoder = self.pool.first_free(self.t_now)
            if decoder is None:
                raise InvariantViolationError("dispatch with no free decoder")
            speed = self.pool.speeds[decoder]
        dur = block_decode_duration((s.degree for s in slices), self.lm, speed) * overhead
        if self.cfg.jitter.enabled:
            dur *= sample_jitter_factor(self.jitter_sigma, self.jitter_rng)
        finish = start + dur
        self._task_seq += 1
        task = DecodeTask(
            id=self._task_seq,
            slices=slices,
            decoder=decoder,
            t_start=start,
            t_finish=finish,
            kind=kind,
            awaited_id=awaited_id,
        )
        if self.cfg.invariant_checks:
            self._check_independence(task)
        if not speculative:
            self.pool.assign(decoder, self.t_now, finish)
            self.util_intervals.append((start, finish))
            self.active_pool_tasks += 1
        blocked = self.graph.apply_dispatch(slices, speculative=speculative)
        for s in slices:
            self._pending_remove(s)
            self.task_of_slice[s.id] = task
        for nbr in blocked:
            self._pending_remove(nbr)
        self.tasks[task.id] = task
        self.active_tasks[task.id] = task
        self.task_counts[kind] += 1
        self._push(finish, _EV_COMPLETION, task)
        self._log(
            "dispatch",
            slice_id="|".join(str(s.id) for s in slices),
            decoder=decoder,
            detail=f"kind={kind};start={start:.10g};finish={finish:.10g}",
        )
        return task

    def _check_independence(self, task: DecodeTask) -> None:
        internal = {s.id for s in task.slices}
        for s in task.slices:
            for nbr in self.graph.neighbors(s):
                if nbr.id in internal or nbr.id == task.awaited_id:
                    continue
                if nbr.state is SliceState.ASSIGNED:
                    raise InvariantViolationError(
                        f"slices {s.id} and {nbr.id} would decode concurrently"
                    )

    def finalize_task(self, task: DecodeTask) -> None:
        self.active_tasks.pop(task.id, None)
        if task.decoder >= 0:
            self.active_pool_tasks -= 1
        released = self.graph.apply_completion(task.slices)
        for s in task.slices:
            self.task_of_slice.pop(s.id, None)
            self.cone_cache.invalidate_member(s.id)
        for nbr in released:
            self._pending_add(nbr)
        self._log("complete", slice_id="|".join(str(s.id) for s in task.slices), decoder=task.decoder, detail=f"kind={task.kind}")
        self.driver.on_completed(task)

    def invalidate_speculative(self, task: DecodeTask) -> None:
        task.cancelled = True
        self.active_tasks.pop(task.id, None)
        s = task.slices[0]
        self.task_of_slice.pop(s.id, None)
        released = self.graph.apply_invalidation(s)
        if s.state is SliceState.PENDING:
            self._pending_add(s)
        for nbr in released:
            self._pending_add(nbr)
        self._log("mispredict", slice_id=s.id, detail="requeued")

    def _on_completion(self, task: DecodeTask) -> None:
        if task.cancelled:
            return
        task.finished = True
        if task.kind == "speculative" and not task.validated:
            return  # held until the awaited slice completes
        self.finalize_task(task)
        self.driver.on_pass(self.t_now)

    # -- main loop --

    def run(self) -> SimResult:
        self._push(1.0, _EV_ARRIVAL, None)
        while self.events and not self.terminated_early:
            t, prio, _, payload = heapq.heappop(self.events)
            self.t_now = t
            self.end_time = max(self.end_time, t)
            if prio == _EV_COMPLETION:
                self._on_completion(payload)
            else:
                self._on_arrival()
        return self._finalize()

    def _finalize(self) -> SimResult:
        if not self.terminated_early:
            for rec in self.tl.layers[: self.tl.generated_count]:
                for s in rec.slices:
                    if s.state is not SliceState.COMPLETED:
                        raise InvariantViolationError(
                            f"slice {s.id} ended in state {s.state.name} after a full run"
                        )
        trace = utilization_trace(self.util_intervals, self.end_time)
        mean_util = utilization(trace, self.pool.m, self.end_time)
        peak = max((active for _, active in trace), default=0)
        total_layers = len(self.tl.layers)
        m = Metrics(
            idle_layers=self.idle_inserted,
            total_layers=total_layers,
            aggregated_ler=aggregate_ler(self.tl, self.cfg.ler_table, self.tl.generated_count),
            mean_utilization=mean_util,
            peak_decoders_used=peak,
            wall_clock_estimate=wall_clock(total_layers, self.lm.d, self.cfg.t_meas),
        )
        return SimResult(
            scheduler=self.cfg.scheduler,
            seed=self.cfg.seed,
            idle_layers_inserted=self.idle_inserted,
            total_layers=total_layers,
            original_layers=self.tl.original_layer_count,
            generated_layers=self.tl.generated_count,
            terminated_early=self.terminated_early,
            mean_utilization=mean_util,
            peak_decoders_used=peak,
            utilization_trace=trace,
            task_counts=dict(self.task_counts),
            metrics=m,
            event_log=self.event_log,
            end_time=self.end_time,
        )


# -- drivers ---------------------------------------------------------------


class _DriverBase:
    def __init__(self, eng: Simulation):
        self.eng = eng

    def on_pass(self, t: float) -> None:
        raise NotImplementedError

    def on_completed(self, task: DecodeTask) -> None:
        pass


class _SteadyDriver(_DriverBase):
    def __init__(self, eng: Simulation, policy: str):
        super().__init__(eng)
        self.policy = policy

    def on_pass(self, t: float) -> None:
        eng = self.eng
        free = eng.pool.num_free(t)
        if free <= 0 or not eng.pending:
            return
        chosen = schedule_steady(
            list(eng.pending.values()),
            free,
            self.policy,
            eng.graph,
            tl=eng.tl,
            t_now=t,
            weights=eng.cfg.weights,
            deadline_of=eng.deadline_of,
        )
        if not chosen:
            return
        delay = scheduling_delay(eng.cfg.delay_ratio, eng.t_ref)
        for s in chosen:
            eng.dispatch((s,), "steady", t + delay)


class _SlidingDriver(_DriverBase):
    """Serial whole-block decoding in strict layer order, one task in flight."""

    def __init__(self, eng: Simulation):
        super().__init__(eng)
        self.layer_ptr = 0

    def on_pass(self, t: float) -> None:
        eng = self.eng
        if eng.active_pool_tasks > 0 or eng.pool.num_free(t) <= 0:
            return
        tl = eng.tl
        while self.layer_ptr < tl.generated_count and all(
            s.state is SliceState.COMPLETED for s in tl.layers[self.layer_ptr].slices
        ):
            self.layer_ptr += 1
        if self.layer_ptr >= tl.generated_count:
            return
        rec = tl.layers[self.layer_ptr]
        for comp in rec.components:
            if all(s.state is SliceState.COMPLETED for s in comp):
                continue
            if all(s.state is SliceState.PENDING and s.assigned_nbrs == 0 for s in comp):
                delay = scheduling_delay(eng.cfg.delay_ratio, eng.t_ref)
                eng.dispatch(comp, "steady", t + delay)
            return


class _TimeParallelDriver(_DriverBase):
    """Per-layer spatial components, multi-qubit operations kept monolithic."""

    def __init__(self, eng: Simulation):
        super().__init__(eng)
        self.layer_ptr = 0

    def on_pass(self, t: float) -> None:
        eng = self.eng
        free = eng.pool.num_free(t)
        if free <= 0:
            return
        tl = eng.tl
        while self.layer_ptr < tl.generated_count and all(
            s.state is SliceState.COMPLETED for s in tl.layers[self.layer_ptr].slices
        ):
            self.layer_ptr += 1
        selected: list[tuple[Slice, ...]] = []
        selected_layers: dict[tuple[int, int], set[int]] = {}
        for t_i in range(self.layer_ptr, tl.generated_count):
            for comp in tl.layers[t_i].components:
                if len(selected) >= free:
                    break
                if any(s.state is not SliceState.PENDING or s.assigned_nbrs for s in comp):
                    continue
                conflict = False
                for s in comp:
                    layers_here = selected_layers.get(s.pos)
                    if layers_here and (t_i - 1 in layers_here or t_i + 1 in layers_here):
                        conflict = True
                        break
                if conflict:
                    continue
                selected.append(comp)
                for s in comp:
                    selected_layers.setdefault(s.pos, set()).add(t_i)
            if len(selected) >= free:
                break
        delay = scheduling_delay(eng.cfg.delay_ratio, eng.t_ref)
        for comp in selected:
            eng.dispatch(comp, "steady", t + delay)


class _SwiperDriver(_DriverBase):
    """Successor-based speculative baseline over the FIFO policy.

    A slice blocked by exactly one running neighbor may start speculatively
    on the side speculation hardware (no pool slot) at an overhead premium;
    when the awaited neighbor completes, the speculation is validated or, at
    the misprediction rate, invalidated and re-dispatched from scratch.
    """

    def __init__(self, eng: Simulation):
        super().__init__(eng)
        self.params = eng.cfg.speculation
        self.awaiting: dict[int, list[DecodeTask]] = {}

    def on_pass(self, t: float) -> None:
        eng = self.eng
        delay = scheduling_delay(eng.cfg.delay_ratio, eng.t_ref)
        free = eng.pool.num_free(t)
        if free > 0 and eng.pending:
            chosen = schedule_steady(
                list(eng.pending.values()),
                free,
                "FIFO",
                eng.graph,
                tl=eng.tl,
                t_now=t,
                deadline_of=eng.deadline_of,
            )
            for s in chosen:
                eng.dispatch((s,), "steady", t + delay)
        candidates: dict[int, Slice] = {}
        for task in eng.active_tasks.values():
            for s in task.slices:
                for nbr in eng.graph.neighbors(s):
                    if nbr.state is SliceState.OCCUPIED and nbr.assigned_nbrs == 1:
                        candidates[nbr.id] = nbr
        for s in sorted(candidates.values(), key=lambda s: s.sort_key()):
            if s.state is not SliceState.OCCUPIED or s.assigned_nbrs != 1:
                continue
            awaited = next(nb for nb in eng.graph.neighbors(s) if nb.state is SliceState.ASSIGNED)
            task = eng.dispatch(
                (s,),
                "speculative",
                t + delay,
                speculative=True,
                awaited_id=awaited.id,
                overhead=1.0 + self.params.speculation_overhead,
            )
            self.awaiting.setdefault(awaited.id, []).append(task)

    def _invalidate_cascade(self, task: DecodeTask) -> None:
        # A failed prediction poisons every speculation chained on this slice:
        # dependents re-queue without a coin flip of their own.
        for dep in self.awaiting.pop(task.slices[0].id, []):
            if not dep.cancelled:
                self._invalidate_cascade(dep)
        self.eng.invalidate_speculative(task)

    def on_completed(self, task: DecodeTask) -> None:
        eng = self.eng
        for s in task.slices:
            for spec_task in self.awaiting.pop(s.id, []):
                if spec_task.cancelled:
                    continue
                if eng.spec_rng.random() < self.params.misprediction_rate:
                    self._invalidate_cascade(spec_task)
                else:
                    spec_task.validated = True
                    if spec_task.finished:
                        eng.finalize_task(spec_task)


class _TriageDriver(_DriverBase):
    """Dual-mode scheduling: weighted steady dispatch plus a pre-planned
    emergency mode that resolves urgent causal cones, with opportunistic
    backfilling of decoders the plan leaves idle."""

    def __init__(self, eng: Simulation):
        super().__init__(eng)
        cfg = eng.cfg
        self.state = TriggerState(
            tau_emergency=cfg.tau_emergency,
            scope_cap=cfg.scope_cap,
            replan_fraction=cfg.replan_fraction,
            min_replan_interval=cfg.min_replan_interval,
        )
        self.plan: EmergencyPlan | None = None
        self.plan_queue: list[PlanEntry] = []
        self.running_backfill = 0

    def _cone_fn(self, root: Slice):
        return causal_cone(
            self.eng.tl, root, self.eng.cone_cache, traverse_completed=self.eng.cfg.cone_traverse_completed
        )

    def _planner(self, member_ids: set[int]):
        eng = self.eng
        t = eng.t_now
        plannable = [
            eng.tl.slices_by_id[i]
            for i in sorted(member_ids)
            if eng.tl.slices_by_id[i].state in (SliceState.PENDING, SliceState.OCCUPIED)
        ]
        if not plannable:
            return None
        min_start: dict[int, float] = {}
        for s in plannable:
            for nbr in eng.graph.neighbors(s):
                if nbr.state is SliceState.ASSIGNED:
                    task = eng.task_of_slice.get(nbr.id)
                    if task is not None:
                        min_start[s.id] = max(min_start.get(s.id, t), task.t_finish)
        plan = plan_emergency(
            plannable, t, eng.pool.snapshot(), eng.lm, graph=eng.graph, min_start=min_start
        )
        delay = scheduling_delay(
            eng.cfg.delay_ratio,
            eng.t_ref,
            scope_size=len(plannable),
            plan_cost_coeff=eng.cfg.plan_cost_coeff,
            plan_cost_ref=eng.cfg.plan_cost_ref,
        )
        return plan.shifted(delay)

    def _urgent_roots(self, t: float) -> list[Slice]:
        eng = self.eng
        anchors = eng._urgent_anchors(t, self.state.tau_emergency)
        roots: list[Slice] = []
        seen: set[int] = set()
        for pos, k in anchors:
            layer_index = eng.tl.crit_layers[pos][k]
            for s in eng.tl.critical_slices(layer_index):
                if s.id not in seen:
                    seen.add(s.id)
                    roots.append(s)
        roots.sort(key=lambda s: s.sort_key())
        return roots

    def _evaluate(self, t: float) -> None:
        eng = self.eng
        state = self.state
        roots = self._urgent_roots(t)
        decision = triage_trigger(state, roots, self._cone_fn, t, self._planner)
        if decision.action is TriggerAction.STAY_STEADY:
            if decision.root_ids:
                state.covered_roots |= decision.root_ids
            return
        if decision.action is TriggerAction.FALLBACK_STEADY:
            if state.emergency:
                self._exit_emergency("fallback")
            eng._log("fallback_steady", detail=f"roots={len(roots)}")
            return
        plan = decision.plan
        assert plan is not None and decision.scope is not None
        state.emergency = True
        state.active_scope = {
            sid for sid in decision.scope if eng.tl.slices_by_id[sid].state is not SliceState.COMPLETED
        }
        state.covered_roots |= decision.root_ids or set()
        state.last_replan_time = t
        self.plan = plan
        self.plan_queue = sorted(plan.entries, key=lambda e: e.t_start)
        eng._log(
            "plan" if decision.action is TriggerAction.ENTER_EMERGENCY else "replan",
            detail=f"scope={len(state.active_scope)};entries={len(plan.entries)};m_peak={plan.m_peak}",
        )

    def _exit_emergency(self, why: str) -> None:
        self.state.emergency = False
        self.state.active_scope = set()
        self.state.covered_roots = set()
        self.plan = None
        self.plan_queue = []
        self.eng._log("steady_mode", detail=why)

    def _execute_plan(self, t: float) -> int:
        """Dispatch due plan entries; blocked entries shift to later passes."""
        eng = self.eng
        dispatched = 0
        dispatched_ids: set[int] = set()
        free_left = eng.pool.num_free(t)
        retained: list[PlanEntry] = []
        queue = self.plan_queue
        for idx, entry in enumerate(queue):
            if entry.t_start > t or free_left <= 0:
                retained.extend(queue[idx:])
                break
            s = eng.tl.slices_by_id[entry.slice_id]
            if s.state is SliceState.COMPLETED:
                continue
            if (
                s.state is not SliceState.PENDING
                or s.assigned_nbrs
                or any(nb.id in dispatched_ids for nb in eng.graph.neighbors(s))
            ):
                retained.append(entry)
                continue
            eng.dispatch((s,), "emergency", t)
            dispatched += 1
            free_left -= 1
            dispatched_ids.add(s.id)
        self.plan_queue = retained
        return dispatched

    def _backfill(self, t: float, emergency_dispatched: int) -> None:
        eng = self.eng
        if self.plan is None or not eng.pending:
            return
        budget = backfill_budget(
            eng.pool.m,
            self.plan.m_peak,
            self.running_backfill,
            eng.pool.num_free(t),
            emergency_dispatched,
        )
        if budget <= 0:
            return
        scope = self.state.active_scope
        candidates = []
        for s in eng.pending.values():
            if s.id in scope:
                continue
            if any(nb.id in scope for nb in eng.graph.neighbors(s)):
                continue
            candidates.append(s)
        if not candidates:
            return
        ordered = steady_order(
            candidates, "WEIGHTED", t_now=t, weights=eng.cfg.weights, deadline_of=eng.deadline_of
        )
        chosen = select_conflict_free(ordered, budget, eng.graph)
        delay = scheduling_delay(eng.cfg.delay_ratio, eng.t_ref)
        for s in chosen:
            eng.dispatch((s,), "backfill", t + delay)
            self.running_backfill += 1

    def on_pass(self, t: float) -> None:
        eng = self.eng
        self._evaluate(t)
        if self.state.emergency:
            if eng.pool.num_free(t) <= 0:
                return
            dispatched = self._execute_plan(t)
            if eng.cfg.backfill:
                self._backfill(t, dispatched)
            return
        free = eng.pool.num_free(t)
        if free <= 0 or not eng.pending:
            return
        chosen = schedule_steady(
            list(eng.pending.values()),
            free,
            "WEIGHTED",
            eng.graph,
            tl=eng.tl,
            t_now=t,
            weights=eng.cfg.weights,
            deadline_of=eng.deadline_of,
        )
        delay = scheduling_delay(eng.cfg.delay_ratio, eng.t_ref)
        for s in chosen:
            eng.dispatch((s,), "steady", t + delay)

    def on_completed(self, task: DecodeTask) -> None:
        if task.kind == "backfill":
            self.running_backfill -= 1
        state = self.state
        if state.emergency:
            for s in task.slices:
                state.active_scope.discard(s.id)
            if not state.active_scope:
                self._exit_emergency("scope_complete")


def run_simulation(cfg: SimConfig, workload: Workload) -> SimResult:
    """Build and execute one simulation; deterministic for fixed config+seed."""
    return Simulation(cfg, workload).run()
