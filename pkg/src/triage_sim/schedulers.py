"""Scheduling policies: steady heuristics, emergency cone planning, trigger.

Steady policies order PENDING slices (FIFO / EDF / MDF / a weighted blend of
urgency and cost-efficiency) and take a greedy conflict-free prefix.  The
emergency planner runs a forward discrete-event simulation over one causal
cone and emits a dispatch table; the trigger decides when to enter, re-plan,
or fall back to steady mode, and the backfill budget reclaims decoders the
plan leaves idle.

Tie-breaking is uniform everywhere: primary key, then ascending layer, then
row-major position, then slice id.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Mapping, Sequence

from .decoder_model import DecoderPool, LatencyModel, decode_duration
from .slice_graph import ConstraintGraph, SliceState, select_conflict_free
from .timeline import CausalCone, Slice, Timeline, compute_deadline

POLICY_NAMES = (
    "sliding",
    "time_parallel",
    "st_fifo",
    "st_edf",
    "st_mdf",
    "st_weighted",
    "swiper",
    "triage",
)

STEADY_POLICIES = ("FIFO", "EDF", "MDF", "WEIGHTED")


@dataclass(frozen=True)
class HeuristicWeights:
    w_u: float = 0.5
    w_c: float = 0.5

    def __post_init__(self):
        if self.w_u < 0 or self.w_c < 0:
            raise ValueError("heuristic weights must be non-negative")
        if abs(self.w_u + self.w_c - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")


@dataclass(frozen=True)
class SpeculationParams:
    misprediction_rate: float = 0.10
    speculation_overhead: float = 0.10

    def __post_init__(self):
        if not (0 <= self.misprediction_rate < 1 and 0 <= self.speculation_overhead < 1):
            raise ValueError("speculation parameters must be within [0, 1)")


def priority_score(deadline_layer: float, degree: int, weights: HeuristicWeights, t_now: float) -> float:
    """Weighted blend of urgency and cost-efficiency; higher is more urgent."""
    if math.isinf(deadline_layer):
        urgency = 0.0
    else:
        urgency = 1.0 / max(1.0, deadline_layer - t_now)
    cost_eff = 1.0 / (degree + 1)
    return weights.w_u * urgency + weights.w_c * cost_eff


def slice_priority(tl: Timeline, s: Slice, weights: HeuristicWeights, t_now: float) -> float:
    return priority_score(compute_deadline(tl, s), s.degree, weights, t_now)


DeadlineFn = Callable[[Slice], float]


def steady_order(
    pending: Iterable[Slice],
    policy: str,
    *,
    t_now: float,
    weights: HeuristicWeights | None = None,
    deadline_of: DeadlineFn,
) -> list[Slice]:
    """Candidates sorted by the steady-mode policy's priority."""
    if policy == "FIFO":
        return sorted(pending, key=lambda s: s.sort_key())
    if policy == "EDF":
        return sorted(pending, key=lambda s: (deadline_of(s), *s.sort_key()))
    if policy == "MDF":
        return sorted(pending, key=lambda s: (s.degree, *s.sort_key()))
    if policy == "WEIGHTED":
        w = weights or HeuristicWeights()
        return sorted(
            pending,
            key=lambda s: (-priority_score(deadline_of(s), s.degree, w, t_now), *s.sort_key()),
        )
    raise ValueError(f"unknown steady policy {policy!r}")


def schedule_steady(
    pending: Iterable[Slice],
    free: int,
    policy: str,
    g: ConstraintGraph,
    *,
    tl: Timeline,
    t_now: float,
    weights: HeuristicWeights | None = None,
    deadline_of: DeadlineFn | None = None,
) -> list[Slice]:
    """Order candidates by policy, then take a conflict-free prefix."""
    if free <= 0:
        return []
    dfn = deadline_of or (lambda s: compute_deadline(tl, s))
    ordered = steady_order(pending, policy, t_now=t_now, weights=weights, deadline_of=dfn)
    return select_conflict_free(ordered, free, g)


# --- Emergency mode -------------------------------------------------------


@dataclass(frozen=True)
class PlanEntry:
    t_start: float
    t_finish: float
    slice_id: int
    decoder: int


@dataclass
class EmergencyPlan:
    entries: list[PlanEntry]
    m_peak: int
    scope: frozenset[int]
    created_at: float

    def shifted(self, delay: float) -> "EmergencyPlan":
        if delay <= 0:
            return self
        return EmergencyPlan(
            entries=[
                PlanEntry(e.t_start + delay, e.t_finish + delay, e.slice_id, e.decoder)
                for e in self.entries
            ],
            m_peak=self.m_peak,
            scope=self.scope,
            created_at=self.created_at,
        )


class ScopeCapExceeded(RuntimeError):
    """Cone larger than the configured scope cap; fall back to steady mode."""


def _peak_concurrency(intervals: list[tuple[float, float]]) -> int:
    events: list[tuple[float, int]] = []
    for start, finish in intervals:
        events.append((start, 1))
        events.append((finish, -1))
    events.sort(key=lambda e: (e[0], e[1]))
    peak = running = 0
    for _, delta in events:
        running += delta
        peak = max(peak, running)
    return peak


def plan_emergency(
    cone: Sequence[Slice],
    t_now: float,
    pool: DecoderPool,
    lm: LatencyModel,
    *,
    graph: ConstraintGraph,
    ready_time: Mapping[int, float] | None = None,
    min_start: Mapping[int, float] | None = None,
    scope_cap: int | None = None,
) -> EmergencyPlan:
    """Forward-simulate decoding of one causal cone into a dispatch table.

    Starting from per-slice earliest start times (generation readiness and
    any push-back from in-flight neighbors), the loop repeatedly advances a
    simulated clock to the next event, gathers ready slices, sorts them by
    unresolved degree, selects a conflict-free subset up to the free decoder
    count, and pushes back the start times of each dispatched slice's
    not-yet-planned neighbors to its finish time while decrementing their
    degrees.
    """
    if not cone:
        raise ValueError("cannot plan an empty cone")
    if scope_cap is not None and len(cone) > scope_cap:
        raise ScopeCapExceeded(f"cone of {len(cone)} slices exceeds scope cap {scope_cap}")

    ready_time = ready_time or {}
    min_start = min_start or {}
    slices = {s.id: s for s in cone}
    start: dict[int, float] = {}
    degree: dict[int, int] = {}
    for s in cone:
        t0 = max(t_now, ready_time.get(s.id, t_now), min_start.get(s.id, t_now))
        start[s.id] = t0
        degree[s.id] = s.degree

    version: dict[int, int] = {sid: 0 for sid in slices}
    heap: list[tuple[float, tuple[int, int, int, int], int, int]] = []
    for s in cone:
        heapq.heappush(heap, (start[s.id], s.sort_key(), s.id, 0))

    busy = list(pool.busy_until)
    speeds = pool.speeds
    remaining = set(slices)
    entries: list[PlanEntry] = []

    def pop_valid() -> int | None:
        while heap:
            t0, _, sid, ver = heap[0]
            if sid not in remaining or version[sid] != ver or start[sid] != t0:
                heapq.heappop(heap)
                continue
            return sid
        return None

    while remaining:
        head = pop_valid()
        assert head is not None, "plan queue drained with slices remaining"
        t_sim = start[head]
        while sum(1 for b in busy if b <= t_sim) == 0:
            t_sim = min(b for b in busy if b > t_sim)
        ready: list[Slice] = []
        while True:
            sid = pop_valid()
            if sid is None or start[sid] > t_sim:
                break
            heapq.heappop(heap)
            ready.append(slices[sid])
        ready.sort(key=lambda s: (degree[s.id], s.sort_key()))
        free_idx = [i for i, b in enumerate(busy) if b <= t_sim]
        dispatched: list[Slice] = []
        dispatched_ids: set[int] = set()
        for s in ready:
            if len(dispatched) >= len(free_idx):
                break
            if any(nb.id in dispatched_ids for nb in graph.neighbors(s)):
                continue
            dispatched.append(s)
            dispatched_ids.add(s.id)
        for k, s in enumerate(dispatched):
            decoder = free_idx[k]
            dur = decode_duration(degree[s.id], lm, speeds[decoder])
            t_fin = t_sim + dur
            busy[decoder] = t_fin
            entries.append(PlanEntry(t_sim, t_fin, s.id, decoder))
            remaining.discard(s.id)
            for nb in graph.neighbors(s):
                if nb.id in remaining:
                    start[nb.id] = max(start[nb.id], t_fin)
                    degree[nb.id] -= 1
                    version[nb.id] += 1
                    heapq.heappush(heap, (start[nb.id], nb.sort_key(), nb.id, version[nb.id]))
        for s in ready:
            if s.id in remaining and s.id not in dispatched_ids:
                version[s.id] += 1
                heapq.heappush(heap, (start[s.id], s.sort_key(), s.id, version[s.id]))

    # Entries stay in dispatch order (start times need not be monotone when a
    # non-dispatched ready slice waits for a later decoder release).
    m_peak = _peak_concurrency([(e.t_start, e.t_finish) for e in entries])
    return EmergencyPlan(entries=entries, m_peak=m_peak, scope=frozenset(slices), created_at=t_now)


# --- Triage trigger --------------------------------------------------------


class TriggerAction(Enum):
    STAY_STEADY = "stay_steady"
    ENTER_EMERGENCY = "enter_emergency"
    REPLAN = "replan"
    FALLBACK_STEADY = "fallback_steady"


@dataclass
class TriggerState:
    tau_emergency: float = 4.0
    scope_cap: int | None = 100
    replan_fraction: float = 0.3
    min_replan_interval: float = 2.0
    emergency: bool = False
    active_scope: set[int] = field(default_factory=set)
    covered_roots: set[int] = field(default_factory=set)
    last_replan_time: float = -math.inf


@dataclass
class TriggerDecision:
    action: TriggerAction
    plan: EmergencyPlan | None = None
    scope: set[int] | None = None
    root_ids: set[int] | None = None


def triage_trigger(
    state: TriggerState,
    urgent_roots: Sequence[Slice],
    cone_fn: Callable[[Slice], CausalCone],
    t_now: float,
    planner: Callable[[set[int]], EmergencyPlan | None],
) -> TriggerDecision:
    """Decide whether to enter emergency mode, re-plan, or stay put.

    A re-plan happens only when the urgent cones are not fully contained in
    the active scope, the expansion exceeds the re-plan fraction of the
    current scope, and the minimum interval since the last plan has passed.
    Oversized merged scopes fall back to steady mode.
    """
    if not urgent_roots:
        return TriggerDecision(TriggerAction.STAY_STEADY)
    cap = state.scope_cap
    if state.emergency:
        new_roots = [r for r in urgent_roots if r.id not in state.covered_roots]
        if not new_roots:
            return TriggerDecision(TriggerAction.STAY_STEADY)
        new_members: set[int] = set()
        for r in new_roots:
            new_members |= cone_fn(r).members
        merged = state.active_scope | new_members
        if cap is not None and len(merged) > cap:
            return TriggerDecision(TriggerAction.FALLBACK_STEADY)
        uncovered = new_members - state.active_scope
        root_ids = {r.id for r in new_roots}
        if not uncovered:
            return TriggerDecision(TriggerAction.STAY_STEADY, root_ids=root_ids)
        if len(uncovered) <= state.replan_fraction * len(state.active_scope):
            return TriggerDecision(TriggerAction.STAY_STEADY)
        if t_now - state.last_replan_time < state.min_replan_interval:
            return TriggerDecision(TriggerAction.STAY_STEADY)
        plan = planner(merged)
        if plan is None:
            return TriggerDecision(TriggerAction.STAY_STEADY)
        return TriggerDecision(TriggerAction.REPLAN, plan=plan, scope=merged, root_ids=root_ids)
    members: set[int] = set()
    for r in urgent_roots:
        members |= cone_fn(r).members
    if not members:
        return TriggerDecision(TriggerAction.STAY_STEADY)
    if cap is not None and len(members) > cap:
        return TriggerDecision(TriggerAction.FALLBACK_STEADY)
    plan = planner(members)
    if plan is None:
        return TriggerDecision(TriggerAction.STAY_STEADY)
    return TriggerDecision(
        TriggerAction.ENTER_EMERGENCY,
        plan=plan,
        scope=members,
        root_ids={r.id for r in urgent_roots},
    )


def backfill_budget(m: int, m_peak: int, running_backfill: int, free_now: int, emergency_dispatched: int) -> int:
    """Max decoders usable for backfill this pass without touching the plan."""
    return max(0, min(m - m_peak - running_backfill, free_now - emergency_dispatched))
