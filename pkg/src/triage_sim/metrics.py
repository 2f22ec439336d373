"""Evaluation quantities: aggregated logical error rate, utilization, wall clock."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .timeline import Timeline


@dataclass(frozen=True)
class LerTable:
    """Per-layer-per-patch logical error probabilities, keyed by instruction.

    Lookup order: exact (kind, patch count), then kind alone, then the
    uniform default.
    """

    default_p: float = 1e-3
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        for p in [self.default_p, *self.overrides.values()]:
            if not (0.0 <= p < 1.0):
                raise ValueError("per-cell probabilities must be within [0, 1)")

    def lookup(self, kind: str, n_patches: int) -> float:
        if (kind, n_patches) in self.overrides:
            return self.overrides[(kind, n_patches)]
        if kind in self.overrides:
            return self.overrides[kind]
        return self.default_p


@dataclass(frozen=True)
class Metrics:
    idle_layers: int
    total_layers: int
    aggregated_ler: float
    mean_utilization: float
    peak_decoders_used: int
    wall_clock_estimate: float


def aggregate_ler(tl: Timeline, table: LerTable, n_layers: int | None = None) -> float:
    """1 - product of per-cell survival over executed (layer, patch) cells.

    Accumulated in log space so tiny probabilities over many cells do not
    lose precision.
    """
    limit = len(tl.layers) if n_layers is None else n_layers
    log_survival = 0.0
    for rec in tl.layers[:limit]:
        for s in rec.slices:
            p = table.lookup(s.kind, len(s.route))
            if p > 0.0:
                log_survival += math.log1p(-p)
    return -math.expm1(log_survival)


def utilization(trace: list[tuple[float, int]], m: int, t_end: float) -> float:
    """Time-weighted mean of active-decoders/M over [0, t_end]."""
    if t_end <= 0 or m <= 0:
        return 0.0
    busy_time = 0.0
    prev_t = 0.0
    prev_active = 0
    for t, active in trace:
        busy_time += prev_active * (min(t, t_end) - prev_t)
        prev_t = min(t, t_end)
        prev_active = active
        if prev_t >= t_end:
            break
    busy_time += prev_active * max(0.0, t_end - prev_t)
    return busy_time / (m * t_end)


def utilization_trace(intervals: list[tuple[float, float]], t_end: float) -> list[tuple[float, int]]:
    """Step trace (time, active decoders) from task busy intervals."""
    events: list[tuple[float, int]] = []
    for start, finish in intervals:
        start = min(start, t_end)
        finish = min(finish, t_end)
        if finish > start:
            events.append((start, 1))
            events.append((finish, -1))
    events.sort(key=lambda e: (e[0], e[1]))
    trace: list[tuple[float, int]] = []
    active = 0
    for t, delta in events:
        active += delta
        if trace and trace[-1][0] == t:
            trace[-1] = (t, active)
        else:
            trace.append((t, active))
    return trace


def wall_clock(total_layers: int, d: int, t_meas: float) -> float:
    """Physical run time: layers x d measurement rounds x per-round time."""
    return total_layers * d * t_meas


def csv_header() -> str:
    return "run_id,scheduler,M,speed,idle_layers,total_layers,ler,utilization,terminated"


def csv_row(
    run_id: str,
    scheduler: str,
    m: int,
    speed: float,
    metrics: Metrics,
    terminated: bool,
) -> str:
    return (
        f"{run_id},{scheduler},{m},{speed:.10g},{metrics.idle_layers},{metrics.total_layers},"
        f"{metrics.aggregated_ler:.10g},{metrics.mean_utilization:.10g},{str(terminated).lower()}"
    )
