from __future__ import annotations

import math
import random

import pytest

from triage_sim.decoder_model import JitterModel, LatencyModel
from triage_sim.metrics import csv_row
from triage_sim.sim_engine import (
    SimConfig,
    Simulation,
    check_sync,
    check_termination,
    run_simulation,
    scheduling_delay,
)
from triage_sim.slice_graph import ConstraintGraph, SliceState
from triage_sim.timeline import build_timeline, compute_deadline
from triage_sim.workload import generate_synthetic, parse_workload


def _w(doc: str):
    return parse_workload(doc.strip() + "\n")


def _cfg(**kw) -> SimConfig:
    base = dict(
        scheduler="st_fifo",
        m=1,
        speed=1.0,
        latency=LatencyModel(alpha=1.17, d=9, buffer_b=0),
        seed=0,
    )
    base.update(kw)
    return SimConfig(**base)


CHAIN3 = "LAYOUT 1 1\nQUBIT a 0 0\nLAYER 2"


def test_trivial_chain_keeps_up():
    sim = Simulation(_cfg(), _w(CHAIN3))
    r = sim.run()
    assert r.idle_layers_inserted == 0
    assert not r.terminated_early
    finishes = sorted(t.t_finish for t in sim.tasks.values())
    assert finishes == [2.0, 3.0, 4.0]


def test_slow_chain_backlog_no_criticals():
    sim = Simulation(_cfg(speed=0.5), _w(CHAIN3))
    r = sim.run()
    assert r.idle_layers_inserted == 0
    finishes = sorted(t.t_finish for t in sim.tasks.values())
    # Serialized by temporal edges: each decode takes 2 layer-times.
    assert finishes == [3.0, 5.0, 7.0]
    assert r.end_time == 7.0


def test_no_time_travel_and_conservation():
    w = generate_synthetic(3, 20, 0.2, 0.5, 2, seed=5)
    sim = Simulation(
        _cfg(m=4, scheduler="st_weighted", speed=1.5, latency=LatencyModel(d=9, buffer_b=1)), w
    )
    r = sim.run()
    assert not r.terminated_early
    for task in sim.tasks.values():
        if task.cancelled:
            continue
        assert task.t_finish > task.t_start
        for s in task.slices:
            assert task.t_start >= s.t + 1 - 1e-9
    for s in sim.tl.slices_by_id.values():
        assert s.state is SliceState.COMPLETED


def test_critical_at_layer_zero_never_stalls():
    w = _w("LAYOUT 1 1\nQUBIT a 0 0\nLAYER 0\n  CRITICAL a\nLAYER 2")
    r = run_simulation(_cfg(), w)
    assert r.idle_layers_inserted == 0


def test_check_sync_unit():
    tl = build_timeline(_w("LAYOUT 1 1\nQUBIT a 0 0\nLAYER 2\n  CRITICAL a"))
    tl.slice_at(0, (0, 0)).state = SliceState.COMPLETED
    tl.slice_at(1, (0, 0)).state = SliceState.PENDING
    assert not check_sync(tl, 2)
    tl.slice_at(1, (0, 0)).state = SliceState.COMPLETED
    assert check_sync(tl, 2)


def test_sync_failure_inserts_exactly_until_cone_drains():
    # Critical at layer 1; its predecessor decodes in exactly 2 cycles, so
    # the first check fails once and the second check passes.
    w = _w("LAYOUT 1 1\nQUBIT a 0 0\nLAYER 1\n  CRITICAL a")
    cfg = _cfg(speed=0.5)
    sim = Simulation(cfg, w)
    r = sim.run()
    assert not r.terminated_early
    assert r.idle_layers_inserted == 1
    assert r.total_layers == 3
    # The stall layer sits right below the shifted critical layer.
    assert sim.tl.layers[1].idle_inserted
    assert sim.tl.layers[2].has_critical
    # Inserted idle slices carry temporal edges only.
    for rec in sim.tl.layers:
        if rec.idle_inserted:
            for s in rec.slices:
                assert s.kind == "IDLE"
                assert s.mask & 0b111100 == 0


def test_starved_run_terminates_exactly_past_threshold():
    w = generate_synthetic(2, 12, 0.5, 0.5, 2, seed=3)
    cfg = _cfg(m=1, speed=0.1, scheduler="st_fifo", termination_factor=10.0)
    sim = Simulation(cfg, w)
    r = sim.run()
    assert r.terminated_early
    assert r.idle_layers_inserted == 10 * 12 + 1  # strictly greater, never before


def test_termination_rule_boundary():
    assert not check_termination(20, 2, 10.0)
    assert check_termination(21, 2, 10.0)
    assert not check_termination(0, 0, 10.0)
    assert check_termination(1, 0, 10.0)


def test_deadline_shifts_during_run():
    w = _w("LAYOUT 1 1\nQUBIT a 0 0\nLAYER 5\n  CRITICAL a\nLAYER 6")
    cfg = _cfg(speed=0.5, termination_factor=2.0)
    sim = Simulation(cfg, w)
    sim.run()
    # 5 inserted layers (strict > 2x7=14? no: factor 2, orig 7 -> cap 14).
    inserted = sim.tl.inserted_idle_count
    assert inserted >= 1
    s0 = sim.tl.slice_at(0, (0, 0))
    assert compute_deadline(sim.tl, s0) == 5 + inserted


def test_deterministic_with_jitter():
    w = generate_synthetic(3, 25, 0.2, 0.5, 2, seed=9)
    cfg = dict(
        scheduler="st_weighted",
        m=3,
        speed=1.2,
        latency=LatencyModel(d=9, buffer_b=1),
        jitter=JitterModel(enabled=True, p_phys=1e-3),
        seed=1234,
        event_log_enabled=True,
    )
    a = run_simulation(SimConfig(**cfg), w)
    b = run_simulation(SimConfig(**cfg), w)
    assert a.event_log == b.event_log
    assert a.idle_layers_inserted == b.idle_layers_inserted
    assert a.utilization_trace == b.utilization_trace
    row_a = csv_row("x", "st_weighted", 3, 1.2, a.metrics, a.terminated_early)
    row_b = csv_row("x", "st_weighted", 3, 1.2, b.metrics, b.terminated_early)
    assert row_a == row_b


def test_total_layers_invariant():
    w = generate_synthetic(4, 30, 0.25, 0.5, 2, seed=2)
    cfg = _cfg(m=8, speed=0.8, scheduler="st_fifo", latency=LatencyModel(d=9, buffer_b=1, speed_mode="tau_ratio"))
    r = run_simulation(cfg, w)
    assert not r.terminated_early
    assert r.total_layers == r.original_layers + r.idle_layers_inserted
    assert r.generated_layers == r.total_layers


def test_scheduling_delay_shapes():
    assert scheduling_delay(0.0, 1.0) == 0.0
    assert scheduling_delay(0.1, 2.0) == pytest.approx(0.2)
    big = scheduling_delay(0.1, 1.0, scope_size=100)
    small = scheduling_delay(0.1, 1.0, scope_size=10)
    assert big / small == pytest.approx((100 * math.log(100)) / (10 * math.log(10)))
    assert scheduling_delay(0.1, 1.0, scope_size=1) == 0.0


def test_delay_ratio_slows_dispatch():
    w = generate_synthetic(3, 20, 0.2, 0.5, 2, seed=5)
    lm = LatencyModel(d=9, buffer_b=1, speed_mode="tau_ratio")
    fast = run_simulation(_cfg(m=6, speed=0.8, scheduler="st_fifo", latency=lm), w)
    slow = run_simulation(_cfg(m=6, speed=0.8, scheduler="st_fifo", latency=lm, delay_ratio=0.2), w)
    assert slow.end_time >= fast.end_time
    assert slow.idle_layers_inserted >= fast.idle_layers_inserted


# --- baseline scheduler semantics ------------------------------------------


SLIDE_DOC = (
    "LAYOUT 1 2\nQUBIT a 0 0\nQUBIT b 0 1\n"
    "LAYER 1\n  OP MERGE a b\nLAYER 3"
)


def test_sliding_single_task_in_flight():
    w = _w(SLIDE_DOC)
    sim = Simulation(_cfg(scheduler="sliding", m=8, speed=1.0), w)
    r = sim.run()
    assert r.peak_decoders_used == 1
    merge_tasks = [t for t in sim.tasks.values() if len(t.slices) == 2]
    assert len(merge_tasks) == 1  # the merged layer decodes as one block
    assert all(len(t.slices) == 1 for t in sim.tasks.values() if t not in merge_tasks)


def test_sliding_strict_layer_order():
    w = _w(SLIDE_DOC)
    sim = Simulation(_cfg(scheduler="sliding", m=4, speed=1.0), w)
    sim.run()
    by_start = sorted(sim.tasks.values(), key=lambda t: t.t_start)
    layers = [max(s.t for s in t.slices) for t in by_start]
    assert layers == sorted(layers)


def test_sliding_equivalent_to_serial_on_single_qubit():
    w = _w(CHAIN3)
    sim = Simulation(_cfg(scheduler="sliding", m=8, speed=1.0), w)
    r = sim.run()
    assert all(len(t.slices) == 1 for t in sim.tasks.values())
    assert r.peak_decoders_used == 1


def test_time_parallel_no_adjacent_layer_overlap():
    w = generate_synthetic(3, 15, 0.2, 0.6, 3, seed=8)
    sim = Simulation(_cfg(scheduler="time_parallel", m=6, speed=1.5), w)
    sim.run()
    tasks = [t for t in sim.tasks.values() if not t.cancelled]
    for i, a in enumerate(tasks):
        for b in tasks[i + 1 :]:
            if a.t_start < b.t_finish and b.t_start < a.t_finish:
                pa = {(s.t, s.pos) for s in a.slices}
                pb = {(s.t, s.pos) for s in b.slices}
                for (ta, qa) in pa:
                    for (tb, qb) in pb:
                        assert not (qa == qb and abs(ta - tb) == 1), (
                            f"components sharing {qa} at layers {ta},{tb} overlapped"
                        )


def test_time_parallel_merges_monolithic():
    doc = "LAYOUT 1 3\nQUBIT a 0 0\nQUBIT b 0 1\nQUBIT c 0 2\nLAYER 0\n  OP MERGE a b c\nLAYER 2\n  OP MERGE a b c\nLAYER 3"
    sim = Simulation(_cfg(scheduler="time_parallel", m=8, speed=1.0), _w(doc))
    sim.run()
    merge_tasks = [t for t in sim.tasks.values() if len(t.slices) == 3]
    assert len(merge_tasks) == 2


def test_time_parallel_alternating_layers_for_full_width_merges():
    doc_lines = ["LAYOUT 1 3", "QUBIT a 0 0", "QUBIT b 0 1", "QUBIT c 0 2"]
    for t in range(6):
        doc_lines.append(f"LAYER {t}")
        doc_lines.append("  OP MERGE a b c")
    sim = Simulation(_cfg(scheduler="time_parallel", m=8, speed=1.0), _w("\n".join(doc_lines)))
    sim.run()
    tasks = list(sim.tasks.values())
    for i, a in enumerate(tasks):
        for b in tasks[i + 1 :]:
            if a.t_start < b.t_finish and b.t_start < a.t_finish:
                assert abs(a.slices[0].t - b.slices[0].t) >= 2


def test_swiper_speculation_beats_plain_fifo_on_chain():
    lm = LatencyModel(d=9, buffer_b=0, speed_mode="tau_ratio")
    w = _w("LAYOUT 1 1\nQUBIT a 0 0\nLAYER 4")
    base = dict(m=1, speed=1.3, latency=lm, seed=7)
    fifo = run_simulation(SimConfig(scheduler="st_fifo", **base), w)
    import dataclasses

    from triage_sim.schedulers import SpeculationParams

    spec = run_simulation(
        SimConfig(scheduler="swiper", speculation=SpeculationParams(0.0, 0.0), **base), w
    )
    assert spec.end_time < fifo.end_time
    assert spec.task_counts["speculative"] > 0


def test_swiper_speculative_tasks_do_not_hold_decoders():
    lm = LatencyModel(d=9, buffer_b=0, speed_mode="tau_ratio")
    w = _w("LAYOUT 1 1\nQUBIT a 0 0\nLAYER 6")
    sim = Simulation(SimConfig(scheduler="swiper", m=1, speed=1.3, latency=lm, seed=1), w)
    r = sim.run()
    assert r.peak_decoders_used <= 1


def test_swiper_always_mispredict_still_completes():
    from triage_sim.schedulers import SpeculationParams

    lm = LatencyModel(d=9, buffer_b=0, speed_mode="tau_ratio")
    w = _w("LAYOUT 1 1\nQUBIT a 0 0\nLAYER 5")
    cfg = SimConfig(
        scheduler="swiper", m=2, speed=1.2, latency=lm, seed=3,
        speculation=SpeculationParams(0.999999, 0.10),
    )
    sim = Simulation(cfg, w)
    r = sim.run()
    assert not r.terminated_early
    for s in sim.tl.slices_by_id.values():
        assert s.state is SliceState.COMPLETED


def test_swiper_seeded_reproducible():
    w = generate_synthetic(3, 20, 0.15, 0.4, 2, seed=2)
    lm = LatencyModel(d=9, buffer_b=1, speed_mode="tau_ratio")
    cfg = dict(scheduler="swiper", m=4, speed=0.9, latency=lm, seed=99, event_log_enabled=True)
    a = run_simulation(SimConfig(**cfg), w)
    b = run_simulation(SimConfig(**cfg), w)
    assert a.event_log == b.event_log


# --- triage engine behavior --------------------------------------------------


def test_triage_enters_emergency_and_backfills():
    w = generate_synthetic(4, 60, 0.3, 0.5, 2, seed=11)
    lm = LatencyModel(d=9, buffer_b=1, speed_mode="tau_ratio")
    cfg = SimConfig(scheduler="triage", m=8, speed=0.85, latency=lm, seed=5)
    sim = Simulation(cfg, w)
    r = sim.run()
    assert r.task_counts["emergency"] > 0
    assert not r.terminated_early


def test_triage_scope_cap_forces_fallback():
    w = generate_synthetic(4, 60, 0.3, 0.5, 2, seed=11)
    lm = LatencyModel(d=9, buffer_b=1, speed_mode="tau_ratio")
    capped = SimConfig(scheduler="triage", m=8, speed=0.95, latency=lm, seed=5, scope_cap=1,
                       event_log_enabled=True, termination_factor=3)
    sim = Simulation(capped, w)
    r = sim.run()
    assert any(",fallback_steady," in line for line in r.event_log)
    uncapped = SimConfig(scheduler="triage", m=8, speed=0.95, latency=lm, seed=5, scope_cap=None,
                         termination_factor=3)
    r2 = run_simulation(uncapped, w)
    assert r.task_counts["emergency"] <= r2.task_counts["emergency"]


def test_triage_uncapped_allows_large_scopes():
    w = generate_synthetic(4, 60, 0.3, 0.5, 2, seed=11)
    lm = LatencyModel(d=9, buffer_b=1, speed_mode="tau_ratio")
    cfg = SimConfig(scheduler="triage", m=8, speed=0.95, latency=lm, seed=5, scope_cap=None)
    r = run_simulation(cfg, w)
    assert r.task_counts["emergency"] > 0


def test_invariant_checks_pass_across_schedulers():
    rng = random.Random(0)
    for sched in ("st_fifo", "st_mdf", "time_parallel", "sliding", "swiper", "triage"):
        w = generate_synthetic(3, 15, 0.25, 0.5, 2, seed=rng.randint(0, 99))
        lm = LatencyModel(d=9, buffer_b=1, speed_mode="tau_ratio")
        cfg = SimConfig(scheduler=sched, m=4, speed=0.9, latency=lm, seed=1, invariant_checks=True, termination_factor=3)
        run_simulation(cfg, w)  # raises InvariantViolationError on any breach
