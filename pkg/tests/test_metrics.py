from __future__ import annotations

import math

import pytest

from triage_sim.metrics import (
    LerTable,
    aggregate_ler,
    csv_header,
    csv_row,
    utilization,
    utilization_trace,
    wall_clock,
)
from triage_sim.sim_engine import SimConfig, run_simulation
from triage_sim.decoder_model import LatencyModel
from triage_sim.timeline import build_timeline
from triage_sim.workload import generate_synthetic, parse_workload


def _tl(doc: str):
    return build_timeline(parse_workload(doc.strip() + "\n"))


def test_ler_zero_table():
    tl = _tl("LAYOUT 1 2\nQUBIT a 0 0\nQUBIT b 0 1\nLAYER 3")
    assert aggregate_ler(tl, LerTable(default_p=0.0)) == 0.0


def test_ler_single_cell():
    tl = _tl("LAYOUT 1 1\nQUBIT a 0 0\nLAYER 0")
    assert aggregate_ler(tl, LerTable(default_p=0.25)) == pytest.approx(0.25)


def test_ler_product_form():
    tl = _tl("LAYOUT 1 2\nQUBIT a 0 0\nQUBIT b 0 1\nLAYER 2")
    got = aggregate_ler(tl, LerTable(default_p=1e-3))
    assert got == pytest.approx(1 - 0.999**6)
    assert abs(got - 5.985e-3) < 5e-6


def test_ler_matches_naive_product_large():
    w = generate_synthetic(5, 400, 0.2, 0.4, 3, seed=1)
    tl = build_timeline(w)
    table = LerTable(default_p=1e-3, overrides={("MERGE", 2): 2e-3, "ROTATE": 5e-4})
    got = aggregate_ler(tl, table)
    prod = 1.0
    for rec in tl.layers:
        for s in rec.slices:
            prod *= 1 - table.lookup(s.kind, len(s.route))
    naive = 1 - prod
    assert abs(got - naive) <= 1e-12 * max(1.0, abs(naive)) + 1e-15


def test_ler_monotone_in_idle_layers():
    tl = _tl("LAYOUT 1 2\nQUBIT a 0 0\nQUBIT b 0 1\nLAYER 4")
    table = LerTable(default_p=1e-3)
    before = aggregate_ler(tl, table)
    tl.insert_idle_layer(2)
    assert aggregate_ler(tl, table) > before


def test_ler_respects_generated_prefix():
    tl = _tl("LAYOUT 1 1\nQUBIT a 0 0\nLAYER 9")
    table = LerTable(default_p=1e-2)
    assert aggregate_ler(tl, table, n_layers=3) == pytest.approx(1 - 0.99**3)


def test_ler_table_lookup_precedence():
    t = LerTable(default_p=1e-3, overrides={("MERGE", 2): 5e-3, "MERGE": 2e-3})
    assert t.lookup("MERGE", 2) == 5e-3
    assert t.lookup("MERGE", 3) == 2e-3
    assert t.lookup("IDLE", 1) == 1e-3


def test_ler_table_validation():
    with pytest.raises(ValueError):
        LerTable(default_p=1.0)


def test_utilization_degenerate():
    assert utilization([], 4, 10.0) == 0.0
    assert utilization([(0.0, 4)], 4, 0.0) == 0.0


def test_utilization_piecewise():
    trace = [(0.0, 2), (5.0, 4), (10.0, 0)]
    assert utilization(trace, 4, 10.0) == pytest.approx(0.75)


def test_utilization_full():
    trace = [(0.0, 3), (7.0, 0)]
    assert utilization(trace, 3, 7.0) == pytest.approx(1.0)


def test_utilization_trace_from_intervals():
    trace = utilization_trace([(0.0, 2.0), (1.0, 3.0)], 3.0)
    assert trace == [(0.0, 1), (1.0, 2), (2.0, 1), (3.0, 0)]


def test_wall_clock_values():
    assert wall_clock(1, 21, 1e-6) == pytest.approx(21e-6)
    assert wall_clock(1000, 21, 1e-6) == pytest.approx(0.021)
    assert wall_clock(1000, 21, 1e-3) == pytest.approx(21.0)


def test_csv_row_shape():
    w = generate_synthetic(2, 10, 0.1, 0.3, 2, seed=0)
    cfg = SimConfig(scheduler="st_fifo", m=2, speed=1.5, latency=LatencyModel(d=9, buffer_b=1), seed=0)
    r = run_simulation(cfg, w)
    row = csv_row("r1", "st_fifo", 2, 1.5, r.metrics, r.terminated_early)
    fields = row.split(",")
    assert len(fields) == len(csv_header().split(","))
    assert fields[0] == "r1"
    assert fields[8] in ("true", "false")
