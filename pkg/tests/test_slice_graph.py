from __future__ import annotations

import random

import pytest

from oracles import degree_recount
from triage_sim.slice_graph import (
    ConstraintGraph,
    SliceEvent,
    SliceState,
    TransitionError,
    select_conflict_free,
    transition,
)
from triage_sim.timeline import build_timeline
from triage_sim.workload import generate_synthetic, parse_workload


def _tl(doc: str):
    return build_timeline(parse_workload(doc.strip() + "\n"))


def _chain(n: int):
    tl = _tl(f"LAYOUT 1 1\nQUBIT a 0 0\nLAYER {n - 1}")
    return tl, ConstraintGraph(tl)


def test_generated_becomes_pending():
    tl, g = _chain(2)
    s = tl.slice_at(0, (0, 0))
    assert s.state is SliceState.UNGENERATED
    assert g.mark_generated(s) is SliceState.PENDING


def test_selected_becomes_assigned():
    tl, g = _chain(2)
    s = tl.slice_at(0, (0, 0))
    g.mark_generated(s)
    assert transition(g, s, SliceEvent.SELECTED) is SliceState.ASSIGNED


def test_selecting_occupied_is_error():
    tl, g = _chain(3)
    a, b = tl.slice_at(0, (0, 0)), tl.slice_at(1, (0, 0))
    g.mark_generated(a)
    g.mark_generated(b)
    g.apply_dispatch([a])
    assert b.state is SliceState.OCCUPIED
    with pytest.raises(TransitionError):
        transition(g, b, SliceEvent.SELECTED)


def test_generated_into_blocked_is_occupied():
    tl, g = _chain(3)
    a, b = tl.slice_at(0, (0, 0)), tl.slice_at(1, (0, 0))
    g.mark_generated(a)
    g.apply_dispatch([a])
    assert g.mark_generated(b) is SliceState.OCCUPIED


def test_occupied_released_only_by_last_assigned_neighbor():
    doc = "LAYOUT 1 2\nQUBIT a 0 0\nQUBIT b 0 1\nLAYER 1\n  OP MERGE a b\nLAYER 2"
    tl = _tl(doc)
    g = ConstraintGraph(tl)
    for t in range(2):
        for s in tl.layers[t].slices:
            g.mark_generated(s)
    a0, b0 = tl.slice_at(0, (0, 0)), tl.slice_at(0, (0, 1))
    merge_a = tl.slice_at(1, (0, 0))
    g.apply_dispatch([a0])
    g.apply_dispatch([b0])
    assert merge_a.state is SliceState.OCCUPIED  # blocked by a0 only
    assert merge_a.assigned_nbrs == 1
    b_merge = tl.slice_at(1, (0, 1))
    assert b_merge.assigned_nbrs == 1
    g.apply_completion([a0])
    assert merge_a.state is SliceState.PENDING
    assert b_merge.state is SliceState.OCCUPIED
    g.apply_completion([b0])
    assert b_merge.state is SliceState.PENDING


def test_illegal_events_raise():
    tl, g = _chain(2)
    s = tl.slice_at(0, (0, 0))
    with pytest.raises(TransitionError):
        transition(g, s, SliceEvent.SELECTED)  # ungenerated
    g.mark_generated(s)
    with pytest.raises(TransitionError):
        transition(g, s, SliceEvent.DECODED)  # pending, never assigned
    transition(g, s, SliceEvent.SELECTED)
    with pytest.raises(TransitionError):
        transition(g, s, SliceEvent.GENERATED)


def test_degree_bound_and_initial_counts():
    w = generate_synthetic(9, 20, 0.3, 0.8, 4, seed=2)
    tl = build_timeline(w)
    g = ConstraintGraph(tl)
    for s in tl.slices_by_id.values():
        assert 0 <= s.degree <= 6
        assert s.degree == degree_recount(tl, s)


def test_unresolved_degree_tracks_completions():
    tl, g = _chain(4)
    slices = [tl.slice_at(t, (0, 0)) for t in range(4)]
    for s in slices:
        g.mark_generated(s)
    mid = slices[1]
    assert g.unresolved_degree(mid) == 2
    g.apply_dispatch([slices[0]])
    g.apply_completion([slices[0]])
    assert g.unresolved_degree(mid) == 1
    assert g.unresolved_degree(mid) == degree_recount(tl, mid)


def test_degree_oracle_random_completion_order():
    rng = random.Random(5)
    w = generate_synthetic(4, 8, 0.3, 0.7, 3, seed=8)
    tl = build_timeline(w)
    g = ConstraintGraph(tl)
    order = sorted(tl.slices_by_id.values(), key=lambda s: s.sort_key())
    for s in order:
        g.mark_generated(s) if s.state is SliceState.UNGENERATED else None
    pool = list(order)
    rng.shuffle(pool)
    for s in pool:
        # Decode one at a time in a random but legal way.
        if s.state is SliceState.OCCUPIED:
            continue
        g.apply_dispatch([s])
        g.apply_completion([s])
        for other in tl.slices_by_id.values():
            assert other.degree == degree_recount(tl, other)


def test_select_conflict_free_adjacent_pair():
    tl, g = _chain(2)
    a, b = (tl.slice_at(t, (0, 0)) for t in range(2))
    g.mark_generated(a)
    g.mark_generated(b)
    assert select_conflict_free([a, b], 2, g) == [a]


def test_select_conflict_free_independent_set_taken_whole():
    doc = "LAYOUT 1 4\n" + "\n".join(f"QUBIT q{i} 0 {i}" for i in range(4)) + "\nLAYER 0"
    tl = _tl(doc)
    g = ConstraintGraph(tl)
    slices = list(tl.layers[0].slices)
    for s in slices:
        g.mark_generated(s)
    assert select_conflict_free(slices, 10, g) == slices


def test_select_conflict_free_limit_zero():
    tl, g = _chain(2)
    s = tl.slice_at(0, (0, 0))
    g.mark_generated(s)
    assert select_conflict_free([s], 0, g) == []


def test_select_conflict_free_respects_assigned():
    tl, g = _chain(3)
    slices = [tl.slice_at(t, (0, 0)) for t in range(3)]
    for s in slices:
        g.mark_generated(s)
    g.apply_dispatch([slices[0]])
    got = select_conflict_free([s for s in slices[1:]], 5, g)
    assert got == [slices[2]]  # slices[1] occupied by the running neighbor


def test_select_conflict_free_random_graphs_independent_and_greedy_maximal():
    rng = random.Random(77)
    for _ in range(40):
        n = rng.randint(2, 5)
        layers = rng.randint(2, 4)
        w = generate_synthetic(n, layers, 0.2, 0.6, min(3, n), seed=rng.randint(0, 10**6))
        tl = build_timeline(w)
        g = ConstraintGraph(tl)
        candidates = sorted(tl.slices_by_id.values(), key=lambda s: s.sort_key())
        for s in candidates:
            g.mark_generated(s)
        limit = rng.randint(0, len(candidates))
        got = select_conflict_free(candidates, limit, g)
        ids = {s.id for s in got}
        assert len(got) <= limit
        # Independence: brute-force pairwise check.
        for s in got:
            assert not any(nb.id in ids for nb in tl.neighbors(s))
        # Greedy maximality wrt the given order under the limit.
        if len(got) < limit:
            for s in candidates:
                if s.id in ids:
                    continue
                assert any(nb.id in ids for nb in tl.neighbors(s)), (
                    f"slice {s.id} was skippable but not conflicting"
                )
