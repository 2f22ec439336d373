"""Slice lifecycle state machine and the mutual-exclusion constraint graph.

Adjacency is derived from each slice's neighbor mask: the temporal
predecessor/successor on the same patch plus route-adjacent patches in the
same layer.  No two adjacent slices may be decoded concurrently, so the set
of ASSIGNED slices must always form an independent set (monolithic block
tasks are treated as single units; edges internal to one task are exempt).
"""

from __future__ import annotations

from enum import Enum
from typing import TYPE_CHECKING, Iterable, Sequence

if TYPE_CHECKING:
    from .timeline import Slice, Timeline


class SliceState(Enum):
    UNGENERATED = "ungenerated"
    PENDING = "pending"
    OCCUPIED = "occupied"
    ASSIGNED = "assigned"
    COMPLETED = "completed"


class SliceEvent(Enum):
    GENERATED = "generated"
    NEIGHBOR_STARTED = "neighbor_started"
    NEIGHBOR_FINISHED = "neighbor_finished"
    SELECTED = "selected"
    DECODED = "decoded"
    # Extensions used by the speculative baseline only.
    SELECTED_SPECULATIVE = "selected_speculative"
    INVALIDATED = "invalidated"


class TransitionError(RuntimeError):
    """Illegal lifecycle transition; signals a scheduler bug."""


def transition(g: "ConstraintGraph", s: "Slice", event: SliceEvent) -> SliceState:
    """Apply one lifecycle event to ``s`` and return the new state.

    ``s.assigned_nbrs`` must already reflect the event (the graph updates
    counters before driving transitions): NEIGHBOR_FINISHED leaves OCCUPIED
    only when the last ASSIGNED neighbor is gone.
    """
    st = s.state
    ev = SliceEvent
    if st is SliceState.UNGENERATED:
        if event is ev.GENERATED:
            s.state = SliceState.OCCUPIED if s.assigned_nbrs else SliceState.PENDING
            return s.state
        if event in (ev.NEIGHBOR_STARTED, ev.NEIGHBOR_FINISHED):
            return st
    elif st is SliceState.PENDING:
        if event is ev.SELECTED:
            s.state = SliceState.ASSIGNED
            return s.state
        if event is ev.NEIGHBOR_STARTED:
            s.state = SliceState.OCCUPIED
            return s.state
    elif st is SliceState.OCCUPIED:
        if event is ev.NEIGHBOR_FINISHED:
            if s.assigned_nbrs == 0:
                s.state = SliceState.PENDING
            return s.state
        if event is ev.NEIGHBOR_STARTED:
            return st
        if event is ev.SELECTED_SPECULATIVE:
            if s.assigned_nbrs != 1:
                raise TransitionError(
                    f"speculative selection of slice {s.id} with {s.assigned_nbrs} assigned neighbors"
                )
            s.state = SliceState.ASSIGNED
            return s.state
    elif st is SliceState.ASSIGNED:
        if event is ev.DECODED:
            s.state = SliceState.COMPLETED
            return s.state
        if event is ev.NEIGHBOR_FINISHED:
            return st
        if event is ev.INVALIDATED:
            s.state = SliceState.OCCUPIED if s.assigned_nbrs else SliceState.PENDING
            return s.state
    elif st is SliceState.COMPLETED:
        if event in (ev.NEIGHBOR_STARTED, ev.NEIGHBOR_FINISHED):
            return st
    raise TransitionError(f"illegal event {event.name} on slice {s.id} in state {st.name}")


class ConstraintGraph:
    """Degree bookkeeping and transition driving over a Timeline's slices."""

    def __init__(self, timeline: "Timeline"):
        self.timeline = timeline
        for s in timeline.slices_by_id.values():
            s.degree = s.mask.bit_count()
            s.assigned_nbrs = 0

    def neighbors(self, s: "Slice") -> list["Slice"]:
        return self.timeline.neighbors(s)

    def unresolved_degree(self, s: "Slice") -> int:
        return s.degree

    def mark_generated(self, s: "Slice") -> SliceState:
        return transition(self, s, SliceEvent.GENERATED)

    def apply_dispatch(self, slices: Sequence["Slice"], speculative: bool = False) -> list["Slice"]:
        """Move a task's slices to ASSIGNED and block their outside neighbors.

        Edges internal to the task carry no NEIGHBOR_STARTED events: a
        monolithic block decodes as one unit.  Returns the neighbors newly
        moved from PENDING to OCCUPIED.
        """
        internal = {s.id for s in slices}
        blocked = []
        for s in slices:
            ev = SliceEvent.SELECTED_SPECULATIVE if speculative else SliceEvent.SELECTED
            transition(self, s, ev)
        for s in slices:
            for nbr in self.neighbors(s):
                if nbr.id in internal:
                    continue
                nbr.assigned_nbrs += 1
                if nbr.state in (SliceState.ASSIGNED, SliceState.COMPLETED):
                    continue
                was_pending = nbr.state is SliceState.PENDING
                transition(self, nbr, SliceEvent.NEIGHBOR_STARTED)
                if was_pending:
                    blocked.append(nbr)
        return blocked

    def apply_completion(self, slices: Sequence["Slice"]) -> list["Slice"]:
        """Complete a task's slices; returns neighbors released to PENDING."""
        internal = {s.id for s in slices}
        released = []
        for s in slices:
            transition(self, s, SliceEvent.DECODED)
        for s in slices:
            for nbr in self.neighbors(s):
                if nbr.id in internal:
                    continue
                nbr.degree -= 1
                nbr.assigned_nbrs -= 1
                was_occupied = nbr.state is SliceState.OCCUPIED
                if transition(self, nbr, SliceEvent.NEIGHBOR_FINISHED) is SliceState.PENDING and was_occupied:
                    released.append(nbr)
        return released

    def apply_invalidation(self, s: "Slice") -> list["Slice"]:
        """Revert a speculative ASSIGNED slice to the undecoded pool."""
        transition(self, s, SliceEvent.INVALIDATED)
        released = []
        for nbr in self.neighbors(s):
            nbr.assigned_nbrs -= 1
            if nbr.state is SliceState.OCCUPIED:
                if transition(self, nbr, SliceEvent.NEIGHBOR_FINISHED) is SliceState.PENDING:
                    released.append(nbr)
            elif nbr.state is not SliceState.PENDING:
                transition(self, nbr, SliceEvent.NEIGHBOR_FINISHED)
        return released

    def on_layer_inserted(self, index: int) -> None:
        """Repair degrees/counters around a freshly inserted idle layer."""
        tl = self.timeline
        rec = tl.layers[index]
        for s in rec.slices:
            deg = s.mask.bit_count()
            nbrs_assigned = 0
            pred = tl.slice_at(index - 1, (s.r, s.c)) if index > 0 else None
            if pred is not None:
                if pred.state is SliceState.COMPLETED:
                    deg -= 1
                if pred.state is SliceState.ASSIGNED:
                    nbrs_assigned += 1
            s.degree = deg
            s.assigned_nbrs = nbrs_assigned
        if index + 1 < len(tl.layers):
            for s in tl.layers[index + 1].slices:
                pred = tl.slice_at(index - 1, (s.r, s.c)) if index > 0 else None
                if pred is None:
                    s.degree += 1
                else:
                    if pred.state is SliceState.COMPLETED:
                        s.degree += 1
                    if pred.state is SliceState.ASSIGNED:
                        s.assigned_nbrs -= 1
        elif index > 0:
            for s in tl.layers[index - 1].slices:
                s.degree += 1


def select_conflict_free(candidates: Iterable["Slice"], limit: int, g: ConstraintGraph) -> list["Slice"]:
    """Greedy order-respecting selection of a conflict-free PENDING subset.

    A candidate is taken iff it conflicts with no already-taken candidate and
    with no currently-ASSIGNED slice; the result unioned with the ASSIGNED set
    stays an independent set.
    """
    taken: list[Slice] = []
    taken_ids: set[int] = set()
    if limit <= 0:
        return taken
    for s in candidates:
        if len(taken) >= limit:
            break
        if s.state is not SliceState.PENDING or s.assigned_nbrs:
            continue
        if any(nb.id in taken_ids for nb in g.neighbors(s)):
            continue
        taken.append(s)
        taken_ids.add(s.id)
    return taken
