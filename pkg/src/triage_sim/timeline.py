"""Annotated timeline of slices: one patch x one measurement cycle each.

A slice carries a 6-bit immediate-neighbor mask ordered (t-1, t+1, up, down,
left, right), a per-qubit deadline to the nearest upcoming critical
synchronization layer, and a lifecycle state.  Causal cones are computed
lazily by backward BFS and held in a bounded LRU cache; idle layers can be
inserted online at or above the generation frontier.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from collections import OrderedDict, deque
from dataclasses import dataclass, field

from .slice_graph import SliceState
from .workload import Workload

MASK_T_PREV = 1 << 0
MASK_T_NEXT = 1 << 1
MASK_UP = 1 << 2
MASK_DOWN = 1 << 3
MASK_LEFT = 1 << 4
MASK_RIGHT = 1 << 5

_SPATIAL_BITS = ((MASK_UP, -1, 0), (MASK_DOWN, 1, 0), (MASK_LEFT, 0, -1), (MASK_RIGHT, 0, 1))

INF = math.inf


def mask_string(mask: int) -> str:
    return "".join("1" if mask & (1 << i) else "0" for i in range(6))


@dataclass(slots=True)
class Slice:
    id: int
    t: int
    r: int
    c: int
    kind: str
    critical: bool
    route: tuple[tuple[int, int], ...]
    mask: int = 0
    state: SliceState = SliceState.UNGENERATED
    degree: int = 0
    assigned_nbrs: int = 0
    anchor: tuple[tuple[int, int], int] | None = None

    @property
    def pos(self) -> tuple[int, int]:
        return (self.r, self.c)

    def sort_key(self) -> tuple[int, int, int, int]:
        return (self.t, self.r, self.c, self.id)


@dataclass
class LayerRecord:
    slices: list[Slice]
    by_pos: dict[tuple[int, int], Slice]
    components: list[tuple[Slice, ...]]
    has_critical: bool
    idle_inserted: bool = False


@dataclass(frozen=True)
class CausalCone:
    root_id: int
    members: frozenset[int]


class ConeCache:
    """Bounded LRU map from critical root to its causal cone.

    An entry goes stale as soon as any member completes; stale entries are
    recomputed on the next query so a cached cone never reports a COMPLETED
    slice.
    """

    def __init__(self, capacity: int = 64):
        if capacity < 1:
            raise ValueError("cache capacity must be positive")
        self.capacity = capacity
        self._entries: OrderedDict[int, CausalCone] = OrderedDict()
        self._member_index: dict[int, set[int]] = {}
        self._dirty: set[int] = set()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, root_id: int) -> CausalCone | None:
        if root_id in self._entries and root_id not in self._dirty:
            self._entries.move_to_end(root_id)
            self.hits += 1
            return self._entries[root_id]
        self.misses += 1
        return None

    def put(self, cone: CausalCone) -> None:
        if cone.root_id in self._entries:
            self._drop(cone.root_id)
        while len(self._entries) >= self.capacity:
            oldest_id, oldest = self._entries.popitem(last=False)
            self._unindex(oldest_id, oldest)
        self._entries[cone.root_id] = cone
        self._dirty.discard(cone.root_id)
        for sid in cone.members:
            self._member_index.setdefault(sid, set()).add(cone.root_id)

    def invalidate_member(self, sid: int) -> None:
        for root in self._member_index.pop(sid, ()):
            if root in self._entries:
                self._dirty.add(root)

    def _unindex(self, root_id: int, cone: CausalCone) -> None:
        self._dirty.discard(root_id)
        for sid in cone.members:
            roots = self._member_index.get(sid)
            if roots is not None:
                roots.discard(root_id)
                if not roots:
                    del self._member_index[sid]

    def _drop(self, root_id: int) -> None:
        cone = self._entries.pop(root_id, None)
        if cone is not None:
            self._unindex(root_id, cone)


class Timeline:
    """Layered slice store with online idle-layer insertion support."""

    def __init__(self, workload: Workload):
        self.layout = workload.layout
        self.positions: list[tuple[int, int]] = sorted(workload.layout.qubits.values())
        self.original_layer_count = workload.n_layers
        self.generated_count = 0
        self.layers: list[LayerRecord] = []
        self.slices_by_id: dict[int, Slice] = {}
        self.crit_layers: dict[tuple[int, int], list[int]] = {pos: [] for pos in self.positions}
        self._next_id = 0
        coord = workload.layout.coord
        n_layers = workload.n_layers
        for t, layer in enumerate(workload.layers):
            slices: list[Slice] = []
            components: list[tuple[Slice, ...]] = []
            has_critical = False
            for inst in layer:
                route = tuple(sorted(coord(p) for p in inst.patches))
                group = []
                for pos in route:
                    s = Slice(
                        id=self._next_id,
                        t=t,
                        r=pos[0],
                        c=pos[1],
                        kind=inst.kind,
                        critical=inst.critical,
                        route=route,
                    )
                    self._next_id += 1
                    group.append(s)
                    if inst.critical:
                        has_critical = True
                        self.crit_layers[pos].append(t)
                components.append(tuple(group))
            slices = sorted((s for comp in components for s in comp), key=lambda s: (s.r, s.c))
            for s in slices:
                s.mask = self._initial_mask(s, n_layers)
                self.slices_by_id[s.id] = s
            components.sort(key=lambda comp: min((s.r, s.c) for s in comp))
            self.layers.append(
                LayerRecord(
                    slices=slices,
                    by_pos={s.pos: s for s in slices},
                    components=components,
                    has_critical=has_critical,
                )
            )
        for lst in self.crit_layers.values():
            lst.sort()
        # Build-time snapshot: current critical-layer order always matches the
        # original order, so these serve as stable sort keys under insertion.
        self.orig_crit_layers = {pos: list(lst) for pos, lst in self.crit_layers.items()}

    @staticmethod
    def _initial_mask(s: Slice, n_layers: int) -> int:
        mask = 0
        if s.t > 0:
            mask |= MASK_T_PREV
        if s.t < n_layers - 1:
            mask |= MASK_T_NEXT
        if s.kind == "MERGE":
            route = set(s.route)
            for bit, dr, dc in _SPATIAL_BITS:
                if (s.r + dr, s.c + dc) in route:
                    mask |= bit
        return mask

    @property
    def inserted_idle_count(self) -> int:
        return len(self.layers) - self.original_layer_count

    def slice_at(self, t: int, pos: tuple[int, int]) -> Slice | None:
        if 0 <= t < len(self.layers):
            return self.layers[t].by_pos.get(pos)
        return None

    def temporal_pred(self, s: Slice) -> Slice | None:
        return self.slice_at(s.t - 1, s.pos)

    def temporal_succ(self, s: Slice) -> Slice | None:
        return self.slice_at(s.t + 1, s.pos)

    def spatial_neighbors(self, s: Slice) -> list[Slice]:
        if s.kind != "MERGE":
            return []
        rec = self.layers[s.t]
        out = []
        for bit, dr, dc in _SPATIAL_BITS:
            if s.mask & bit:
                nbr = rec.by_pos.get((s.r + dr, s.c + dc))
                if nbr is not None:
                    out.append(nbr)
        return out

    def neighbors(self, s: Slice) -> list[Slice]:
        out = []
        if s.mask & MASK_T_PREV:
            pred = self.slice_at(s.t - 1, s.pos)
            if pred is not None:
                out.append(pred)
        if s.mask & MASK_T_NEXT:
            succ = self.slice_at(s.t + 1, s.pos)
            if succ is not None:
                out.append(succ)
        out.extend(self.spatial_neighbors(s))
        return out

    def critical_slices(self, t: int) -> list[Slice]:
        return [s for s in self.layers[t].slices if s.critical]

    def generate_next(self) -> LayerRecord:
        rec = self.layers[self.generated_count]
        self.generated_count += 1
        return rec

    def insert_idle_layer(self, index: int) -> LayerRecord:
        """Insert one idle layer at ``index``; layers at >= index shift by +1.

        Existing slice identities are preserved.  Insertion below the
        generation frontier would rewrite already-executed history and is
        rejected.
        """
        if not (0 <= index <= len(self.layers)):
            raise ValueError(f"idle layer index {index} out of range [0, {len(self.layers)}]")
        if index < self.generated_count:
            raise ValueError("cannot insert an idle layer below the generation frontier")
        old_count = len(self.layers)
        slices = []
        for pos in self.positions:
            mask = 0
            if index > 0:
                mask |= MASK_T_PREV
            if index < old_count:
                mask |= MASK_T_NEXT
            s = Slice(
                id=self._next_id,
                t=index,
                r=pos[0],
                c=pos[1],
                kind="IDLE",
                critical=False,
                route=(pos,),
                mask=mask,
            )
            self._next_id += 1
            slices.append(s)
            self.slices_by_id[s.id] = s
        rec = LayerRecord(
            slices=slices,
            by_pos={s.pos: s for s in slices},
            components=[(s,) for s in slices],
            has_critical=False,
            idle_inserted=True,
        )
        self.layers.insert(index, rec)
        for later in self.layers[index + 1 :]:
            for s in later.slices:
                s.t += 1
        if index > 0:
            for s in self.layers[index - 1].slices:
                s.mask |= MASK_T_NEXT
        if index + 1 < len(self.layers):
            for s in self.layers[index + 1].slices:
                s.mask |= MASK_T_PREV
        for lst in self.crit_layers.values():
            for i in range(bisect_left(lst, index), len(lst)):
                lst[i] += 1
        return rec

    def dump_csv(self) -> str:
        lines = ["id,t,r,c,op,mask,deadline,state"]
        for rec in self.layers:
            for s in rec.slices:
                deadline = compute_deadline(self, s)
                dl = "inf" if deadline is INF else str(deadline)
                lines.append(
                    f"{s.id},{s.t},{s.r},{s.c},{s.kind},{mask_string(s.mask)},{dl},{s.state.value}"
                )
        return "\n".join(lines) + "\n"


def build_timeline(w: Workload) -> Timeline:
    """One slice per (qubit, layer), with masks and critical-layer indices."""
    return Timeline(w)


def compute_deadline(tl: Timeline, s: Slice | int) -> float:
    """Nearest critical layer >= s.t on the same qubit, or +inf."""
    if isinstance(s, int):
        try:
            s = tl.slices_by_id[s]
        except KeyError:
            raise KeyError(f"unknown slice id {s}") from None
    lst = tl.crit_layers.get(s.pos, ())
    i = bisect_left(lst, s.t)
    return lst[i] if i < len(lst) else INF


def _cone_seeds(tl: Timeline, root: Slice) -> list[Slice]:
    """Immediate predecessors of a critical root: the gate's own data slices.

    Stall idles inserted directly beneath the root while it waits are memory
    padding, not gate data; the temporal seed skips over them to the nearest
    original predecessor so a synchronization wait can actually converge.
    The padding still belongs to the constraint graph and gates any later
    synchronization point through ordinary cone membership.
    """
    seeds = []
    pred = tl.temporal_pred(root)
    while pred is not None and tl.layers[pred.t].idle_inserted:
        pred = tl.temporal_pred(pred)
    if pred is not None:
        seeds.append(pred)
    seeds.extend(tl.spatial_neighbors(root))
    return seeds


def causal_cone(
    tl: Timeline,
    root: Slice | int,
    cache: ConeCache | None = None,
    *,
    traverse_completed: bool = False,
) -> CausalCone:
    """Backward BFS from the critical root's immediate predecessors.

    Expansion steps are exactly (i) same-layer spatial neighbors and (ii) the
    one-step temporal predecessor.  COMPLETED nodes are pruned: removed from
    the cone and, unless ``traverse_completed`` is set, not expanded through.
    UNGENERATED nodes carry no syndrome yet and are never members.
    """
    if isinstance(root, int):
        root = tl.slices_by_id[root]
    if not root.critical:
        raise ValueError(f"slice {root.id} is not critical; causal cones root at critical slices")
    if cache is not None:
        cached = cache.get(root.id)
        if cached is not None:
            return cached
    members: set[int] = set()
    seen: set[int] = set()
    queue = deque(_cone_seeds(tl, root))
    while queue:
        node = queue.popleft()
        if node.id in seen:
            continue
        seen.add(node.id)
        st = node.state
        if st is SliceState.UNGENERATED:
            continue
        if st is SliceState.COMPLETED:
            if not traverse_completed:
                continue
        else:
            members.add(node.id)
        pred = tl.temporal_pred(node)
        if pred is not None:
            queue.append(pred)
        queue.extend(tl.spatial_neighbors(node))
    cone = CausalCone(root_id=root.id, members=frozenset(members))
    if cache is not None:
        cache.put(cone)
    return cone


def cone_is_empty(
    tl: Timeline,
    root: Slice | int,
    cache: ConeCache | None = None,
    *,
    traverse_completed: bool = False,
) -> bool:
    """Emptiness check with early exit; caches only fully-empty results."""
    if isinstance(root, int):
        root = tl.slices_by_id[root]
    if cache is not None:
        cached = cache.get(root.id)
        if cached is not None:
            return not cached.members
    seen: set[int] = set()
    queue = deque(_cone_seeds(tl, root))
    while queue:
        node = queue.popleft()
        if node.id in seen:
            continue
        seen.add(node.id)
        st = node.state
        if st is SliceState.UNGENERATED:
            continue
        if st is SliceState.COMPLETED:
            if not traverse_completed:
                continue
        else:
            return False
        pred = tl.temporal_pred(node)
        if pred is not None:
            queue.append(pred)
        queue.extend(tl.spatial_neighbors(node))
    if cache is not None:
        cache.put(CausalCone(root_id=root.id, members=frozenset()))
    return True
