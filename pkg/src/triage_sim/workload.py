"""Low-Level Instruction (LLI) workloads over a 2-D logical-qubit layout.

An LLI document is a line-oriented UTF-8 text file::

    # comment
    LAYOUT <rows> <cols>
    QUBIT <name> <r> <c>
    LAYER <t>
      OP IDLE <q>
      OP ROTATE <q>
      OP MERGE <q1> <q2> [...]
      CRITICAL <q>

``CRITICAL q`` marks the instruction covering ``q`` in the current layer as a
Pauli-frame synchronization point.  Qubits without an explicit OP in a layer
receive an implicit IDLE; layers absent from the document are all-IDLE.
Header comments of the form ``# key: value`` are kept as workload metadata.
"""

from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass, field

INSTRUCTION_KINDS = ("IDLE", "MERGE", "ROTATE")

_ADJ4 = ((-1, 0), (1, 0), (0, -1), (0, 1))


class WorkloadError(ValueError):
    """Invalid LLI document or workload parameter set."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        where = ""
        if line is not None:
            where = f"line {line}: "
            if column is not None:
                where = f"line {line}, col {column}: "
        super().__init__(where + message)
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Instruction:
    """One logical operation on one or more patches in a single layer."""

    layer: int
    kind: str
    patches: tuple[str, ...]
    critical: bool = False


@dataclass
class LogicalLayout:
    rows: int
    cols: int
    qubits: dict[str, tuple[int, int]]

    def coord(self, name: str) -> tuple[int, int]:
        return self.qubits[name]

    @property
    def names(self) -> list[str]:
        return list(self.qubits)

    def adjacency(self) -> dict[str, list[str]]:
        """4-adjacency among placed qubits, neighbor lists sorted by name."""
        by_coord = {coord: name for name, coord in self.qubits.items()}
        adj: dict[str, list[str]] = {}
        for name, (r, c) in self.qubits.items():
            nbrs = []
            for dr, dc in _ADJ4:
                other = by_coord.get((r + dr, c + dc))
                if other is not None:
                    nbrs.append(other)
            adj[name] = sorted(nbrs)
        return adj

    def validate(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise WorkloadError("layout dimensions must be positive")
        if not self.qubits:
            raise WorkloadError("layout declares no qubits")
        seen: dict[tuple[int, int], str] = {}
        for name, (r, c) in self.qubits.items():
            if not (0 <= r < self.rows and 0 <= c < self.cols):
                raise WorkloadError(f"qubit {name} at ({r}, {c}) is outside the {self.rows}x{self.cols} layout")
            if (r, c) in seen:
                raise WorkloadError(f"qubits {seen[(r, c)]} and {name} share coordinate ({r}, {c})")
            seen[(r, c)] = name


@dataclass
class Workload:
    layout: LogicalLayout
    layers: tuple[tuple[Instruction, ...], ...]
    n_layers: int
    meta: dict[str, str] = field(default_factory=dict)

    @property
    def n_lqubits(self) -> int:
        return len(self.layout.qubits)


@dataclass(frozen=True)
class WorkloadStats:
    n_lqubits: int
    n_layers: int
    n_critical: int
    critical_density: float


def _route_connected(patches: tuple[str, ...], layout: LogicalLayout) -> bool:
    coords = {layout.coord(p) for p in patches}
    start = next(iter(coords))
    seen = {start}
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        for dr, dc in _ADJ4:
            nxt = (r + dr, c + dc)
            if nxt in coords and nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return seen == coords


def _canonical_layer(instructions: list[Instruction], layout: LogicalLayout) -> tuple[Instruction, ...]:
    """Order a layer's instructions by the row-major position of their first patch."""
    return tuple(sorted(instructions, key=lambda i: min(layout.coord(p) for p in i.patches)))


def _fill_implicit_idles(
    layer: int,
    explicit: list[Instruction],
    criticals: set[str],
    layout: LogicalLayout,
) -> tuple[Instruction, ...]:
    covered: set[str] = set()
    for inst in explicit:
        covered.update(inst.patches)
    out = []
    for inst in explicit:
        critical = bool(criticals & set(inst.patches))
        out.append(Instruction(layer, inst.kind, inst.patches, critical))
    for name in layout.qubits:
        if name not in covered:
            out.append(Instruction(layer, "IDLE", (name,), name in criticals))
    return _canonical_layer(out, layout)


def _check_invariants(w: Workload) -> None:
    w.layout.validate()
    if w.n_layers < 1:
        raise WorkloadError("workload has no layers")
    if len(w.layers) != w.n_layers:
        raise WorkloadError("layer list does not match n_layers")
    names = set(w.layout.qubits)
    for t, layer in enumerate(w.layers):
        covered: set[str] = set()
        for inst in layer:
            if inst.layer != t:
                raise WorkloadError(f"instruction at layer {inst.layer} stored under layer {t}")
            if inst.kind not in INSTRUCTION_KINDS:
                raise WorkloadError(f"unknown instruction kind {inst.kind!r}")
            if inst.kind == "MERGE":
                if len(inst.patches) < 2:
                    raise WorkloadError(f"layer {t}: MERGE needs at least 2 patches")
                if not _route_connected(inst.patches, w.layout):
                    raise WorkloadError(f"layer {t}: MERGE route {inst.patches} is not connected")
            elif len(inst.patches) != 1:
                raise WorkloadError(f"layer {t}: {inst.kind} covers exactly one patch")
            for p in inst.patches:
                if p not in names:
                    raise WorkloadError(f"layer {t}: unknown qubit {p!r}")
                if p in covered:
                    raise WorkloadError(f"layer {t}: patch {p} appears in more than one instruction")
                covered.add(p)
        if covered != names:
            missing = sorted(names - covered)
            raise WorkloadError(f"layer {t}: qubits {missing} have no instruction after implicit fill")


def parse_workload(text: str) -> Workload:
    """Parse an LLI document into a validated :class:`Workload`."""
    layout: LogicalLayout | None = None
    rows = cols = 0
    qubits: dict[str, tuple[int, int]] = {}
    meta: dict[str, str] = {}
    layers: dict[int, list[Instruction]] = {}
    crit_marks: dict[int, set[str]] = {}
    current_layer: int | None = None
    last_layer = -1

    def err(msg: str, lineno: int, col: int | None = None):
        raise WorkloadError(msg, line=lineno, column=col)

    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if stripped.startswith("#"):
            body = stripped[1:].strip()
            if ":" in body and layout is None:
                key, _, value = body.partition(":")
                if key.strip() and " " not in key.strip():
                    meta[key.strip()] = value.strip()
            continue
        if "#" in stripped:
            stripped = stripped.split("#", 1)[0].strip()
        if not stripped:
            continue
        tokens = stripped.split()
        head = tokens[0]
        col = raw.index(head) + 1

        if head == "LAYOUT":
            if layout is not None:
                err("duplicate LAYOUT", lineno)
            if len(tokens) != 3:
                err("LAYOUT expects <rows> <cols>", lineno, col)
            try:
                rows, cols = int(tokens[1]), int(tokens[2])
            except ValueError:
                err("LAYOUT dimensions must be integers", lineno, col)
            layout = LogicalLayout(rows, cols, qubits)
        elif head == "QUBIT":
            if layout is None:
                err("QUBIT before LAYOUT", lineno, col)
            if current_layer is not None:
                err("QUBIT after first LAYER", lineno, col)
            if len(tokens) != 4:
                err("QUBIT expects <name> <r> <c>", lineno, col)
            name = tokens[1]
            if name in qubits:
                err(f"duplicate qubit {name!r}", lineno, col)
            try:
                r, c = int(tokens[2]), int(tokens[3])
            except ValueError:
                err("qubit coordinates must be integers", lineno, col)
            if not (0 <= r < rows and 0 <= c < cols):
                err(f"qubit {name} at ({r}, {c}) is out of bounds", lineno, col)
            if (r, c) in qubits.values():
                err(f"coordinate ({r}, {c}) already occupied", lineno, col)
            qubits[name] = (r, c)
        elif head == "LAYER":
            if layout is None or not qubits:
                err("LAYER before layout/qubit declarations", lineno, col)
            if len(tokens) != 2:
                err("LAYER expects <t>", lineno, col)
            try:
                t = int(tokens[1])
            except ValueError:
                err("layer index must be an integer", lineno, col)
            if t < 0:
                err("layer index must be non-negative", lineno, col)
            if t <= last_layer:
                err(f"layer indices must be strictly increasing (saw {t} after {last_layer})", lineno, col)
            current_layer = t
            last_layer = t
            layers.setdefault(t, [])
            crit_marks.setdefault(t, set())
        elif head == "OP":
            if current_layer is None:
                err("OP outside of a LAYER block", lineno, col)
            if len(tokens) < 3:
                err("OP expects <kind> <qubit...>", lineno, col)
            kind = tokens[1]
            patches = tuple(tokens[2:])
            if kind not in INSTRUCTION_KINDS:
                err(f"unknown op kind {kind!r}", lineno, col)
            for p in patches:
                if p not in qubits:
                    err(f"unknown qubit {p!r}", lineno, col)
            if kind == "MERGE":
                if len(patches) < 2:
                    err("MERGE expects at least 2 qubits", lineno, col)
                if len(set(patches)) != len(patches):
                    err("MERGE route repeats a qubit", lineno, col)
                if not _route_connected(patches, layout):
                    err(f"MERGE route {patches} is not connected under 4-adjacency", lineno, col)
            elif len(patches) != 1:
                err(f"{kind} expects exactly 1 qubit", lineno, col)
            already = {p for inst in layers[current_layer] for p in inst.patches}
            for p in patches:
                if p in already:
                    err(f"patch {p} already has an instruction in layer {current_layer}", lineno, col)
            layers[current_layer].append(Instruction(current_layer, kind, patches))
        elif head == "CRITICAL":
            if current_layer is None:
                err("CRITICAL outside of a LAYER block", lineno, col)
            if len(tokens) != 2:
                err("CRITICAL expects <qubit>", lineno, col)
            if tokens[1] not in qubits:
                err(f"unknown qubit {tokens[1]!r}", lineno, col)
            crit_marks[current_layer].add(tokens[1])
        else:
            err(f"unknown directive {head!r}", lineno, col)

    if layout is None:
        raise WorkloadError("document has no LAYOUT")
    layout.validate()
    if last_layer < 0:
        raise WorkloadError("document declares no layers")

    n_layers = last_layer + 1
    filled = tuple(
        _fill_implicit_idles(t, layers.get(t, []), crit_marks.get(t, set()), layout)
        for t in range(n_layers)
    )
    w = Workload(layout, filled, n_layers, meta)
    _check_invariants(w)
    return w


def serialize_workload(w: Workload) -> str:
    """Canonical LLI text: layers ascending, qubits in declaration order.

    Plain IDLE instructions are implicit; critical marks are emitted as
    ``CRITICAL`` lines so the round trip preserves the workload exactly.
    """
    lines = []
    for key in sorted(w.meta):
        lines.append(f"# {key}: {w.meta[key]}")
    lines.append(f"LAYOUT {w.layout.rows} {w.layout.cols}")
    for name, (r, c) in w.layout.qubits.items():
        lines.append(f"QUBIT {name} {r} {c}")
    last_emitted = -1
    for t, layer in enumerate(w.layers):
        body = []
        for inst in layer:
            if inst.kind != "IDLE":
                body.append(f"  OP {inst.kind} {' '.join(inst.patches)}")
        for inst in layer:
            if inst.critical:
                body.append(f"  CRITICAL {inst.patches[0]}")
        if body:
            lines.append(f"LAYER {t}")
            lines.extend(body)
            last_emitted = t
    if last_emitted < w.n_layers - 1:
        # Pin the layer count: trailing all-IDLE layers are otherwise implicit.
        lines.append(f"LAYER {w.n_layers - 1}")
    return "\n".join(lines) + "\n"


def _square_layout(n: int) -> LogicalLayout:
    rows = max(1, math.isqrt(n))
    cols = math.ceil(n / rows)
    qubits = {f"q{i}": (i // cols, i % cols) for i in range(n)}
    return LogicalLayout(rows, cols, qubits)


def _random_route(rng: random.Random, free: set[str], adj: dict[str, list[str]], max_len: int) -> tuple[str, ...] | None:
    candidates = sorted(q for q in free if any(n in free for n in adj[q]))
    if not candidates:
        return None
    start = rng.choice(candidates)
    target = rng.randint(2, max_len)
    route = [start]
    used = {start}
    while len(route) < target:
        options = [n for n in adj[route[-1]] if n in free and n not in used]
        if not options:
            break
        nxt = rng.choice(options)
        route.append(nxt)
        used.add(nxt)
    if len(route) < 2:
        return None
    return tuple(route)


def generate_synthetic(
    n_lqubits: int,
    n_layers: int,
    critical_density: float,
    merge_probability: float,
    route_length_max: int,
    seed: int,
    name: str | None = None,
) -> Workload:
    """Generate a deterministic synthetic workload.

    Critical markers land on patches that took part in a MERGE within the
    preceding 3 layers when possible, mimicking teleportation-style
    corrections; remaining markers fall back to otherwise-eligible layers so
    the requested density is met exactly (count = round(density * layers)).
    """
    if n_lqubits < 1 or n_layers < 1:
        raise WorkloadError("n_lqubits and n_layers must be >= 1")
    if not (0.0 <= critical_density <= 1.0 and 0.0 <= merge_probability <= 1.0):
        raise WorkloadError("densities and probabilities must be within [0, 1]")
    if route_length_max > n_lqubits:
        raise WorkloadError("route_length_max exceeds the qubit count")
    if merge_probability > 0 and (route_length_max < 2 or n_lqubits < 2):
        raise WorkloadError("merges need route_length_max >= 2 and at least 2 qubits")

    rng = random.Random(seed)
    layout = _square_layout(n_lqubits)
    adj = layout.adjacency()

    merges_by_layer: list[list[tuple[str, ...]]] = []
    for _ in range(n_layers):
        routes: list[tuple[str, ...]] = []
        free = set(layout.qubits)
        while len(free) >= 2 and rng.random() < merge_probability:
            route = _random_route(rng, free, adj, route_length_max)
            if route is None:
                break
            routes.append(route)
            free -= set(route)
        merges_by_layer.append(routes)

    last_merge: dict[str, int] = {}
    merge_history: list[dict[str, int]] = []
    for t, routes in enumerate(merges_by_layer):
        merge_history.append(dict(last_merge))
        for route in routes:
            for p in route:
                last_merge[p] = t

    def window_patches(t: int) -> list[str]:
        hist = merge_history[t]
        hits = [(tm, p) for p, tm in hist.items() if t - 3 <= tm <= t - 1]
        hits.sort(key=lambda x: (-x[0], layout.coord(x[1])))
        return [p for _, p in hits]

    target = int(critical_density * n_layers + 0.5)
    eligible = sorted(t for t in range(n_layers) if window_patches(t))
    chosen = set(rng.sample(eligible, min(target, len(eligible))))
    shortfall = target - len(chosen)
    if shortfall > 0:
        rest = sorted(set(range(n_layers)) - set(eligible))
        chosen.update(rng.sample(rest, shortfall))

    crit_patch: dict[int, str] = {}
    for t in sorted(chosen):
        patches = window_patches(t)
        crit_patch[t] = patches[0] if patches else layout.names[0]

    layers = []
    for t in range(n_layers):
        explicit = [Instruction(t, "MERGE", route) for route in merges_by_layer[t]]
        criticals = {crit_patch[t]} if t in crit_patch else set()
        layers.append(_fill_implicit_idles(t, explicit, criticals, layout))

    meta = {
        "name": name or f"synthetic-{n_lqubits}q-{n_layers}l",
        "seed": str(seed),
        "params": (
            f"n_lqubits={n_lqubits} n_layers={n_layers} critical_density={critical_density:g} "
            f"merge_probability={merge_probability:g} route_length_max={route_length_max}"
        ),
    }
    w = Workload(layout, tuple(layers), n_layers, meta)
    _check_invariants(w)
    return w


def workload_stats(w: Workload) -> WorkloadStats:
    """Single-pass counts; density is the exact ratio rounded to 4 decimals."""
    n_critical = sum(1 for layer in w.layers for inst in layer if inst.critical)
    return WorkloadStats(
        n_lqubits=w.n_lqubits,
        n_layers=w.n_layers,
        n_critical=n_critical,
        critical_density=round(n_critical / w.n_layers, 4),
    )
