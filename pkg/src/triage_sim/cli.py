"""Command-line surface: single runs, parameter sweeps, generation, validation.

Exit codes: 0 ok, 1 usage/config error, 2 simulation terminated early.
Set ``TRIAGE_LOG`` (debug/info/warning/error) to control log verbosity.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import ConfigError, build_sim_config, build_workload, load_config_file
from .metrics import csv_header, csv_row
from .sim_engine import run_simulation
from .workload import WorkloadError, generate_synthetic, serialize_workload, workload_stats

log = logging.getLogger("triage_sim")

_SWEEP_AXES = ("m", "speed", "scheduler", "sigma", "delay_ratio", "buffer_b", "w_u", "tau_emergency")


def _setup_logging() -> None:
    level = os.environ.get("TRIAGE_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def cmd_run(args) -> int:
    try:
        cfg, workload = load_config_file(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    result = run_simulation(cfg, workload)
    row = csv_row(
        run_id=args.run_id,
        scheduler=cfg.scheduler,
        m=cfg.m,
        speed=cfg.mean_speed,
        metrics=result.metrics,
        terminated=result.terminated_early,
    )
    out = f"{csv_header()}\n{row}\n" if args.header else f"{row}\n"
    if args.out:
        Path(args.out).write_text(out, encoding="utf-8")
    sys.stdout.write(out)
    if args.events:
        Path(args.events).write_text("\n".join(result.event_log) + "\n", encoding="utf-8")
    return 2 if result.terminated_early else 0


def cmd_validate(args) -> int:
    try:
        load_config_file(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    print("ok")
    return 0


def cmd_gen(args) -> int:
    out = Path(args.out)
    if out.exists() and not args.force:
        print(f"refusing to overwrite {out} (use --force)", file=sys.stderr)
        return 1
    try:
        w = generate_synthetic(
            n_lqubits=args.n_lqubits,
            n_layers=args.n_layers,
            critical_density=args.critical_density,
            merge_probability=args.merge_probability,
            route_length_max=args.route_length_max,
            seed=args.seed,
            name=args.name,
        )
    except WorkloadError as exc:
        print(f"generation error: {exc}", file=sys.stderr)
        return 1
    out.write_text(serialize_workload(w), encoding="utf-8")
    stats = workload_stats(w)
    print(
        f"n_lqubits={stats.n_lqubits} n_layers={stats.n_layers} "
        f"n_critical={stats.n_critical} critical_density={stats.critical_density:.4f}"
    )
    return 0


# --- sweep ------------------------------------------------------------------


def _apply_axis(doc: dict, axis: str, value) -> None:
    if axis == "m":
        doc.setdefault("pool", {})["m"] = value
    elif axis == "speed":
        doc.setdefault("pool", {})["speed"] = value
    elif axis == "scheduler":
        doc.setdefault("scheduler", {})["name"] = value
    elif axis == "sigma":
        jit = doc.setdefault("jitter", {})
        jit["enabled"] = True
        jit["sigma_override"] = value
    elif axis == "delay_ratio":
        doc["delay_ratio"] = value
    elif axis == "buffer_b":
        doc.setdefault("latency", {})["buffer_b"] = value
    elif axis == "w_u":
        sched = doc.setdefault("scheduler", {})
        sched["w_u"] = value
        sched["w_c"] = round(1.0 - value, 12)
    elif axis == "tau_emergency":
        doc.setdefault("scheduler", {})["tau_emergency"] = value
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}")


def derive_cell_seed(master_seed: int, cell: dict, rep: int) -> int:
    key = f"{master_seed}|" + "|".join(f"{k}={cell[k]}" for k in sorted(cell)) + f"|{rep}"
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "big")


def _run_cell(payload: tuple) -> dict:
    base_doc, cell, rep, master_seed, base_dir = payload
    doc = copy.deepcopy(base_doc)
    for axis, value in cell.items():
        _apply_axis(doc, axis, value)
    doc["seed"] = derive_cell_seed(master_seed, cell, rep)
    cfg = build_sim_config({k: v for k, v in doc.items() if k != "workload"})
    workload = build_workload(doc, base_dir=Path(base_dir) if base_dir else None)
    result = run_simulation(cfg, workload)
    return {
        "cell": cell,
        "rep": rep,
        "idle": result.idle_layers_inserted,
        "total_layers": result.total_layers,
        "ler": result.metrics.aggregated_ler,
        "utilization": result.mean_utilization,
        "terminated": result.terminated_early,
    }


def _load_sweep_spec(path: Path) -> tuple[dict, dict, int, int, int]:
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(str(exc)) from None
    if not isinstance(doc, dict):
        raise ConfigError("sweep spec must be a mapping")
    unknown = sorted(set(doc) - {"base", "axes", "repetitions", "master_seed", "max_cells"})
    if unknown:
        raise ConfigError(f"unknown key(s) in sweep spec: {', '.join(unknown)}")
    base = doc.get("base")
    if not isinstance(base, dict):
        raise ConfigError("sweep spec needs a 'base' config mapping")
    axes = doc.get("axes", {})
    if not isinstance(axes, dict) or not axes:
        raise ConfigError("sweep spec needs a non-empty 'axes' mapping")
    for axis, values in axes.items():
        if axis not in _SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis {axis!r}; expected one of {', '.join(_SWEEP_AXES)}")
        if not isinstance(values, list) or not values:
            raise ConfigError(f"axis {axis!r} must list at least one value")
    reps = doc.get("repetitions", 1)
    if not isinstance(reps, int) or reps < 1:
        raise ConfigError("repetitions must be a positive integer")
    master_seed = doc.get("master_seed", 0)
    if not isinstance(master_seed, int):
        raise ConfigError("master_seed must be an integer")
    max_cells = doc.get("max_cells", 4096)
    return base, axes, reps, master_seed, max_cells


def _cells(axes: dict) -> list[dict]:
    cells = [{}]
    for axis, values in axes.items():
        cells = [{**cell, axis: v} for cell in cells for v in values]
    return cells


def cmd_sweep(args) -> int:
    spec_path = Path(args.spec)
    try:
        base, axes, reps, master_seed, max_cells = _load_sweep_spec(spec_path)
        cells = _cells(axes)
        if len(cells) > max_cells:
            raise ConfigError(f"sweep of {len(cells)} cells exceeds max_cells={max_cells}")
        # Validate the base config once up front.
        build_sim_config({k: v for k, v in base.items() if k != "workload"})
        build_workload(base, base_dir=spec_path.parent)
    except ConfigError as exc:
        print(f"sweep spec error: {exc}", file=sys.stderr)
        return 1

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    payloads = [
        (base, cell, rep, master_seed, str(spec_path.parent))
        for cell in cells
        for rep in range(reps)
    ]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_run_cell, payloads))
    else:
        results = [_run_cell(p) for p in payloads]

    by_cell: dict[tuple, list[dict]] = {}
    for row in results:
        key = tuple(row["cell"][axis] for axis in axes)
        by_cell.setdefault(key, []).append(row)

    axis_names = list(axes)
    long_lines = [
        ",".join(
            axis_names
            + [
                "n_reps",
                "idle_mean",
                "idle_min",
                "idle_max",
                "total_layers_mean",
                "ler_mean",
                "utilization_mean",
                "terminated_count",
            ]
        )
    ]
    aggregates: dict[tuple, dict] = {}
    for cell in cells:
        key = tuple(cell[axis] for axis in axis_names)
        rows = by_cell[key]
        idles = [r["idle"] for r in rows]
        agg = {
            "idle_mean": sum(idles) / len(idles),
            "idle_min": min(idles),
            "idle_max": max(idles),
            "total_layers_mean": sum(r["total_layers"] for r in rows) / len(rows),
            "ler_mean": sum(r["ler"] for r in rows) / len(rows),
            "utilization_mean": sum(r["utilization"] for r in rows) / len(rows),
            "terminated_count": sum(1 for r in rows if r["terminated"]),
        }
        aggregates[key] = agg
        long_lines.append(
            ",".join(
                [_fmt(cell[a]) for a in axis_names]
                + [
                    str(len(rows)),
                    _fmt(agg["idle_mean"]),
                    _fmt(agg["idle_min"]),
                    _fmt(agg["idle_max"]),
                    _fmt(agg["total_layers_mean"]),
                    _fmt(agg["ler_mean"]),
                    _fmt(agg["utilization_mean"]),
                    str(agg["terminated_count"]),
                ]
            )
        )
    (out_dir / "sweep_long.csv").write_text("\n".join(long_lines) + "\n", encoding="utf-8")

    if "scheduler" in axes:
        other_axes = [a for a in axis_names if a != "scheduler"]
        winner_lines = [",".join(other_axes + ["winner", "winner_idle_mean"])]
        seen_groups = []
        for cell in cells:
            group = tuple(cell[a] for a in other_axes)
            if group in seen_groups:
                continue
            seen_groups.append(group)
            contenders = []
            for sched in axes["scheduler"]:
                full = dict(zip(other_axes, group))
                full["scheduler"] = sched
                key = tuple(full[a] for a in axis_names)
                agg = aggregates[key]
                contenders.append((agg["idle_mean"], -agg["utilization_mean"], sched))
            idle, _, winner = min(contenders)
            winner_lines.append(",".join([_fmt(v) for v in group] + [winner, _fmt(idle)]))
        (out_dir / "winner_map.csv").write_text("\n".join(winner_lines) + "\n", encoding="utf-8")

    if args.pivot:
        numeric_axes = [a for a in axis_names if a != "scheduler"]
        if len(numeric_axes) != 2:
            print("--pivot needs exactly two non-scheduler axes", file=sys.stderr)
            return 1
        ax_col, ax_row = numeric_axes
        schedulers = axes.get("scheduler", [base.get("scheduler", {}).get("name", "triage")])
        for sched in schedulers:
            lines = [",".join([f"{ax_row}\\{ax_col}"] + [_fmt(v) for v in axes[ax_col]])]
            for rv in axes[ax_row]:
                row_vals = []
                for cv in axes[ax_col]:
                    full = {ax_col: cv, ax_row: rv}
                    if "scheduler" in axes:
                        full["scheduler"] = sched
                    key = tuple(full[a] for a in axis_names)
                    row_vals.append(_fmt(aggregates[key]["idle_mean"]))
                lines.append(",".join([_fmt(rv)] + row_vals))
            (out_dir / f"pivot_idle_{sched}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="triage-sim", description="Decoder-pool scheduling simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one simulation from a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--run-id", default="run")
    p_run.add_argument("--out", help="also write the CSV row to this file")
    p_run.add_argument("--events", help="write the event log to this file")
    p_run.add_argument("--header", action="store_true", help="print the CSV header line")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="cross-product parameter sweep")
    p_sweep.add_argument("--spec", required=True)
    p_sweep.add_argument("--out", required=True, help="output directory")
    p_sweep.add_argument("--workers", type=int, default=1)
    p_sweep.add_argument("--pivot", action="store_true", help="also emit matrix CSVs")
    p_sweep.set_defaults(func=cmd_sweep)

    p_gen = sub.add_parser("gen", help="generate a synthetic workload file")
    p_gen.add_argument("--n-lqubits", type=int, required=True)
    p_gen.add_argument("--n-layers", type=int, required=True)
    p_gen.add_argument("--critical-density", type=float, required=True)
    p_gen.add_argument("--merge-probability", type=float, default=0.3)
    p_gen.add_argument("--route-length-max", type=int, default=2)
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("--name")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--force", action="store_true")
    p_gen.set_defaults(func=cmd_gen)

    p_val = sub.add_parser("validate", help="validate a config file without running")
    p_val.add_argument("--config", required=True)
    p_val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
