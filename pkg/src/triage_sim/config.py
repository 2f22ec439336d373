"""JSON run-configuration loading, validation, and workload construction."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

from .decoder_model import JitterModel, LatencyModel
from .metrics import LerTable
from .schedulers import POLICY_NAMES, HeuristicWeights, SpeculationParams
from .sim_engine import SimConfig
from .workload import Workload, WorkloadError, generate_synthetic, parse_workload


class ConfigError(ValueError):
    """Invalid run configuration."""


_TOP_KEYS = {
    "workload",
    "scheduler",
    "pool",
    "latency",
    "jitter",
    "ler",
    "seed",
    "termination_factor",
    "delay_ratio",
    "plan_cost_coeff",
    "plan_cost_ref",
    "invariant_checks",
    "event_log",
    "cone",
    "wall_clock",
}

_SCHEDULER_KEYS = {
    "name",
    "w_u",
    "w_c",
    "tau_emergency",
    "scope_cap",
    "replan_fraction",
    "min_replan_interval",
    "backfill",
    "misprediction_rate",
    "speculation_overhead",
}

_SYNTHETIC_KEYS = {
    "n_lqubits",
    "n_layers",
    "critical_density",
    "merge_probability",
    "route_length_max",
    "seed",
    "name",
}


def _expect_mapping(doc: Any, name: str) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError(f"{name} must be a mapping")
    return doc


def _check_keys(section: dict, allowed: set[str], name: str) -> None:
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name}: {', '.join(unknown)}")


def _number(section: dict, key: str, default, *, name: str, low=None, high=None):
    value = section.get(key, default)
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(f"{name}.{key} must be a number")
    if low is not None and value < low:
        raise ConfigError(f"{name}.{key} must be >= {low}")
    if high is not None and value > high:
        raise ConfigError(f"{name}.{key} must be <= {high}")
    return value


def parse_ler_overrides(raw: dict) -> dict:
    """Keys are ``KIND`` or ``KIND:n_patches``."""
    out = {}
    for key, p in raw.items():
        if ":" in key:
            kind, _, count = key.partition(":")
            try:
                out[(kind, int(count))] = float(p)
            except ValueError:
                raise ConfigError(f"bad ler override key {key!r}") from None
        else:
            out[key] = float(p)
    return out


def build_sim_config(doc: dict) -> SimConfig:
    """Validate a config mapping (sans workload) into a :class:`SimConfig`."""
    _expect_mapping(doc, "config")
    _check_keys(doc, _TOP_KEYS, "config")

    sched = _expect_mapping(doc.get("scheduler", {}), "scheduler")
    _check_keys(sched, _SCHEDULER_KEYS, "scheduler")
    name = sched.get("name", "triage")
    if name not in POLICY_NAMES:
        raise ConfigError(f"unknown scheduler {name!r}; expected one of {', '.join(POLICY_NAMES)}")
    w_u = _number(sched, "w_u", 0.5, name="scheduler", low=0.0, high=1.0)
    w_c = _number(sched, "w_c", round(1.0 - w_u, 12), name="scheduler", low=0.0, high=1.0)
    if abs(w_u + w_c - 1.0) > 1e-9:
        raise ConfigError("weights must sum to 1 (w_u + w_c)")
    scope_cap = sched.get("scope_cap", 100)
    if scope_cap is not None and (not isinstance(scope_cap, int) or scope_cap < 1):
        raise ConfigError("scheduler.scope_cap must be a positive integer or null")

    pool = _expect_mapping(doc.get("pool", {}), "pool")
    _check_keys(pool, {"m", "speed"}, "pool")
    m = pool.get("m", 4)
    if not isinstance(m, int) or m < 1:
        raise ConfigError("pool.m must be a positive integer")
    speed = pool.get("speed", 1.0)
    if isinstance(speed, list):
        if len(speed) != m:
            raise ConfigError(f"pool.speed lists one value per decoder ({m} expected)")
        if any(not isinstance(x, (int, float)) or x <= 0 for x in speed):
            raise ConfigError("pool.speed entries must be positive numbers")
    elif not isinstance(speed, (int, float)) or speed <= 0:
        raise ConfigError("pool.speed must be positive")

    lat = _expect_mapping(doc.get("latency", {}), "latency")
    _check_keys(lat, {"alpha", "d", "buffer_b", "speed_mode"}, "latency")
    alpha = _number(lat, "alpha", 1.17, name="latency")
    d = lat.get("d", 9)
    if not isinstance(d, int) or d < 1:
        raise ConfigError("latency.d must be a positive integer")
    buffer_b = _number(lat, "buffer_b", min(4.0, d / 2), name="latency", low=0.0)
    if buffer_b > d:
        raise ConfigError("latency.buffer_b must not exceed latency.d")
    if alpha <= 0:
        raise ConfigError("latency.alpha must be positive")
    speed_mode = lat.get("speed_mode", "inverse")
    if speed_mode not in ("inverse", "tau_ratio"):
        raise ConfigError("latency.speed_mode must be 'inverse' or 'tau_ratio'")
    latency = LatencyModel(alpha=alpha, d=d, buffer_b=buffer_b, speed_mode=speed_mode)

    jit = _expect_mapping(doc.get("jitter", {}), "jitter")
    _check_keys(
        jit,
        {"enabled", "p_phys", "sigma_base", "alpha_d", "alpha_p", "p_ref", "sigma_min", "sigma_max", "sigma_override"},
        "jitter",
    )
    sigma_override = jit.get("sigma_override")
    if sigma_override is not None:
        sigma_override = float(sigma_override)
        if sigma_override < 0:
            raise ConfigError("jitter.sigma_override must be >= 0")
    jitter = JitterModel(
        enabled=bool(jit.get("enabled", False)),
        sigma_base=_number(jit, "sigma_base", 0.3447, name="jitter"),
        alpha_d=_number(jit, "alpha_d", 0.0041, name="jitter"),
        alpha_p=_number(jit, "alpha_p", 15.03, name="jitter"),
        p_ref=_number(jit, "p_ref", 1e-3, name="jitter", low=0.0),
        sigma_min=_number(jit, "sigma_min", 0.30, name="jitter", low=0.0),
        sigma_max=_number(jit, "sigma_max", 0.70, name="jitter", low=0.0),
        p_phys=_number(jit, "p_phys", 1e-3, name="jitter"),
        sigma_override=sigma_override,
    )
    if jitter.enabled and jitter.sigma_override is None and jitter.p_phys <= 0:
        raise ConfigError("jitter.p_phys must be positive when jitter is enabled")

    ler = _expect_mapping(doc.get("ler", {}), "ler")
    _check_keys(ler, {"default_p", "overrides"}, "ler")
    default_p = _number(ler, "default_p", 1e-3, name="ler", low=0.0)
    if default_p >= 1.0:
        raise ConfigError("ler.default_p must be < 1")
    ler_table = LerTable(default_p=default_p, overrides=parse_ler_overrides(ler.get("overrides", {})))

    elog = _expect_mapping(doc.get("event_log", {}), "event_log")
    _check_keys(elog, {"enabled", "limit"}, "event_log")
    cone = _expect_mapping(doc.get("cone", {}), "cone")
    _check_keys(cone, {"cache_capacity", "traverse_completed"}, "cone")
    wc = _expect_mapping(doc.get("wall_clock", {}), "wall_clock")
    _check_keys(wc, {"t_meas"}, "wall_clock")

    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")

    try:
        return SimConfig(
            scheduler=name,
            m=m,
            speed=speed,
            latency=latency,
            jitter=jitter,
            weights=HeuristicWeights(w_u=w_u, w_c=w_c),
            tau_emergency=_number(sched, "tau_emergency", 4.0, name="scheduler", low=0.0),
            scope_cap=scope_cap,
            replan_fraction=_number(sched, "replan_fraction", 0.3, name="scheduler", low=0.0),
            min_replan_interval=_number(sched, "min_replan_interval", 2.0, name="scheduler", low=0.0),
            backfill=bool(sched.get("backfill", True)),
            speculation=SpeculationParams(
                misprediction_rate=_number(sched, "misprediction_rate", 0.10, name="scheduler", low=0.0),
                speculation_overhead=_number(sched, "speculation_overhead", 0.10, name="scheduler", low=0.0),
            ),
            seed=seed,
            termination_factor=_number(doc, "termination_factor", 10.0, name="config", low=0.0),
            delay_ratio=_number(doc, "delay_ratio", 0.0, name="config", low=0.0),
            plan_cost_coeff=_number(doc, "plan_cost_coeff", 0.01513, name="config", low=0.0),
            plan_cost_ref=_number(doc, "plan_cost_ref", 1.0, name="config", low=1e-9),
            ler_table=ler_table,
            invariant_checks=bool(doc.get("invariant_checks", True)),
            event_log_enabled=bool(elog.get("enabled", False)),
            event_log_limit=int(_number(elog, "limit", 100_000, name="event_log", low=0)),
            cone_cache_capacity=int(_number(cone, "cache_capacity", 64, name="cone", low=1)),
            cone_traverse_completed=bool(cone.get("traverse_completed", False)),
            t_meas=_number(wc, "t_meas", 1e-6, name="wall_clock", low=0.0),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_workload(doc: dict, base_dir: Path | None = None) -> Workload:
    """Materialize the workload section: an LLI file or a synthetic spec."""
    section = _expect_mapping(doc.get("workload", {}), "workload")
    _check_keys(section, {"path", "synthetic"}, "workload")
    if ("path" in section) == ("synthetic" in section):
        raise ConfigError("workload needs exactly one of 'path' or 'synthetic'")
    try:
        if "path" in section:
            path = Path(section["path"])
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            return parse_workload(path.read_text(encoding="utf-8"))
        syn = _expect_mapping(section["synthetic"], "workload.synthetic")
        _check_keys(syn, _SYNTHETIC_KEYS, "workload.synthetic")
        return generate_synthetic(
            n_lqubits=syn.get("n_lqubits", 4),
            n_layers=syn.get("n_layers", 40),
            critical_density=syn.get("critical_density", 0.2),
            merge_probability=syn.get("merge_probability", 0.3),
            route_length_max=syn.get("route_length_max", 2),
            seed=syn.get("seed", 0),
            name=syn.get("name"),
        )
    except WorkloadError as exc:
        raise ConfigError(f"workload: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"workload: {exc}") from None


def load_config_file(path: str | Path) -> tuple[SimConfig, Workload]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(str(exc)) from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = build_sim_config({k: v for k, v in _expect_mapping(doc, "config").items() if k != "workload"})
    workload = build_workload(doc, base_dir=path.parent)
    return cfg, workload
