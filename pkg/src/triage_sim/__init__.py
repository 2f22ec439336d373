"""Discrete-event simulator and scheduling library for a shared decoder pool
servicing lattice-surgery workloads, with idle-layer and logical-error-rate
accounting."""

from .decoder_model import (
    DecoderPool,
    JitterModel,
    LatencyModel,
    decode_duration,
    sample_jitter_factor,
    sigma,
)
from .metrics import LerTable, Metrics, aggregate_ler, utilization, wall_clock
from .schedulers import (
    EmergencyPlan,
    HeuristicWeights,
    SpeculationParams,
    TriggerAction,
    TriggerState,
    backfill_budget,
    plan_emergency,
    priority_score,
    schedule_steady,
    triage_trigger,
)
from .sim_engine import SimConfig, SimResult, Simulation, check_termination, run_simulation
from .slice_graph import ConstraintGraph, SliceState, select_conflict_free, transition
from .timeline import (
    CausalCone,
    ConeCache,
    Slice,
    Timeline,
    build_timeline,
    causal_cone,
    compute_deadline,
)
from .workload import (
    Workload,
    WorkloadError,
    WorkloadStats,
    generate_synthetic,
    parse_workload,
    serialize_workload,
    workload_stats,
)

__version__ = "0.1.0"
