"""Discrete-slot simulator for online routing in multi-layer hierarchical
inference systems: variance-reduced expert routing under terminal-only
feedback, virtual-queue resource control, and greedy model placement."""

from .baselines import (
    EstimatorVariant,
    StaticPolicyConfig,
    calibrate_offload_prob,
    static_action,
    variant_flags,
)
from .config import ConfigError, apply_overrides, default_config, load_config, merge_config
from .control import QueueState, drift_penalty_diagnostic, queue_update, realized_cost
from .engine import (
    LossRecord,
    PathRecord,
    RegretTracker,
    RunSummary,
    SlotMetrics,
    hard_job_tagging,
    regret_oracle,
    run_experiment,
    run_single,
)
from .losses import (
    BaselineTable,
    DownstreamLossOracle,
    NodeJobView,
    baseline_update,
    naive_estimate,
    variance_pair,
    vr_estimate,
)
from .placement import (
    Placement,
    PlacementContext,
    baseline_placement,
    greedy_onload,
    layer_groups,
    marginal_gain,
    utility,
)
from .policy import ActionDistribution, ExpertGrid, ExpertTable, sample_action
from .topology import NodeRef, Topology, TopologyError, build_topology
from .workload import (
    ArrivalModel,
    ConfidenceModel,
    ErrorTable,
    Job,
    ModelSpec,
    TraceFormatError,
    Workload,
    confidence,
    inference_error,
    load_trace,
)

__version__ = "0.1.0"
