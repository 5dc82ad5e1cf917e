"""The slotted simulation loop.

One slot routes the arriving jobs layer by layer, then delivers feedback for
jobs that reached the terminal layer, accumulates estimator losses and
baselines, updates the virtual queues from the realized inbound costs, and
emits one metrics row. Placements refresh on a fixed epoch grid when the
greedy strategy is selected. All randomness flows from the run seed, so a
(config, seed) pair reproduces its metrics stream byte for byte.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .baselines import (
    LEARNING_KINDS,
    EstimatorVariant,
    StaticPolicyConfig,
    calibrate_offload_prob,
    static_action,
    variant_flags,
)
from .control import QueueState, drift_penalty_diagnostic
from .losses import BaselineTable, DownstreamLossOracle, NodeJobView
from .placement import (
    Placement,
    PlacementContext,
    baseline_placement,
    greedy_onload,
)
from .policy import DEFAULT_THRESHOLDS, ExpertGrid, ExpertTable
from .topology import NodeRef, Topology, build_topology
from .workload import (
    ArrivalModel,
    ConfidenceModel,
    Job,
    TraceJobSampler,
    Workload,
    best_loaded_accuracy,
    confidence_from_noise,
    dirichlet_mixtures,
    empirical_error_prob,
    inference_error,
    load_trace,
    synthetic_catalog,
    TEXT,
    VISION,
)


def hard_job_tagging(job: Job, model_ids: Iterable[str]) -> bool:
    """A job is hard when every model answers it incorrectly."""
    return job.is_hard(model_ids)


@dataclass
class SlotMetrics:
    """One row of the per-slot metrics stream."""

    slot: int
    jobs: int
    errors: int
    hard_jobs: int
    oracle_hits: int
    feedback: int
    mean_entropy: float
    drift_penalty: float
    node_costs: dict[str, float]
    node_queues: dict[str, float]


@dataclass
class PathRecord:
    """Realized routing of one job, kept for replay checks."""

    job_id: str
    slot: int
    task: str
    path: tuple[str, ...]
    exit_layer: int
    reached_oracle: bool
    size_units: float
    exit_error: int
    hard: bool


@dataclass
class LossRecord:
    """Per (job, visited node) true losses retained for the regret oracle."""

    job_id: str
    node_id: str
    task: str
    realized: float
    expert_losses: np.ndarray


@dataclass
class RunSummary:
    """Seed-level aggregates mirroring the benchmark's comparison columns."""

    seed: int
    policy: str
    error_rate: float
    hit_rate: float
    feedback_rate: float
    avg_cost: dict[str, float]
    queue_over_horizon: dict[str, float]
    total_jobs: int
    total_slots: int
    final_mean_entropy: float
    regret_final: dict[str, dict[str, float]]
    regret_curve: dict[str, list[float]]
    baseline_condition_violations: int
    baseline_epoch_log: list[dict[str, Any]]

    def to_dict(self) -> dict[str, Any]:
        return {
            "seed": self.seed,
            "policy": self.policy,
            "error_rate": self.error_rate,
            "hit_rate": self.hit_rate,
            "feedback_rate": self.feedback_rate,
            "avg_cost": self.avg_cost,
            "queue_over_horizon": self.queue_over_horizon,
            "total_jobs": self.total_jobs,
            "total_slots": self.total_slots,
            "final_mean_entropy": self.final_mean_entropy,
            "regret_final": self.regret_final,
            "regret_curve": self.regret_curve,
            "baseline_condition_violations": self.baseline_condition_violations,
            "baseline_epoch_log": self.baseline_epoch_log,
        }


class RegretTracker:
    """Streaming hindsight regret per (node, task).

    Accumulates each job's realized loss contribution and the full-feedback
    losses of every expert; regret at a checkpoint is the realized sum minus
    the best fixed expert's sum so far (found by exhaustive enumeration).
    Sampling noise can make it negative; it is reported as-is.
    """

    def __init__(self, entry_ids: set[str], checkpoints: Sequence[int]) -> None:
        self.entry_ids = entry_ids
        self.checkpoints = sorted(set(checkpoints))
        self._checkpoint_set = set(self.checkpoints)
        self.realized: dict[tuple[str, str], float] = {}
        self.expert_sums: dict[tuple[str, str], np.ndarray] = {}
        self.jobs_seen = 0
        self.curve_gamma: list[int] = []
        self.curve_entry: list[float] = []
        self.curve_total: list[float] = []

    def add(self, node_id: str, task: str, realized: float, expert_losses: np.ndarray) -> None:
        key = (node_id, task)
        self.realized[key] = self.realized.get(key, 0.0) + realized
        if key in self.expert_sums:
            self.expert_sums[key] += expert_losses
        else:
            self.expert_sums[key] = expert_losses.copy()

    def job_done(self) -> None:
        self.jobs_seen += 1
        self.maybe_snapshot()

    def maybe_snapshot(self) -> None:
        if self.jobs_seen in self._checkpoint_set:
            entry_total = 0.0
            total = 0.0
            for key in self.realized:
                r = self.regret(*key)
                total += r
                if key[0] in self.entry_ids:
                    entry_total += r
            self.curve_gamma.append(self.jobs_seen)
            self.curve_entry.append(entry_total)
            self.curve_total.append(total)

    def regret(self, node_id: str, task: str) -> float:
        key = (node_id, task)
        return self.realized[key] - float(self.expert_sums[key].min())

    def final_map(self) -> dict[str, dict[str, float]]:
        out: dict[str, dict[str, float]] = {}
        for node_id, task in sorted(self.realized):
            out.setdefault(node_id, {})[task] = self.regret(node_id, task)
        return out


def regret_oracle(
    path_log: Sequence[PathRecord],
    full_loss_log: Sequence[LossRecord],
    entry_ids: set[str],
    checkpoints: Sequence[int],
) -> RegretTracker:
    """Replay retained logs through a fresh tracker (job order = path order)."""
    by_job: dict[str, list[LossRecord]] = {}
    for record in full_loss_log:
        by_job.setdefault(record.job_id, []).append(record)
    tracker = RegretTracker(entry_ids, checkpoints)
    for path in path_log:
        for record in by_job.get(path.job_id, ()):
            tracker.add(record.node_id, record.task, record.realized, record.expert_losses)
        tracker.job_done()
    return tracker


def build_topology_from_config(cfg: Mapping[str, Any]) -> Topology:
    t = cfg["topology"]
    return build_topology(
        layer_sizes=t["layer_sizes"],
        memory_budgets=t["memory_budgets"],
        resource_budget=t["resource_budget"],
        tau=t["slot_duration"],
    )


def build_workload(cfg: Mapping[str, Any], topo: Topology, seed: int) -> Workload:
    """Assemble the per-seed job source described by the config.

    The task/model universe comes from the structure seed (identical across
    seeds); mixtures, arrival counts, correctness bits, sizes, and confidence
    noise come from the run seed.
    """
    w = cfg["workload"]
    entry_ids = [n.node_id for n in topo.entry_nodes()]
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1,)))
    if w["kind"] == "synthetic":
        hard_count = w["hard_task_types"] if w["hard_task_fraction"] > 0 else 0
        tasks, modality, models, tiers = synthetic_catalog(
            num_task_types=w["num_task_types"],
            vision_fraction=w["vision_fraction"],
            hard_task_count=hard_count,
            medium_task_count=w["medium_task_types"],
            trap_task_count=w["trap_task_types"],
            model_pool=w["model_pool"],
            structure_seed=w["structure_seed"],
        )
        sampler = None
        hard_tasks = [t for t, tier in tiers.items() if tier == "hard"]
        # escalation-bound tiers carry short payloads; easy tasks span the
        # full per-modality range
        task_sizes = {}
        for t in tasks:
            if modality[t] == VISION:
                task_sizes[t] = tuple(w["vision_size_range"])
            elif tiers[t] in ("hard", "medium", "trap"):
                task_sizes[t] = tuple(w["escalation_size_range"])
            else:
                task_sizes[t] = tuple(w["text_size_range"])
    else:
        models, trace_jobs = load_trace(w["trace_path"])
        sampler = TraceJobSampler(trace_jobs)
        tasks = sampler.tasks()
        size_ranges = {
            TEXT: tuple(w["text_size_range"]),
            VISION: tuple(w["vision_size_range"]),
        }
        modality = _trace_modalities(trace_jobs, size_ranges)
        models = empirical_error_prob(models, trace_jobs, modality)
        hard_tasks = []
        task_sizes = {t: size_ranges[modality[t]] for t in tasks}
    mixtures = dirichlet_mixtures(
        tasks=tasks,
        hard_tasks=hard_tasks,
        entry_ids=entry_ids,
        hard_fraction=w["hard_task_fraction"] if w["kind"] == "synthetic" else 0.0,
        alpha=w["mixture_concentration"],
        rng=rng,
    )
    arrivals = ArrivalModel(
        mean_jobs_per_slot=w["mean_jobs_per_slot"],
        task_mixture=mixtures,
        rng_seed=seed,
    )
    hard_set = set(hard_tasks)
    hard_frac = w["hard_task_fraction"] if (w["kind"] == "synthetic" and hard_set) else 0.0
    design = np.zeros(len(tasks))
    for i, t in enumerate(tasks):
        if t in hard_set:
            design[i] = hard_frac / len(hard_set)
        else:
            design[i] = (1.0 - hard_frac) / max(1, len(tasks) - len(hard_set))
    return Workload(
        tasks=tasks,
        task_modality=modality,
        models=models,
        arrivals=arrivals,
        confidence_model=ConfidenceModel(noise_std=w["confidence_noise_std"]),
        task_size_ranges=task_sizes,
        seed=int(np.random.SeedSequence(entropy=seed, spawn_key=(2,)).generate_state(1)[0]),
        job_sampler=sampler,
        design_mixture=design,
    )


def _trace_modalities(jobs: Sequence[Job], size_ranges) -> dict[str, str]:
    # Trace jobs carry their modality implicitly via size; records store it
    # explicitly, but Job does not, so infer from the recorded sizes.
    modality: dict[str, str] = {}
    for job in jobs:
        guess = VISION if job.size_units >= size_ranges[VISION][0] else TEXT
        modality.setdefault(job.task_type, guess)
    return modality


def resolve_thresholds(cfg: Mapping[str, Any]) -> tuple[float, ...]:
    th = cfg["learning"]["thresholds"]
    return tuple(th) if th is not None else DEFAULT_THRESHOLDS


VR_RATE_SCALE = 0.1
NAIVE_RATE_SCALE = 0.0035


def resolve_learning_rate(cfg: Mapping[str, Any], max_grid_size: int) -> float:
    """Default learning rate, scaled per estimator.

    The horizon-optimal rate is proportional to sqrt(ln|experts| / jobs)
    divided by the square root of the estimator's variance proxy. The
    variance-reduced estimator's proxy sits near the squared loss scale,
    while the importance-weighted one carries the inverse reach probability
    of terminal feedback, so its rate is smaller by that typical factor.
    """
    lr = cfg["learning"]["learning_rate"]
    if lr is not None:
        return float(lr)
    total = cfg["run"]["total_jobs"]
    base = math.sqrt(math.log(max(2, max_grid_size)) / max(1, total))
    scale = NAIVE_RATE_SCALE if cfg["policy"] == "ly_exp4" else VR_RATE_SCALE
    return base * scale


class _Run:
    """All mutable state for one (config, seed) simulation."""

    def __init__(self, cfg: Mapping[str, Any], seed: int, out_dir: str | None) -> None:
        self.cfg = cfg
        self.seed = seed
        self.policy = cfg["policy"]
        self.learning = self.policy in LEARNING_KINDS
        self.topo = build_topology_from_config(cfg)
        self.workload = build_workload(cfg, self.topo, seed)
        self.error_table = self.workload.error_table
        self.model_ids = self.workload.model_ids
        self.models = self.workload.models
        self.model_sizes = {m.model_id: m.memory_size for m in self.models}
        self.node_index = {n.node_id: i for i, n in enumerate(self.topo.nodes())}
        self.node_refs = {n.node_id: n for n in self.topo.nodes()}
        self.v = float(cfg["learning"]["error_weight"])
        self.distance_factor = float(cfg["run"]["distance_factor"])
        self.rng_route = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(3,))
        )
        self.queues = QueueState.initial(self.topo)
        self.epoch_slots = int(cfg["placement"]["epoch_slots"])
        self.switch_penalty = float(cfg["placement"]["switch_penalty"])
        self.placement_kind = cfg["placement"]["kind"]
        self.placement = Placement(loaded={n.node_id: frozenset() for n in self.topo.nodes()})
        self.placement_log: list[tuple[int, str, tuple[str, ...]]] = []
        self._epoch_histogram: dict[str, dict[str, int]] = {}
        self._first_epoch_done = False

        if self.placement_kind in ("random_fixed", "layer_diverse"):
            fixed = baseline_placement(
                self.placement_kind,
                self.topo,
                self.models,
                seed=int(np.random.SeedSequence(entropy=seed, spawn_key=(4,)).generate_state(1)[0]),
            )
            self.placement = fixed
            for node in self.topo.nodes():
                self.placement_log.append(
                    (0, node.node_id, tuple(sorted(fixed.loaded[node.node_id])))
                )

        self.variant: EstimatorVariant | None = None
        self.table: ExpertTable | None = None
        self.baselines: BaselineTable | None = None
        self.static_cfg: StaticPolicyConfig | None = None
        if self.learning:
            self.variant = variant_flags(self.policy)
            grids = {
                n.node_id: ExpertGrid(
                    thresholds=resolve_thresholds(cfg),
                    destinations=tuple(u.node_id for u in self.topo.uplinks(n)),
                )
                for n in self.topo.nodes()
                if n.layer < self.topo.num_layers
            }
            max_size = max(g.size for g in grids.values())
            self.table = ExpertTable(
                grids=grids,
                tasks=self.workload.tasks,
                learning_rate=resolve_learning_rate(cfg, max_size),
                exploration_rate=cfg["learning"]["exploration_rate"],
            )
            self.queue_nodes = sorted(self.queues.values)
            self.queue_index = {n: i for i, n in enumerate(self.queue_nodes)}
            self.baselines = BaselineTable(
                grids=grids,
                tasks=self.workload.tasks,
                ema_rate=cfg["learning"]["baseline_ema_rate"],
                mode=cfg["learning"]["baseline_mode"],
            )
        else:
            prob = cfg["static"]["offload_prob"]
            if prob is None:
                prob = calibrate_offload_prob(
                    self.topo, self.workload.stats(), cfg["topology"]["resource_budget"]
                )
            self.static_cfg = StaticPolicyConfig(kind=self.policy, offload_prob=float(prob))

        self.record_regret = bool(cfg["run"]["record_regret"]) and self.learning
        self.record_paths = bool(cfg["run"]["record_paths"])
        checkpoints = cfg["run"]["regret_checkpoints"]
        if checkpoints is None:
            total = cfg["run"]["total_jobs"]
            step = max(1, total // 10)
            checkpoints = sorted({*range(step, total + 1, step), total})
        self.regret = RegretTracker(
            {n.node_id for n in self.topo.entry_nodes()}, checkpoints
        )
        self.path_log: list[PathRecord] = []
        self.loss_log: list[LossRecord] = []
        self.baseline_epoch_log: list[dict[str, Any]] = []

        # Totals
        self.total_jobs_done = 0
        self.total_errors = 0
        self.total_hard = 0
        self.total_hits = 0
        self.total_feedback = 0
        self.total_cost = {n: 0.0 for n in self.queues.values}
        self.slots_run = 0

        self.out_dir = out_dir
        self._metrics_writer: csv.writer | None = None
        self._metrics_file = None
        self._paths_file = None
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            self._metrics_file = open(
                os.path.join(out_dir, "metrics.csv"), "w", newline="", encoding="utf-8"
            )
            self._metrics_writer = csv.writer(self._metrics_file)
            self._metrics_writer.writerow(self.metrics_header())
            if self.record_paths:
                self._paths_file = open(
                    os.path.join(out_dir, "paths.jsonl"), "w", encoding="utf-8"
                )

    # ---- naming helpers -------------------------------------------------
    def metrics_header(self) -> list[str]:
        queue_nodes = sorted(self.queues.values)
        return (
            ["slot", "jobs", "errors", "hard_jobs", "oracle_hits", "feedback",
             "mean_entropy", "drift_penalty"]
            + [f"cost_{n}" for n in queue_nodes]
            + [f"queue_{n}" for n in queue_nodes]
        )

    # ---- placement ------------------------------------------------------
    def maybe_onload(self, t: int) -> None:
        if t % self.epoch_slots == 1 and self.baselines is not None and t > 1:
            self.baseline_epoch_log.append({
                "slot": t,
                "mean_local_error_estimate": self.baselines.mean_local_error(),
                "condition_violations": self.baselines.condition_violations,
            })
        if self.placement_kind != "greedy":
            return
        if t % self.epoch_slots != 1:
            return
        new_loaded: dict[str, frozenset[str]] = {}
        for node in self.topo.nodes():
            if node.layer == self.topo.num_layers:
                new_loaded[node.node_id] = frozenset()
                continue
            mixture = self._mixture_for(node)
            previous = (
                frozenset(self.model_ids)
                if not self._first_epoch_done
                else self.placement.loaded.get(node.node_id, frozenset())
            )
            ctx = PlacementContext(
                arrival_mixture=mixture,
                error_table=self.error_table,
                switch_penalty=self.switch_penalty,
                previous=previous,
            )
            chosen = greedy_onload(ctx, self.topo.memory_budget[node.node_id], self.models)
            new_loaded[node.node_id] = chosen
            self.placement_log.append((t, node.node_id, tuple(sorted(chosen))))
        self.placement = Placement(loaded=new_loaded, epoch=t)
        self.placement.check_feasible(self.topo, self.model_sizes)
        self._first_epoch_done = True
        self._epoch_histogram = {}

    def _mixture_for(self, node: NodeRef) -> dict[str, float]:
        if node.layer == 1:
            probs = self.workload.arrivals.task_mixture[node.node_id]
            return {t: float(p) for t, p in zip(self.workload.tasks, probs)}
        hist = self._epoch_histogram.get(node.node_id)
        if not hist:
            uniform = 1.0 / len(self.workload.tasks)
            return {t: uniform for t in self.workload.tasks}
        total = sum(hist.values())
        return {t: c / total for t, c in hist.items()}

    # ---- per-job node views ----------------------------------------------
    def _make_view_cache(self, job: Job, noise: np.ndarray):
        cache: dict[str, NodeJobView] = {}

        def view_of(node_id: str) -> NodeJobView:
            if node_id in cache:
                return cache[node_id]
            node = self.node_refs[node_id]
            loaded = self.placement.loaded.get(node_id, frozenset())
            center = best_loaded_accuracy(self.error_table, job.task_type, loaded)
            z = confidence_from_noise(
                center,
                float(noise[self.node_index[node_id]]),
                self.workload.confidence_model.noise_std,
            )
            b = inference_error(job, node, loaded, self.error_table, self.topo.num_layers)
            dists = (
                self.table.action_probs(node_id, job.task_type, z)
                if self.table is not None and node.layer < self.topo.num_layers
                else None
            )
            view = NodeJobView(dists=dists, local_error=b, confidence=z)
            cache[node_id] = view
            return view

        return view_of

    # ---- the slot loop ----------------------------------------------------
    def run_slot(self, t: int, jobs: list[Job]) -> SlotMetrics:
        self.maybe_onload(t)
        q_start = self.queues.snapshot()
        slot_costs = {n: 0.0 for n in self.queues.values}
        slot_errors = 0
        slot_hard = 0
        slot_hits = 0
        slot_feedback = 0

        routed: list[tuple[Job, PathRecord, Any]] = []
        for job in jobs:
            noise = self.workload.confidence_noise(len(self.node_index))
            view_of = self._make_view_cache(job, noise)
            record, hop_costs = self._route(job, t, view_of)
            for dest, cost in hop_costs.items():
                slot_costs[dest] += cost
            hard = hard_job_tagging(job, self.model_ids)
            slot_errors += record.exit_error
            slot_hard += int(hard)
            slot_hits += int(hard and record.reached_oracle)
            slot_feedback += int(record.reached_oracle)
            routed.append((job, record, view_of))
            if self.record_paths:
                self.path_log.append(record)
                if self._paths_file is not None:
                    self._paths_file.write(json.dumps({
                        "job_id": record.job_id,
                        "slot": record.slot,
                        "task": record.task,
                        "path": list(record.path),
                        "exit_layer": record.exit_layer,
                        "reached_oracle": record.reached_oracle,
                        "size_units": record.size_units,
                        "exit_error": record.exit_error,
                        "hard": record.hard,
                    }, sort_keys=True) + "\n")

        if self.learning:
            for job, record, view_of in routed:
                self._learn_from(job, record, view_of, q_start)
                if self.record_regret:
                    self.regret.job_done()

        self.queues.apply_slot(slot_costs, self.topo.resource_budget)
        for node_id, cost in slot_costs.items():
            self.total_cost[node_id] += cost
        self.total_jobs_done += len(jobs)
        self.total_errors += slot_errors
        self.total_hard += slot_hard
        self.total_hits += slot_hits
        self.total_feedback += slot_feedback
        self.slots_run = t

        entropy = self.table.mean_entropy() if self.table is not None else 0.0
        metrics = SlotMetrics(
            slot=t,
            jobs=len(jobs),
            errors=slot_errors,
            hard_jobs=slot_hard,
            oracle_hits=slot_hits,
            feedback=slot_feedback,
            mean_entropy=entropy,
            drift_penalty=drift_penalty_diagnostic(q_start, slot_costs, slot_errors, self.v),
            node_costs=slot_costs,
            node_queues=self.queues.snapshot(),
        )
        if self._metrics_writer is not None:
            queue_nodes = sorted(self.queues.values)
            self._metrics_writer.writerow(
                [metrics.slot, metrics.jobs, metrics.errors, metrics.hard_jobs,
                 metrics.oracle_hits, metrics.feedback,
                 repr(metrics.mean_entropy), repr(metrics.drift_penalty)]
                + [repr(metrics.node_costs[n]) for n in queue_nodes]
                + [repr(metrics.node_queues[n]) for n in queue_nodes]
            )
        return metrics

    def _route(self, job: Job, t: int, view_of) -> tuple[PathRecord, dict[str, float]]:
        node = self.node_refs[job.entry_node]
        path: list[str] = []
        hop_costs: dict[str, float] = {}
        hop_cost = job.size_units * self.distance_factor
        exit_error = 0
        while True:
            path.append(node.node_id)
            if len(path) > self.topo.num_layers:
                raise RuntimeError(f"path exceeded layer count for job {job.job_id}")
            if node.layer >= 2 and node.layer < self.topo.num_layers:
                hist = self._epoch_histogram.setdefault(node.node_id, {})
                hist[job.task_type] = hist.get(job.task_type, 0) + 1
            if node.layer == self.topo.num_layers:
                exit_error = 0
                break
            view = view_of(node.node_id)
            if self.learning:
                action = view.dists.sample(self.rng_route)
            else:
                action = static_action(
                    self.static_cfg, node, self.topo.uplinks(node), self.rng_route
                )
            if action == 0:
                exit_error = view.local_error
                break
            hop_costs[action] = hop_costs.get(action, 0.0) + hop_cost
            node = self.node_refs[action]
        reached = path[-1] in self.topo.layers[-1]
        return (
            PathRecord(
                job_id=job.job_id,
                slot=t,
                task=job.task_type,
                path=tuple(path),
                exit_layer=self.node_refs[path[-1]].layer,
                reached_oracle=reached,
                size_units=job.size_units,
                exit_error=exit_error,
                hard=hard_job_tagging(job, self.model_ids),
            ),
            hop_costs,
        )

    def _learn_from(
        self, job: Job, record: PathRecord, view_of, q_start: Mapping[str, float]
    ) -> None:
        assert self.table is not None and self.baselines is not None
        variant = self.variant
        task = job.task_type
        visited = [n for n in record.path if not self.topo.is_terminal(n)]
        fb = record.reached_oracle
        needs_recursion = fb or self.record_regret
        oracle = None
        if needs_recursion:
            oracle = DownstreamLossOracle(
                topo=self.topo,
                view_of=view_of,
                queue=q_start,
                error_weight=self.v,
                hop_cost=job.size_units * self.distance_factor,
                reach_dist=self.cfg["learning"]["reach_prob_distribution"],
                expected_dist=self.cfg["learning"]["expected_loss_distribution"],
            )
        queue_aware = self.baselines.mode == "queue_aware"
        for i, node_id in enumerate(visited):
            grid = self.table.grids[node_id]
            beta = None
            if variant.use_baseline:
                if queue_aware:
                    view = view_of(node_id)
                    mask = np.asarray(grid.thresholds) > view.confidence
                    queue_row = np.array(
                        [q_start.get(d, 0.0) for d in grid.destinations]
                    )
                    beta = self.baselines.plugin_values(
                        node_id, task, mask, queue_row,
                        hop_cost=job.size_units * self.distance_factor,
                        error_weight=self.v,
                        zero_downstream=variant.zero_downstream,
                    )
                else:
                    beta = self.baselines.values(node_id, task)
            if fb:
                rho = oracle.reach_prob(node_id)
                losses = oracle.expert_loss_matrix(
                    node_id, grid, zero_downstream=variant.zero_downstream
                )
                if variant.use_baseline:
                    self.baselines.count_violations(beta, losses)
                    estimate = (losses - beta) / rho + beta
                    self.table.accumulate_loss(node_id, task, estimate)
                    if queue_aware:
                        view = view_of(node_id)
                        decompositions = [
                            oracle.expected_loss_decomposition(d, self.queue_index)
                            for d in grid.destinations
                        ]
                        self.baselines.update_hidden(
                            node_id,
                            task,
                            view.local_error,
                            down_base=np.array([d[0] for d in decompositions]),
                        )
                    else:
                        self.baselines.update(node_id, task, losses, rho, fb=True)
                else:
                    self.table.accumulate_loss(node_id, task, losses / rho)
            elif variant.use_baseline:
                self.table.accumulate_loss(node_id, task, beta.copy())
                if not queue_aware:
                    self.baselines.update(node_id, task, beta, 1.0, fb=False)
            if self.record_regret:
                true_losses = oracle.expert_loss_matrix(node_id, grid, zero_downstream=False)
                realized = self._realized_contribution(record, i, view_of, q_start, oracle, job)
                self.regret.add(node_id, task, realized, true_losses)
                if self.record_paths:
                    self.loss_log.append(
                        LossRecord(
                            job_id=job.job_id,
                            node_id=node_id,
                            task=task,
                            realized=realized,
                            expert_losses=true_losses.copy(),
                        )
                    )

    def _realized_contribution(
        self, record: PathRecord, i: int, view_of, q_start, oracle, job: Job
    ) -> float:
        """One visited node's realized loss: weighted local error if the job
        stopped here, else the queue-weighted hop cost plus the destination's
        expected loss."""
        node_id = record.path[i]
        if i == len(record.path) - 1:
            return self.v * view_of(node_id).local_error
        dest = record.path[i + 1]
        hop = job.size_units * self.distance_factor
        return q_start.get(dest, 0.0) * hop + oracle.expected_loss(dest)

    # ---- finalization -----------------------------------------------------
    def summary(self) -> RunSummary:
        slots = max(1, self.slots_run)
        return RunSummary(
            seed=self.seed,
            policy=self.policy,
            error_rate=self.total_errors / max(1, self.total_jobs_done),
            hit_rate=(self.total_hits / self.total_hard) if self.total_hard else 0.0,
            feedback_rate=self.total_feedback / max(1, self.total_jobs_done),
            avg_cost={n: c / slots for n, c in sorted(self.total_cost.items())},
            queue_over_horizon={
                n: q / slots for n, q in sorted(self.queues.values.items())
            },
            total_jobs=self.total_jobs_done,
            total_slots=self.slots_run,
            final_mean_entropy=(
                self.table.mean_entropy() if self.table is not None else 0.0
            ),
            regret_final=self.regret.final_map() if self.record_regret else {},
            regret_curve={
                "gamma": list(self.regret.curve_gamma),
                "entry": list(self.regret.curve_entry),
                "total": list(self.regret.curve_total),
            } if self.record_regret else {},
            baseline_condition_violations=(
                self.baselines.condition_violations if self.baselines else 0
            ),
            baseline_epoch_log=list(self.baseline_epoch_log),
        )

    def close(self) -> None:
        if self._metrics_file is not None:
            self._metrics_file.close()
        if self._paths_file is not None:
            self._paths_file.close()
        if self.out_dir is not None:
            with open(os.path.join(self.out_dir, "placements.csv"), "w",
                      newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["epoch_slot", "node_id", "model_ids"])
                for slot, node_id, models in self.placement_log:
                    writer.writerow([slot, node_id, "|".join(models)])
            with open(os.path.join(self.out_dir, "summary.json"), "w",
                      encoding="utf-8") as fh:
                json.dump(self.summary().to_dict(), fh, indent=2, sort_keys=True)


def run_single(cfg: Mapping[str, Any], seed: int, out_dir: str | None = None) -> _Run:
    """Run one seed to completion and return the closed run state."""
    run = _Run(cfg, seed, out_dir)
    total = int(cfg["run"]["total_jobs"])
    mean = cfg["workload"]["mean_jobs_per_slot"]
    if mean <= 0:
        run.close()
        raise ValueError("mean_jobs_per_slot must be positive to run an experiment")
    t = 0
    while run.total_jobs_done < total:
        t += 1
        jobs = run.workload.generate_slot(t)
        remaining = total - run.total_jobs_done
        if len(jobs) > remaining:
            jobs = jobs[:remaining]
        run.run_slot(t, jobs)
    run.close()
    return run


def run_experiment(cfg: Mapping[str, Any]) -> list[RunSummary]:
    """Run every configured seed and return one summary per seed."""
    summaries = []
    out_root = cfg.get("output_dir")
    for seed in cfg["run"]["seeds"]:
        out_dir = None
        if out_root:
            out_dir = os.path.join(out_root, run_id(cfg, seed))
        run = run_single(cfg, seed, out_dir)
        summaries.append(run.summary())
    return summaries


def run_id(cfg: Mapping[str, Any], seed: int) -> str:
    sizes = "-".join(str(s) for s in cfg["topology"]["layer_sizes"])
    return f"{cfg['policy']}_{sizes}_{cfg['placement']['kind']}_s{seed}"
