"""Fast self-checks over the core numerical properties.

Each check is independent of the code path it verifies: expectations are
enumerated or brute-forced rather than recomputed through the functions
under test. The whole suite runs in seconds and backs the ``validate`` CLI
subcommand. ``inject`` deliberately breaks one property so tests can confirm
the checks actually detect failures.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .losses import variance_pair, vr_estimate
from .placement import PlacementContext, greedy_onload, marginal_gain, utility
from .policy import ExpertGrid, ExpertTable
from .workload import ErrorTable, ModelSpec


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


def check_unbiasedness(inject: str | None = None, n: int = 10_000) -> CheckResult:
    """Two-point expectation of the variance-reduced estimate equals the loss."""
    rng = np.random.default_rng(7)
    estimator: Callable = vr_estimate
    if inject == "baseline-sign":
        def estimator(f, baseline, rho, fb):  # deliberately wrong add-back sign
            return (f - baseline) / rho - baseline if fb else -baseline
    worst = 0.0
    for _ in range(n):
        f = float(rng.uniform(-50, 150))
        beta = float(rng.uniform(-20, 120))
        rho = float(rng.uniform(0.001, 1.0))
        expectation = rho * estimator(f, beta, rho, True) + (1 - rho) * estimator(
            f, beta, rho, False
        )
        worst = max(worst, abs(expectation - f))
    ok = worst < 1e-10
    return CheckResult("estimator-unbiasedness", ok, f"max deviation {worst:.2e}")


def check_variance_ordering(grid: int = 60) -> CheckResult:
    """Closed-form variances obey the ordering whenever 0 < baseline <= 2*loss."""
    f = 1.0
    ratios = np.linspace(0.01, 1.99, grid)
    rhos = np.linspace(0.01, 0.99, grid)
    for ratio, rho in itertools.product(ratios, rhos):
        var_naive, var_vr = variance_pair(f, ratio * f, rho)
        if var_vr > var_naive + 1e-12:
            return CheckResult(
                "variance-ordering", False, f"violated at beta={ratio * f}, rho={rho}"
            )
    for boundary in (0.0, 2.0 * f):
        var_naive, var_vr = variance_pair(f, boundary, 0.25)
        if abs(var_naive - var_vr) > 1e-12:
            return CheckResult(
                "variance-ordering", False, f"no equality at beta={boundary}"
            )
    return CheckResult("variance-ordering", True, f"{grid}x{grid} grid clean")


def check_weight_simplex(rounds: int = 200) -> CheckResult:
    """Weights stay a strictly positive simplex under random accumulations."""
    grid = ExpertGrid(thresholds=(0.0, 0.3, 0.7, 1.0), destinations=("a", "b"))
    table = ExpertTable({"n": grid}, ["y"], learning_rate=0.05, exploration_rate=0.1)
    rng = np.random.default_rng(11)
    for _ in range(rounds):
        table.accumulate_loss("n", "y", rng.normal(0, 30, size=grid.shape))
        w = table.weights("n", "y")
        if abs(float(w.sum()) - 1.0) > 1e-9 or np.any(w <= 0):
            return CheckResult("weight-simplex", False, "simplex violated")
    return CheckResult("weight-simplex", True, f"{rounds} random updates clean")


def check_submodularity(tables: int = 20, n_models: int = 4, n_tasks: int = 3) -> CheckResult:
    """Exhaustive diminishing-returns check of the error component."""
    rng = np.random.default_rng(23)
    for _ in range(tables):
        models = [
            ModelSpec(
                model_id=f"m{i}",
                memory_size=1.0,
                modalities=frozenset(["text"]),
                error_prob={f"t{j}": float(rng.uniform(0, 1)) for j in range(n_tasks)},
            )
            for i in range(n_models)
        ]
        table = ErrorTable(
            [f"t{j}" for j in range(n_tasks)], models, {f"t{j}": "text" for j in range(n_tasks)}
        )
        mixture = rng.dirichlet(np.ones(n_tasks))
        ctx = PlacementContext(
            {f"t{j}": float(mixture[j]) for j in range(n_tasks)},
            table,
            switch_penalty=0.0,
        )
        ids = [m.model_id for m in models]
        for a_bits in range(2 ** n_models):
            a_set = {ids[i] for i in range(n_models) if a_bits >> i & 1}
            for b_bits in range(2 ** n_models):
                b_set = {ids[i] for i in range(n_models) if b_bits >> i & 1}
                if not a_set <= b_set:
                    continue
                for m in ids:
                    if m in b_set:
                        continue
                    if marginal_gain(ctx, m, a_set) < marginal_gain(ctx, m, b_set) - 1e-12:
                        return CheckResult(
                            "submodularity", False, f"violated for A={a_set}, B={b_set}, m={m}"
                        )
    return CheckResult("submodularity", True, f"{tables} random tables clean")


def check_reach_chain(depths: tuple[int, ...] = (2, 3, 4, 5)) -> CheckResult:
    """On a chain, the reach probability telescopes into a plain product."""
    from .losses import DownstreamLossOracle, NodeJobView
    from .policy import ActionDistribution
    from .topology import build_topology

    rng = np.random.default_rng(3)
    for depth in depths:
        topo = build_topology([1] * depth, [10.0] * depth, 0.4)
        offload = {f"n{k}_0": float(rng.uniform(0.05, 0.95)) for k in range(1, depth)}

        def view_of(node_id: str) -> NodeJobView:
            p = offload[node_id]
            layer = int(node_id[1:node_id.index("_")])
            # exploration_rate 0 keeps raw == mixed for this oracle check
            dists = ActionDistribution(
                destinations=(f"n{layer + 1}_0",),
                raw_terminate=1.0 - p,
                raw_offload=np.array([p]),
                exploration_rate=0.0,
            )
            return NodeJobView(dists=dists, local_error=0, confidence=0.5)

        oracle = DownstreamLossOracle(
            topo, view_of, {}, error_weight=1.0, hop_cost=1.0
        )
        expected = float(np.prod([offload[f"n{k}_0"] for k in range(1, depth)]))
        got = oracle.reach_prob("n1_0")
        if abs(got - expected) > 1e-12:
            return CheckResult(
                "reach-chain", False, f"depth {depth}: {got} != {expected}"
            )
    return CheckResult("reach-chain", True, f"depths {depths} clean")


def check_greedy_quality(instances: int = 60) -> CheckResult:
    """Greedy stays within the expected factor of the brute-force optimum."""
    rng = np.random.default_rng(5)
    for _ in range(instances):
        n_models = int(rng.integers(3, 6))
        n_tasks = int(rng.integers(2, 4))
        models = [
            ModelSpec(
                model_id=f"m{i}",
                memory_size=float(rng.integers(1, 4)),
                modalities=frozenset(["text"]),
                error_prob={f"t{j}": float(rng.uniform(0, 1)) for j in range(n_tasks)},
            )
            for i in range(n_models)
        ]
        table = ErrorTable(
            [f"t{j}" for j in range(n_tasks)], models, {f"t{j}": "text" for j in range(n_tasks)}
        )
        mixture = rng.dirichlet(np.ones(n_tasks))
        ctx = PlacementContext(
            {f"t{j}": float(mixture[j]) for j in range(n_tasks)},
            table,
            switch_penalty=float(rng.uniform(0, 0.15)),
        )
        budget = float(rng.integers(2, 7))
        got = utility(ctx, greedy_onload(ctx, budget, models))
        best = 0.0
        ids = [m.model_id for m in models]
        sizes = {m.model_id: m.memory_size for m in models}
        for bits in range(2 ** n_models):
            subset = [ids[i] for i in range(n_models) if bits >> i & 1]
            if sum(sizes[m] for m in subset) <= budget:
                best = max(best, utility(ctx, subset))
        if got < 0.5 * best - 1e-9 or got < best - 0.25 - 1e-9:
            return CheckResult(
                "greedy-quality", False, f"greedy {got:.4f} vs optimum {best:.4f}"
            )
    return CheckResult("greedy-quality", True, f"{instances} instances clean")


def run_property_suite(inject: str | None = None) -> list[CheckResult]:
    return [
        check_unbiasedness(inject=inject),
        check_variance_ordering(),
        check_weight_simplex(),
        check_submodularity(),
        check_reach_chain(),
        check_greedy_quality(),
    ]
