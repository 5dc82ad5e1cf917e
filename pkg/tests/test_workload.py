import json

import numpy as np
import pytest

from hiroute.config import DEFAULT_MODEL_POOL, default_config
from hiroute.engine import build_topology_from_config, build_workload
from hiroute.topology import NodeRef, build_topology
from hiroute.workload import (
    ArrivalModel,
    ConfidenceModel,
    ErrorTable,
    Job,
    ModelSpec,
    TraceFormatError,
    Workload,
    best_loaded_accuracy,
    confidence,
    confidence_from_noise,
    dirichlet_mixtures,
    inference_error,
    load_trace,
    select_model,
    synthetic_catalog,
)


def toy_table():
    models = [
        ModelSpec("m0", 2.0, frozenset(["text"]), {"a": 0.3, "b": 0.5}),
        ModelSpec("m1", 4.0, frozenset(["text"]), {"a": 0.1, "b": 0.6}),
        ModelSpec("mv", 8.0, frozenset(["text", "vision"]), {"a": 0.4, "v": 0.2}),
    ]
    modality = {"a": "text", "b": "text", "v": "vision"}
    return models, ErrorTable(["a", "b", "v"], models, modality)


class TestErrorTable:
    def test_unsupported_modality_forced_to_one(self):
        _, table = toy_table()
        assert table.error("v", "m0") == 1.0
        assert table.error("v", "m1") == 1.0
        assert table.error("v", "mv") == 0.2

    def test_missing_entry_treated_as_hopeless(self):
        _, table = toy_table()
        assert table.error("b", "mv") == 1.0


class TestConfidence:
    def test_no_capable_model_centers_at_zero(self):
        _, table = toy_table()
        rng = np.random.default_rng(0)
        cm = ConfidenceModel(noise_std=0.01)
        job = Job("j", 0, "v", "n1_0", 12.0, {"m0": 0, "m1": 0, "mv": 0})
        zs = [
            confidence(job, NodeRef("n1_0", 1), ["m0", "m1"], table, cm, rng)
            for _ in range(200)
        ]
        assert max(zs) < 0.05

    def test_zero_noise_is_deterministic_plugin(self):
        _, table = toy_table()
        rng = np.random.default_rng(0)
        cm = ConfidenceModel(noise_std=0.0)
        job = Job("j", 0, "a", "n1_0", 1.0, {"m0": 1, "m1": 1, "mv": 1})
        z = confidence(job, NodeRef("n1_0", 1), ["m0"], table, cm, rng)
        # best loaded model has error 0.3 -> accuracy 0.7... using m1 (err 0.1)
        assert z == pytest.approx(0.7)
        z = confidence(job, NodeRef("n1_0", 1), ["m0", "m1"], table, cm, rng)
        assert z == pytest.approx(0.9)

    def test_monte_carlo_mean_in_clamp_free_region(self):
        # center 0.8, sigma 0.1: mean over 10^4 draws within 3 sigma/sqrt(N)
        rng = np.random.default_rng(7)
        draws = [
            confidence_from_noise(0.8, float(rng.standard_normal()), 0.1)
            for _ in range(10_000)
        ]
        assert abs(np.mean(draws) - 0.8) < 3 * 0.1 / np.sqrt(10_000) + 1e-3

    def test_clamped_to_unit_interval(self):
        assert confidence_from_noise(0.95, 10.0, 0.1) == 1.0
        assert confidence_from_noise(0.05, -10.0, 0.1) == 0.0


class TestInferenceError:
    def test_terminal_layer_always_correct(self):
        _, table = toy_table()
        job = Job("j", 0, "a", "n1_0", 1.0, {"m0": 0, "m1": 0, "mv": 0})
        assert inference_error(job, NodeRef("n3_0", 3), [], table, 3) == 0

    def test_empty_placement_always_fails(self):
        _, table = toy_table()
        job = Job("j", 0, "a", "n1_0", 1.0, {"m0": 1, "m1": 1, "mv": 1})
        assert inference_error(job, NodeRef("n1_0", 1), [], table, 3) == 1

    def test_selection_rule_prefers_lowest_expected_error(self):
        _, table = toy_table()
        # m1 has error 0.1 on task a vs m0's 0.3; job correct under m1 only
        job = Job("j", 0, "a", "n1_0", 1.0, {"m0": 0, "m1": 1, "mv": 0})
        assert select_model(table, "a", ["m0", "m1"]) == "m1"
        assert inference_error(job, NodeRef("n1_0", 1), ["m0", "m1"], table, 3) == 0

    def test_selection_tie_breaks_by_lowest_id(self):
        models = [
            ModelSpec("m1", 1.0, frozenset(["text"]), {"a": 0.2}),
            ModelSpec("m0", 1.0, frozenset(["text"]), {"a": 0.2}),
        ]
        table = ErrorTable(["a"], models, {"a": "text"})
        assert select_model(table, "a", ["m0", "m1"]) == "m0"

    def test_best_loaded_accuracy(self):
        _, table = toy_table()
        assert best_loaded_accuracy(table, "a", ["m0", "mv"]) == pytest.approx(0.7)
        assert best_loaded_accuracy(table, "v", ["m0", "m1"]) == 0.0


def make_workload(seed=0, mean=2.0):
    cfg = default_config()
    cfg["workload"]["mean_jobs_per_slot"] = mean
    topo = build_topology_from_config(cfg)
    return build_workload(cfg, topo, seed)


class TestGeneration:
    def test_zero_rate_gives_empty_slots(self):
        wl = make_workload(mean=0.0)
        for t in range(1, 50):
            assert wl.generate_slot(t) == []

    def test_reproducible_stream(self):
        a = make_workload(seed=3)
        b = make_workload(seed=3)
        for t in range(1, 30):
            ja, jb = a.generate_slot(t), b.generate_slot(t)
            assert [(j.job_id, j.task_type, j.entry_node, j.size_units, dict(j.correctness)) for j in ja] == \
                   [(j.job_id, j.task_type, j.entry_node, j.size_units, dict(j.correctness)) for j in jb]

    def test_jobs_carry_complete_correctness(self):
        wl = make_workload()
        jobs = []
        t = 0
        while len(jobs) < 50:
            t += 1
            jobs.extend(wl.generate_slot(t))
        for job in jobs:
            assert set(job.correctness) == set(wl.model_ids)
            assert all(v in (0, 1) for v in job.correctness.values())
            assert job.size_units > 0

    def test_empirical_mixture_matches_draw(self):
        # per-node task frequencies within multinomial bounds over 10^4 slots
        wl = make_workload(seed=11, mean=2.0)
        counts = {n: np.zeros(len(wl.tasks)) for n in wl.arrivals.task_mixture}
        index = {t: i for i, t in enumerate(wl.tasks)}
        for t in range(1, 10_001):
            for job in wl.generate_slot(t):
                counts[job.entry_node][index[job.task_type]] += 1
        for node, probs in wl.arrivals.task_mixture.items():
            n = counts[node].sum()
            emp = counts[node] / n
            bound = 3.0 * np.sqrt(probs * (1 - probs) / n) + 5e-3
            assert np.all(np.abs(emp - probs) <= bound), node

    def test_hard_fraction_calibrated(self):
        wl = make_workload(seed=5, mean=4.0)
        jobs = []
        t = 0
        while len(jobs) < 20_000:
            t += 1
            jobs.extend(wl.generate_slot(t))
        hard = sum(j.is_hard(wl.model_ids) for j in jobs) / len(jobs)
        assert abs(hard - 0.11) < 0.02


class TestDirichletMixtures:
    def test_mass_split_pinned(self):
        rng = np.random.default_rng(0)
        mix = dirichlet_mixtures(
            ["h", "a", "b"], ["h"], ["e0", "e1"], hard_fraction=0.11, alpha=1.0, rng=rng
        )
        for probs in mix.values():
            assert probs.sum() == pytest.approx(1.0)
            assert probs[0] == pytest.approx(0.11)

    def test_distinct_mixtures_per_entry(self):
        rng = np.random.default_rng(0)
        mix = dirichlet_mixtures(
            [f"t{i}" for i in range(10)], ["t0"], ["e0", "e1"], 0.11, 1.0, rng
        )
        assert not np.allclose(mix["e0"], mix["e1"])


class TestSyntheticCatalog:
    def test_tiers_and_hard_errors(self):
        tasks, modality, models, tiers = synthetic_catalog(
            13, 0.38, 2, 2, DEFAULT_MODEL_POOL, structure_seed=1
        )
        assert len(tasks) == 13
        hard = [t for t, tier in tiers.items() if tier == "hard"]
        assert len(hard) == 2
        table = ErrorTable(tasks, models, modality)
        for t in hard:
            assert modality[t] == "text"
            for m in models:
                assert table.error(t, m.model_id) == 1.0

    def test_structure_seed_fixes_catalog(self):
        a = synthetic_catalog(13, 0.38, 2, 2, DEFAULT_MODEL_POOL, structure_seed=9)
        b = synthetic_catalog(13, 0.38, 2, 2, DEFAULT_MODEL_POOL, structure_seed=9)
        assert a[1] == b[1]
        assert [m.error_prob for m in a[2]] == [m.error_prob for m in b[2]]


TRACE_HEADER = {
    "models": [
        {"id": "m0", "size": 2, "modalities": ["text"], "error_prob": {"qa": 0.2}},
        {"id": "m1", "size": 8, "modalities": ["text", "vision"]},
    ]
}


def write_trace(tmp_path, records, header=TRACE_HEADER):
    path = tmp_path / "trace.jsonl"
    lines = [json.dumps(header)]
    lines += [json.dumps(r) for r in records]
    path.write_text("\n".join(lines) + "\n")
    return str(path)


class TestTrace:
    def test_round_trip_toy_trace(self, tmp_path):
        records = [
            {"job_id": f"t{i}", "task_type": "qa", "modality": "text",
             "size_units": 2.0, "correctness": {"m0": i % 2, "m1": 1}}
            for i in range(3)
        ]
        path = write_trace(tmp_path, records)
        models, jobs = load_trace(path)
        assert [m.model_id for m in models] == ["m0", "m1"]
        assert len(jobs) == 3
        assert jobs[0].correctness == {"m0": 0, "m1": 1}
        assert jobs[1].correctness == {"m0": 1, "m1": 1}

    def test_non_binary_correctness_rejected(self, tmp_path):
        records = [{"job_id": "x", "task_type": "qa", "modality": "text",
                    "size_units": 1.0, "correctness": {"m0": 0.5, "m1": 1}}]
        path = write_trace(tmp_path, records)
        with pytest.raises(TraceFormatError, match="line 2"):
            load_trace(path)

    def test_unknown_model_rejected(self, tmp_path):
        records = [{"job_id": "x", "task_type": "qa", "modality": "text",
                    "size_units": 1.0, "correctness": {"m0": 1, "m1": 1, "zz": 0}}]
        path = write_trace(tmp_path, records)
        with pytest.raises(TraceFormatError, match="unknown model_id"):
            load_trace(path)

    def test_missing_field_names_line(self, tmp_path):
        records = [{"job_id": "x", "task_type": "qa", "modality": "text",
                    "correctness": {"m0": 1, "m1": 0}}]
        path = write_trace(tmp_path, records)
        with pytest.raises(TraceFormatError, match="line 2.*size_units"):
            load_trace(path)

    def test_large_catalog_accepted(self, tmp_path):
        header = {"models": [
            {"id": f"m{i:02d}", "size": 1 + i % 7, "modalities": ["text"]}
            for i in range(23)
        ]}
        ids = [f"m{i:02d}" for i in range(23)]
        records = [
            {"job_id": f"j{k}", "task_type": f"task{k % 114}", "modality": "text",
             "size_units": 1.5, "correctness": {m: (k + i) % 2 for i, m in enumerate(ids)}}
            for k in range(300)
        ]
        path = write_trace(tmp_path, records, header)
        models, jobs = load_trace(path)
        assert len(models) == 23
        assert len({j.task_type for j in jobs}) == 114
