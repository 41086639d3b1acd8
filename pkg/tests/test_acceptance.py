"""Acceptance suite: one test per criterion, one printed PASS line each.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion lines.
"""

import random
import time
from pathlib import Path

import numpy as np
import pytest

from ttsched import (
    HardwareConfig,
    build_subtask_graph,
    cross_core_bytes,
    execute_reference,
    fuse_operators,
    map_subtasks,
    model_from_dict,
)
from ttsched.cli import main as cli_main
from ttsched.partitioner import DRAM_NODE
from ttsched.simulator import ExecutionProfile, simulate, verify_against_prediction

from support import (
    compile_pipeline,
    conv,
    dense,
    enumerate_mappings,
    longest_path_cycles,
    make_model,
    oracle_edge_bytes,
    random_model,
    random_pipeline,
    random_weights,
)
from test_scheduler import chain_schedule

REPO = Path(__file__).resolve().parent.parent
CORPUS_SIZE = 1000


@pytest.fixture(scope="module")
def corpus():
    """>= 1000 randomized (model, hw) pipelines, a few at multi-hundred-subtask size."""
    rng = random.Random(0xACCE97)
    t0 = time.time()
    pipelines = []
    # A handful of deliberately fine-grained tilings near the size cap.
    for budget in (5400, 6000, 8000, 12000, 20000):
        g = fuse_operators(make_model((16, 16, 8), [
            conv("c1", "input", 8, 32, k=3, stride=1, pad=1),
            conv("c2", "c1", 32, 16, k=3, stride=1, pad=1),
        ]))
        hw = HardwareConfig(n_cores=16)
        sg, mapping, costs, schedule = compile_pipeline(g, hw, tile_budget_bytes=budget)
        assert len(sg.subtasks) <= 200
        pipelines.append((sg, schedule))
    while len(pipelines) < CORPUS_SIZE:
        *_, sg, _, _, schedule = random_pipeline(rng)
        pipelines.append((sg, schedule))
    build_time = time.time() - t0
    sizes = [len(sg.subtasks) for sg, _ in pipelines]
    print(f"\ncorpus: {len(pipelines)} pipelines, subtasks max={max(sizes)}, "
          f"built in {build_time:.1f}s")
    return pipelines, t0


def test_acceptance_1_interference_freedom(corpus):
    pipelines, t0 = corpus
    assert len(pipelines) >= 1000
    for _, schedule in pipelines:
        ordered = sorted(schedule.transfers, key=lambda t: (t.start, t.id))
        for a, b in zip(ordered, ordered[1:]):
            assert b.start >= a.end, (
                f"transfers {a.id} and {b.id} overlap: [{a.start},{a.end}) vs [{b.start},{b.end})"
            )
    elapsed = time.time() - t0
    assert elapsed < 60.0, f"corpus checks took {elapsed:.1f}s"
    print(f"ACCEPTANCE 1 interference freedom: PASS "
          f"({len(pipelines)} schedules, {elapsed:.1f}s elapsed)")


def test_acceptance_2_wcet_compositionality(corpus):
    pipelines, t0 = corpus
    rng = random.Random(0xC0)
    for i, (_, schedule) in enumerate(pipelines):
        worst = simulate(schedule, ExecutionProfile("worst_case"))
        assert not worst.violations
        assert worst.observed_makespan == schedule.makespan
        rnd = simulate(schedule, ExecutionProfile(
            "random", seed=rng.randint(0, 2**31), min_factor=rng.choice([0.1, 0.4, 0.8])))
        assert not rnd.violations
        assert rnd.observed_makespan <= schedule.makespan
    elapsed = time.time() - t0
    assert elapsed < 60.0, f"corpus + simulations took {elapsed:.1f}s"
    print(f"ACCEPTANCE 2 WCET compositionality: PASS "
          f"({len(pipelines)} x2 simulations, {elapsed:.1f}s elapsed)")


def test_acceptance_3_fault_detection():
    rng = random.Random(0xFA)
    cases = 0
    while cases < 100:
        *_, schedule = random_pipeline(rng, max_layers=4)
        if not schedule.computes:
            continue
        victim = rng.choice(schedule.computes)
        factor = (victim.wcet + 1) / victim.wcet  # one-cycle overrun
        trace = simulate(schedule, ExecutionProfile("fault", faults={victim.subtask: factor}))
        overruns = [v for v in trace.violations if v.kind == "wcet_overrun"]
        assert len(overruns) == 1, f"expected exactly one overrun, got {trace.violations}"
        assert overruns[0].event == f"c{victim.subtask}"
        assert len(trace.violations) == 1
        assert not verify_against_prediction(trace, schedule)["pass"]
        cases += 1
    print("ACCEPTANCE 3 fault detection: PASS (100 single-cycle overrun cases)")


def test_acceptance_4_tiling_exactness():
    rng = random.Random(0x71)
    models = 0
    edge_checks = 0
    while models < 30:
        doc = random_model(rng, max_layers=5)
        g = fuse_operators(model_from_dict(doc))
        hw = HardwareConfig(n_cores=4)
        budget = rng.choice([2600, 6000, None])
        from ttsched.errors import InfeasibleBudgetError
        try:
            sg = build_subtask_graph(g, hw, tile_budget_bytes=budget)
        except InfeasibleBudgetError:
            budget = None
            sg = build_subtask_graph(g, hw)
        for s in sg.subtasks:
            assert s.spm_footprint_bytes <= (budget or hw.tile_budget_bytes)
        # Exact cover: tiles partition every layer's m x n grid.
        for lid, dims in sg.dims_of.items():
            grid = np.zeros((dims.m, dims.n), dtype=int)
            for s in sg.subtasks:
                if s.layer_id == lid:
                    grid[s.tile.m0:s.tile.m0 + s.tile.mt, s.tile.n0:s.tile.n0 + s.tile.nt] += 1
            assert (grid == 1).all(), f"layer {lid} not exactly covered"
        # Edge bytes against the region-intersection oracle.
        expected = oracle_edge_bytes(g, sg)
        got = {}
        for e in sg.edges:
            if e.src != DRAM_NODE and e.dst != DRAM_NODE:
                got[(e.src, e.dst)] = got.get((e.src, e.dst), 0) + e.bytes
        assert got == expected
        edge_checks += len(expected)
        models += 1
    print(f"ACCEPTANCE 4 tiling exactness: PASS ({models} models, {edge_checks} edges vs oracle)")


def test_acceptance_5_schedule_structure():
    # Exact hand-derived chain timeline.
    _, s = chain_schedule()
    assert s.makespan == 3129

    rng = random.Random(0x55)
    checked = 0
    while checked < 30:
        *_, schedule = random_pipeline(rng, max_layers=3)
        if len(schedule.transfers) + len(schedule.computes) > 10:
            continue
        lower = longest_path_cycles(schedule)
        assert schedule.makespan >= lower, (
            f"makespan {schedule.makespan} below critical path {lower}"
        )
        checked += 1
    print(f"ACCEPTANCE 5 schedule structure: PASS (chain=3129 exact, {checked} DAGs >= critical path)")


def test_acceptance_6_mapping_oracle():
    rng = random.Random(0x60)
    ratios = []
    instances = 0
    while instances < 40:
        *_, sg, _, _, _ = random_pipeline(rng, max_layers=4)
        if not 1 <= len(sg.subtasks) <= 8:
            continue
        n_cores = rng.randint(1, 3)
        m1 = map_subtasks(sg, n_cores)
        m2 = map_subtasks(sg, n_cores)
        assert m1 == m2  # deterministic
        got = cross_core_bytes(sg, m1)
        space = enumerate_mappings(sg, n_cores)
        assert min(space) <= got <= max(space), "greedy outside the feasible range"
        if min(space) > 0:
            ratios.append(got / min(space))
        instances += 1
    mean_ratio = sum(ratios) / len(ratios) if ratios else 1.0
    print(f"ACCEPTANCE 6 mapping oracle: PASS ({instances} instances exhaustively checked; "
          f"greedy/optimum mean={mean_ratio:.3f} max={max(ratios or [1.0]):.3f})")


def test_acceptance_7_functional_oracle():
    # Documented example 1: identity 1x1 conv.
    g = make_model((3, 3, 1), [conv("c", "input", 1, 1, k=1, pad=0)])
    out = execute_reference(g, np.full((3, 3, 1), 5, dtype=np.int8),
                            {"c.w": np.array([1], dtype=np.int8)})
    assert (out == 5).all()
    # Documented example 2: 2x2 dense, rows are output neurons.
    g = make_model((2,), [dense("d", "input", 2, 2)])
    out = execute_reference(g, np.array([1, 1], dtype=np.int8),
                            {"d.w": np.array([1, 2, 3, 4], dtype=np.int8)})
    assert out.tolist() == [3, 7]
    # Documented example 3: saturation at int8 max.
    g = make_model((1,), [dense("d", "input", 1, 1)])
    out = execute_reference(g, np.array([127], dtype=np.int8),
                            {"d.w": np.array([127], dtype=np.int8)})
    assert out.tolist() == [127]

    rng = random.Random(0x70)
    fused_checked = 0
    for _ in range(120):
        doc = random_model(rng, max_layers=6)
        g = model_from_dict(doc)
        fused = fuse_operators(g)
        weights = random_weights(g, rng)
        x = np.array([rng.randint(-128, 127) for _ in range(g.input_shape.num_elems)],
                     dtype=np.int8).reshape(g.input_shape.dims)
        assert np.array_equal(execute_reference(g, x, weights),
                              execute_reference(fused, x, weights))
        if len(fused.layers) < len(g.layers):
            fused_checked += 1
    assert fused_checked >= 20
    print(f"ACCEPTANCE 7 functional oracle: PASS (3 documented examples, "
          f"{fused_checked} fused graphs bit-exact)")


def test_acceptance_8_end_to_end_desk_scale(tmp_path, capsys):
    t0 = time.time()
    model = REPO / "models" / "smallcnn.json"
    assert cli_main(["compile", "--model", str(model), "--out", str(tmp_path)]) == 0
    schedule = tmp_path / "schedule.json"
    assert cli_main(["check", str(schedule)]) == 0
    assert cli_main(["simulate", str(schedule), "--profile", "worst-case",
                     "--out", str(tmp_path)]) == 0
    elapsed = time.time() - t0
    out = capsys.readouterr().out
    assert "PASS" in out
    assert elapsed < 10.0, f"end-to-end run took {elapsed:.1f}s"
    with capsys.disabled():
        print(f"\nACCEPTANCE 8 end-to-end desk scale: PASS ({elapsed:.2f}s, 16-core default config)")
