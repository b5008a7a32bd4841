"""Acceptance suite.

Each test enforces one acceptance criterion end to end at its stated
tolerance and prints one PASS/FAIL line (run with ``pytest -s`` to see the
lines as they happen). Budgets and tolerances are pinned here, not
configurable.
"""

import functools
import json
import math
import time

import numpy as np
import pytest

from emoforge import (
    BudgetPlan,
    DeterministicMutator,
    Engine,
    EngineSettings,
    builtin_family,
)
from emoforge.cli import main as cli_main
from emoforge.engine import STA_VARIANTS, SINGLE_TASK
from emoforge.errors import ConfigError
from emoforge.evaluators import (
    Packing,
    PipelineConfig,
    PointSet,
    eval_circle_rect,
    eval_circle_square,
    eval_function_min,
    eval_heilbronn,
    eval_k_module,
    register_objective,
)
from emoforge.execution import CandidateGenome
from emoforge.tasks import TaskSpec, normalize, parse_manifest

from oracles import (
    circle_packing_valid,
    function_min_score,
    min_triangle_area_oracle,
    random_packing,
)

ALL_FAMILIES = ("circle_packing", "circle_packing_rect", "heilbronn",
                "function_minimization", "k_module")
GEOMETRIC_FAMILIES = ("circle_packing", "circle_packing_rect", "heilbronn")


def criterion(name):
    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                print(f"\nACCEPTANCE FAIL: {name}")
                raise
            print(f"\nACCEPTANCE PASS: {name}")
        return wrapper
    return decorate


def small_engine(family_name, eval_mode="cascade"):
    family = builtin_family(family_name)
    return Engine(family, DeterministicMutator(), EngineSettings(eval_mode=eval_mode))


# -- 1. budget identity -----------------------------------------------------------

@criterion("budget identity: all paper table settings accepted, totals exact")
def test_budget_identity():
    started = time.monotonic()
    two_task_family = parse_manifest({
        "schema": "emoforge-families-1",
        "families": [{
            "family_id": "two_task",
            "evaluator_kind": "circle_square",
            "seed": {"heuristic": "hex_packer", "params": [0.0, 0.0, 0.06]},
            "tasks": [
                {"task_id": "a", "params": {"n": 4}, "target": 1.0},
                {"task_id": "b", "params": {"n": 5}, "target": 1.1},
            ],
        }],
    })["two_task"]

    settings = [
        (60, 15, 4, 120),
        (40, 15, 4, 100),
        (60, 10, 2, 80),
        (40, 20, 4, 120),
    ]
    for shared, adapt, tasks, total in settings:
        plan = BudgetPlan.from_shared_adapt(shared, adapt, tasks)
        assert plan.total == total
        assert plan.shared + plan.tasks * plan.adapt == plan.tasks * plan.baseline
        family = two_task_family if tasks == 2 else builtin_family("circle_packing")
        engine = Engine(family, DeterministicMutator())
        # Zero seeds: the plan is validated and accepted with no compute.
        accepted = engine.run_matched_experiment(plan, seeds=[])
        assert accepted.plan is plan

    with pytest.raises(ConfigError):
        BudgetPlan.from_shared_adapt(61, 15, 4)
    assert time.monotonic() - started < 1.0


# -- 2. evaluator constants ----------------------------------------------------------

@criterion("evaluator constants: raw metric at every published target -> 1.0")
def test_evaluator_constants():
    checked = 0
    for name in GEOMETRIC_FAMILIES:
        family = builtin_family(name)
        for spec in list(family.tasks) + list(family.holdouts):
            assert abs(normalize(spec.reference_target, spec) - 1.0) <= 1e-9
            checked += 1
    assert checked == 21  # 7 circle-square + 7 rectangle + 7 heilbronn


# -- 3. oracle equivalence ------------------------------------------------------------

@criterion("oracle equivalence: packing verdicts and heilbronn areas match brute force")
def test_oracle_equivalence():
    started = time.monotonic()

    rng = np.random.default_rng(20240817)
    for _ in range(1000):
        n, centers, radii = random_packing(rng, 1.0, 1.0)
        spec = TaskSpec(task_id="sq", family_id="acc", evaluator_kind="circle_square",
                        params={"n": n}, reference_target=1.0)
        framework = eval_circle_square(Packing(centers, radii), spec).failure is None
        assert framework == circle_packing_valid(centers, radii, 1.0, 1.0)

    for _ in range(1000):
        alpha = float(rng.uniform(0.15, 1.0))
        n, centers, radii = random_packing(rng, alpha, 2.0 - alpha)
        spec = TaskSpec(task_id="re", family_id="acc", evaluator_kind="circle_rect",
                        params={"n": n}, reference_target=1.0)
        framework = eval_circle_rect(Packing(centers, radii, alpha=alpha),
                                     spec).failure is None
        assert framework == circle_packing_valid(centers, radii, alpha, 2.0 - alpha)

    for _ in range(500):
        n = int(rng.integers(3, 15))
        u = rng.uniform(0.0, 1.0, size=n)
        v = rng.uniform(0.0, 1.0, size=n)
        s = np.sqrt(u)
        points = np.column_stack([2.0 * s * (1.0 - v), s * v])
        reference = 0.05
        spec = TaskSpec(task_id="he", family_id="acc", evaluator_kind="heilbronn",
                        params={"n": n}, reference_target=reference)
        expected = min_triangle_area_oracle([tuple(p) for p in points.tolist()])
        got = eval_heilbronn(PointSet(points.tolist()), spec)
        assert got.failure is None
        assert got.score == expected / reference  # both sides exact

    assert time.monotonic() - started < 30.0


# -- 4. formula checks -----------------------------------------------------------------

@criterion("formula checks: minimizer score formula to 1e-12; consensus scores 0.5")
def test_formula_checks():
    rng = np.random.default_rng(99)
    for i in range(100):
        delta_f = float(rng.uniform(0.0, 10.0))
        distance = float(rng.uniform(0.01, 10.0))
        successes = int(rng.integers(1, 6))
        rho = successes / 5.0
        slope = delta_f / distance

        name = f"acc_cone_{i}"
        register_objective(name,
                           lambda u, v, s=slope: s * math.hypot(u, v),
                           (0.0, 0.0))
        spec = TaskSpec(
            task_id=name, family_id="acc", evaluator_kind="function_min",
            params={"objective": name, "bounds": [[-50.0, 50.0], [-50.0, 50.0]],
                    "offset": [0.0, 0.0]},
        )

        def candidate(objective, bounds, iterations, seed,
                      good=(distance, 0.0), k=successes):
            return good if seed < k else (999.0, 999.0)

        result = eval_function_min(candidate, spec)
        realized_delta = slope * math.hypot(distance, 0.0)
        expected = function_min_score(realized_delta, distance, rho)
        assert abs(result.score - expected) <= 1e-12

    family = builtin_family("k_module")
    consensus = family.meta["consensus"]
    for spec in family.tasks:
        assert eval_k_module(PipelineConfig(dict(consensus)), spec).score == 0.5


# -- 5. STA structural invariants --------------------------------------------------------

@criterion("structural invariants: dominance, cardinality, monotonicity, score means")
def test_sta_structural_invariants():
    plan = BudgetPlan.from_shared_adapt(8, 2, 4)
    for family_name in ALL_FAMILIES:
        engine = small_engine(family_name)
        family = engine.family
        task_ids = [t.task_id for t in family.tasks]
        for seed in range(50):
            shared = engine.run_shared(plan.shared, seed)
            archive = shared.archive

            # (d) shared_score is the mean of the cached task scores
            for entry in archive.entries():
                mean = sum(entry.record.task_scores.values()) / len(entry.record.task_scores)
                assert abs(entry.record.shared_score - mean) <= 1e-12

            # (a) pre-adaptation best_local >= best_shared on every task
            for task_id in task_ids:
                local = archive.project(task_id, "best_local")[0]
                shared_best = archive.project(task_id, "best_shared")[0]
                assert (local.record.task_scores[task_id]
                        >= shared_best.record.task_scores[task_id])

            # (b) warmstart initialization cardinality equals archive size
            task_id = task_ids[seed % len(task_ids)]
            assert len(archive.project(task_id, "warmstart")) == len(archive)
            warm = engine.run_adaptation(archive, task_id, "warmstart", 0, seed)
            assert len(warm.archive) == len(archive)

            # (c) best-so-far trajectories non-decreasing
            variant = STA_VARIANTS[seed % len(STA_VARIANTS)]
            adapted = engine.run_adaptation(archive, task_id, variant,
                                            plan.adapt, seed)
            baseline = engine.run_single_task(task_id, plan.baseline, seed)
            for trajectory in (shared.trajectory, adapted.trajectory,
                               baseline.trajectory):
                assert all(b >= a for a, b in zip(trajectory, trajectory[1:]))


# -- 6. LLM-free transfer demonstration ----------------------------------------------------

@criterion("transfer demonstration: STA best-local >= single-task at matched compute")
def test_llm_free_transfer():
    started = time.monotonic()
    engine = Engine(builtin_family("circle_packing"), DeterministicMutator())
    plan = BudgetPlan.from_shared_adapt(60, 15, 4)
    assert plan.baseline == 30
    result = engine.run_matched_experiment(plan, seeds=range(10))
    best_local = float(np.mean([r.family_means["best_local"] for r in result.runs]))
    single = float(np.mean([r.family_means[SINGLE_TASK] for r in result.runs]))
    assert best_local >= single, (best_local, single)
    assert time.monotonic() - started < 300.0


# -- 7. determinism and checkpointing --------------------------------------------------------

@criterion("determinism: identical (config, seed) -> byte-identical records; "
           "checkpoint resume = uninterrupted run")
def test_determinism_and_checkpoint(tmp_path):
    config = {
        "family": "heilbronn",
        "budget": {"shared": 8, "adapt": 2},
        "seeds": [0, 1],
        "mutator": {"backend": "deterministic"},
    }
    outputs = []
    for run_dir in ("first", "second"):
        out = tmp_path / run_dir
        config_path = tmp_path / f"{run_dir}.json"
        config_path.write_text(json.dumps(dict(config, out=str(out))), "utf-8")
        assert cli_main(["run", "--config", str(config_path)]) == 0
        outputs.append((out / "results.jsonl").read_bytes())
    assert outputs[0] == outputs[1]

    checkpoint_dir = tmp_path / "ckpt"
    checkpoint_dir.mkdir()
    settings = EngineSettings(checkpoint_every=8, checkpoint_dir=checkpoint_dir)
    engine = Engine(builtin_family("circle_packing"), DeterministicMutator(), settings)
    full = engine.run_shared(16, seed=21)
    engine.run_shared(8, seed=21)
    resumed = engine.run_shared(16, seed=21,
                                resume_from=checkpoint_dir / "shared-s21-000008.ckpt")
    assert resumed.archive.state_bytes() == full.archive.state_bytes()
    assert resumed.trajectory == full.trajectory


# -- 8. OOD harness ----------------------------------------------------------------------------

@criterion("OOD harness: 4x3 holdout matrices from stored results, nonzero "
           "scores for parametric candidates")
def test_ood_harness(tmp_path):
    import csv

    for family_name in GEOMETRIC_FAMILIES:
        # Store adapted programs via the runner, then evaluate holdouts from
        # the stored results only.
        out = tmp_path / family_name
        config_path = tmp_path / f"{family_name}.json"
        config_path.write_text(json.dumps({
            "family": family_name,
            "budget": {"shared": 8, "adapt": 2},
            "seeds": [0],
            "out": str(out),
        }), "utf-8")
        assert cli_main(["run", "--config", str(config_path)]) == 0
        assert cli_main(["ood", "--config", str(config_path),
                         "--results", str(out)]) == 0

        family = builtin_family(family_name)
        holdout_sizes = {t.params["n"] for t in family.holdouts}
        csv_path = out / "report" / f"ood_{family_name}_best_local.csv"
        rows = list(csv.reader(csv_path.open()))
        header, body, mean_row = rows[0], rows[1:-1], rows[-1]
        assert len(header) == 1 + 3 and len(body) == 4  # 4 sources x 3 holdouts
        assert {family.task(h).params["n"] for h in header[1:]} == holdout_sizes
        assert mean_row[0] == "mean_over_sources"
        assert len([float(v) for v in mean_row[1:]]) == 3

        # A size-parameterized parametric candidate is valid (nonzero) at
        # every holdout size.
        engine = small_engine(family_name, eval_mode="full")
        seed_genome = engine.seed_genome
        assert seed_genome.kind == "parametric"
        from emoforge.execution import evaluate_genome
        for holdout in family.holdouts:
            score = evaluate_genome(seed_genome, holdout)
            assert score.failure is None
            assert score.score > 0.0

        # And the in-memory harness agrees with the stored route's shape.
        run = engine.run_matched_experiment(
            BudgetPlan.from_shared_adapt(8, 2, 4), seeds=[0]).runs[0]
        adapted = {task: CandidateGenome.from_dict(g)
                   for task, g in run.adapted_genomes["best_local"].items()}
        ood = engine.run_ood_eval(adapted)
        assert len(ood.source_tasks) == 4 and len(ood.holdout_tasks) == 3
        assert all(len(row) == 3 for row in ood.matrix.values())
        assert all(v > 0.0 for row in ood.matrix.values() for v in row.values())
