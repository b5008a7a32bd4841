"""Evaluator scoring: oracle equivalence, formula checks, edge cases."""

import math

import numpy as np
import pytest

from emoforge import builtin_family
from emoforge.errors import OutOfBoundsError
from emoforge.evaluators import (
    F_ALPHA,
    F_CONFIG,
    F_CONTAINMENT,
    F_NO_SEEDS,
    F_NONFINITE,
    F_OUTSIDE,
    F_OVERLAP,
    F_SHAPE,
    Packing,
    PipelineConfig,
    PointSet,
    benchmark_objectives,
    eval_circle_rect,
    eval_circle_square,
    eval_function_min,
    eval_heilbronn,
    eval_k_module,
    min_triangle_area,
    register_objective,
    resolve_objective,
)
from emoforge.tasks import TaskSpec

from oracles import (
    circle_packing_valid,
    function_min_score,
    min_triangle_area_oracle,
    random_packing,
)

CIRCLE = builtin_family("circle_packing")
RECT = builtin_family("circle_packing_rect")
HEIL = builtin_family("heilbronn")
FMIN = builtin_family("function_minimization")
KMOD = builtin_family("k_module")


def circle_spec(n, target=1.0):
    return TaskSpec(task_id=f"c{n}", family_id="t", evaluator_kind="circle_square",
                    params={"n": n}, reference_target=target)


def rect_spec(n, target=1.0):
    return TaskSpec(task_id=f"r{n}", family_id="t", evaluator_kind="circle_rect",
                    params={"n": n}, reference_target=target)


def heil_spec(n, target=1.0):
    return TaskSpec(task_id=f"h{n}", family_id="t", evaluator_kind="heilbronn",
                    params={"n": n}, reference_target=target)


# -- circle packing ----------------------------------------------------------

def test_single_inscribed_circle():
    spec = circle_spec(1, target=0.5)
    result = eval_circle_square(Packing([[0.5, 0.5]], [0.5]), spec)
    assert result.failure is None
    assert result.score == 1.0  # raw 0.5 over target 0.5


def test_two_circle_overlap_rejected():
    # distance = sqrt(0.32) = 0.56568... < 0.3 + 0.3 - 1e-6
    spec = circle_spec(2)
    result = eval_circle_square(Packing([[0.3, 0.3], [0.7, 0.7]], [0.3, 0.3]), spec)
    assert result.score == 0.0
    assert result.failure == F_OVERLAP
    assert math.sqrt(0.32) < 0.6 - 1e-6


def test_touching_circles_within_tolerance():
    # distance exactly 0.5, radii sum exactly 0.5
    spec = circle_spec(2)
    result = eval_circle_square(Packing([[0.25, 0.5], [0.75, 0.5]], [0.25, 0.25]), spec)
    assert result.failure is None
    assert result.score == 0.5


def test_circle_failure_kinds():
    spec = circle_spec(2)
    assert eval_circle_square(Packing([[0.5, 0.5]], [0.1]), spec).failure == F_SHAPE
    assert eval_circle_square(
        Packing([[0.5, 0.5], [float("nan"), 0.5]], [0.1, 0.1]), spec
    ).failure == F_NONFINITE
    assert eval_circle_square(
        Packing([[0.05, 0.5], [0.7, 0.5]], [0.1, 0.1]), spec
    ).failure == F_CONTAINMENT
    assert eval_circle_square(
        Packing([[0.2, 0.5], [0.7, 0.5]], [-0.1, 0.1]), spec
    ).failure == "negative_radius"
    assert eval_circle_square(Packing("junk", [0.1, 0.1]), spec).failure == F_SHAPE


def test_rect_alpha_validation():
    spec = rect_spec(1)
    packing = Packing([[0.25, 0.25]], [0.2], alpha=1.2)
    assert eval_circle_rect(packing, spec).failure == F_ALPHA
    packing = Packing([[0.25, 0.25]], [0.2], alpha=None)
    assert eval_circle_rect(packing, spec).failure == F_ALPHA
    packing = Packing([[0.25, 0.25]], [0.2], alpha=0.5)
    assert eval_circle_rect(packing, spec).failure is None


def test_rect_alpha_one_degenerates_to_unit_square():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(2, 9))
        centers = rng.uniform(0.0, 1.0, size=(n, 2)).tolist()
        radii = rng.uniform(0.0, 0.25, size=n).tolist()
        square = eval_circle_square(Packing(centers, radii), circle_spec(n))
        rect = eval_circle_rect(Packing(centers, radii, alpha=1.0), rect_spec(n))
        assert (square.failure is None) == (rect.failure is None)
        assert square.score == rect.score


def test_rect_containment_uses_alpha_box():
    spec = rect_spec(1)
    # fits in [0, 0.5] x [0, 1.5]
    assert eval_circle_rect(Packing([[0.25, 1.2]], [0.2], alpha=0.5), spec).failure is None
    # same circle placed outside the narrow width
    assert eval_circle_rect(Packing([[0.45, 1.2]], [0.2], alpha=0.5), spec).failure == F_CONTAINMENT


def test_circle_validity_matches_bruteforce_oracle():
    rng = np.random.default_rng(12345)
    verdicts = {True: 0, False: 0}
    for _ in range(400):
        n, centers, radii = random_packing(rng, 1.0, 1.0)
        expected = circle_packing_valid(centers, radii, 1.0, 1.0)
        got = eval_circle_square(Packing(centers, radii), circle_spec(n)).failure is None
        assert got == expected
        verdicts[expected] += 1
    assert verdicts[True] > 20 and verdicts[False] > 20


def test_rect_validity_matches_bruteforce_oracle():
    rng = np.random.default_rng(999)
    verdicts = {True: 0, False: 0}
    for _ in range(400):
        alpha = float(rng.uniform(0.2, 1.0))
        n, centers, radii = random_packing(rng, alpha, 2.0 - alpha)
        expected = circle_packing_valid(centers, radii, alpha, 2.0 - alpha)
        got = eval_circle_rect(Packing(centers, radii, alpha=alpha),
                               rect_spec(n)).failure is None
        assert got == expected
        verdicts[expected] += 1
    assert verdicts[True] > 20 and verdicts[False] > 20


def test_scale_consistency():
    rng = np.random.default_rng(4)
    spec = circle_spec(6, target=1.0)
    for _ in range(100):
        centers = rng.uniform(0.2, 0.8, size=(6, 2))
        radii = np.full(6, 0.01)
        base = eval_circle_square(Packing(centers.tolist(), radii.tolist()), spec)
        if base.failure is not None:
            continue
        t = float(rng.uniform(0.1, 1.0))
        scaled = eval_circle_square(
            Packing(centers.tolist(), (radii * t).tolist()), spec)
        assert scaled.failure is None
        assert scaled.score == pytest.approx(t * base.score, rel=1e-12)


# -- heilbronn ----------------------------------------------------------------

def test_heilbronn_vertices_score_full_triangle():
    spec = heil_spec(3)
    result = eval_heilbronn(PointSet([[0.0, 0.0], [2.0, 0.0], [0.0, 1.0]]), spec)
    assert result.failure is None
    assert result.score == 1.0  # unit-area triangle


def test_heilbronn_collinear_scores_zero_without_failure():
    spec = heil_spec(4)
    points = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [0.0, 1.0]]
    result = eval_heilbronn(PointSet(points), spec)
    assert result.score == 0.0
    assert result.failure is None


def test_heilbronn_outside_triangle():
    spec = heil_spec(3)
    result = eval_heilbronn(PointSet([[1.5, 0.9], [0.0, 0.0], [1.0, 0.1]]), spec)
    assert result.failure == F_OUTSIDE


def test_heilbronn_shape_and_finiteness():
    spec = heil_spec(3)
    assert eval_heilbronn(PointSet([[0, 0], [1, 0]]), spec).failure == F_SHAPE
    assert eval_heilbronn(
        PointSet([[0, 0], [1, 0], [float("inf"), 0.1]]), spec
    ).failure == F_NONFINITE


def _random_triangle_points(rng, n):
    # Square-root map keeps points uniform inside the canonical triangle.
    u = rng.uniform(0.0, 1.0, size=n)
    v = rng.uniform(0.0, 1.0, size=n)
    s = np.sqrt(u)
    b1, b2, b3 = 1.0 - s, s * (1.0 - v), s * v
    return np.column_stack([2.0 * b2, b3])


def test_heilbronn_matches_all_triples_oracle_exactly():
    rng = np.random.default_rng(777)
    for _ in range(200):
        n = int(rng.integers(3, 15))
        points = _random_triangle_points(rng, n)
        expected = min_triangle_area_oracle([tuple(p) for p in points.tolist()])
        assert min_triangle_area(points) == expected
        spec = heil_spec(n, target=0.05)
        result = eval_heilbronn(PointSet(points.tolist()), spec)
        assert result.score == expected / 0.05


# -- function minimization -----------------------------------------------------

def test_benchmark_objectives_at_translated_optima():
    for task in FMIN.tasks:
        _, optimum, _, min_value = resolve_objective(task.params)
        assert benchmark_objectives(task.task_id, optimum) == pytest.approx(
            min_value, abs=1e-12)


def test_benchmark_objectives_out_of_bounds():
    with pytest.raises(OutOfBoundsError):
        benchmark_objectives("rosenbrock", (4.0, 0.0))


def test_rosenbrock_translated_minimizer():
    spec = FMIN.task("rosenbrock")
    ox, oy = spec.params["offset"]
    assert benchmark_objectives("rosenbrock", (1.0 + ox, 1.0 + oy)) == 0.0


def test_exact_optimum_candidate_scores_one():
    spec = FMIN.task("ackley")
    _, optimum, _, _ = resolve_objective(spec.params)

    def candidate(objective, bounds, iterations, seed):
        return optimum

    result = eval_function_min(candidate, spec)
    assert result.failure is None
    assert result.score == pytest.approx(1.0, abs=1e-12)


def test_all_out_of_bounds_scores_zero():
    spec = FMIN.task("ackley")

    def candidate(objective, bounds, iterations, seed):
        return (99.0, 99.0)

    result = eval_function_min(candidate, spec)
    assert result.score == 0.0
    assert result.failure == F_NO_SEEDS


def test_crashing_seed_counts_as_unsuccessful():
    spec = FMIN.task("ackley")
    _, optimum, _, _ = resolve_objective(spec.params)

    def candidate(objective, bounds, iterations, seed):
        if seed == 0:
            raise RuntimeError("boom")
        return optimum

    result = eval_function_min(candidate, spec)
    # rho = 4/5, delta_f = d = 0
    assert result.score == pytest.approx(0.50 + 0.35 + 0.15 * 0.8, abs=1e-12)


def test_formula_delta1_d1_rho1():
    # Injected via a stub: a linear half-cone objective lets us place a point
    # with delta_f == d == 1 exactly.
    register_objective("unit_cone", lambda u, v: math.hypot(u, v), (0.0, 0.0))
    spec = TaskSpec(task_id="cone", family_id="t", evaluator_kind="function_min",
                    params={"objective": "unit_cone",
                            "bounds": [[-5.0, 5.0], [-5.0, 5.0]],
                            "offset": [0.0, 0.0]})

    def candidate(objective, bounds, iterations, seed):
        return (1.0, 0.0)

    result = eval_function_min(candidate, spec)
    assert result.score == pytest.approx(0.575, abs=1e-12)
    assert function_min_score(1.0, 1.0, 1.0) == 0.575


def test_cascade_mode_uses_two_seeds():
    spec = FMIN.task("ackley")
    seen = []

    def candidate(objective, bounds, iterations, seed):
        seen.append((iterations, seed))
        return (99.0, 99.0)

    eval_function_min(candidate, spec, mode="cascade")
    assert seen == [(50, 0), (50, 1)]


def test_full_mode_uses_five_seeds():
    spec = FMIN.task("ackley")
    seen = []

    def candidate(objective, bounds, iterations, seed):
        seen.append((iterations, seed))
        return (0.0, 0.0)

    eval_function_min(candidate, spec, mode="full")
    assert seen == [(200, s) for s in range(5)]


def test_determinism_of_eval():
    spec = FMIN.task("rastrigin")

    def candidate(objective, bounds, iterations, seed):
        best = None
        best_v = math.inf
        x = -4.0
        while x < 4.0:
            v = objective((x, x / 2.0))
            if v < best_v:
                best, best_v = (x, x / 2.0), v
            x += 0.37
        return best

    first = eval_function_min(candidate, spec)
    second = eval_function_min(candidate, spec)
    assert first.score == second.score


# -- k-module -------------------------------------------------------------------

def test_k_module_exact_match_and_fraction():
    spec = KMOD.tasks[0]
    target = spec.params["hidden_target"]
    assert eval_k_module(PipelineConfig(dict(target)), spec).score == 1.0

    # Flip two modules away from the target: 4/6 match -> exactly 2/3.
    modules = spec.params["modules"]
    four_of_six = dict(target)
    flipped = 0
    for module, options in modules.items():
        if flipped == 2:
            break
        for option in options:
            if option != target[module]:
                four_of_six[module] = option
                flipped += 1
                break
    assert eval_k_module(PipelineConfig(four_of_six), spec).score == 2 / 3


def test_k_module_consensus_scores_half_everywhere():
    consensus = KMOD.meta["consensus"]
    for spec in KMOD.tasks:
        assert eval_k_module(PipelineConfig(dict(consensus)), spec).score == 0.5


def test_k_module_invalid_configs():
    spec = KMOD.tasks[0]
    assert eval_k_module(PipelineConfig(None), spec).failure == F_CONFIG
    assert eval_k_module(PipelineConfig({"ingest": "ingest_opt1"}), spec).failure == F_CONFIG
    bad = dict(spec.params["hidden_target"])
    bad["ingest"] = "nonsense"
    assert eval_k_module(PipelineConfig(bad), spec).failure == F_CONFIG


def test_oscillatory_basin_unique_global_minimum():
    # Grid-scan the translated landscape: nothing on the domain may dip below
    # the declared optimum value of 0, and the optimum is where advertised.
    spec = FMIN.task("oscillatory_basin")
    objective, optimum, bounds, min_value = resolve_objective(spec.params)
    assert objective(optimum) == 0.0
    xs = np.linspace(bounds[0][0], bounds[0][1], 201)
    ys = np.linspace(bounds[1][0], bounds[1][1], 201)
    best = min(objective((x, y)) for x in xs for y in ys)
    assert best >= 0.0
    # multimodality: at least one strict local valley away from the optimum
    near_period = (optimum[0] + math.pi, optimum[1])
    assert objective(near_period) < objective((optimum[0] + math.pi / 2, optimum[1]))
