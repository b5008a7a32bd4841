"""Deterministic task evaluators.

All evaluators are pure functions: invalid candidate output is scored 0 with a
failure kind rather than raised, so a bad program costs one budget unit and
nothing else. Geometry checks follow the conventions used throughout:
inclusive containment, pairwise non-overlap with 1e-6 slack, and exact
minimum-triangle-area computation over all point triples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .errors import ConfigError, OutOfBoundsError
from .tasks import TaskSpec, builtin_family, normalize

OVERLAP_TOL = 1e-6

# Failure kinds recorded alongside zero scores.
F_SHAPE = "invalid_shape"
F_NONFINITE = "nonfinite"
F_NEGATIVE_RADIUS = "negative_radius"
F_CONTAINMENT = "containment"
F_OVERLAP = "overlap"
F_ALPHA = "invalid_alpha"
F_OUTSIDE = "outside_region"
F_CONFIG = "invalid_config"
F_EXECUTION = "execution_error"
F_TIMEOUT = "timeout"
F_PROTOCOL = "protocol"
F_NO_SEEDS = "no_successful_seeds"


@dataclass(frozen=True)
class TaskScore:
    score: float
    failure: str | None = None
    diagnostics: str = ""

    @property
    def failed(self) -> bool:
        return self.failure is not None


@dataclass
class Packing:
    """Candidate circle packing; alpha is the rectangle width when present."""

    centers: Any
    radii: Any
    alpha: float | None = None


@dataclass
class PointSet:
    points: Any


@dataclass
class PipelineConfig:
    choices: Any


@dataclass
class SeedTrial:
    seed: int
    returned_point: tuple[float, float] | None
    delta_f: float | None
    distance: float | None
    in_bounds: bool
    success: bool
    error: str = ""


@dataclass
class MinimizeOutcome:
    trials: list[SeedTrial] = field(default_factory=list)

    @property
    def rho(self) -> float:
        if not self.trials:
            return 0.0
        return sum(1 for t in self.trials if t.success) / len(self.trials)


def _as_float_array(value, shape_hint=None):
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        return None
    if shape_hint is not None and arr.shape != shape_hint:
        return None
    return arr


def _check_circles(p: Packing, n: int, width: float, height: float) -> str | None:
    """Return a failure kind, or None when the packing is valid."""
    centers = _as_float_array(p.centers, (n, 2))
    radii = _as_float_array(p.radii, (n,))
    if centers is None or radii is None:
        return F_SHAPE
    if not (np.isfinite(centers).all() and np.isfinite(radii).all()):
        return F_NONFINITE
    if (radii < 0).any():
        return F_NEGATIVE_RADIUS
    x, y = centers[:, 0], centers[:, 1]
    inside = (x - radii >= 0.0) & (x + radii <= width) & \
             (y - radii >= 0.0) & (y + radii <= height)
    if not inside.all():
        return F_CONTAINMENT
    if n > 1:
        ii, jj = np.triu_indices(n, k=1)
        diff = centers[ii] - centers[jj]
        dist = np.sqrt(diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1])
        if (dist < (radii[ii] + radii[jj]) - OVERLAP_TOL).any():
            return F_OVERLAP
    return None


def eval_circle_square(p: Packing, spec: TaskSpec) -> TaskScore:
    n = int(spec.params["n"])
    failure = _check_circles(p, n, 1.0, 1.0)
    if failure is not None:
        return TaskScore(0.0, failure)
    raw = float(np.sum(np.asarray(p.radii, dtype=float)))
    return TaskScore(normalize(raw, spec))


def eval_circle_rect(p: Packing, spec: TaskSpec) -> TaskScore:
    n = int(spec.params["n"])
    alpha = p.alpha
    if alpha is None or not isinstance(alpha, (int, float)) or not math.isfinite(alpha):
        return TaskScore(0.0, F_ALPHA)
    alpha = float(alpha)
    if not 0.0 < alpha <= 1.0:
        return TaskScore(0.0, F_ALPHA)
    failure = _check_circles(p, n, alpha, 2.0 - alpha)
    if failure is not None:
        return TaskScore(0.0, failure)
    raw = float(np.sum(np.asarray(p.radii, dtype=float)))
    return TaskScore(normalize(raw, spec))


# Canonical unit-area triangle: (0,0), (2,0), (0,1).
TRIANGLE_VERTICES = ((0.0, 0.0), (2.0, 0.0), (0.0, 1.0))


def min_triangle_area(points: np.ndarray) -> float:
    """Exact minimum over all C(n,3) triangle areas (cross-product formula)."""
    n = len(points)
    ii, jj, kk = np.array(
        [(i, j, k) for i in range(n) for j in range(i + 1, n) for k in range(j + 1, n)]
    ).T
    a, b, c = points[ii], points[jj], points[kk]
    cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - \
            (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    return float(np.min(np.abs(cross) / 2.0))


def eval_heilbronn(ps: PointSet, spec: TaskSpec) -> TaskScore:
    n = int(spec.params["n"])
    points = _as_float_array(ps.points, (n, 2))
    if points is None:
        return TaskScore(0.0, F_SHAPE)
    if not np.isfinite(points).all():
        return TaskScore(0.0, F_NONFINITE)
    x, y = points[:, 0], points[:, 1]
    if not ((x >= 0.0) & (y >= 0.0) & (x / 2.0 + y <= 1.0)).all():
        return TaskScore(0.0, F_OUTSIDE)
    if n < 3:
        return TaskScore(0.0, F_SHAPE, "need at least 3 points")
    return TaskScore(normalize(min_triangle_area(points), spec))


def eval_k_module(cfg: PipelineConfig, spec: TaskSpec) -> TaskScore:
    modules = spec.params["modules"]
    target = spec.params["hidden_target"]
    choices = cfg.choices
    if not isinstance(choices, dict) or set(choices) != set(modules):
        return TaskScore(0.0, F_CONFIG, "choices must name every module exactly once")
    for module, option in choices.items():
        if option not in modules[module]:
            return TaskScore(0.0, F_CONFIG, f"illegal option {option!r} for {module!r}")
    matched = sum(1 for module in modules if choices[module] == target[module])
    return TaskScore(matched / len(modules))


# ---------------------------------------------------------------------------
# Function-minimization objectives
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ObjectiveDef:
    fn: Callable[[float, float], float]
    optimum: tuple[float, float]
    min_value: float = 0.0


def _ackley(u: float, v: float) -> float:
    return (-20.0 * math.exp(-0.2 * math.sqrt((u * u + v * v) / 2.0))
            - math.exp((math.cos(2.0 * math.pi * u) + math.cos(2.0 * math.pi * v)) / 2.0)
            + 20.0 + math.e)


def _rastrigin(u: float, v: float) -> float:
    return (20.0 + u * u - 10.0 * math.cos(2.0 * math.pi * u)
            + v * v - 10.0 * math.cos(2.0 * math.pi * v))


def _rosenbrock(u: float, v: float) -> float:
    return 100.0 * (v - u * u) ** 2 + (1.0 - u) ** 2


def _oscillatory_basin(u: float, v: float) -> float:
    # Smooth periodic landscape with a quadratic bowl. Both terms are
    # non-negative and vanish only at the origin, so the global minimum is
    # exactly 0 at (0, 0).
    return 0.1 * (u * u + v * v) + 1.0 - math.cos(2.0 * u) * math.cos(2.0 * v)


_OBJECTIVES: dict[str, ObjectiveDef] = {
    "ackley": ObjectiveDef(_ackley, (0.0, 0.0)),
    "rastrigin": ObjectiveDef(_rastrigin, (0.0, 0.0)),
    "rosenbrock": ObjectiveDef(_rosenbrock, (1.0, 1.0)),
    "oscillatory_basin": ObjectiveDef(_oscillatory_basin, (0.0, 0.0)),
}


def register_objective(name: str, fn: Callable[[float, float], float],
                       optimum: tuple[float, float], min_value: float = 0.0) -> None:
    """Register a 2D objective for custom function-minimization families."""
    _OBJECTIVES[name] = ObjectiveDef(fn, (float(optimum[0]), float(optimum[1])), min_value)


def resolve_objective(params: dict):
    """Build the translated objective for one task.

    Returns (objective_fn, optimum_point, bounds, min_value). The candidate
    only ever sees objective_fn and bounds; the task name, offset, and optimum
    stay on the evaluator side.
    """
    name = params.get("objective")
    if name not in _OBJECTIVES:
        raise ConfigError(f"unknown objective {name!r}")
    definition = _OBJECTIVES[name]
    ox, oy = params.get("offset", [0.0, 0.0])
    bounds = tuple((float(lo), float(hi)) for lo, hi in params["bounds"])

    def objective(point) -> float:
        px, py = float(point[0]), float(point[1])
        return definition.fn(px - ox, py - oy)

    optimum = (definition.optimum[0] + ox, definition.optimum[1] + oy)
    return objective, optimum, bounds, definition.min_value


def in_bounds(point, bounds) -> bool:
    return all(lo <= float(p) <= hi for p, (lo, hi) in zip(point, bounds))


def benchmark_objectives(name: str, point: Sequence[float]) -> float:
    """Evaluate a built-in translated benchmark at a point within its bounds."""
    family = builtin_family("function_minimization")
    spec = family.task(name)
    objective, _, bounds, _ = resolve_objective(spec.params)
    if len(point) != 2 or not in_bounds(point, bounds):
        raise OutOfBoundsError(f"{name}: point {tuple(point)} outside bounds {bounds}")
    return objective(point)


FULL_SEEDS = (0, 1, 2, 3, 4)
FULL_ITERATIONS = 200
CASCADE_SEEDS = (0, 1)
CASCADE_ITERATIONS = 50


def eval_function_min(candidate, spec: TaskSpec, mode: str = "full") -> TaskScore:
    """Score a derivative-free minimizer.

    ``candidate`` is called once per seed as
    ``candidate(objective_fn, bounds, iterations, seed) -> point``. The true
    objective is recomputed at each returned point; out-of-bounds or crashing
    seeds count as unsuccessful. The score is
    ``0.50/(1+df) + 0.35/(1+d) + 0.15*rho`` with df and d averaged over
    successful seeds, and exactly 0 when no seed succeeds.
    """
    if mode == "full":
        seeds, iterations = FULL_SEEDS, FULL_ITERATIONS
    elif mode == "cascade":
        seeds, iterations = CASCADE_SEEDS, CASCADE_ITERATIONS
    else:
        raise ConfigError(f"unknown evaluation mode {mode!r}")

    objective, optimum, bounds, min_value = resolve_objective(spec.params)
    outcome = MinimizeOutcome()
    for seed in seeds:
        trial = SeedTrial(seed=seed, returned_point=None, delta_f=None,
                          distance=None, in_bounds=False, success=False)
        outcome.trials.append(trial)
        try:
            point = candidate(objective, bounds, iterations, seed)
        except Exception as exc:
            trial.error = f"{type(exc).__name__}: {exc}"
            continue
        try:
            px, py = float(point[0]), float(point[1])
        except (TypeError, ValueError, IndexError):
            trial.error = "malformed point"
            continue
        if not (math.isfinite(px) and math.isfinite(py)):
            trial.error = "non-finite point"
            continue
        trial.returned_point = (px, py)
        if not in_bounds((px, py), bounds):
            continue
        trial.in_bounds = True
        trial.delta_f = max(0.0, objective((px, py)) - min_value)
        trial.distance = math.sqrt((px - optimum[0]) ** 2 + (py - optimum[1]) ** 2)
        trial.success = True

    successes = [t for t in outcome.trials if t.success]
    rho = outcome.rho
    if not successes:
        return TaskScore(0.0, F_NO_SEEDS)
    delta_f = sum(t.delta_f for t in successes) / len(successes)
    distance = sum(t.distance for t in successes) / len(successes)
    score = 0.50 / (1.0 + delta_f) + 0.35 / (1.0 + distance) + 0.15 * rho
    return TaskScore(score)
