"""Candidate genomes and their execution.

Two genome kinds exist. Parametric genomes are built-in deterministic
heuristics driven by a small parameter vector; they make the whole engine
testable without an LLM. External genomes are source programs run in a
subprocess over a one-line-request / one-line-response wire protocol
(documented in docs/protocol.md).

The heuristics are written in plain Python arithmetic on purpose: an external
candidate implementing the same formulas reproduces their output bit for bit
across the process boundary.
"""

from __future__ import annotations

import json
import math
import random
import re
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from . import evaluators
from .errors import ConfigError, LauncherError
from .evaluators import (
    F_EXECUTION,
    F_PROTOCOL,
    F_TIMEOUT,
    Packing,
    PipelineConfig,
    PointSet,
    TaskScore,
)
from .tasks import TaskSpec

PROTO_VERSION = 1

GENOME_KINDS = ("parametric", "external_source")


@dataclass(frozen=True)
class CandidateGenome:
    kind: str
    heuristic_id: str | None = None
    params: tuple[float, ...] | None = None
    source: str | None = None
    language: str | None = None
    entry_point: str | None = None

    def __post_init__(self):
        if self.kind == "parametric":
            if self.heuristic_id is None or self.params is None or self.source is not None:
                raise ConfigError("parametric genome needs heuristic_id and params only")
        elif self.kind == "external_source":
            if self.source is None or self.heuristic_id is not None:
                raise ConfigError("external genome needs source text only")
        else:
            raise ConfigError(f"unknown genome kind {self.kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "parametric":
            return {"kind": self.kind, "heuristic_id": self.heuristic_id,
                    "params": list(self.params)}
        return {"kind": self.kind, "source": self.source,
                "language": self.language, "entry_point": self.entry_point}

    @classmethod
    def from_dict(cls, data: dict) -> "CandidateGenome":
        if data.get("kind") == "parametric":
            return parametric_genome(data["heuristic_id"], data["params"])
        return external_genome(data["source"], data.get("language", "python"),
                               data.get("entry_point"))


def parametric_genome(heuristic_id: str, params) -> CandidateGenome:
    if heuristic_id not in PARAM_RANGES:
        raise ConfigError(f"unknown heuristic {heuristic_id!r}")
    return CandidateGenome(kind="parametric", heuristic_id=heuristic_id,
                           params=tuple(float(p) for p in params))


def external_genome(source: str, language: str = "python",
                    entry_point: str | None = None) -> CandidateGenome:
    return CandidateGenome(kind="external_source", source=source,
                           language=language, entry_point=entry_point)


@dataclass(frozen=True)
class ExecRequest:
    evaluator_kind: str
    params: dict[str, Any]


@dataclass(frozen=True)
class ExecResponse:
    status: str  # "ok" | "failed"
    payload: dict[str, Any] | None = None
    failure: str | None = None
    diagnostics: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def failed_response(failure: str, diagnostics: str = "") -> ExecResponse:
    return ExecResponse(status="failed", payload=None, failure=failure,
                        diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# Wire protocol (one JSON line each way; floats keep repr round-trip precision)
# ---------------------------------------------------------------------------

def encode_request(req: ExecRequest) -> str:
    return json.dumps({"proto": PROTO_VERSION, "evaluator_kind": req.evaluator_kind,
                       "params": req.params}, sort_keys=True)


def decode_request(line: str) -> ExecRequest:
    data = json.loads(line)
    if data.get("proto") != PROTO_VERSION:
        raise ValueError(f"unsupported protocol version {data.get('proto')!r}")
    return ExecRequest(evaluator_kind=data["evaluator_kind"], params=data["params"])


def encode_response(resp: ExecResponse) -> str:
    return json.dumps({"proto": PROTO_VERSION, "status": resp.status,
                       "payload": resp.payload, "failure": resp.failure,
                       "diagnostics": resp.diagnostics}, sort_keys=True)


def decode_response(line: str) -> ExecResponse:
    try:
        data = json.loads(line)
    except json.JSONDecodeError as exc:
        return failed_response(F_PROTOCOL, f"unparseable response line: {exc}")
    if not isinstance(data, dict) or data.get("proto") != PROTO_VERSION:
        return failed_response(F_PROTOCOL, f"bad protocol marker: {data!r:.200}")
    status = data.get("status")
    if status == "ok":
        payload = data.get("payload")
        if not isinstance(payload, dict):
            return failed_response(F_PROTOCOL, "ok response without payload object")
        return ExecResponse(status="ok", payload=payload)
    if status == "failed":
        return failed_response(data.get("failure") or F_EXECUTION,
                               str(data.get("diagnostics", ""))[:2000])
    return failed_response(F_PROTOCOL, f"bad status {status!r}")


def candidate_request(spec: TaskSpec) -> ExecRequest:
    """The candidate-visible slice of a task: never targets or hidden configs."""
    kind = spec.evaluator_kind
    if kind in ("circle_square", "circle_rect", "heilbronn"):
        return ExecRequest(kind, {"n": int(spec.params["n"])})
    if kind == "k_module":
        return ExecRequest(kind, {"modules": spec.params["modules"]})
    if kind == "function_min":
        return ExecRequest(kind, {"bounds": [list(b) for b in spec.params["bounds"]]})
    raise ConfigError(f"unknown evaluator kind {kind!r}")


# ---------------------------------------------------------------------------
# Built-in parametric heuristics
# ---------------------------------------------------------------------------

PARAM_RANGES: dict[str, tuple[tuple[float, float], ...]] = {
    # cols_adj, row_shift, margin
    "hex_packer": ((-3.0, 3.0), (0.0, 1.0), (0.0, 0.2)),
    # cols_adj, row_shift, margin, alpha
    "hex_packer_rect": ((-3.0, 3.0), (0.0, 1.0), (0.0, 0.2), (0.05, 1.0)),
    # vertex weights w1..w3, boundary pull
    "tri_placer": ((0.1, 4.0), (0.1, 4.0), (0.1, 4.0), (0.0, 0.95)),
    # fx, fy, step_frac, shrink, restarts
    "pattern_minimizer": ((0.0, 1.0), (0.0, 1.0), (0.0, 0.5), (0.3, 0.9), (1.0, 5.0)),
    # 6 modules x 6 option logits
    "option_chooser": tuple(((-4.0, 4.0),) * 36),
}

HEURISTIC_FOR_KIND = {
    "circle_square": "hex_packer",
    "circle_rect": "hex_packer_rect",
    "heilbronn": "tri_placer",
    "function_min": "pattern_minimizer",
    "k_module": "option_chooser",
}


def clamp_params(heuristic_id: str, params) -> tuple[tuple[float, ...], bool]:
    """Clamp a parameter vector into its documented ranges.

    Out-of-range values clamp instead of raising so that a wild mutation is
    still a runnable (if poor) candidate rather than an engine error.
    """
    ranges = PARAM_RANGES[heuristic_id]
    if len(params) != len(ranges):
        raise ConfigError(
            f"{heuristic_id}: expected {len(ranges)} parameters, got {len(params)}"
        )
    clamped = []
    changed = False
    for value, (lo, hi) in zip(params, ranges):
        v = min(max(float(value), lo), hi)
        changed = changed or v != value
        clamped.append(v)
    return tuple(clamped), changed


def hex_pack_centers(n: int, cols_adj: float, row_shift: float, margin: float,
                     width: float, height: float) -> list[tuple[float, float]]:
    cols = int(round(math.sqrt(n * width / height) + cols_adj))
    cols = max(1, min(n, cols))
    rows = (n + cols - 1) // cols
    mx = margin * width
    my = margin * height
    dx = (width - 2.0 * mx) / cols
    dy = (height - 2.0 * my) / rows
    centers = []
    for r in range(rows):
        shift = row_shift * dx / 2.0 if r % 2 == 1 else 0.0
        for c in range(cols):
            if len(centers) >= n:
                break
            x = mx + (c + 0.5) * dx + shift
            y = my + (r + 0.5) * dy
            x = min(max(x, 1e-9), width - 1e-9)
            y = min(max(y, 1e-9), height - 1e-9)
            centers.append((x, y))
    return centers


def safe_radii(centers, width: float, height: float) -> list[float]:
    """Largest radii that are valid by construction.

    r_i = min(wall distance, min_j d_ij / 2) gives r_i + r_j <= d_ij for every
    pair, so the packing can never overlap or leave the container.
    """
    radii = []
    for i, (x, y) in enumerate(centers):
        r = min(x, y, width - x, height - y)
        for j, (xj, yj) in enumerate(centers):
            if j == i:
                continue
            d = math.sqrt((x - xj) * (x - xj) + (y - yj) * (y - yj))
            half = d / 2.0
            if half < r:
                r = half
        radii.append(max(r, 0.0))
    return radii


def run_hex_packer(params, n: int, rect: bool) -> dict:
    if rect:
        cols_adj, row_shift, margin, alpha = params
        width, height = alpha, 2.0 - alpha
    else:
        cols_adj, row_shift, margin = params
        width = height = 1.0
    centers = hex_pack_centers(n, cols_adj, row_shift, margin, width, height)
    radii = safe_radii(centers, width, height)
    payload = {"centers": [[x, y] for x, y in centers], "radii": radii}
    if rect:
        payload["alpha"] = width
    return payload


# Plastic-number (x^3 = x + 1) low-discrepancy constants; irrational strides
# keep generated triples away from exact collinearity.
_PLASTIC = 1.324717957244746
_STRIDE_U = 1.0 / _PLASTIC
_STRIDE_V = 1.0 / (_PLASTIC * _PLASTIC)


def tri_place_points(n: int, w1: float, w2: float, w3: float,
                     pull: float) -> list[tuple[float, float]]:
    """Boundary-biased point placement in the canonical triangle.

    The first three points are the triangle vertices; later points come from a
    low-discrepancy barycentric sequence, reweighted by (w1, w2, w3) and pushed
    toward the nearest edge by ``pull``.
    """
    points: list[tuple[float, float]] = []
    for k in range(n):
        if k < 3:
            points.append(evaluators.TRIANGLE_VERTICES[k])
            continue
        u = (0.5 + k * _STRIDE_U) % 1.0
        v = (0.5 + k * _STRIDE_V) % 1.0
        s = math.sqrt(u)
        b = [(1.0 - s) * w1, s * (1.0 - v) * w2, s * v * w3]
        total = b[0] + b[1] + b[2]
        b = [value / total for value in b]
        j = b.index(min(b))
        b[j] *= 1.0 - pull
        total = b[0] + b[1] + b[2]
        b = [value / total for value in b]
        x = 2.0 * b[1]
        y = b[2]
        # Renormalization can overshoot the hypotenuse by an ulp; pull the
        # point back inside with real margin.
        over = x / 2.0 + y
        if over > 1.0:
            scale = (1.0 - 1e-12) / over
            x *= scale
            y *= scale
        points.append((x, y))
    return points


def pattern_minimize(objective, bounds, iterations: int, seed: int, params):
    """Multi-start coordinate pattern search.

    Start 0 sits at the (fx, fy) fraction of the bounds; later restarts sample
    uniformly from a seeded stream. With step_frac == 0 the search returns its
    start point untouched, which external blind candidates can reproduce.
    """
    fx, fy, step_frac, shrink, restarts = params
    n_restarts = max(1, min(5, int(round(restarts))))
    (lx, hx), (ly, hy) = bounds
    steps_per = max(1, int(iterations) // n_restarts)
    rng = random.Random(int(seed) * 9973 + 17)
    best_point = None
    best_value = math.inf
    for k in range(n_restarts):
        if k == 0:
            x = lx + fx * (hx - lx)
            y = ly + fy * (hy - ly)
        else:
            x = lx + rng.random() * (hx - lx)
            y = ly + rng.random() * (hy - ly)
        step = step_frac * max(hx - lx, hy - ly)
        value = objective((x, y))
        if step > 0.0:
            for _ in range(steps_per):
                improved = False
                for dx, dy in ((step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)):
                    nx = min(max(x + dx, lx), hx)
                    ny = min(max(y + dy, ly), hy)
                    nv = objective((nx, ny))
                    if nv < value:
                        x, y, value = nx, ny, nv
                        improved = True
                        break
                if not improved:
                    step *= shrink
                    if step < 1e-12:
                        break
        if value < best_value:
            best_value = value
            best_point = (x, y)
    return best_point


def choose_options(params, modules: dict) -> dict:
    """Argmax-decode per-module option logits (ties go to the first option).

    Logit blocks map to modules in sorted-name order: the wire protocol
    canonicalizes JSON objects, so key order cannot carry meaning.
    """
    choices = {}
    for index, module in enumerate(sorted(modules)):
        options = modules[module]
        logits = params[index * 6:(index + 1) * 6]
        best = max(range(len(options)), key=lambda i: (logits[i], -i))
        choices[module] = options[best]
    return choices


def run_parametric(genome: CandidateGenome, request: ExecRequest) -> ExecResponse:
    """Execute a built-in heuristic. Pure function of (genome, request params).

    Out-of-range parameters are clamped with a diagnostic note; heuristics
    never raise for bad parameter values.
    """
    if genome.kind != "parametric":
        raise ConfigError("run_parametric needs a parametric genome")
    params, clamped = clamp_params(genome.heuristic_id, genome.params)
    note = "parameters clamped into documented ranges" if clamped else ""
    kind = request.evaluator_kind
    heuristic = genome.heuristic_id

    if heuristic in ("hex_packer", "hex_packer_rect") and kind in ("circle_square", "circle_rect"):
        rect = heuristic == "hex_packer_rect"
        if rect != (kind == "circle_rect"):
            return failed_response(F_EXECUTION, f"{heuristic} cannot serve {kind}")
        payload = run_hex_packer(params, int(request.params["n"]), rect)
        return ExecResponse(status="ok", payload=payload, diagnostics=note)

    if heuristic == "tri_placer" and kind == "heilbronn":
        points = tri_place_points(int(request.params["n"]), *params)
        return ExecResponse(status="ok",
                            payload={"points": [[x, y] for x, y in points]},
                            diagnostics=note)

    if heuristic == "option_chooser" and kind == "k_module":
        choices = choose_options(params, request.params["modules"])
        return ExecResponse(status="ok", payload={"choices": choices}, diagnostics=note)

    if heuristic == "pattern_minimizer" and kind == "function_min":
        bounds = [tuple(b) for b in request.params["bounds"]]
        iterations = int(request.params.get("iterations", 0))
        seed = int(request.params.get("seed", 0))
        objective = request.params.get("objective_fn")
        if objective is None:
            # One-shot (wire-style) call: no objective crosses the boundary,
            # so the deterministic start point is the whole answer.
            point = pattern_minimize(lambda p: 0.0, bounds, 0, seed, params)
        else:
            point = pattern_minimize(objective, bounds, iterations, seed, params)
        return ExecResponse(status="ok", payload={"point": [point[0], point[1]]},
                            diagnostics=note)

    return failed_response(F_EXECUTION,
                           f"heuristic {heuristic!r} cannot serve evaluator {kind!r}")


# ---------------------------------------------------------------------------
# External execution
# ---------------------------------------------------------------------------

@dataclass
class ExecLimits:
    timeout_s: float = 60.0
    output_cap_bytes: int = 1_048_576
    launchers: dict[str, list[str]] = field(default_factory=dict)


def run_external(genome: CandidateGenome, request: ExecRequest,
                 limits: ExecLimits) -> ExecResponse:
    """Run an external candidate: one request line in, one response line out.

    Timeouts, nonzero exits, oversized output, and malformed responses all
    come back as failed responses (scored 0 downstream). A missing launcher
    is a configuration error and raises instead.
    """
    if genome.kind != "external_source":
        raise ConfigError("run_external needs an external genome")
    language = genome.language or "python"
    launcher = limits.launchers.get(language)
    if not launcher:
        raise LauncherError(f"no launcher configured for language {language!r}")

    suffix = ".py" if language == "python" else ".txt"
    with tempfile.NamedTemporaryFile("w", suffix=suffix, delete=False,
                                     encoding="utf-8") as fh:
        fh.write(genome.source)
        source_path = fh.name
    try:
        cmd = [arg.format(source_file=source_path,
                          entry_point=genome.entry_point or "")
               for arg in launcher]
        try:
            proc = subprocess.run(
                cmd,
                input=encode_request(request) + "\n",
                capture_output=True,
                text=True,
                timeout=limits.timeout_s,
            )
        except subprocess.TimeoutExpired:
            return failed_response(F_TIMEOUT,
                                   f"no response within {limits.timeout_s}s")
        except OSError as exc:
            raise LauncherError(f"launcher {cmd[0]!r} failed to start: {exc}") from exc

        if len(proc.stdout.encode("utf-8", "replace")) > limits.output_cap_bytes:
            return failed_response(F_PROTOCOL, "output cap exceeded")
        if proc.returncode != 0:
            return failed_response(F_EXECUTION,
                                   f"exit {proc.returncode}: {proc.stderr[-500:]}")
        lines = [line for line in proc.stdout.splitlines() if line.strip()]
        if len(lines) != 1:
            return failed_response(F_PROTOCOL,
                                   f"expected exactly one response line, got {len(lines)}")
        return decode_response(lines[0])
    finally:
        Path(source_path).unlink(missing_ok=True)


# ---------------------------------------------------------------------------
# Genome -> task score bridge
# ---------------------------------------------------------------------------

def _payload_to_domain(payload: dict, kind: str):
    if kind == "circle_square":
        return Packing(payload.get("centers"), payload.get("radii"))
    if kind == "circle_rect":
        return Packing(payload.get("centers"), payload.get("radii"),
                       payload.get("alpha"))
    if kind == "heilbronn":
        return PointSet(payload.get("points"))
    if kind == "k_module":
        return PipelineConfig(payload.get("choices"))
    raise ConfigError(f"unknown evaluator kind {kind!r}")


def _score_payload(payload: dict, spec: TaskSpec) -> TaskScore:
    kind = spec.evaluator_kind
    domain = _payload_to_domain(payload, kind)
    if kind == "circle_square":
        return evaluators.eval_circle_square(domain, spec)
    if kind == "circle_rect":
        return evaluators.eval_circle_rect(domain, spec)
    if kind == "heilbronn":
        return evaluators.eval_heilbronn(domain, spec)
    return evaluators.eval_k_module(domain, spec)


def _parametric_minimizer(genome: CandidateGenome):
    params, _ = clamp_params(genome.heuristic_id, genome.params)

    def minimize(objective, bounds, iterations, seed):
        return pattern_minimize(objective, bounds, iterations, seed, params)

    return minimize


def _external_minimizer(genome: CandidateGenome, limits: ExecLimits):
    # The one-shot wire protocol cannot carry a callable, so external
    # function-minimization candidates choose points blind from
    # (bounds, iterations, seed) alone.
    def minimize(objective, bounds, iterations, seed):
        request = ExecRequest("function_min", {
            "bounds": [list(b) for b in bounds],
            "iterations": int(iterations),
            "seed": int(seed),
        })
        response = run_external(genome, request, limits)
        if not response.ok:
            raise RuntimeError(f"{response.failure}: {response.diagnostics}")
        return response.payload["point"]

    return minimize


def evaluate_genome(genome: CandidateGenome, spec: TaskSpec, mode: str = "full",
                    limits: ExecLimits | None = None) -> TaskScore:
    """Evaluate one genome on one task. All candidate failures score 0."""
    limits = limits or ExecLimits()
    kind = spec.evaluator_kind

    if kind == "function_min":
        if genome.kind == "parametric":
            candidate = _parametric_minimizer(genome)
        else:
            candidate = _external_minimizer(genome, limits)
        return evaluators.eval_function_min(candidate, spec, mode)

    request = candidate_request(spec)
    if genome.kind == "parametric":
        response = run_parametric(genome, request)
    else:
        response = run_external(genome, request, limits)
    if not response.ok:
        return TaskScore(0.0, response.failure or F_EXECUTION, response.diagnostics)
    try:
        return _score_payload(response.payload, spec)
    except ConfigError:
        raise
    except Exception as exc:  # malformed payload shapes land here
        return TaskScore(0.0, F_PROTOCOL, f"unusable payload: {exc}")


# ---------------------------------------------------------------------------
# Genome distance (diversity feature)
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")
_MAX_TOKENS = 400


def _token_edit_distance(a: list[str], b: list[str]) -> int:
    if not a:
        return len(b)
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ta in enumerate(a, start=1):
        current = [i] + [0] * len(b)
        for j, tb in enumerate(b, start=1):
            cost = 0 if ta == tb else 1
            current[j] = min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost)
        previous = current
    return previous[-1]


def genome_distance(a: CandidateGenome, b: CandidateGenome) -> float:
    """Normalized distance in [0, 1] between two genomes.

    Parametric pairs of the same heuristic compare in parameter space scaled
    by the documented ranges; source pairs use token-level edit distance;
    anything structurally incomparable is maximally distant.
    """
    if a.kind == "parametric" and b.kind == "parametric":
        if a.heuristic_id != b.heuristic_id:
            return 1.0
        ranges = PARAM_RANGES[a.heuristic_id]
        pa, _ = clamp_params(a.heuristic_id, a.params)
        pb, _ = clamp_params(b.heuristic_id, b.params)
        total = 0.0
        for va, vb, (lo, hi) in zip(pa, pb, ranges):
            width = hi - lo
            delta = (va - vb) / width if width > 0 else 0.0
            total += delta * delta
        return min(1.0, math.sqrt(total / len(ranges)))
    if a.kind == "external_source" and b.kind == "external_source":
        ta = _TOKEN_RE.findall(a.source)[:_MAX_TOKENS]
        tb = _TOKEN_RE.findall(b.source)[:_MAX_TOKENS]
        longest = max(len(ta), len(tb))
        if longest == 0:
            return 0.0
        return min(1.0, _token_edit_distance(ta, tb) / longest)
    return 1.0


def seed_genome_for(family) -> CandidateGenome:
    """The family's shipped seed program (simplest valid parametric genome)."""
    seed = family.seed_spec
    if not seed:
        kind = family.evaluator_kind
        heuristic = HEURISTIC_FOR_KIND[kind]
        ranges = PARAM_RANGES[heuristic]
        midpoint = [(lo + hi) / 2.0 for lo, hi in ranges]
        return parametric_genome(heuristic, midpoint)
    if "heuristic" in seed:
        return parametric_genome(seed["heuristic"], seed["params"])
    return external_genome(seed["source"], seed.get("language", "python"),
                           seed.get("entry_point"))
