"""Secondary acceptance: shim-run seed candidates match their parametric twins.

For every shipped candidate, the engine-computed score through the wire
protocol must land within 1e-12 of the in-process parametric genome listed as
its twin, on every in-distribution task of its family. Timeout and exception
paths must come back as failed responses that score 0.
"""

import json
import sys
from pathlib import Path

import pytest

from emoforge import builtin_family
from emoforge.evaluators import F_EXECUTION, F_TIMEOUT
from emoforge.execution import (
    ExecLimits,
    evaluate_genome,
    external_genome,
    parametric_genome,
)

SHIM = Path(__file__).resolve().parents[1] / "shim.py"
CANDIDATES = Path(__file__).resolve().parents[1] / "candidates"
MANIFEST = json.loads((CANDIDATES / "manifest.json").read_text("utf-8"))["candidates"]


def shim_limits(entry, timeout_s=30.0):
    return ExecLimits(
        timeout_s=timeout_s,
        launchers={"python": [sys.executable, str(SHIM),
                              "--candidate", "{source_file}",
                              "--entry", "{entry_point}"]},
    )


def test_manifest_covers_every_family():
    families = {item["family"] for item in MANIFEST}
    assert families == {"circle_packing", "circle_packing_rect", "heilbronn",
                        "function_minimization", "k_module"}
    assert len(MANIFEST) == 15


@pytest.mark.parametrize("item", MANIFEST, ids=lambda item: item["file"])
def test_shim_candidate_matches_parametric_twin(item):
    family = builtin_family(item["family"])
    source = (CANDIDATES / item["file"]).read_text("utf-8")
    wire_genome = external_genome(source, "python", item["entry"])
    twin_genome = parametric_genome(item["twin"]["heuristic"],
                                    item["twin"]["params"])
    limits = shim_limits(item["entry"])
    for spec in family.tasks:
        via_shim = evaluate_genome(wire_genome, spec, mode="cascade", limits=limits)
        in_process = evaluate_genome(twin_genome, spec, mode="cascade")
        assert via_shim.failure is None, (spec.task_id, via_shim)
        assert abs(via_shim.score - in_process.score) <= 1e-12, (
            spec.task_id, via_shim.score, in_process.score)


def test_timeout_path_scores_zero(tmp_path):
    sleeper = "import time\ntime.sleep(120)\n\ndef construct_packing(n):\n    return [], [], 0\n"
    genome = external_genome(sleeper, "python", "construct_packing")
    spec = builtin_family("circle_packing").tasks[0]
    result = evaluate_genome(genome, spec,
                             limits=shim_limits("construct_packing", timeout_s=0.8))
    assert result.score == 0.0
    assert result.failure == F_TIMEOUT


def test_exception_path_scores_zero():
    raiser = "def construct_packing(n):\n    raise RuntimeError('kaboom')\n"
    genome = external_genome(raiser, "python", "construct_packing")
    spec = builtin_family("circle_packing").tasks[0]
    result = evaluate_genome(genome, spec, limits=shim_limits("construct_packing"))
    assert result.score == 0.0
    assert result.failure == F_EXECUTION
    assert "kaboom" in result.diagnostics
