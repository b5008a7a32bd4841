"""Protocol-level shim tests: one line in, one line out, failures contained.

These tests drive the shim purely over its command line and stdio; they do
not import the engine package.
"""

import json
import subprocess
import sys
from pathlib import Path

SHIM = Path(__file__).resolve().parents[1] / "shim.py"
CANDIDATES = Path(__file__).resolve().parents[1] / "candidates"


def run_shim(candidate, entry, request_line):
    proc = subprocess.run(
        [sys.executable, str(SHIM), "--candidate", str(candidate), "--entry", entry],
        input=request_line + "\n",
        capture_output=True,
        text=True,
        timeout=30,
    )
    assert proc.returncode == 0, proc.stderr
    lines = [line for line in proc.stdout.splitlines() if line.strip()]
    assert len(lines) == 1, f"expected one response line, got {lines!r}"
    return json.loads(lines[0])


def request(kind, params):
    return json.dumps({"proto": 1, "evaluator_kind": kind, "params": params})


def test_circle_candidate_roundtrip():
    response = run_shim(CANDIDATES / "circle_grid.py", "construct_packing",
                        request("circle_square", {"n": 2}))
    assert response["proto"] == 1
    assert response["status"] == "ok"
    payload = response["payload"]
    assert len(payload["centers"]) == 2
    assert len(payload["radii"]) == 2
    assert all(r > 0 for r in payload["radii"])


def test_rect_candidate_reports_alpha():
    response = run_shim(CANDIDATES / "rect_grid.py", "construct_packing",
                        request("circle_rect", {"n": 3}))
    assert response["status"] == "ok"
    assert 0.0 < response["payload"]["alpha"] <= 1.0


def test_heilbronn_candidate_points():
    response = run_shim(CANDIDATES / "heil_balanced.py", "construct_points",
                        request("heilbronn", {"n": 5}))
    assert response["status"] == "ok"
    points = response["payload"]["points"]
    assert len(points) == 5
    for x, y in points:
        assert x >= 0.0 and y >= 0.0 and x / 2.0 + y <= 1.0


def test_function_min_candidate_point():
    response = run_shim(CANDIDATES / "fmin_center.py", "minimize",
                        request("function_min",
                                {"bounds": [[-5.0, 5.0], [-5.0, 5.0]],
                                 "iterations": 200, "seed": 0}))
    assert response["status"] == "ok"
    assert response["payload"]["point"] == [0.0, 0.0]


def test_k_module_candidate_choices():
    modules = {f"m{i}": [f"m{i}_o{j}" for j in range(6)] for i in range(6)}
    response = run_shim(CANDIDATES / "kmod_first.py", "configure_pipeline",
                        request("k_module", {"modules": modules}))
    assert response["status"] == "ok"
    assert response["payload"]["choices"] == {f"m{i}": f"m{i}_o0" for i in range(6)}


def test_unsupported_proto_fails():
    bad = json.dumps({"proto": 99, "evaluator_kind": "circle_square",
                      "params": {"n": 2}})
    response = run_shim(CANDIDATES / "circle_grid.py", "construct_packing", bad)
    assert response["status"] == "failed"
    assert response["failure"] == "protocol"


def test_malformed_request_fails():
    response = run_shim(CANDIDATES / "circle_grid.py", "construct_packing",
                        "this is not json")
    assert response["status"] == "failed"
    assert response["failure"] == "protocol"


def test_candidate_exception_becomes_failed_response(tmp_path):
    raiser = tmp_path / "raiser.py"
    raiser.write_text("def construct_packing(n):\n    raise ValueError('nope')\n")
    response = run_shim(raiser, "construct_packing",
                        request("circle_square", {"n": 2}))
    assert response["status"] == "failed"
    assert response["failure"] == "execution_error"
    assert "ValueError" in response["diagnostics"]


def test_missing_entry_point_fails(tmp_path):
    empty = tmp_path / "empty.py"
    empty.write_text("x = 1\n")
    response = run_shim(empty, "construct_packing",
                        request("circle_square", {"n": 2}))
    assert response["status"] == "failed"
    assert "construct_packing" in response["diagnostics"]
