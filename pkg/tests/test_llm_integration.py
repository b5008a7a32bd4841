"""End-to-end: LLM backend proposing external programs that the engine
executes over the wire protocol (candidates here speak the protocol natively,
so no separate runner is needed)."""

import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from emoforge import Engine, EngineSettings, builtin_family
from emoforge.execution import ExecLimits
from emoforge.mutators import LLMConfig, LLMMutator

# A candidate that reads one request line and answers with a valid packing:
# one inscribed circle plus tiny corner circles for the remaining slots.
PROTOCOL_CANDIDATE = '''
import json, sys

request = json.loads(sys.stdin.readline())
n = request["params"]["n"]
centers = [[0.5, 0.5]]
radii = [0.35]
spots = [[0.05, 0.05], [0.95, 0.05], [0.05, 0.95], [0.95, 0.95]]
for i in range(n - 1):
    base = spots[i % 4]
    offset = 0.012 * (i // 4)
    centers.append([base[0] + (offset if base[0] < 0.5 else -offset), base[1]])
    radii.append(0.005)
print(json.dumps({"proto": 1, "status": "ok",
                  "payload": {"centers": centers, "radii": radii},
                  "failure": None, "diagnostics": ""}))
'''


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers["Content-Length"])
        self.rfile.read(length)
        content = ("here you go\n# EVOLVE-BLOCK-START\n"
                   + PROTOCOL_CANDIDATE
                   + "\n# EVOLVE-BLOCK-END\n")
        body = json.dumps({
            "choices": [{"message": {"role": "assistant", "content": content}}]
        }).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture
def mock_server():
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server
    server.shutdown()


def test_engine_runs_llm_proposed_external_candidates(mock_server, monkeypatch):
    monkeypatch.setenv("EMOFORGE_API_KEY", "test-key")
    config = LLMConfig(base_url=f"http://127.0.0.1:{mock_server.server_address[1]}",
                       model="mock", backoff_s=0.0)
    limits = ExecLimits(timeout_s=15.0,
                        launchers={"python": [sys.executable, "{source_file}"]})
    engine = Engine(builtin_family("circle_packing"), LLMMutator(config),
                    EngineSettings(limits=limits))
    result = engine.run_single_task("circle_packing_n20", 2, seed=0)
    assert result.spent == 2
    assert result.final_score > 0.0
    external = [e for e in result.archive.entries()
                if e.candidate.genome.kind == "external_source"]
    assert external, "LLM proposals never reached the archive"
    for entry in external:
        assert entry.record.task_scores["circle_packing_n20"] > 0.0


class _FlakyHandler(BaseHTTPRequestHandler):
    calls = 0

    def do_POST(self):
        length = int(self.headers["Content-Length"])
        self.rfile.read(length)
        type(self).calls += 1
        if type(self).calls % 2 == 1:
            content = "no code here, sorry"
        else:
            content = ("# EVOLVE-BLOCK-START\n" + PROTOCOL_CANDIDATE
                       + "\n# EVOLVE-BLOCK-END\n")
        body = json.dumps({
            "choices": [{"message": {"role": "assistant", "content": content}}]
        }).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


def test_failed_llm_proposals_cost_one_iteration_each(monkeypatch):
    monkeypatch.setenv("EMOFORGE_API_KEY", "test-key")
    _FlakyHandler.calls = 0
    server = HTTPServer(("127.0.0.1", 0), _FlakyHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        config = LLMConfig(base_url=f"http://127.0.0.1:{server.server_address[1]}",
                           model="mock", retries=0, backoff_s=0.0)
        limits = ExecLimits(timeout_s=15.0,
                            launchers={"python": [sys.executable, "{source_file}"]})
        engine = Engine(builtin_family("circle_packing"), LLMMutator(config),
                        EngineSettings(limits=limits))
        result = engine.run_single_task("circle_packing_n20", 4, seed=1)
        assert result.spent == 4  # garbage proposals still consume budget
        scores = [e.record.task_scores["circle_packing_n20"]
                  for e in result.archive.entries()
                  if e.candidate.genome.kind == "external_source"]
        assert any(s > 0 for s in scores)    # good proposals landed
        assert result.final_score > 0.0
    finally:
        server.shutdown()
