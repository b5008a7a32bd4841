"""Proposal backends: deterministic parametric, replay, and LLM-backed.

One proposal is one budget unit. The deterministic backend makes the whole
engine a pure function of (config, seed); the replay backend feeds fixture
genomes for tests; the LLM backend talks to a chat-completion endpoint and
degrades to a zero-scoring failure genome instead of ever raising into the
evolution loop.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .archive import MutationContext
from .errors import ConfigError, ReplayExhaustedError
from .execution import (
    PARAM_RANGES,
    CandidateGenome,
    external_genome,
    parametric_genome,
)

log = logging.getLogger("emoforge.mutators")

FAILURE_SOURCE = "# unusable proposal\nraise RuntimeError('proposal failed')\n"


class DeterministicMutator:
    """Seeded Gaussian perturbation of the parent's parameter vector.

    The noise scale decays with the parent's generation so early proposals
    explore and late ones refine; with small probability one coordinate is
    re-sampled uniformly from its documented range to escape local basins.
    Pure function of (context, rng state).
    """

    name = "deterministic"

    def __init__(self, scale: float = 0.25, decay: float = 0.97,
                 floor: float = 0.02, resample_prob: float = 0.1):
        self.scale = scale
        self.decay = decay
        self.floor = floor
        self.resample_prob = resample_prob

    def propose(self, ctx: MutationContext) -> CandidateGenome:
        genome = ctx.parent.candidate.genome
        if genome.kind != "parametric":
            raise ConfigError("deterministic mutator requires parametric parents")
        rng = ctx.rng
        ranges = PARAM_RANGES[genome.heuristic_id]
        lows = np.array([lo for lo, _ in ranges])
        highs = np.array([hi for _, hi in ranges])
        widths = highs - lows
        sigma = max(self.floor, self.scale * self.decay ** ctx.parent.candidate.generation)
        params = np.array(genome.params, dtype=float)
        params = params + rng.standard_normal(len(params)) * sigma * widths
        if rng.random() < self.resample_prob:
            index = int(rng.integers(len(params)))
            params[index] = lows[index] + rng.random() * widths[index]
        params = np.clip(params, lows, highs)
        return parametric_genome(genome.heuristic_id, params.tolist())


class ReplayMutator:
    """Plays back a fixed sequence of genomes from a JSONL fixture."""

    name = "replay"

    def __init__(self, genomes=None, fixture_path=None):
        if genomes is None:
            if fixture_path is None:
                raise ConfigError("replay mutator needs genomes or a fixture path")
            genomes = []
            for line in Path(fixture_path).read_text("utf-8").splitlines():
                line = line.strip()
                if line:
                    genomes.append(CandidateGenome.from_dict(json.loads(line)))
        self._genomes = list(genomes)
        self._cursor = 0

    def propose(self, ctx: MutationContext) -> CandidateGenome:
        if self._cursor >= len(self._genomes):
            raise ReplayExhaustedError(
                f"replay fixture exhausted after {self._cursor} proposals"
            )
        genome = self._genomes[self._cursor]
        self._cursor += 1
        return genome


@dataclass
class LLMConfig:
    base_url: str = ""
    model: str = ""
    api_key_env: str = "EMOFORGE_API_KEY"
    temperature: float = 0.8
    max_tokens: int = 4096
    retries: int = 2
    backoff_s: float = 1.0
    timeout_s: float = 120.0
    trace: bool = False
    # Extra sampling parameters passed through to the endpoint untouched.
    sampling: dict = field(default_factory=dict)


_BLOCK_RE = re.compile(
    r"#\s*EVOLVE-BLOCK-START\s*\n(.*?)#\s*EVOLVE-BLOCK-END", re.DOTALL
)
_FENCE_RE = re.compile(r"```(?:python)?\s*\n(.*?)```", re.DOTALL)


def extract_program(text: str) -> str | None:
    match = _BLOCK_RE.search(text)
    if match:
        return match.group(1).strip() + "\n"
    match = _FENCE_RE.search(text)
    if match:
        return match.group(1).strip() + "\n"
    return None


def load_prompt_template(evaluator_kind: str) -> str:
    name = f"prompts/{evaluator_kind}.txt"
    return resources.files("emoforge").joinpath(name).read_text("utf-8")


def render_messages(ctx: MutationContext) -> list[dict]:
    family = ctx.family
    system = load_prompt_template(family.evaluator_kind)

    if ctx.phase == "adaptation":
        goal = f"Optimize for the single target task: {ctx.task_id}."
    else:
        task_ids = ", ".join(t.task_id for t in family.tasks)
        goal = ("Optimize the average score across the whole task family: "
                f"{task_ids}.")

    parent = ctx.parent
    if parent.candidate.genome.kind == "external_source":
        program = parent.candidate.genome.source
    else:
        genome = parent.candidate.genome
        program = (f"# current candidate is a parametric heuristic "
                   f"{genome.heuristic_id} with parameters {list(genome.params)}\n"
                   f"# write a full program implementing the interface below\n")

    lines = [
        goal,
        "",
        f"Required interface: {family.interface_descriptor}",
        "",
        "Current program:",
        "# EVOLVE-BLOCK-START",
        program.rstrip("\n"),
        "# EVOLVE-BLOCK-END",
        "",
        f"Current scores per task: {json.dumps(parent.record.task_scores, sort_keys=True)}",
    ]
    for i, insp in enumerate(ctx.inspirations, start=1):
        lines.append("")
        lines.append(f"Inspiration {i} (scores {json.dumps(insp.record.task_scores, sort_keys=True)}):")
        if insp.candidate.genome.kind == "external_source":
            lines.append(insp.candidate.genome.source.rstrip("\n"))
        else:
            g = insp.candidate.genome
            lines.append(f"# parametric {g.heuristic_id} with parameters {list(g.params)}")
    lines += [
        "",
        "Rewrite the whole program, improved. Reply with the new program between",
        "# EVOLVE-BLOCK-START and # EVOLVE-BLOCK-END markers.",
    ]
    return [
        {"role": "system", "content": system},
        {"role": "user", "content": "\n".join(lines)},
    ]


class LLMMutator:
    """Chat-completion-backed proposals.

    Transport errors retry with backoff; once retries are exhausted the
    mutator returns a failure genome (which scores 0 downstream) so a bad
    proposal costs exactly one iteration and never corrupts engine state.
    """

    name = "llm"

    def __init__(self, config: LLMConfig, entry_point_for=None):
        if not config.base_url or not config.model:
            raise ConfigError("llm mutator needs base_url and model")
        self.config = config
        self._entry_point_for = entry_point_for or _default_entry_point

    def _request(self, messages: list[dict]) -> str:
        cfg = self.config
        api_key = os.environ.get(cfg.api_key_env, "")
        body = {
            "model": cfg.model,
            "messages": messages,
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
        }
        body.update(cfg.sampling)
        payload = json.dumps(body).encode("utf-8")
        if cfg.trace:
            log.info("llm request: %s", json.dumps(body)[:4000])
        request = urllib.request.Request(
            cfg.base_url.rstrip("/") + "/chat/completions",
            data=payload,
            headers={
                "Content-Type": "application/json",
                "Authorization": f"Bearer {api_key}",
            },
        )
        with urllib.request.urlopen(request, timeout=cfg.timeout_s) as response:
            text = response.read().decode("utf-8")
        if cfg.trace:
            log.info("llm response: %s", text[:4000])
        data = json.loads(text)
        return data["choices"][0]["message"]["content"]

    def propose(self, ctx: MutationContext) -> CandidateGenome:
        messages = render_messages(ctx)
        entry_point = self._entry_point_for(ctx.family)
        last_error = None
        for attempt in range(self.config.retries + 1):
            try:
                content = self._request(messages)
            except (urllib.error.URLError, OSError, TimeoutError) as exc:
                last_error = exc
                if attempt < self.config.retries:
                    time.sleep(self.config.backoff_s * (2 ** attempt))
                continue
            except (KeyError, IndexError, json.JSONDecodeError, ValueError) as exc:
                last_error = exc
                continue
            program = extract_program(content)
            if program is not None:
                return external_genome(program, "python", entry_point)
            last_error = ValueError("no evolve block in completion")
        log.warning("llm proposal failed after retries: %s", last_error)
        return external_genome(FAILURE_SOURCE, "python", entry_point)


def _default_entry_point(family) -> str:
    descriptor = family.interface_descriptor
    match = re.match(r"\s*(\w+)\s*\(", descriptor)
    return match.group(1) if match else "main"
