"""Island-partitioned, feature-binned elite archive.

Entries live on one of a fixed number of islands and occupy a cell of a 2D
feature grid: a score bin (10 uniform bins over [0, max(1, best score seen)])
and a diversity bin (normalized genome distance from the current best entry).
A cell's occupant is only displaced by a strictly higher-ranking newcomer;
every tie keeps the earliest insertion, which makes runs replay-stable.

The ranking score is the family-average score during shared evolution and the
single task score during adaptation; projection converts one into the other
using the per-task scores cached at evaluation time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Any, Iterable

import numpy as np

from .errors import (
    CheckpointError,
    DuplicateCandidateError,
    EmoforgeError,
    EmptyArchiveError,
    UnknownTaskError,
)
from .execution import CandidateGenome, genome_distance
from .tasks import FamilySpec

CHECKPOINT_MAGIC = "EMOFORGE-CKPT-1"
CHECKPOINT_VERSION = 1

ORIGINS = ("seed", "shared-phase", "adaptation-phase")


@dataclass
class Candidate:
    id: str
    genome: CandidateGenome
    parent_id: str | None = None
    generation: int = 0
    origin: str = "seed"

    def __post_init__(self):
        if self.generation < 0:
            raise EmoforgeError("generation must be non-negative")
        if self.origin not in ORIGINS:
            raise EmoforgeError(f"bad origin {self.origin!r}")

    def to_dict(self) -> dict:
        return {"id": self.id, "genome": self.genome.to_dict(),
                "parent_id": self.parent_id, "generation": self.generation,
                "origin": self.origin}

    @classmethod
    def from_dict(cls, data: dict) -> "Candidate":
        return cls(id=data["id"], genome=CandidateGenome.from_dict(data["genome"]),
                   parent_id=data.get("parent_id"), generation=data["generation"],
                   origin=data["origin"])


@dataclass
class EvaluationRecord:
    candidate_id: str
    task_scores: dict[str, float]
    shared_score: float
    failures: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"candidate_id": self.candidate_id, "task_scores": self.task_scores,
                "shared_score": self.shared_score, "failures": self.failures}

    @classmethod
    def from_dict(cls, data: dict) -> "EvaluationRecord":
        return cls(candidate_id=data["candidate_id"],
                   task_scores=dict(data["task_scores"]),
                   shared_score=data["shared_score"],
                   failures=dict(data.get("failures", {})))


def make_record(candidate_id: str, task_scores: dict[str, float],
                failures: dict[str, str] | None = None) -> EvaluationRecord:
    """Build a record; the shared score is always the mean of the task scores."""
    failures = failures or {}
    for task_id in failures:
        if task_scores.get(task_id, 0.0) != 0.0:
            raise EmoforgeError(
                f"task {task_id!r} recorded a failure but a nonzero score"
            )
    shared = sum(task_scores.values()) / len(task_scores)
    return EvaluationRecord(candidate_id=candidate_id,
                            task_scores=dict(task_scores),
                            shared_score=shared, failures=dict(failures))


@dataclass
class ArchiveEntry:
    candidate: Candidate
    record: EvaluationRecord
    island: int
    feature_bin: tuple[int, int] = (0, 0)
    home_island: int = -1  # island at first insertion; migration changes `island` only
    order: int = -1        # insertion sequence number, assigned by the archive

    def to_dict(self) -> dict:
        return {"candidate": self.candidate.to_dict(),
                "record": self.record.to_dict(), "island": self.island,
                "feature_bin": list(self.feature_bin),
                "home_island": self.home_island, "order": self.order}

    @classmethod
    def from_dict(cls, data: dict) -> "ArchiveEntry":
        return cls(candidate=Candidate.from_dict(data["candidate"]),
                   record=EvaluationRecord.from_dict(data["record"]),
                   island=data["island"],
                   feature_bin=tuple(data["feature_bin"]),
                   home_island=data["home_island"], order=data["order"])


@dataclass(frozen=True)
class InsertOutcome:
    status: str  # "added" | "replaced" | "rejected"
    evicted_id: str | None = None
    reason: str | None = None

    @property
    def added(self) -> bool:
        return self.status in ("added", "replaced")


@dataclass
class MutationContext:
    parent: ArchiveEntry
    inspirations: list[ArchiveEntry]
    family: FamilySpec | None = None
    phase: str = "shared"  # "shared" | "adaptation"
    task_id: str | None = None
    rng: Any = None

    def __post_init__(self):
        if self.phase == "adaptation":
            if self.family is not None and self.task_id is not None:
                known = {t.task_id for t in self.family.tasks}
                if self.task_id not in known:
                    raise EmoforgeError(
                        f"adaptation task {self.task_id!r} not in family"
                    )


@dataclass(frozen=True)
class ArchiveConfig:
    capacity: int = 60
    elite_size: int = 30
    islands: int = 4
    bins: int = 10
    migration_interval: int = 15
    migration_rate: float = 0.15
    inspiration_count: int = 3
    parent_rank_decay: float = 0.7

    def to_dict(self) -> dict:
        return {"capacity": self.capacity, "elite_size": self.elite_size,
                "islands": self.islands, "bins": self.bins,
                "migration_interval": self.migration_interval,
                "migration_rate": self.migration_rate,
                "inspiration_count": self.inspiration_count,
                "parent_rank_decay": self.parent_rank_decay}

    @classmethod
    def from_dict(cls, data: dict) -> "ArchiveConfig":
        return cls(**data)


@dataclass
class Checkpoint:
    iteration: int
    entries: list[ArchiveEntry]
    rng_state: dict
    budget_spent: int
    archive: "Archive"
    extra: dict = field(default_factory=dict)


class Archive:
    """Elite store for one evolution phase.

    ``ranking`` is "shared" (rank by family-average score) or "task" (rank by
    ``rank_task``'s score). One coordinator mutates the archive; reads for
    context sampling happen on the same coordinator.
    """

    def __init__(self, config: ArchiveConfig | None = None, ranking: str = "shared",
                 rank_task: str | None = None):
        self.config = config or ArchiveConfig()
        if ranking not in ("shared", "task"):
            raise EmoforgeError(f"bad ranking mode {ranking!r}")
        if ranking == "task" and not rank_task:
            raise EmoforgeError("task ranking needs rank_task")
        self.ranking = ranking
        self.rank_task = rank_task
        self._islands: list[dict[tuple[int, int], ArchiveEntry]] = [
            {} for _ in range(self.config.islands)
        ]
        self._by_id: dict[str, ArchiveEntry] = {}
        self._counter = 0
        self._running_max = 1.0  # score-bin denominator floor

    # -- basics ------------------------------------------------------------

    def __len__(self) -> int:
        return len(self._by_id)

    def entries(self) -> list[ArchiveEntry]:
        return sorted(self._by_id.values(), key=lambda e: e.order)

    def island_entries(self, island: int) -> list[ArchiveEntry]:
        return sorted(self._islands[island].values(), key=lambda e: e.order)

    def ranking_score(self, entry: ArchiveEntry) -> float:
        if self.ranking == "shared":
            return entry.record.shared_score
        if self.rank_task not in entry.record.task_scores:
            raise UnknownTaskError(
                f"entry {entry.candidate.id!r} has no score for {self.rank_task!r}"
            )
        return entry.record.task_scores[self.rank_task]

    def _best_entry(self) -> ArchiveEntry | None:
        best = None
        for entry in self._by_id.values():
            if best is None:
                best = entry
                continue
            score, best_score = self.ranking_score(entry), self.ranking_score(best)
            if score > best_score or (score == best_score and entry.order < best.order):
                best = entry
        return best

    def _bin_for(self, genome: CandidateGenome, score: float,
                 reference: ArchiveEntry | None) -> tuple[int, int]:
        bins = self.config.bins
        denominator = max(1.0, self._running_max)
        score_bin = min(bins - 1, int(bins * max(0.0, score) / denominator))
        if reference is None:
            diversity = 0.0
        else:
            diversity = genome_distance(genome, reference.candidate.genome)
        div_bin = min(bins - 1, int(bins * diversity))
        return (score_bin, div_bin)

    # -- insertion ---------------------------------------------------------

    def insert(self, entry: ArchiveEntry) -> InsertOutcome:
        """Insert with MAP-Elites replacement.

        A newcomer wins an occupied cell only with a strictly higher ranking
        score; at capacity it must also strictly outrank the weakest entry in
        the archive. Exact clones (same island, genome, and scores as an
        existing entry) are rejected outright so repeated insertion of a
        clone can never mutate the archive. Evicted entries are dropped.
        """
        if entry.candidate.id in self._by_id:
            raise DuplicateCandidateError(
                f"candidate {entry.candidate.id!r} already in archive"
            )
        if not 0 <= entry.island < self.config.islands:
            raise EmoforgeError(f"island {entry.island} out of range")
        score = self.ranking_score(entry)

        for other in self._islands[entry.island].values():
            if (other.candidate.genome == entry.candidate.genome
                    and other.record.task_scores == entry.record.task_scores):
                return InsertOutcome("rejected", reason="duplicate_content")

        # A rejected newcomer always scores <= the current max, so bumping the
        # denominator first never mutates state on rejection.
        self._running_max = max(self._running_max, score)
        best = self._best_entry()
        bin_ = self._bin_for(entry.candidate.genome, score, best)
        cell = self._islands[entry.island]
        incumbent = cell.get(bin_)

        if incumbent is not None:
            if score > self.ranking_score(incumbent):
                self._remove(incumbent)
                self._add(entry, bin_)
                return InsertOutcome("replaced", evicted_id=incumbent.candidate.id)
            return InsertOutcome("rejected", reason="incumbent_kept")

        if len(self._by_id) >= self.config.capacity:
            weakest = min(
                self._by_id.values(),
                key=lambda e: (self.ranking_score(e), -e.order),
            )
            if score > self.ranking_score(weakest):
                self._remove(weakest)
                self._add(entry, bin_)
                return InsertOutcome("replaced", evicted_id=weakest.candidate.id)
            return InsertOutcome("rejected", reason="at_capacity")

        self._add(entry, bin_)
        return InsertOutcome("added")

    def _add(self, entry: ArchiveEntry, bin_: tuple[int, int]) -> None:
        entry.feature_bin = bin_
        entry.order = self._counter
        self._counter += 1
        if entry.home_island < 0:
            entry.home_island = entry.island
        self._islands[entry.island][bin_] = entry
        self._by_id[entry.candidate.id] = entry

    def _remove(self, entry: ArchiveEntry) -> None:
        del self._islands[entry.island][entry.feature_bin]
        del self._by_id[entry.candidate.id]

    # -- selection ---------------------------------------------------------

    def best_by_shared(self) -> ArchiveEntry:
        if not self._by_id:
            raise EmptyArchiveError("archive is empty")
        return max(self._by_id.values(),
                   key=lambda e: (e.record.shared_score, -e.order))

    def best_by_task(self, task_id: str) -> ArchiveEntry:
        if not self._by_id:
            raise EmptyArchiveError("archive is empty")
        for entry in self._by_id.values():
            if task_id not in entry.record.task_scores:
                raise UnknownTaskError(
                    f"entry {entry.candidate.id!r} has no cached score for {task_id!r}"
                )
        return max(self._by_id.values(),
                   key=lambda e: (e.record.task_scores[task_id], -e.order))

    def elites(self) -> list[ArchiveEntry]:
        ranked = sorted(self._by_id.values(),
                        key=lambda e: (-self.ranking_score(e), e.order))
        return ranked[: self.config.elite_size]

    def sample_context(self, island: int, rng, family: FamilySpec | None = None,
                       phase: str = "shared",
                       task_id: str | None = None) -> MutationContext:
        """Pick a parent (rank-weighted within the island) plus inspirations
        drawn from elites in distinct feature bins. Deterministic given the
        rng state. An empty island falls back to any populated island.
        """
        if not self._by_id:
            raise EmptyArchiveError("cannot sample from an empty archive")
        pool = self.island_entries(island)
        if not pool:
            for other in range(self.config.islands):
                pool = self.island_entries(other)
                if pool:
                    break
        ranked = sorted(pool, key=lambda e: (-self.ranking_score(e), e.order))
        weights = np.array([self.config.parent_rank_decay ** i
                            for i in range(len(ranked))])
        weights /= weights.sum()
        parent = ranked[int(rng.choice(len(ranked), p=weights))]

        seen_bins = {parent.feature_bin}
        candidates = []
        for entry in self.elites():
            if entry.candidate.id == parent.candidate.id:
                continue
            if entry.feature_bin in seen_bins:
                continue
            seen_bins.add(entry.feature_bin)
            candidates.append(entry)
        count = min(self.config.inspiration_count, len(candidates))
        inspirations = []
        if count:
            picks = rng.choice(len(candidates), size=count, replace=False)
            inspirations = [candidates[int(i)] for i in sorted(picks)]
        return MutationContext(parent=parent, inspirations=inspirations,
                               family=family, phase=phase, task_id=task_id,
                               rng=rng)

    # -- projection --------------------------------------------------------

    def project(self, task_id: str, variant: str) -> list[ArchiveEntry]:
        """Task-local initialization entries for one adaptation variant.

        No candidate is re-executed: per-task scores were cached during shared
        evolution. The returned entries are fresh objects re-keyed (and
        re-binned) by the target task's score; the shared archive is never
        mutated by projection.
        """
        if not self._by_id:
            raise EmptyArchiveError("cannot project an empty archive")
        if variant not in ("warmstart", "best_shared", "best_local"):
            raise EmoforgeError(f"unknown projection variant {variant!r}")
        for entry in self._by_id.values():
            if task_id not in entry.record.task_scores:
                raise UnknownTaskError(
                    f"entry {entry.candidate.id!r} has no cached score for {task_id!r}"
                )
        if variant == "warmstart":
            chosen: Iterable[ArchiveEntry] = self.entries()
        elif variant == "best_shared":
            chosen = [self.best_by_shared()]
        else:
            chosen = [self.best_by_task(task_id)]

        projected = [
            ArchiveEntry(candidate=e.candidate, record=e.record,
                         island=e.island, home_island=-1, order=-1)
            for e in chosen
        ]
        _bin_sequence(projected, lambda e: e.record.task_scores[task_id],
                      self.config.bins)
        return projected

    def seed_with(self, entries: list[ArchiveEntry]) -> None:
        """Install projected entries as the initial population.

        Unlike ``insert``, seeding keeps every entry: a bin collision probes
        to the nearest free cell so a full shared archive transfers intact.
        """
        if self._by_id:
            raise EmoforgeError("seed_with requires an empty archive")
        for entry in entries:
            score = self.ranking_score(entry)
            self._running_max = max(self._running_max, score)
            bin_ = self._probe_free(entry.island, entry.feature_bin)
            if entry.candidate.id in self._by_id:
                raise DuplicateCandidateError(
                    f"candidate {entry.candidate.id!r} already in archive"
                )
            self._add(entry, bin_)

    def _probe_free(self, island: int, start: tuple[int, int]) -> tuple[int, int]:
        bins = self.config.bins
        s0, d0 = start
        flat0 = s0 * bins + d0
        for offset in range(bins * bins):
            flat = (flat0 + offset) % (bins * bins)
            slot = (flat // bins, flat % bins)
            if slot not in self._islands[island]:
                return slot
        raise EmoforgeError("island feature grid is full")

    # -- migration ---------------------------------------------------------

    def migrate(self) -> list[str]:
        """Ring migration: each island's best ceil(rate * size) entries move
        to the next island, displacing strictly weaker occupants. Returns the
        ids that moved.
        """
        moved = []
        plans = []
        for island in range(self.config.islands):
            entries = sorted(self._islands[island].values(),
                             key=lambda e: (-self.ranking_score(e), e.order))
            if not entries:
                continue
            count = max(1, math.ceil(self.config.migration_rate * len(entries)))
            plans.append((island, entries[:count]))
        for island, migrants in plans:
            destination = (island + 1) % self.config.islands
            for entry in migrants:
                if entry.candidate.id not in self._by_id or entry.island != island:
                    continue  # displaced earlier in this round
                occupant = self._islands[destination].get(entry.feature_bin)
                if occupant is None:
                    del self._islands[island][entry.feature_bin]
                    entry.island = destination
                    self._islands[destination][entry.feature_bin] = entry
                    moved.append(entry.candidate.id)
                elif self.ranking_score(entry) > self.ranking_score(occupant):
                    self._remove(occupant)
                    del self._islands[island][entry.feature_bin]
                    entry.island = destination
                    self._islands[destination][entry.feature_bin] = entry
                    moved.append(entry.candidate.id)
        return moved

    # -- serialization -----------------------------------------------------

    def to_state(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "ranking": self.ranking,
            "rank_task": self.rank_task,
            "counter": self._counter,
            "running_max": self._running_max,
            "entries": [e.to_dict() for e in self.entries()],
        }

    @classmethod
    def from_state(cls, state: dict) -> "Archive":
        archive = cls(ArchiveConfig.from_dict(state["config"]),
                      ranking=state["ranking"], rank_task=state.get("rank_task"))
        archive._counter = state["counter"]
        archive._running_max = state["running_max"]
        for raw in state["entries"]:
            entry = ArchiveEntry.from_dict(raw)
            archive._islands[entry.island][entry.feature_bin] = entry
            archive._by_id[entry.candidate.id] = entry
        return archive

    def state_bytes(self) -> bytes:
        return json.dumps(self.to_state(), sort_keys=True).encode("utf-8")

    # -- checkpointing -----------------------------------------------------

    def save_checkpoint(self, path, *, iteration: int, budget_spent: int,
                        rng_state: dict, extra: dict | None = None) -> None:
        body = {
            "version": CHECKPOINT_VERSION,
            "iteration": iteration,
            "budget_spent": budget_spent,
            "rng_state": rng_state,
            "archive": self.to_state(),
            "extra": extra or {},
        }
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(CHECKPOINT_MAGIC + "\n")
            json.dump(body, fh, sort_keys=True)
            fh.write("\n")


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, encoding="utf-8") as fh:
            magic = fh.readline().rstrip("\n")
            if magic != CHECKPOINT_MAGIC:
                raise CheckpointError(
                    f"{path}: bad magic header {magic!r} (expected {CHECKPOINT_MAGIC!r})"
                )
            try:
                body = json.load(fh)
            except json.JSONDecodeError as exc:
                raise CheckpointError(f"{path}: corrupt checkpoint body: {exc}") from exc
    except OSError as exc:
        raise CheckpointError(f"{path}: cannot read checkpoint: {exc}") from exc
    if body.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {body.get('version')!r}"
        )
    archive = Archive.from_state(body["archive"])
    return Checkpoint(iteration=body["iteration"], entries=archive.entries(),
                      rng_state=body["rng_state"], budget_spent=body["budget_spent"],
                      archive=archive, extra=body.get("extra", {}))


def _bin_sequence(entries: list[ArchiveEntry], score_of, bins: int) -> None:
    """Assign feature bins to a sequence exactly as live insertion would:
    running score maximum for the score axis, distance to the best-so-far
    genome for the diversity axis.
    """
    running = 1.0
    best: ArchiveEntry | None = None
    best_score = -math.inf
    for entry in entries:
        score = score_of(entry)
        running = max(running, score)
        if best is None:
            diversity = 0.0
        else:
            diversity = genome_distance(entry.candidate.genome,
                                        best.candidate.genome)
        entry.feature_bin = (
            min(bins - 1, int(bins * max(0.0, score) / running)),
            min(bins - 1, int(bins * diversity)),
        )
        if score > best_score:
            best, best_score = entry, score


def clone_entry_for_island(entry: ArchiveEntry, island: int,
                           suffix: str) -> ArchiveEntry:
    """Copy an entry onto another island under a derived candidate id, so a
    singleton initialization can occupy every island without breaking id
    uniqueness.
    """
    candidate = Candidate(
        id=f"{entry.candidate.id}{suffix}",
        genome=entry.candidate.genome,
        parent_id=entry.candidate.parent_id,
        generation=entry.candidate.generation,
        origin=entry.candidate.origin,
    )
    record = replace(entry.record, candidate_id=candidate.id,
                     task_scores=dict(entry.record.task_scores),
                     failures=dict(entry.record.failures))
    return ArchiveEntry(candidate=candidate, record=record, island=island,
                        feature_bin=entry.feature_bin, home_island=-1, order=-1)
