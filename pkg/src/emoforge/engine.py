"""The shared-then-adapt evolution loop under a matched compute budget.

One iteration is one proposal plus its evaluation(s): a shared iteration
evaluates the candidate on all K family tasks but still charges one budget
unit, which is exactly what makes S + K*A = K*B compute-neutral in iteration
terms (a shared iteration does cost K evaluator calls; the ledger tracks both
numbers). Failed proposals consume budget like everything else.

The shared phase ranks by the family-average score, caches every per-task
score, and the three adaptation variants differ only in how the task-local
archive is initialized from the shared archive: full transfer (warmstart),
the best family-average program (best_shared), or the per-task best shared
program (best_local). The single-task baseline evolves each task from the
family seed program with the matched per-task budget B.
"""

from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .archive import (
    Archive,
    ArchiveConfig,
    ArchiveEntry,
    Candidate,
    clone_entry_for_island,
    load_checkpoint,
    make_record,
)
from .errors import ConfigError
from .execution import CandidateGenome, ExecLimits, evaluate_genome, seed_genome_for
from .tasks import FamilySpec, TaskSpec

log = logging.getLogger("emoforge.engine")

STA_VARIANTS = ("warmstart", "best_shared", "best_local")
SINGLE_TASK = "single_task"


def rng_for(seed: int, *tags) -> np.random.Generator:
    """Independent, platform-stable stream for one phase of one run."""
    keys = [zlib.crc32(str(tag).encode("utf-8")) for tag in tags]
    sequence = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *keys])
    return np.random.Generator(np.random.PCG64(sequence))


@dataclass(frozen=True)
class BudgetPlan:
    """(S, A, K, B) with the matched-compute identity S + K*A = K*B."""

    shared: int
    adapt: int
    tasks: int
    baseline: int

    def __post_init__(self):
        if self.tasks < 1:
            raise ConfigError("budget plan needs at least one task")
        if min(self.shared, self.adapt, self.baseline) < 0:
            raise ConfigError("budgets must be non-negative")
        if self.shared + self.tasks * self.adapt != self.tasks * self.baseline:
            raise ConfigError(
                f"budget identity violated: {self.shared} + {self.tasks}*{self.adapt} "
                f"!= {self.tasks}*{self.baseline}"
            )

    @classmethod
    def from_shared_adapt(cls, shared: int, adapt: int, tasks: int) -> "BudgetPlan":
        total = shared + tasks * adapt
        if total % tasks != 0:
            raise ConfigError(
                f"S={shared}, A={adapt}, K={tasks}: total {total} is not divisible "
                f"by K, so no integer single-task budget B matches"
            )
        return cls(shared=shared, adapt=adapt, tasks=tasks, baseline=total // tasks)

    @property
    def total(self) -> int:
        return self.shared + self.tasks * self.adapt

    @property
    def label(self) -> str:
        return f"{self.shared} / {self.adapt} / {self.total}"


@dataclass
class EngineSettings:
    archive: ArchiveConfig = field(default_factory=ArchiveConfig)
    eval_mode: str = "full"
    limits: ExecLimits = field(default_factory=ExecLimits)
    checkpoint_every: int = 0
    checkpoint_dir: Path | None = None


@dataclass
class PhaseResult:
    """Outcome of one evolution phase (shared, adaptation, or baseline)."""

    archive: Archive
    trajectory: list[float]
    spent: int
    evaluator_calls: int
    final_score: float | None = None
    best_genome: CandidateGenome | None = None
    diagnostics: list[str] = field(default_factory=list)


@dataclass
class RunResult:
    family_id: str
    plan: BudgetPlan
    seed: int
    variant_task_scores: dict[str, dict[str, float]]
    family_means: dict[str, float]
    before_adaptation: dict[str, float] | None
    before_adaptation_mean: float | None
    ledger: dict
    trajectories: dict[str, list[float]]
    adapted_genomes: dict[str, dict[str, dict]]

    def to_dict(self) -> dict:
        return {
            "family": self.family_id,
            "budget": {"shared": self.plan.shared, "adapt": self.plan.adapt,
                       "tasks": self.plan.tasks, "baseline": self.plan.baseline,
                       "total": self.plan.total, "label": self.plan.label},
            "seed": self.seed,
            "scores": self.variant_task_scores,
            "family_means": self.family_means,
            "before_adaptation": self.before_adaptation,
            "before_adaptation_mean": self.before_adaptation_mean,
            "ledger": self.ledger,
        }


@dataclass
class ExperimentResult:
    family_id: str
    plan: BudgetPlan
    runs: list[RunResult]

    def summary(self) -> dict:
        """mean +- std per variant, per task and family-level, across seeds."""
        variants: dict[str, dict] = {}
        if not self.runs:
            return {}
        names = list(self.runs[0].variant_task_scores)
        for name in names:
            per_task = {}
            for task_id in self.runs[0].variant_task_scores[name]:
                values = [r.variant_task_scores[name][task_id] for r in self.runs]
                per_task[task_id] = _mean_std(values)
            means = [r.family_means[name] for r in self.runs]
            variants[name] = {"tasks": per_task, "family": _mean_std(means)}
        before = [r.before_adaptation_mean for r in self.runs
                  if r.before_adaptation_mean is not None]
        return {
            "family": self.family_id,
            "budget": self.plan.label,
            "seeds": [r.seed for r in self.runs],
            "variants": variants,
            "before_adaptation_family": _mean_std(before) if before else None,
        }


def _mean_std(values) -> dict:
    arr = np.asarray(values, dtype=float)
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return {"mean": float(arr.mean()), "std": std, "n": len(arr)}


@dataclass
class OODResult:
    family_id: str
    source_tasks: list[str]
    holdout_tasks: list[str]
    matrix: dict[str, dict[str, float]]  # source -> holdout -> score

    def holdout_means(self) -> dict[str, float]:
        means = {}
        for holdout in self.holdout_tasks:
            values = [self.matrix[src][holdout] for src in self.source_tasks]
            means[holdout] = float(np.mean(values))
        return means


class Engine:
    def __init__(self, family: FamilySpec, mutator, settings: EngineSettings | None = None):
        self.family = family
        self.mutator = mutator
        self.settings = settings or EngineSettings()
        self.seed_genome = seed_genome_for(family)

    # -- evaluation helpers --------------------------------------------------

    def _evaluate(self, genome: CandidateGenome, specs: list[TaskSpec]):
        scores: dict[str, float] = {}
        failures: dict[str, str] = {}
        for spec in specs:
            result = evaluate_genome(genome, spec, mode=self.settings.eval_mode,
                                     limits=self.settings.limits)
            scores[spec.task_id] = result.score
            if result.failure is not None:
                failures[spec.task_id] = result.failure
        return scores, failures

    def _seed_entries(self, specs: list[TaskSpec], id_prefix: str):
        """Evaluate the family seed program and clone it onto every island."""
        scores, failures = self._seed_scores(specs)
        base = ArchiveEntry(
            candidate=Candidate(id=f"{id_prefix}seed", genome=self.seed_genome,
                                origin="seed"),
            record=make_record(f"{id_prefix}seed", scores, failures),
            island=0,
        )
        islands = self.settings.archive.islands
        return [clone_entry_for_island(base, k, f"@i{k}") for k in range(islands)]

    def _seed_scores(self, specs: list[TaskSpec]):
        key = tuple(sorted(s.task_id for s in specs))
        cache = getattr(self, "_seed_score_cache", None)
        if cache is None:
            cache = self._seed_score_cache = {}
        if key not in cache:
            cache[key] = self._evaluate(self.seed_genome, specs)
        scores, failures = cache[key]
        return dict(scores), dict(failures)

    # -- evolution loop -------------------------------------------------------

    def _evolve(self, archive: Archive, specs: list[TaskSpec], iterations: int,
                rng, *, phase: str, task_id: str | None, id_prefix: str,
                origin: str, start_iteration: int = 0,
                trajectory: list[float] | None = None,
                spent: int = 0, evaluator_calls: int = 0,
                checkpoint_tag: str | None = None) -> PhaseResult:
        settings = self.settings
        trajectory = list(trajectory or [])
        best_so_far = max(trajectory) if trajectory else -math.inf
        diagnostics: list[str] = []

        for iteration in range(start_iteration + 1, iterations + 1):
            island = (iteration - 1) % settings.archive.islands
            ctx = archive.sample_context(island, rng, family=self.family,
                                         phase=phase, task_id=task_id)
            genome = self.mutator.propose(ctx)
            scores, failures = self._evaluate(genome, specs)
            evaluator_calls += len(specs)
            cid = f"{id_prefix}{iteration:04d}"
            candidate = Candidate(
                id=cid, genome=genome,
                parent_id=ctx.parent.candidate.id,
                generation=ctx.parent.candidate.generation + 1,
                origin=origin,
            )
            entry = ArchiveEntry(candidate=candidate,
                                 record=make_record(cid, scores, failures),
                                 island=island)
            outcome = archive.insert(entry)
            spent += 1
            if failures and len(failures) == len(specs):
                diagnostics.append(f"{cid}: all tasks failed "
                                   f"({sorted(set(failures.values()))}); "
                                   f"insert {outcome.status}")
            best_so_far = max(best_so_far, self._phase_best(archive, task_id))
            trajectory.append(best_so_far)

            if iteration % settings.archive.migration_interval == 0:
                archive.migrate()
            if (settings.checkpoint_every and settings.checkpoint_dir
                    and checkpoint_tag
                    and iteration % settings.checkpoint_every == 0):
                path = Path(settings.checkpoint_dir) / f"{checkpoint_tag}-{iteration:06d}.ckpt"
                archive.save_checkpoint(
                    path, iteration=iteration, budget_spent=spent,
                    rng_state=rng.bit_generator.state,
                    extra={"trajectory": trajectory,
                           "evaluator_calls": evaluator_calls,
                           "phase": phase, "task_id": task_id},
                )
        return PhaseResult(archive=archive, trajectory=trajectory, spent=spent,
                           evaluator_calls=evaluator_calls,
                           diagnostics=diagnostics)

    def _phase_best(self, archive: Archive, task_id: str | None) -> float:
        if len(archive) == 0:
            return 0.0
        if task_id is None:
            return archive.best_by_shared().record.shared_score
        return archive.best_by_task(task_id).record.task_scores[task_id]

    # -- phases ---------------------------------------------------------------

    def run_shared(self, iterations: int, seed: int,
                   resume_from=None) -> PhaseResult:
        """Shared evolution: every candidate scored on all K tasks, ranked by
        the family average, per-task scores cached in the archive. S = 0
        returns an empty archive.
        """
        specs = list(self.family.tasks)
        if resume_from is not None:
            checkpoint = load_checkpoint(resume_from)
            archive = checkpoint.archive
            rng = rng_for(seed, "shared")
            rng.bit_generator.state = checkpoint.rng_state
            return self._evolve(
                archive, specs, iterations, rng, phase="shared", task_id=None,
                id_prefix="sh", origin="shared-phase",
                start_iteration=checkpoint.iteration,
                trajectory=checkpoint.extra.get("trajectory", []),
                spent=checkpoint.budget_spent,
                evaluator_calls=checkpoint.extra.get("evaluator_calls", 0),
                checkpoint_tag=f"shared-s{seed}",
            )

        archive = Archive(self.settings.archive, ranking="shared")
        rng = rng_for(seed, "shared")
        if iterations < 1:
            return PhaseResult(archive=archive, trajectory=[], spent=0,
                               evaluator_calls=0)
        archive.seed_with(self._seed_entries(specs, "sh-"))
        return self._evolve(archive, specs, iterations, rng, phase="shared",
                            task_id=None, id_prefix="sh", origin="shared-phase",
                            checkpoint_tag=f"shared-s{seed}")

    def _seed_fallback_archive(self, task_id: str, id_prefix: str) -> Archive:
        archive = Archive(self.settings.archive, ranking="task", rank_task=task_id)
        spec = self.family.task(task_id)
        archive.seed_with(self._seed_entries([spec], id_prefix))
        return archive

    def run_adaptation(self, shared: Archive | None, task_id: str, variant: str,
                       iterations: int, seed: int) -> PhaseResult:
        """Task-local evolution from a projected initialization, ranked by the
        single task score. An empty shared archive degrades to the family
        seed program (with a warning) for any variant.
        """
        if variant not in STA_VARIANTS:
            raise ConfigError(f"unknown adaptation variant {variant!r}")
        spec = self.family.task(task_id)
        if shared is None or len(shared) == 0:
            log.warning("empty shared archive: %s/%s falls back to the family seed",
                        variant, task_id)
            archive = self._seed_fallback_archive(task_id, f"{variant[:2]}-{task_id}-")
        else:
            projected = shared.project(task_id, variant)
            archive = Archive(self.settings.archive, ranking="task", rank_task=task_id)
            if variant == "warmstart":
                archive.seed_with(projected)
            else:
                singleton = projected[0]
                clones = [clone_entry_for_island(singleton, k, f"@{variant}-i{k}")
                          for k in range(self.settings.archive.islands)]
                archive.seed_with(clones)

        rng = rng_for(seed, "adapt", variant, task_id)
        initial_best = self._phase_best(archive, task_id)
        result = self._evolve(archive, [spec], iterations, rng,
                              phase="adaptation", task_id=task_id,
                              id_prefix=f"ad-{variant[:2]}-", origin="adaptation-phase",
                              trajectory=[initial_best],
                              checkpoint_tag=f"adapt-{variant}-{task_id}-s{seed}")
        best = archive.best_by_task(task_id)
        result.final_score = best.record.task_scores[task_id]
        result.best_genome = best.candidate.genome
        return result

    def run_single_task(self, task_id: str, iterations: int, seed: int) -> PhaseResult:
        """Matched baseline: evolve one task from the family seed program."""
        archive = self._seed_fallback_archive(task_id, f"st-{task_id}-")
        rng = rng_for(seed, "single", task_id)
        initial_best = self._phase_best(archive, task_id)
        result = self._evolve(archive, [self.family.task(task_id)], iterations,
                              rng, phase="adaptation", task_id=task_id,
                              id_prefix="st-", origin="adaptation-phase",
                              trajectory=[initial_best],
                              checkpoint_tag=f"single-{task_id}-s{seed}")
        best = archive.best_by_task(task_id)
        result.final_score = best.record.task_scores[task_id]
        result.best_genome = best.candidate.genome
        return result

    # -- experiments ----------------------------------------------------------

    def run_matched_experiment(self, plan: BudgetPlan, seeds,
                               variants=STA_VARIANTS) -> ExperimentResult:
        """One shared run per seed, reused by every adaptation variant, plus
        the K independent single-task baselines at the matched budget B.
        """
        if plan.tasks != self.family.task_count:
            raise ConfigError(
                f"plan says K={plan.tasks} but family has {self.family.task_count} tasks"
            )
        for variant in variants:
            if variant not in STA_VARIANTS:
                raise ConfigError(f"unknown variant {variant!r}")
        runs = [self._run_one_seed(plan, int(seed), tuple(variants))
                for seed in seeds]
        return ExperimentResult(family_id=self.family.family_id, plan=plan,
                                runs=runs)

    def _run_one_seed(self, plan: BudgetPlan, seed: int, variants,
                      baselines: dict | None = None) -> RunResult:
        task_ids = [t.task_id for t in self.family.tasks]
        shared = self.run_shared(plan.shared, seed)

        before = None
        before_mean = None
        if len(shared.archive) > 0:
            best_shared_entry = shared.archive.best_by_shared()
            before = {t: best_shared_entry.record.task_scores[t] for t in task_ids}
            before_mean = float(np.mean([before[t] for t in task_ids]))

        scores: dict[str, dict[str, float]] = {}
        trajectories: dict[str, list[float]] = {"shared": shared.trajectory}
        adapted: dict[str, dict[str, dict]] = {}
        adapt_ledger: dict[str, int] = {}
        evaluator_calls = shared.evaluator_calls

        for variant in variants:
            scores[variant] = {}
            adapted[variant] = {}
            for task_id in task_ids:
                result = self.run_adaptation(shared.archive, task_id, variant,
                                             plan.adapt, seed)
                scores[variant][task_id] = result.final_score
                adapted[variant][task_id] = result.best_genome.to_dict()
                trajectories[f"{variant}:{task_id}"] = result.trajectory
                adapt_ledger[f"{variant}:{task_id}"] = result.spent
                evaluator_calls += result.evaluator_calls

        scores[SINGLE_TASK] = {}
        adapted[SINGLE_TASK] = {}
        baseline_ledger: dict[str, int] = {}
        for task_id in task_ids:
            if baselines is not None and task_id in baselines:
                result = baselines[task_id]
            else:
                result = self.run_single_task(task_id, plan.baseline, seed)
            scores[SINGLE_TASK][task_id] = result.final_score
            adapted[SINGLE_TASK][task_id] = result.best_genome.to_dict()
            trajectories[f"{SINGLE_TASK}:{task_id}"] = result.trajectory
            baseline_ledger[task_id] = result.spent
            evaluator_calls += result.evaluator_calls

        family_means = {name: float(np.mean([scores[name][t] for t in task_ids]))
                        for name in scores}
        ledger = {
            "shared_iterations": shared.spent,
            "adaptation_iterations": adapt_ledger,
            "baseline_iterations": baseline_ledger,
            "sta_total_per_variant": shared.spent + plan.tasks * plan.adapt,
            "baseline_total": sum(baseline_ledger.values()),
            "evaluator_calls": evaluator_calls,
        }
        self._check_ledger(plan, ledger, variants)
        return RunResult(
            family_id=self.family.family_id, plan=plan, seed=seed,
            variant_task_scores=scores, family_means=family_means,
            before_adaptation=before, before_adaptation_mean=before_mean,
            ledger=ledger, trajectories=trajectories, adapted_genomes=adapted,
        )

    def _check_ledger(self, plan: BudgetPlan, ledger: dict, variants) -> None:
        if ledger["shared_iterations"] != plan.shared:
            raise ConfigError("ledger mismatch: shared phase overspent")
        for variant in variants:
            spent = sum(v for k, v in ledger["adaptation_iterations"].items()
                        if k.startswith(f"{variant}:"))
            if spent != plan.tasks * plan.adapt:
                raise ConfigError(f"ledger mismatch: {variant} adaptation spend {spent}")
            if ledger["shared_iterations"] + spent != plan.total:
                raise ConfigError("ledger mismatch: STA total does not match plan")
        if ledger["baseline_total"] != plan.tasks * plan.baseline:
            raise ConfigError("ledger mismatch: baseline spend")

    def run_allocation_sweep(self, total: int, splits, seeds,
                             variants=STA_VARIANTS) -> list[dict]:
        """Matched experiments for several (S, A) divisions of one fixed
        family-level total. The (0, B) split is the pure single-task baseline
        row. Baseline runs are shared across splits (they only depend on B).
        """
        tasks = self.family.task_count
        if total % tasks != 0:
            raise ConfigError(f"total {total} not divisible by K={tasks}")
        baseline_budget = total // tasks
        plans = []
        for shared_iters, adapt_iters in splits:
            if shared_iters + tasks * adapt_iters != total:
                raise ConfigError(
                    f"split (S={shared_iters}, A={adapt_iters}) does not spend "
                    f"total {total} with K={tasks}"
                )
            plans.append(BudgetPlan.from_shared_adapt(shared_iters, adapt_iters, tasks))

        baseline_cache: dict[int, dict[str, PhaseResult]] = {}

        def baselines_for(seed: int) -> dict[str, PhaseResult]:
            if seed not in baseline_cache:
                baseline_cache[seed] = {
                    t.task_id: self.run_single_task(t.task_id, baseline_budget, seed)
                    for t in self.family.tasks
                }
            return baseline_cache[seed]

        rows = []
        for plan in plans:
            if plan.shared == 0:
                # Pure baseline cell: no shared phase to run.
                task_ids = [t.task_id for t in self.family.tasks]
                per_seed = []
                for seed in seeds:
                    results = baselines_for(int(seed))
                    per_seed.append({t: results[t].final_score for t in task_ids})
                means = [float(np.mean([s[t] for t in task_ids])) for s in per_seed]
                rows.append({
                    "allocation": plan.label,
                    "plan": plan,
                    "single_task_only": True,
                    "summary": {SINGLE_TASK: {"family": _mean_std(means)}},
                })
                continue
            runs = [self._run_one_seed(plan, int(seed), tuple(variants),
                                       baselines=baselines_for(int(seed)))
                    for seed in seeds]
            experiment = ExperimentResult(self.family.family_id, plan, runs)
            rows.append({
                "allocation": plan.label,
                "plan": plan,
                "single_task_only": False,
                "summary": experiment.summary()["variants"],
                "runs": runs,
            })
        return rows

    def run_ood_eval(self, adapted: dict[str, CandidateGenome]) -> OODResult:
        """Evaluate adapted programs on every holdout task, no further
        evolution. ``adapted`` maps source task id -> final program.
        """
        holdouts = list(self.family.holdouts)
        if not holdouts:
            raise ConfigError(
                f"family {self.family.family_id!r} defines no holdout tasks"
            )
        sources = [t.task_id for t in self.family.tasks]
        matrix: dict[str, dict[str, float]] = {}
        for source in sources:
            if source not in adapted:
                raise ConfigError(f"no adapted program for source task {source!r}")
            genome = adapted[source]
            row = {}
            for holdout in holdouts:
                result = evaluate_genome(genome, holdout,
                                         mode=self.settings.eval_mode,
                                         limits=self.settings.limits)
                row[holdout.task_id] = result.score
            matrix[source] = row
        return OODResult(family_id=self.family.family_id, source_tasks=sources,
                         holdout_tasks=[t.task_id for t in holdouts],
                         matrix=matrix)
