"""Command-line front end.

Verbs: run, sweep, ood, report, validate-config. Configuration comes from a
JSON file plus flag overrides; every result-affecting setting feeds the config
hash. Exit codes: 0 success, 2 configuration error, 3 runtime failure.

Output layout under --out:
    results.jsonl                  append-only result records
    runs/<hash>-s<seed>/           per-run artifacts (genomes, trajectories,
                                   meta.json with wall time, checkpoints/)
    report/                        tables, plots, and OOD matrices
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .archive import ArchiveConfig
from .engine import (
    SINGLE_TASK,
    STA_VARIANTS,
    BudgetPlan,
    Engine,
    EngineSettings,
)
from .errors import ConfigError, EmoforgeError
from .execution import CandidateGenome, ExecLimits
from .mutators import DeterministicMutator, LLMConfig, LLMMutator, ReplayMutator
from .reporting import (
    aggregate,
    append_records,
    render_ood_text,
    render_report_text,
    result_records,
    write_ood_csv,
    write_report,
)
from .tasks import FamilySpec, builtin_family, load_manifest

log = logging.getLogger("emoforge.cli")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

DEFAULT_CONFIG: dict = {
    "family": None,
    "manifest": None,
    "variants": list(STA_VARIANTS),
    "budget": None,         # {"shared": S, "adapt": A}
    "sweep": None,          # {"total": T, "splits": [[S, A], ...]}
    "seeds": [0],
    "mutator": {"backend": "deterministic"},
    "eval_mode": "full",
    "archive": {},
    "limits": {},
    "out": "out",
    "jobs": 1,
    "checkpoint_every": 0,
    "trace_llm": False,
}

# Settings that change results and therefore feed the config hash.
_HASHED_KEYS = ("family", "variants", "budget", "sweep", "seeds", "mutator",
                "eval_mode", "archive", "limits")


def load_config(path: str | None) -> dict:
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} line {exc.lineno}: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path}: top level must be an object")
        unknown = set(data) - set(DEFAULT_CONFIG)
        if unknown:
            raise ConfigError(f"config {path}: unknown fields {sorted(unknown)}")
        config.update(data)
    return config


def apply_overrides(config: dict, args: argparse.Namespace) -> dict:
    if getattr(args, "family", None):
        config["family"] = args.family
    if getattr(args, "manifest", None):
        config["manifest"] = args.manifest
    if getattr(args, "shared", None) is not None or getattr(args, "adapt", None) is not None:
        budget = dict(config.get("budget") or {})
        if args.shared is not None:
            budget["shared"] = args.shared
        if args.adapt is not None:
            budget["adapt"] = args.adapt
        config["budget"] = budget
    if getattr(args, "seeds", None):
        config["seeds"] = [int(s) for s in args.seeds.split(",") if s.strip()]
    if getattr(args, "variants", None):
        config["variants"] = [v for v in args.variants.split(",") if v.strip()]
    if getattr(args, "backend", None):
        mutator = dict(config.get("mutator") or {})
        mutator["backend"] = args.backend
        config["mutator"] = mutator
    if getattr(args, "eval_mode", None):
        config["eval_mode"] = args.eval_mode
    if getattr(args, "out", None):
        config["out"] = args.out
    if getattr(args, "jobs", None) is not None:
        config["jobs"] = args.jobs
    if getattr(args, "checkpoint_every", None) is not None:
        config["checkpoint_every"] = args.checkpoint_every
    if getattr(args, "trace_llm", False):
        config["trace_llm"] = True
    return config


def config_hash(config: dict) -> str:
    manifest_digest = None
    if config.get("manifest"):
        manifest_digest = hashlib.sha256(
            Path(config["manifest"]).read_bytes()
        ).hexdigest()
    subset = {key: config.get(key) for key in _HASHED_KEYS}
    subset["manifest_digest"] = manifest_digest
    blob = json.dumps(subset, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


def build_family(config: dict) -> FamilySpec:
    name = config.get("family")
    if not name:
        raise ConfigError("no family configured (set 'family' or --family)")
    if config.get("manifest"):
        families = load_manifest(config["manifest"])
        if name not in families:
            raise ConfigError(
                f"family {name!r} not in manifest {config['manifest']} "
                f"(has: {', '.join(sorted(families))})"
            )
        return families[name]
    return builtin_family(name)


def build_mutator(config: dict):
    mutator = dict(config.get("mutator") or {})
    backend = mutator.pop("backend", "deterministic")
    try:
        if backend == "deterministic":
            return DeterministicMutator(**mutator)
        if backend == "replay":
            fixture = mutator.get("fixture")
            if not fixture:
                raise ConfigError("replay backend needs mutator.fixture")
            return ReplayMutator(fixture_path=fixture)
        if backend == "llm":
            mutator.setdefault("trace", bool(config.get("trace_llm")))
            llm = LLMConfig(**mutator)
            if not os.environ.get(llm.api_key_env):
                raise ConfigError(
                    f"llm backend configured but {llm.api_key_env} is not set"
                )
            return LLMMutator(llm)
    except TypeError as exc:
        raise ConfigError(f"bad mutator settings: {exc}") from exc
    raise ConfigError(f"unknown mutator backend {backend!r}")


def build_settings(config: dict, checkpoint_dir: Path | None = None) -> EngineSettings:
    try:
        archive = ArchiveConfig(**config.get("archive", {}))
        limits_cfg = dict(config.get("limits") or {})
        launchers = limits_cfg.pop("launchers", {})
        limits = ExecLimits(launchers={k: list(v) for k, v in launchers.items()},
                            **limits_cfg)
    except TypeError as exc:
        raise ConfigError(f"bad archive/limits settings: {exc}") from exc
    if config["eval_mode"] not in ("full", "cascade"):
        raise ConfigError(f"unknown eval_mode {config['eval_mode']!r}")
    return EngineSettings(
        archive=archive,
        eval_mode=config["eval_mode"],
        limits=limits,
        checkpoint_every=int(config.get("checkpoint_every") or 0),
        checkpoint_dir=checkpoint_dir,
    )


def validate_config(config: dict, need_budget: bool = True,
                    need_sweep: bool = False) -> BudgetPlan | None:
    """Full validation before any compute is spent."""
    family = build_family(config)
    for variant in config["variants"]:
        if variant not in STA_VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}")
    if not config["seeds"]:
        raise ConfigError("at least one seed is required")
    build_mutator(config)
    build_settings(config)

    plan = None
    if need_budget:
        budget = config.get("budget")
        if not budget or "shared" not in budget or "adapt" not in budget:
            raise ConfigError("budget.shared and budget.adapt are required")
        plan = BudgetPlan.from_shared_adapt(int(budget["shared"]),
                                            int(budget["adapt"]),
                                            family.task_count)
    if need_sweep:
        sweep = config.get("sweep")
        if not sweep or "total" not in sweep or "splits" not in sweep:
            raise ConfigError("sweep.total and sweep.splits are required")
        total, tasks = int(sweep["total"]), family.task_count
        if total % tasks != 0:
            raise ConfigError(f"sweep total {total} not divisible by K={tasks}")
        for split in sweep["splits"]:
            s, a = int(split[0]), int(split[1])
            if s + tasks * a != total:
                raise ConfigError(f"sweep split ({s}, {a}) does not spend {total}")
    return plan


def _make_engine(config: dict, run_dir: Path | None = None) -> Engine:
    family = build_family(config)
    checkpoint_dir = None
    if run_dir is not None and int(config.get("checkpoint_every") or 0) > 0:
        checkpoint_dir = run_dir / "checkpoints"
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
    settings = build_settings(config, checkpoint_dir)
    return Engine(family, build_mutator(config), settings)


def _seed_worker(config_json: str, seed: int, hash_: str) -> dict:
    """Run one (config, seed) matched experiment; used by the --jobs pool."""
    config = json.loads(config_json)
    out = Path(config["out"])
    run_dir = out / "runs" / f"{hash_}-s{seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    engine = _make_engine(config, run_dir)
    plan = BudgetPlan.from_shared_adapt(int(config["budget"]["shared"]),
                                        int(config["budget"]["adapt"]),
                                        engine.family.task_count)
    started = time.monotonic()
    result = engine.run_matched_experiment(plan, [seed],
                                           variants=tuple(config["variants"])).runs[0]
    wall = time.monotonic() - started

    (run_dir / "adapted_genomes.json").write_text(
        json.dumps(result.adapted_genomes, sort_keys=True, indent=1), "utf-8")
    (run_dir / "trajectories.json").write_text(
        json.dumps(result.trajectories, sort_keys=True), "utf-8")
    # Wall time lives here, outside the result records, so records stay
    # byte-identical across reruns of the same (config, seed).
    (run_dir / "meta.json").write_text(json.dumps({
        "config_hash": hash_,
        "family": result.family_id,
        "budget": result.plan.label,
        "seed": seed,
        "variants": list(config["variants"]),
        "wall_time_s": wall,
        "ledger": result.ledger,
    }, sort_keys=True, indent=1), "utf-8")
    return {"records": result_records(result, hash_), "seed": seed}


def cmd_run(args) -> int:
    config = apply_overrides(load_config(args.config), args)
    validate_config(config)
    hash_ = config_hash(config)
    out = Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)
    config_json = json.dumps(config, sort_keys=True)

    seeds = [int(s) for s in config["seeds"]]
    jobs = max(1, int(config.get("jobs") or 1))
    payloads = []
    if jobs == 1 or len(seeds) == 1:
        for seed in seeds:
            payloads.append(_seed_worker(config_json, seed, hash_))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_seed_worker, config_json, seed, hash_)
                       for seed in seeds]
            payloads = [f.result() for f in futures]

    payloads.sort(key=lambda p: seeds.index(p["seed"]))
    records = [record for payload in payloads for record in payload["records"]]
    append_records(out / "results.jsonl", records)

    table = aggregate(records)
    print(render_report_text(table))
    print(f"config hash: {hash_}")
    print(f"results: {out / 'results.jsonl'}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = apply_overrides(load_config(args.config), args)
    validate_config(config, need_budget=False, need_sweep=True)
    hash_ = config_hash(config)
    out = Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)

    engine = _make_engine(config)
    sweep = config["sweep"]
    splits = [(int(s), int(a)) for s, a in sweep["splits"]]
    rows = engine.run_allocation_sweep(int(sweep["total"]), splits,
                                       [int(s) for s in config["seeds"]],
                                       variants=tuple(config["variants"]))

    records = []
    summary_rows = []
    for row in rows:
        if not row["single_task_only"]:
            for run in row["runs"]:
                records.extend(result_records(run, hash_))
        summary_rows.append({
            "allocation": row["allocation"],
            "single_task_only": row["single_task_only"],
            "summary": _jsonable(row["summary"]),
        })
    if records:
        append_records(out / "results.jsonl", records)
    (out / "sweep.json").write_text(
        json.dumps({"config_hash": hash_, "total": sweep["total"],
                    "rows": summary_rows}, sort_keys=True, indent=1), "utf-8")

    print(f"allocation sweep: family={config['family']} total={sweep['total']}")
    header = "Shared / Per-task Adapt / Total"
    print(f"{header:>32} | " + " | ".join(
        f"{name:>14}" for name in list(config["variants"]) + [SINGLE_TASK]))
    for row in rows:
        cells = []
        for name in list(config["variants"]) + [SINGLE_TASK]:
            stats = row["summary"].get(name)
            if stats is None:
                cells.append(f"{'-':>14}")
            else:
                family_stats = stats["family"]
                cells.append(f"{family_stats['mean']:.3f} ± {family_stats['std']:.3f}".rjust(14))
        print(f"{row['allocation']:>32} | " + " | ".join(cells))
    print(f"sweep table: {out / 'sweep.json'}")
    return EXIT_OK


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def cmd_ood(args) -> int:
    config = apply_overrides(load_config(args.config), args)
    results_dir = Path(args.results or config["out"])
    family = build_family(config)
    if not family.holdouts:
        raise ConfigError(f"family {family.family_id!r} has no holdout tasks")
    engine = _make_engine(config)
    variants = list(config["variants"]) + [SINGLE_TASK]

    run_dirs = sorted((results_dir / "runs").glob("*-s*")) if (results_dir / "runs").exists() else []
    per_variant: dict[str, list] = {v: [] for v in variants}
    for run_dir in run_dirs:
        meta_path = run_dir / "meta.json"
        genomes_path = run_dir / "adapted_genomes.json"
        if not meta_path.exists() or not genomes_path.exists():
            continue
        meta = json.loads(meta_path.read_text("utf-8"))
        if meta.get("family") != family.family_id:
            continue
        adapted = json.loads(genomes_path.read_text("utf-8"))
        for variant in variants:
            if variant not in adapted:
                continue
            genomes = {task: CandidateGenome.from_dict(g)
                       for task, g in adapted[variant].items()}
            per_variant[variant].append(engine.run_ood_eval(genomes))

    report_dir = results_dir / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    emitted = 0
    for variant, results in per_variant.items():
        if not results:
            continue
        sources = results[0].source_tasks
        holdouts = results[0].holdout_tasks
        matrix = {
            src: {h: float(sum(r.matrix[src][h] for r in results) / len(results))
                  for h in holdouts}
            for src in sources
        }
        means = {h: float(sum(matrix[s][h] for s in sources) / len(sources))
                 for h in holdouts}
        print(render_ood_text(family.family_id, variant, sources, holdouts,
                              matrix, means))
        print()
        write_ood_csv(report_dir / f"ood_{family.family_id}_{variant}.csv",
                      sources, holdouts, matrix, means)
        emitted += 1
    if not emitted:
        print(f"no stored adapted programs for family {family.family_id!r} "
              f"under {results_dir}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"OOD matrices: {report_dir}")
    return EXIT_OK


def cmd_report(args) -> int:
    results_dir = Path(args.results)
    if not (results_dir / "results.jsonl").exists():
        raise ConfigError(f"no results.jsonl under {results_dir}")
    table = write_report(results_dir, results_dir / "report")
    print(render_report_text(table))
    print(f"report: {results_dir / 'report'}")
    return EXIT_OK


def cmd_validate(args) -> int:
    config = apply_overrides(load_config(args.config), args)
    need_sweep = bool(config.get("sweep"))
    need_budget = bool(config.get("budget")) or not need_sweep
    validate_config(config, need_budget=need_budget, need_sweep=need_sweep)
    print(f"config ok (hash {config_hash(config)})")
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--family", help="built-in family name or manifest family id")
    parser.add_argument("--manifest", help="family manifest file")
    parser.add_argument("--shared", type=int, help="shared-phase iterations S")
    parser.add_argument("--adapt", type=int, help="per-task adaptation iterations A")
    parser.add_argument("--seeds", help="comma-separated seed list")
    parser.add_argument("--variants", help="comma-separated adaptation variants")
    parser.add_argument("--backend", choices=["deterministic", "replay", "llm"])
    parser.add_argument("--eval-mode", dest="eval_mode", choices=["full", "cascade"])
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--jobs", type=int, help="parallel (config, seed) runs")
    parser.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    parser.add_argument("--trace-llm", dest="trace_llm", action="store_true")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emoforge",
        description="Shared-then-adapt multi-task evolutionary program search",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one matched experiment")
    _add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="compute-allocation sweep at fixed total")
    _add_common(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_ood = sub.add_parser("ood", help="evaluate stored adapted programs on holdouts")
    _add_common(p_ood)
    p_ood.add_argument("--results", help="results directory (defaults to --out)")
    p_ood.set_defaults(func=cmd_ood)

    p_report = sub.add_parser("report", help="aggregate a results directory")
    p_report.add_argument("--results", required=True)
    p_report.set_defaults(func=cmd_report)

    p_validate = sub.add_parser("validate-config", help="check a config and exit")
    _add_common(p_validate)
    p_validate.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EmoforgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # anything else is still a runtime failure (exit 3)
        log.debug("unexpected failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
