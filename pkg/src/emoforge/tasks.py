"""Task and family definitions.

Families are data, not code: the built-ins ship as an embedded JSON manifest
(``data/families.json``) and user-defined families load from the same schema
via ``load_manifest``. Each family is a list of in-distribution tasks sharing
one evaluator kind, plus optional evaluation-only holdout tasks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Any

from .errors import ConfigError, UnknownFamilyError

EVALUATOR_KINDS = frozenset(
    {"function_min", "circle_square", "circle_rect", "heilbronn", "k_module"}
)

# Kinds whose raw metric is divided by a fixed per-task reference value.
NORMALIZING_KINDS = frozenset({"circle_square", "circle_rect", "heilbronn"})

MANIFEST_SCHEMA = "emoforge-families-1"

BUILTIN_FAMILY_NAMES = (
    "function_minimization",
    "circle_packing",
    "circle_packing_rect",
    "heilbronn",
    "k_module",
)


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    family_id: str
    evaluator_kind: str
    params: dict[str, Any]
    reference_target: float | None = None
    role: str = "in_distribution"

    def __post_init__(self):
        if self.evaluator_kind not in EVALUATOR_KINDS:
            raise ConfigError(f"unknown evaluator kind {self.evaluator_kind!r}")
        if self.evaluator_kind in NORMALIZING_KINDS:
            if self.reference_target is None or self.reference_target <= 0:
                raise ConfigError(
                    f"task {self.task_id!r}: evaluator {self.evaluator_kind!r} "
                    "requires a positive reference_target"
                )
        if self.role not in ("in_distribution", "holdout"):
            raise ConfigError(f"task {self.task_id!r}: bad role {self.role!r}")


@dataclass(frozen=True)
class FamilySpec:
    family_id: str
    tasks: tuple[TaskSpec, ...]
    holdouts: tuple[TaskSpec, ...]
    interface_descriptor: str
    # Non-contract extras: seed genome descriptor and family-level data such as
    # the k-module catalog/consensus.
    seed_spec: dict[str, Any] = field(default_factory=dict)
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.tasks) < 1:
            raise ConfigError(f"family {self.family_id!r} has no tasks")
        kinds = {t.evaluator_kind for t in self.tasks} | {
            t.evaluator_kind for t in self.holdouts
        }
        if len(kinds) != 1:
            raise ConfigError(
                f"family {self.family_id!r} mixes evaluator kinds: {sorted(kinds)}"
            )
        ids = [t.task_id for t in self.tasks] + [t.task_id for t in self.holdouts]
        if len(ids) != len(set(ids)):
            raise ConfigError(f"family {self.family_id!r} has duplicate task ids")

    @property
    def evaluator_kind(self) -> str:
        return self.tasks[0].evaluator_kind

    @property
    def task_count(self) -> int:
        return len(self.tasks)

    def task(self, task_id: str):
        for t in self.tasks + self.holdouts:
            if t.task_id == task_id:
                return t
        from .errors import UnknownTaskError

        raise UnknownTaskError(f"no task {task_id!r} in family {self.family_id!r}")


def normalize(raw: float, spec: TaskSpec) -> float:
    """Divide a raw metric by the task's reference target (geometric kinds).

    The ratio is deliberately uncapped: values above 1.0 mean the candidate
    beat the reference. Non-normalizing kinds pass through unchanged.
    """
    if spec.evaluator_kind in NORMALIZING_KINDS:
        if spec.reference_target is None or spec.reference_target <= 0:
            raise ConfigError(
                f"task {spec.task_id!r} has no positive reference target"
            )
        return raw / spec.reference_target
    return raw


def _build_task(raw: dict, family_id: str, kind: str, role: str,
                shared_params: dict | None = None) -> TaskSpec:
    if "task_id" not in raw or "params" not in raw:
        raise ConfigError(f"family {family_id!r}: task entries need task_id and params")
    params = dict(shared_params or {})
    params.update(raw["params"])
    return TaskSpec(
        task_id=raw["task_id"],
        family_id=family_id,
        evaluator_kind=kind,
        params=params,
        reference_target=raw.get("target"),
        role=role,
    )


def _validate_k_module(family_id: str, modules: dict, consensus: dict,
                       tasks: list[TaskSpec]) -> None:
    if len(modules) != 6 or any(len(opts) != 6 for opts in modules.values()):
        raise ConfigError(f"family {family_id!r}: k_module catalog must be 6 modules x 6 options")
    for m, opt in consensus.items():
        if m not in modules or opt not in modules[m]:
            raise ConfigError(f"family {family_id!r}: consensus option {opt!r} not in catalog")
    if set(consensus) != set(modules):
        raise ConfigError(f"family {family_id!r}: consensus must cover all modules")
    for t in tasks:
        target = t.params.get("hidden_target")
        if not isinstance(target, dict) or set(target) != set(modules):
            raise ConfigError(f"task {t.task_id!r}: hidden_target must cover all modules")
        for m, opt in target.items():
            if opt not in modules[m]:
                raise ConfigError(f"task {t.task_id!r}: illegal option {opt!r} for {m!r}")
        agreements = sum(1 for m in modules if target[m] == consensus[m])
        if agreements != 3:
            raise ConfigError(
                f"task {t.task_id!r}: hidden target agrees with consensus on "
                f"{agreements} modules, expected exactly 3"
            )


def _build_family(raw: dict) -> FamilySpec:
    for key in ("family_id", "evaluator_kind", "tasks"):
        if key not in raw:
            raise ConfigError(f"family entry missing {key!r}")
    family_id = raw["family_id"]
    kind = raw["evaluator_kind"]
    if kind not in EVALUATOR_KINDS:
        raise ConfigError(f"family {family_id!r}: unknown evaluator kind {kind!r}")

    shared: dict[str, Any] = {}
    meta: dict[str, Any] = {}
    if kind == "k_module":
        modules = raw.get("modules")
        consensus = raw.get("consensus")
        if not modules or not consensus:
            raise ConfigError(f"family {family_id!r}: k_module needs modules and consensus")
        shared["modules"] = modules
        meta["modules"] = modules
        meta["consensus"] = consensus

    tasks = [_build_task(t, family_id, kind, "in_distribution", shared)
             for t in raw["tasks"]]
    holdouts = [_build_task(t, family_id, kind, "holdout", shared)
                for t in raw.get("holdouts", [])]

    if kind == "k_module":
        _validate_k_module(family_id, meta["modules"], meta["consensus"],
                           tasks + holdouts)
    if kind == "function_min":
        for t in tasks + holdouts:
            bounds = t.params.get("bounds")
            offset = t.params.get("offset")
            if (not isinstance(bounds, list) or len(bounds) != 2
                    or any(len(b) != 2 or b[0] >= b[1] for b in bounds)):
                raise ConfigError(f"task {t.task_id!r}: bounds must be two (lo, hi) pairs")
            if not isinstance(offset, list) or len(offset) != 2:
                raise ConfigError(f"task {t.task_id!r}: offset must be a 2-vector")

    return FamilySpec(
        family_id=family_id,
        tasks=tuple(tasks),
        holdouts=tuple(holdouts),
        interface_descriptor=raw.get("interface", ""),
        seed_spec=dict(raw.get("seed", {})),
        meta=meta,
    )


def parse_manifest(data: dict) -> dict[str, FamilySpec]:
    if data.get("schema") != MANIFEST_SCHEMA:
        raise ConfigError(
            f"manifest schema must be {MANIFEST_SCHEMA!r}, got {data.get('schema')!r}"
        )
    families = {}
    for raw in data.get("families", []):
        spec = _build_family(raw)
        if spec.family_id in families:
            raise ConfigError(f"duplicate family id {spec.family_id!r} in manifest")
        families[spec.family_id] = spec
    if not families:
        raise ConfigError("manifest defines no families")
    return families


def load_manifest(path) -> dict[str, FamilySpec]:
    """Load and validate a family manifest file (JSON, schema above)."""
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"manifest {path}: invalid JSON ({exc})") from exc
    return parse_manifest(data)


_BUILTINS: dict[str, FamilySpec] | None = None


def _builtins() -> dict[str, FamilySpec]:
    global _BUILTINS
    if _BUILTINS is None:
        text = resources.files("emoforge").joinpath("data/families.json").read_text("utf-8")
        _BUILTINS = parse_manifest(json.loads(text))
    return _BUILTINS


def builtin_family(name: str) -> FamilySpec:
    families = _builtins()
    if name not in families:
        raise UnknownFamilyError(
            f"unknown family {name!r}; built-ins: {', '.join(sorted(families))}"
        )
    return families[name]
