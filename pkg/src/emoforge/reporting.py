"""Result records, aggregate tables, and SVG plots.

Results are an append-only JSONL log: one record per (run, variant) with the
config hash, budgets, seed, per-task scores, and the family mean. Records are
written with sorted keys so identical runs produce byte-identical lines.
Reporting is a pure function of the results directory: it aggregates stored
scores and never re-runs an evaluator.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

import numpy as np

from .engine import SINGLE_TASK, RunResult

RESULTS_NAME = "results.jsonl"

BEFORE_ADAPTATION = "best_shared_before_adaptation"

VARIANT_LABELS = {
    "best_local": "STA Best-Local",
    "warmstart": "STA Warmstart",
    "best_shared": "STA Best-Shared",
    SINGLE_TASK: "Single-task",
    BEFORE_ADAPTATION: "STA Best-Shared (Before Adaptation)",
}

# Paper-style cell layout: first line Best-Local / Warmstart, second line
# Best-Shared / Single-task.
CELL_ORDER = (("best_local", "warmstart"), ("best_shared", SINGLE_TASK))


def result_records(result: RunResult, config_hash: str) -> list[dict]:
    """Expand one run into per-variant result records."""
    records = []
    for variant, task_scores in result.variant_task_scores.items():
        records.append({
            "config_hash": config_hash,
            "family": result.family_id,
            "variant": variant,
            "budget": result.plan.label,
            "seed": result.seed,
            "task_scores": dict(sorted(task_scores.items())),
            "family_mean": result.family_means[variant],
        })
    if result.before_adaptation is not None:
        records.append({
            "config_hash": config_hash,
            "family": result.family_id,
            "variant": BEFORE_ADAPTATION,
            "budget": result.plan.label,
            "seed": result.seed,
            "task_scores": dict(sorted(result.before_adaptation.items())),
            "family_mean": result.before_adaptation_mean,
        })
    return records


def record_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True)


def append_records(path: Path, records: list[dict]) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        for record in records:
            fh.write(record_line(record) + "\n")


def load_records(results_dir: Path) -> list[dict]:
    path = Path(results_dir) / RESULTS_NAME
    if not path.exists():
        return []
    records = []
    for line_no, line in enumerate(path.read_text("utf-8").splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{line_no}: bad record: {exc}") from exc
    return records


def _mean_std(values):
    arr = np.asarray(values, dtype=float)
    std = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
    return float(arr.mean()), std, len(arr)


def aggregate(records: list[dict]) -> dict:
    """Group records by (family, budget) then variant; mean +- std over seeds."""
    groups: dict[tuple[str, str], dict[str, list[dict]]] = defaultdict(
        lambda: defaultdict(list)
    )
    for record in records:
        groups[(record["family"], record["budget"])][record["variant"]].append(record)

    table: dict = {}
    for key, variants in sorted(groups.items()):
        block: dict[str, dict] = {}
        for variant, rows in sorted(variants.items()):
            means = [r["family_mean"] for r in rows]
            mean, std, n = _mean_std(means)
            task_ids = sorted({t for r in rows for t in r["task_scores"]})
            tasks = {}
            for task_id in task_ids:
                values = [r["task_scores"][task_id] for r in rows
                          if task_id in r["task_scores"]]
                tasks[task_id] = _mean_std(values)
            block[variant] = {"family": (mean, std, n), "tasks": tasks,
                              "seeds": sorted(r["seed"] for r in rows)}
        table[key] = block
    return table


def fmt_cell(stat) -> str:
    if stat is None:
        return "-"
    mean, std, _ = stat
    return f"{mean:.3f} ± {std:.3f}"


def render_report_text(table: dict) -> str:
    lines = []
    for (family, budget), block in table.items():
        lines.append(f"family: {family}")
        lines.append(f"budget (Shared / Per-task Adapt / Total): {budget}")
        seeds = next(iter(block.values()))["seeds"] if block else []
        lines.append(f"seeds: {len(set(seeds))}")
        for top, bottom in CELL_ORDER:
            left = fmt_cell(block.get(top, {}).get("family"))
            right = fmt_cell(block.get(bottom, {}).get("family"))
            lines.append(f"  {VARIANT_LABELS[top]} / {VARIANT_LABELS[bottom]}: "
                         f"{left} / {right}")
        if BEFORE_ADAPTATION in block:
            lines.append(f"  {VARIANT_LABELS[BEFORE_ADAPTATION]}: "
                         f"{fmt_cell(block[BEFORE_ADAPTATION]['family'])}")
        lines.append("  per-task means:")
        for variant in sorted(block):
            parts = [f"{tid}={fmt_cell(stat)}"
                     for tid, stat in sorted(block[variant]["tasks"].items())]
            lines.append(f"    {VARIANT_LABELS.get(variant, variant)}: "
                         + "; ".join(parts))
        lines.append("")
    return "\n".join(lines)


def write_report_csv(table: dict, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["family", "budget", "variant", "task", "mean", "std", "n"])
        for (family, budget), block in table.items():
            for variant, stats in sorted(block.items()):
                mean, std, n = stats["family"]
                writer.writerow([family, budget, variant, "__family_mean__",
                                 repr(mean), repr(std), n])
                for task_id, stat in sorted(stats["tasks"].items()):
                    tmean, tstd, tn = stat
                    writer.writerow([family, budget, variant, task_id,
                                     repr(tmean), repr(tstd), tn])


# ---------------------------------------------------------------------------
# Minimal SVG bar charts (no plotting dependency)
# ---------------------------------------------------------------------------

_BAR_COLORS = {
    "best_local": "#a9d8c8",
    "warmstart": "#7fb8a4",
    "best_shared": "#5a9a85",
    SINGLE_TASK: "#f6c8b8",
    BEFORE_ADAPTATION: "#c9c9c9",
}


def render_bar_svg(title: str, bars: list[tuple[str, float, float]],
                   width: int = 640, height: int = 360) -> str:
    """Grouped bar chart with one bar per (label, mean, std) triple."""
    margin_left, margin_bottom, margin_top = 60, 80, 40
    plot_w = width - margin_left - 20
    plot_h = height - margin_bottom - margin_top
    top = max([m + s for _, m, s in bars] + [1.0])
    scale = plot_h / top
    slot = plot_w / max(1, len(bars))
    bar_w = slot * 0.6

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
        f'<line x1="{margin_left}" y1="{margin_top}" x2="{margin_left}" '
        f'y2="{height - margin_bottom}" stroke="black"/>',
        f'<line x1="{margin_left}" y1="{height - margin_bottom}" x2="{width - 20}" '
        f'y2="{height - margin_bottom}" stroke="black"/>',
    ]
    for tick in np.linspace(0.0, top, 6):
        y = height - margin_bottom - tick * scale
        parts.append(f'<line x1="{margin_left - 4}" y1="{y:.1f}" '
                     f'x2="{margin_left}" y2="{y:.1f}" stroke="black"/>')
        parts.append(f'<text x="{margin_left - 8}" y="{y + 4:.1f}" '
                     f'text-anchor="end" font-family="sans-serif" '
                     f'font-size="10">{tick:.2f}</text>')
    for i, (label, mean, std) in enumerate(bars):
        x = margin_left + i * slot + (slot - bar_w) / 2
        bar_h = max(0.0, mean) * scale
        y = height - margin_bottom - bar_h
        color = _BAR_COLORS.get(label, "#999999")
        parts.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w:.1f}" '
                     f'height="{bar_h:.1f}" fill="{color}" stroke="black"/>')
        if std > 0:
            cx = x + bar_w / 2
            y_low = height - margin_bottom - max(0.0, mean - std) * scale
            y_high = height - margin_bottom - (mean + std) * scale
            parts.append(f'<line x1="{cx:.1f}" y1="{y_high:.1f}" x2="{cx:.1f}" '
                         f'y2="{y_low:.1f}" stroke="black"/>')
        text = VARIANT_LABELS.get(label, label)
        parts.append(f'<text x="{x + bar_w / 2:.1f}" y="{height - margin_bottom + 14:.1f}" '
                     f'text-anchor="end" font-family="sans-serif" font-size="10" '
                     f'transform="rotate(-35 {x + bar_w / 2:.1f} '
                     f'{height - margin_bottom + 14:.1f})">{text}</text>')
        parts.append(f'<text x="{x + bar_w / 2:.1f}" y="{y - 4:.1f}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="10">{mean:.3f}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def write_report(results_dir: Path, report_dir: Path) -> dict:
    """Build report.txt, report.csv, and one SVG per (family, budget)."""
    records = load_records(results_dir)
    table = aggregate(records)
    report_dir = Path(report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)

    (report_dir / "report.txt").write_text(render_report_text(table), "utf-8")
    write_report_csv(table, report_dir / "report.csv")

    order = ["best_local", "warmstart", "best_shared", SINGLE_TASK, BEFORE_ADAPTATION]
    for (family, budget), block in table.items():
        bars = [(v, *block[v]["family"][:2]) for v in order if v in block]
        svg = render_bar_svg(f"{family} @ {budget}", bars)
        safe_budget = budget.replace(" ", "").replace("/", "-")
        (report_dir / f"{family}_{safe_budget}.svg").write_text(svg, "utf-8")
    return table


def render_ood_text(family: str, variant: str, sources, holdouts,
                    matrix, means) -> str:
    lines = [f"OOD matrix: family={family} variant={variant}",
             "rows = adaptation source task, columns = holdout task"]
    header = ["source".ljust(24)] + [h.rjust(18) for h in holdouts]
    lines.append(" ".join(header))
    for source in sources:
        row = [source.ljust(24)]
        row += [f"{matrix[source][h]:.4f}".rjust(18) for h in holdouts]
        lines.append(" ".join(row))
    mean_row = ["mean_over_sources".ljust(24)]
    mean_row += [f"{means[h]:.4f}".rjust(18) for h in holdouts]
    lines.append(" ".join(mean_row))
    return "\n".join(lines)


def write_ood_csv(path: Path, sources, holdouts, matrix, means) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source"] + list(holdouts))
        for source in sources:
            writer.writerow([source] + [repr(matrix[source][h]) for h in holdouts])
        writer.writerow(["mean_over_sources"] + [repr(means[h]) for h in holdouts])
