"""AUROC metrics and report aggregation.

Binary AUROC uses the rank-based Mann-Whitney formulation (ties count one
half); multi-class tasks are scored as the unweighted mean of one-vs-rest
AUROCs over classes present in the labels. Reports average over tasks first
and then over seeds, with the seed standard deviation alongside.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import DegenerateLabels


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """P(random positive outranks random negative), ties counted 1/2."""
    if len(scores) != len(labels):
        raise ValueError("scores and labels differ in length")
    n_pos = sum(1 for y in labels if y == 1)
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("AUROC needs at least one positive and one negative")

    # midranks: average rank within tied score groups
    order = sorted(range(len(scores)), key=lambda i: scores[i])
    ranks = [0.0] * len(scores)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        midrank = (i + j) / 2 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = midrank
        i = j + 1

    rank_sum_pos = sum(r for r, y in zip(ranks, labels) if y == 1)
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2
    return u / (n_pos * n_neg)


def auroc_ovr(scores: Sequence[Sequence[float]], labels: Sequence[int]) -> float:
    """Unweighted mean of one-vs-rest AUROC over classes with both outcomes."""
    if any(y < 0 for y in labels):
        raise ValueError("masked labels must be filtered before scoring")
    if not labels:
        raise DegenerateLabels("no samples")
    n_classes = len(scores[0])
    per_class = []
    for c in range(n_classes):
        binary = [1 if y == c else 0 for y in labels]
        if 0 < sum(binary) < len(binary):
            per_class.append(auroc([row[c] for row in scores], binary))
    if not per_class:
        raise DegenerateLabels("all samples share one class")
    return sum(per_class) / len(per_class)


@dataclass(frozen=True)
class MetricRow:
    site: str
    regime: str
    mode: str
    task: str
    seed: int
    auroc: float


def write_metrics_csv(rows: list[MetricRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["site", "regime", "mode", "task", "seed", "auroc"])
        for r in rows:
            writer.writerow([r.site, r.regime, r.mode, r.task, r.seed, f"{r.auroc:.6f}"])


def read_metrics_csv(path: str | Path) -> list[MetricRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append(
                MetricRow(
                    site=rec["site"],
                    regime=rec["regime"],
                    mode=rec["mode"],
                    task=rec["task"],
                    seed=int(rec["seed"]),
                    auroc=float(rec["auroc"]),
                )
            )
    return rows


def _mean(xs: Sequence[float]) -> float:
    return sum(xs) / len(xs)


def _std(xs: Sequence[float]) -> float:
    if len(xs) < 2:
        return 0.0
    m = _mean(xs)
    return math.sqrt(sum((x - m) ** 2 for x in xs) / (len(xs) - 1))


@dataclass(frozen=True)
class SummaryRow:
    site: str
    regime: str
    mode: str
    mean_auroc: float
    std_auroc: float
    n_seeds: int
    n_tasks: int


def summarize(rows: list[MetricRow]) -> list[SummaryRow]:
    """Per (site, regime, mode): mean over tasks within a seed, then over seeds."""
    groups: dict[tuple[str, str, str], dict[int, list[float]]] = {}
    for r in rows:
        by_seed = groups.setdefault((r.site, r.regime, r.mode), {})
        by_seed.setdefault(r.seed, []).append(r.auroc)
    out = []
    for (site, regime, mode), by_seed in sorted(groups.items()):
        seed_means = [_mean(v) for _, v in sorted(by_seed.items())]
        n_tasks = max(len(v) for v in by_seed.values())
        out.append(
            SummaryRow(
                site=site,
                regime=regime,
                mode=mode,
                mean_auroc=_mean(seed_means),
                std_auroc=_std(seed_means),
                n_seeds=len(by_seed),
                n_tasks=n_tasks,
            )
        )
    return out


def write_transfer_grid(
    grid: dict[tuple[str, str], float], sites: list[str], path: str | Path
) -> None:
    """site x site AUROC grid; rows are source sites, columns targets."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["source"] + sites)
        for src in sites:
            writer.writerow(
                [src] + [f"{grid[(src, dst)]:.6f}" if (src, dst) in grid else "" for dst in sites]
            )


def read_transfer_grid(path: str | Path) -> dict[tuple[str, str], float]:
    grid = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        targets = header[1:]
        for row in reader:
            src = row[0]
            for dst, cell in zip(targets, row[1:]):
                if cell:
                    grid[(src, dst)] = float(cell)
    return grid


def write_langstats_csv(stats: list, path: str | Path) -> None:
    """Language-composition table; percentages per site sum to 100."""
    langs = ("en", "nl", "de", "undetected")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["site", "total_tokens"] + [f"pct_{lang}" for lang in langs])
        for s in stats:
            pct = s.percentages
            writer.writerow(
                [s.site_id, s.total] + [f"{pct.get(lang, 0.0):.4f}" for lang in langs]
            )


def aggregate_report(
    rows: list[MetricRow],
    out_dir: str | Path,
    langstats=None,
    transfer_grid: dict[tuple[str, str], float] | None = None,
    sites: list[str] | None = None,
    expected_seeds: int | None = None,
) -> Path:
    """Emit metrics.csv, report.md, and optional langstats/transfer CSVs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(rows, out_dir / "metrics.csv")

    summary = summarize(rows)
    incomplete = (
        expected_seeds is not None and any(s.n_seeds < expected_seeds for s in summary)
    )
    lines = ["# Results", ""]
    if incomplete:
        lines += ["**Warning: partial report — some (site, regime, mode) cells are missing seeds.**", ""]
    lines += [
        "Mean test AUROC per site/regime/mode, averaged over tasks then seeds",
        "(standard deviation over seeds in parentheses).",
        "",
        "| site | regime | mode | AUROC | seeds | tasks |",
        "|---|---|---|---|---|---|",
    ]
    for s in summary:
        lines.append(
            f"| {s.site} | {s.regime} | {s.mode} "
            f"| {s.mean_auroc:.3f} ({s.std_auroc:.3f}) | {s.n_seeds} | {s.n_tasks} |"
        )
    lines += ["", "## Per-task breakdown", "", "| site | regime | mode | task | mean AUROC |", "|---|---|---|---|---|"]
    by_task: dict[tuple[str, str, str, str], list[float]] = {}
    for r in rows:
        by_task.setdefault((r.site, r.regime, r.mode, r.task), []).append(r.auroc)
    for (site, regime, mode, task), vals in sorted(by_task.items()):
        lines.append(f"| {site} | {regime} | {mode} | {task} | {_mean(vals):.3f} |")
    (out_dir / "report.md").write_text("\n".join(lines) + "\n", encoding="utf-8")

    if langstats is not None:
        write_langstats_csv(langstats, out_dir / "langstats.csv")
    if transfer_grid is not None and sites is not None:
        write_transfer_grid(transfer_grid, sites, out_dir / "transfer_grid.csv")
    return out_dir / "report.md"
