"""Post-processing of campaign results: main effects with 95% confidence
intervals, two-factor interaction grids, and repeatability statistics, emitted
as CSV tables and static SVG plots (no display environment required).

Only status=ok runs enter the effect computations; failed runs are counted in
a separate attrition table so factor comparisons are not silently biased.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np
from scipy import stats as sps

__all__ = ["EffectRow", "EffectTable", "InteractionGrid", "ReplicationStats",
           "main_effects", "interactions", "replication_stats", "attrition",
           "write_effects_csv", "write_interactions_csv", "write_histogram_csv",
           "plot_main_effects", "plot_interactions", "plot_histogram"]


def _as_mapping(record) -> dict:
    if isinstance(record, dict):
        return record
    return record.__dict__


def _ok_filtered(records, filter_by: dict | None) -> list[dict]:
    rows = []
    for rec in records:
        d = _as_mapping(rec)
        if d.get("status", "ok") != "ok":
            continue
        if filter_by and any(d.get(k) != v for k, v in filter_by.items()):
            continue
        rows.append(d)
    return rows


def _level_order(levels):
    try:
        return sorted(levels, key=float)
    except (TypeError, ValueError):
        return sorted(levels, key=str)


@dataclass
class EffectRow:
    level: object
    mean: float
    count: int
    ci_half_width: float  # nan when fewer than 2 records back the level


@dataclass
class EffectTable:
    factor: str
    response: str
    rows: list[EffectRow] = field(default_factory=list)

    @property
    def grand_mean(self) -> float:
        total = sum(r.mean * r.count for r in self.rows)
        count = sum(r.count for r in self.rows)
        return total / count


def main_effects(records, factor: str, response: str = "fit_percent",
                 filter_by: dict | None = None, confidence: float = 0.95
                 ) -> EffectTable:
    """Per-level response means with Student-t confidence half-widths.

    The interval is mean +/- t_{1-(1-confidence)/2, k-1} * sd / sqrt(k) with
    the k-1 sample standard deviation. Levels backed by a single record are
    reported with an undefined (nan) half-width rather than dropped.
    """
    rows = _ok_filtered(records, filter_by)
    by_level: dict = {}
    for d in rows:
        by_level.setdefault(d[factor], []).append(float(d[response]))
    table = EffectTable(factor, response)
    for level in _level_order(by_level):
        # canonical (sorted) reduction order: results do not depend on record order
        values = np.sort(np.asarray(by_level[level]))
        k = len(values)
        if k >= 2:
            sd = values.std(ddof=1)
            t_crit = sps.t.ppf(0.5 + confidence / 2.0, k - 1)
            half = float(t_crit * sd / np.sqrt(k))
        else:
            half = math.nan
        table.rows.append(EffectRow(level, float(values.mean()), k, half))
    return table


@dataclass
class InteractionGrid:
    factor_a: str
    factor_b: str
    response: str
    levels_a: list
    levels_b: list
    means: np.ndarray   # (len_a, len_b), nan marks an empty cell
    counts: np.ndarray  # same shape, int


def interactions(records, factor_a: str, factor_b: str,
                 response: str = "fit_percent", filter_by: dict | None = None
                 ) -> InteractionGrid:
    """Mean response per (level_a, level_b) cell; empty cells stay nan."""
    rows = _ok_filtered(records, filter_by)
    levels_a = _level_order({d[factor_a] for d in rows})
    levels_b = _level_order({d[factor_b] for d in rows})
    means = np.full((len(levels_a), len(levels_b)), math.nan)
    counts = np.zeros((len(levels_a), len(levels_b)), dtype=int)
    cells: dict = {}
    for d in rows:
        cells.setdefault((d[factor_a], d[factor_b]), []).append(float(d[response]))
    for i, la in enumerate(levels_a):
        for j, lb in enumerate(levels_b):
            values = cells.get((la, lb))
            if values:
                means[i, j] = float(np.mean(np.sort(values)))
                counts[i, j] = len(values)
    return InteractionGrid(factor_a, factor_b, response, levels_a, levels_b,
                           means, counts)


@dataclass
class ReplicationStats:
    mean: float
    std: float  # k-1 sample standard deviation
    bin_edges: np.ndarray
    bin_counts: np.ndarray
    significance_3sigma: float  # differences beyond this are taken as significant

    @property
    def count(self) -> int:
        return int(self.bin_counts.sum())


def replication_stats(records, response: str = "fit_percent", bins: int = 20
                      ) -> ReplicationStats:
    """Repeatability summary over replicated runs of one configuration."""
    values = np.asarray([float(_as_mapping(r)[response]) if not isinstance(r, (int, float))
                         else float(r) for r in records])
    if values.size < 2:
        raise ValueError("replication_stats needs at least 2 records")
    std = float(values.std(ddof=1))
    counts, edges = np.histogram(values, bins=bins)
    return ReplicationStats(float(values.mean()), std, edges, counts, 3.0 * std)


def attrition(records) -> dict[str, int]:
    """Run counts by status (ok / diverged / infeasible / ...)."""
    out: dict[str, int] = {}
    for rec in records:
        status = _as_mapping(rec).get("status", "ok")
        out[status] = out.get(status, 0) + 1
    return out


# -- table and plot emission ---------------------------------------------------


def write_effects_csv(table: EffectTable, path) -> None:
    with open(str(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["factor", "level", "mean", "count", "ci_half_width"])
        for r in table.rows:
            writer.writerow([table.factor, r.level, f"{r.mean:.17g}", r.count,
                             "" if math.isnan(r.ci_half_width) else f"{r.ci_half_width:.17g}"])


def write_interactions_csv(grid: InteractionGrid, path) -> None:
    with open(str(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([grid.factor_a, grid.factor_b, "mean", "count"])
        for i, la in enumerate(grid.levels_a):
            for j, lb in enumerate(grid.levels_b):
                mean = grid.means[i, j]
                writer.writerow([la, lb, "" if math.isnan(mean) else f"{mean:.17g}",
                                 int(grid.counts[i, j])])


def write_histogram_csv(stats: ReplicationStats, path) -> None:
    with open(str(path), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right", "count"])
        for k in range(len(stats.bin_counts)):
            writer.writerow([f"{stats.bin_edges[k]:.17g}",
                             f"{stats.bin_edges[k + 1]:.17g}",
                             int(stats.bin_counts[k])])


def plot_main_effects(table: EffectTable, path) -> None:
    """Dot-and-bar plot: level means with confidence bands."""
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    x = np.arange(len(table.rows))
    means = [r.mean for r in table.rows]
    halves = [0.0 if math.isnan(r.ci_half_width) else r.ci_half_width
              for r in table.rows]
    ax.errorbar(x, means, yerr=halves, fmt="o", capsize=4)
    ax.set_xticks(x)
    ax.set_xticklabels([str(r.level) for r in table.rows])
    ax.set_xlabel(table.factor)
    ax.set_ylabel(table.response)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(str(path), format="svg")
    plt.close(fig)


def plot_interactions(grid: InteractionGrid, path) -> None:
    """One line per level of factor_b across the levels of factor_a."""
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    x = np.arange(len(grid.levels_a))
    for j, lb in enumerate(grid.levels_b):
        ax.plot(x, grid.means[:, j], marker="o",
                label=f"{grid.factor_b}={lb}")
    ax.set_xticks(x)
    ax.set_xticklabels([str(a) for a in grid.levels_a])
    ax.set_xlabel(grid.factor_a)
    ax.set_ylabel(grid.response)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(str(path), format="svg")
    plt.close(fig)


def plot_histogram(stats: ReplicationStats, path, label: str = "fit_percent") -> None:
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    widths = np.diff(stats.bin_edges)
    ax.bar(stats.bin_edges[:-1], stats.bin_counts, width=widths, align="edge",
           edgecolor="black", linewidth=0.5)
    ax.set_xlabel(label)
    ax.set_ylabel("count")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(str(path), format="svg")
    plt.close(fig)
