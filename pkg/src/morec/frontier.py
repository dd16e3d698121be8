"""Preference-simplex sweep and non-dominated (Pareto) filtering.

One trained checkpoint is evaluated across a grid of preference vectors;
each grid point yields (NDCG@20, long-tail rate@20), both maximized. The
non-dominated subset approximates the accuracy/exposure Pareto frontier.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .agent import ConditionedActor, PreferenceVector
from .data import ItemGrouping, SplitDataset
from .embed import EmbeddingTable
from .metrics import evaluate


@dataclass
class FrontierPoint:
    omega: PreferenceVector
    ndcg20: float
    longtail_rate20: float  # percent, 100 - popularity rate


def default_grid(n: int = 11) -> list[PreferenceVector]:
    """n evenly spaced utility weights from 0 to 1."""
    if n < 1:
        raise ValueError("grid needs at least one point")
    if n == 1:
        return [PreferenceVector(1.0, 0.0)]
    return [PreferenceVector(round(i / (n - 1), 12), round(1.0 - i / (n - 1), 12))
            for i in range(n)]


def sweep(actor: ConditionedActor, split: SplitDataset, grouping: ItemGrouping,
          embeddings: EmbeddingTable, grid: list[PreferenceVector],
          history_len: int = 5, kl_log_base: float = 2.0,
          jobs: int = 1) -> list[FrontierPoint]:
    """Evaluate the same frozen actor at every grid preference, in order."""
    if not grid:
        raise ValueError("empty preference grid")
    points = []
    for omega in grid:
        report = evaluate(actor, split, grouping, embeddings, omega, ks=(20,),
                          history_len=history_len, kl_log_base=kl_log_base,
                          jobs=jobs)
        m = report.per_k[20]
        points.append(FrontierPoint(
            omega=omega, ndcg20=m.ndcg,
            longtail_rate20=100.0 - m.popularity_rate_percent))
    return points


def pareto_flags(values: list[tuple[float, float]]) -> list[bool]:
    """Keep flags under weak non-domination, both coordinates maximized.

    A point is dropped only if some other point is >= in both coordinates
    and strictly greater in at least one; exact duplicates all survive.
    Sort-and-sweep, O(n log n); the tests hold it against a brute-force
    pairwise oracle.
    """
    n = len(values)
    if n == 0:
        return []
    order = sorted(range(n), key=lambda i: (-values[i][0], -values[i][1]))
    flags = [False] * n
    best_higher = -np.inf  # max second coord among strictly larger first coords
    i = 0
    while i < len(order):
        j = i
        group = []
        x0 = values[order[i]][0]
        while j < len(order) and values[order[j]][0] == x0:
            group.append(order[j])
            j += 1
        group_max = max(values[g][1] for g in group)
        for g in group:
            y = values[g][1]
            flags[g] = y == group_max and y > best_higher
        best_higher = max(best_higher, group_max)
        i = j
    return flags


def pareto_filter(points: list[FrontierPoint]) -> list[FrontierPoint]:
    """Non-dominated subset of the frontier points, input order preserved."""
    flags = pareto_flags([(p.ndcg20, p.longtail_rate20) for p in points])
    return [p for p, keep in zip(points, flags) if keep]


def emit_frontier(points: list[FrontierPoint], flags: list[bool], path) -> None:
    """CSV: omega_utility,omega_fairness,ndcg20,longtail_rate20,pareto."""
    if not points:
        raise ValueError("no frontier points to write")
    if len(flags) != len(points):
        raise ValueError("flags and points disagree in length")
    lines = ["omega_utility,omega_fairness,ndcg20,longtail_rate20,pareto"]
    for p, keep in zip(points, flags):
        lines.append(f"{p.omega.utility:.6f},{p.omega.fairness:.6f},"
                     f"{p.ndcg20:.6f},{p.longtail_rate20:.6f},{int(keep)}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
