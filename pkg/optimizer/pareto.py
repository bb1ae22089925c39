#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Pareto utilities over evaluated pipelines.
Frontier computation, the accuracy ceiling A(P) and marginal contribution delta.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set

import pandas as pd

from optimizer.errors import PointNotFound

logger = logging.getLogger(__name__)

MICRO = 1_000_000


def to_micro(cost: float) -> int:
    """Cost in integer micro-dollars; all domination tests compare these."""
    return int(round(cost * MICRO))


@dataclass(frozen=True)
class EvalPoint:
    pipeline_key: str
    cost: float
    accuracy: float
    cost_micro: int = field(init=False, repr=False)

    def __post_init__(self):
        if not (math.isfinite(self.cost) and math.isfinite(self.accuracy)):
            raise ValueError(f"EvalPoint {self.pipeline_key} has non-finite values")
        if self.cost < 0:
            raise ValueError(f"EvalPoint {self.pipeline_key} has negative cost {self.cost}")
        if not 0.0 <= self.accuracy <= 1.0:
            clamped = min(1.0, max(0.0, self.accuracy))
            logger.warning(f"Clamping accuracy {self.accuracy:.4f} -> {clamped} for {self.pipeline_key}")
            object.__setattr__(self, 'accuracy', clamped)
        object.__setattr__(self, 'cost_micro', to_micro(self.cost))

    def dominates(self, other: 'EvalPoint') -> bool:
        """Strictly more accurate at equal or lower cost."""
        return self.accuracy > other.accuracy and self.cost_micro <= other.cost_micro


def pareto_set(points: Iterable[EvalPoint]) -> Set[EvalPoint]:
    """
    Points not dominated by any other point.

    Sweeps points by ascending cost; a point survives iff its accuracy is at
    least the best accuracy seen at equal or lower cost.
    """
    unique = set(points)
    best_by_cost: Dict[int, float] = {}
    for point in unique:
        best_by_cost[point.cost_micro] = max(best_by_cost.get(point.cost_micro, 0.0), point.accuracy)

    ceiling_at: Dict[int, float] = {}
    running = -1.0
    for cost in sorted(best_by_cost):
        running = max(running, best_by_cost[cost])
        ceiling_at[cost] = running

    return {p for p in unique if p.accuracy >= ceiling_at[p.cost_micro]}


def _require_member(points: Iterable[EvalPoint], target: EvalPoint) -> Set[EvalPoint]:
    unique = set(points)
    if target not in unique:
        raise PointNotFound(f"Point {target.pipeline_key} is not in the point set")
    return unique


def ceiling_accuracy(points: Iterable[EvalPoint], target: EvalPoint) -> float:
    """
    Highest accuracy on Pareto(points minus target) at cost <= cost(target); 0 if none.

    Raises:
        PointNotFound: target is not one of points
    """
    unique = _require_member(points, target)
    unique.discard(target)
    reachable = [p.accuracy for p in pareto_set(unique) if p.cost_micro <= target.cost_micro]
    return max(reachable) if reachable else 0.0


def delta(points: Iterable[EvalPoint], target: EvalPoint) -> float:
    """Marginal contribution of target to the frontier."""
    return target.accuracy - ceiling_accuracy(points, target)


def all_deltas(points: Iterable[EvalPoint]) -> Dict[EvalPoint, float]:
    """delta for every point of one snapshot."""
    unique = set(points)
    return {p: delta(unique, p) for p in unique}


def sorted_frontier(points: Iterable[EvalPoint]) -> List[EvalPoint]:
    return sorted(pareto_set(points), key=lambda p: (p.cost_micro, -p.accuracy, p.pipeline_key))


# ----------------------------------------------------------------------------
# Export and comparison metrics
# ----------------------------------------------------------------------------

def frontier_records(points: Iterable[EvalPoint], paths: Optional[Dict[str, str]] = None) -> List[Dict]:
    """JSON-ready frontier rows sorted by cost."""
    paths = paths or {}
    return [
        {
            'pipeline_key': p.pipeline_key,
            'cost': p.cost,
            'accuracy': p.accuracy,
            'path': paths.get(p.pipeline_key, ''),
        }
        for p in sorted_frontier(points)
    ]


def frontier_dataframe(records: Sequence[Dict]) -> pd.DataFrame:
    columns = ['pipeline_key', 'cost', 'accuracy', 'path']
    df = pd.DataFrame(list(records), columns=columns)
    return df.sort_values('cost', kind='mergesort').reset_index(drop=True)


def hypervolume(points: Iterable[EvalPoint], reference_cost: float) -> float:
    """
    Area dominated by the frontier against (reference_cost, accuracy 0).
    Bench comparison only; selection never uses it.
    """
    frontier = [p for p in sorted_frontier(points) if p.cost <= reference_cost]
    area = 0.0
    for i, point in enumerate(frontier):
        next_cost = frontier[i + 1].cost if i + 1 < len(frontier) else reference_cost
        area += (next_cost - point.cost) * point.accuracy
    return area


def cost_to_match(points: Iterable[EvalPoint], target_accuracy: float) -> Optional[float]:
    """Cheapest cost at which a point reaches target_accuracy, or None."""
    costs = [p.cost for p in points if p.accuracy >= target_accuracy]
    return min(costs) if costs else None
