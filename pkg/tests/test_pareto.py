# -*- coding: utf-8 -*-
"""Frontier, ceiling and delta against brute-force pairwise checks."""

import math

import numpy as np
import pytest

from optimizer.errors import PointNotFound
from optimizer.pareto import (
    EvalPoint,
    all_deltas,
    ceiling_accuracy,
    cost_to_match,
    delta,
    frontier_dataframe,
    frontier_records,
    hypervolume,
    pareto_set,
    sorted_frontier,
    to_micro,
)


def _points(pairs):
    return [EvalPoint(f"p{i}", cost, acc) for i, (cost, acc) in enumerate(pairs)]


def _random_points(rng, n):
    # Coarse grids force plenty of equal costs and equal accuracies
    costs = rng.integers(0, 40, size=n) / 1000.0
    accs = rng.integers(0, 25, size=n) / 25.0
    return [EvalPoint(f"p{i}", float(c), float(a)) for i, (c, a) in enumerate(zip(costs, accs))]


def brute_pareto(points):
    costs = np.array([p.cost_micro for p in points])
    accs = np.array([p.accuracy for p in points])
    keep = set()
    for i, p in enumerate(points):
        if not np.any((accs > accs[i]) & (costs <= costs[i])):
            keep.add(p)
    return keep


def brute_ceiling(points, target):
    others = [p for p in points if p != target]
    front = brute_pareto(others) if others else set()
    reachable = [p.accuracy for p in front if p.cost_micro <= target.cost_micro]
    return max(reachable, default=0.0)


def test_to_micro_rounds_to_integer_micro_dollars():
    assert to_micro(0.0000014) == 1
    assert to_micro(1.25) == 1_250_000


def test_pareto_worked_examples():
    a, b, c = _points([(1, 0.5), (2, 0.7), (3, 0.6)])
    assert pareto_set([a, b, c]) == {a, b}

    (single,) = _points([(1, 0.5)])
    assert pareto_set([single]) == {single}

    x, y = _points([(1, 0.5), (2, 0.5)])
    assert pareto_set([x, y]) == {x, y}


def test_pareto_empty_set():
    assert pareto_set([]) == set()
    assert sorted_frontier([]) == []


def test_accuracy_outside_unit_interval_is_clamped():
    point = EvalPoint('k', 0.1, 1.2)
    assert point.accuracy == 1.0


def test_invalid_points_rejected():
    with pytest.raises(ValueError):
        EvalPoint('k', -0.01, 0.5)
    with pytest.raises(ValueError):
        EvalPoint('k', float('nan'), 0.5)


def test_ceiling_and_delta_examples():
    cheap, good = _points([(1, 0.6), (2, 0.8)])
    assert ceiling_accuracy([cheap, good], good) == pytest.approx(0.6)
    assert delta([cheap, good], good) == pytest.approx(0.2)
    # Nothing at or below the cheapest point's cost
    assert ceiling_accuracy([cheap, good], cheap) == 0.0
    assert delta([cheap, good], cheap) == pytest.approx(0.6)

    dominated, dominator = _points([(3, 0.5), (2, 0.7)])
    assert ceiling_accuracy([dominated, dominator], dominated) == pytest.approx(0.7)
    assert delta([dominated, dominator], dominated) == pytest.approx(-0.2)


def test_ceiling_requires_membership():
    a, b = _points([(1, 0.5), (2, 0.7)])
    with pytest.raises(PointNotFound):
        ceiling_accuracy([a], b)


def test_oracle_equivalence_on_random_sets():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        n = int(rng.integers(1, 201))
        points = _random_points(rng, n)
        front = pareto_set(points)
        assert front == brute_pareto(points)

        # Ceilings and deltas on a few members per set keep the runtime low
        for idx in rng.choice(n, size=min(n, 3), replace=False):
            target = points[int(idx)]
            ceiling = ceiling_accuracy(points, target)
            assert ceiling == brute_ceiling(points, target)
            d = delta(points, target)
            assert d == target.accuracy - ceiling
            if d > 0:
                assert target in front


def test_positive_delta_implies_frontier_membership():
    rng = np.random.default_rng(7)
    for _ in range(200):
        points = _random_points(rng, int(rng.integers(1, 40)))
        front = pareto_set(points)
        for point, d in all_deltas(points).items():
            if d > 0:
                assert point in front


def test_pareto_idempotent_and_order_independent():
    rng = np.random.default_rng(11)
    for _ in range(100):
        points = _random_points(rng, int(rng.integers(1, 60)))
        front = pareto_set(points)
        assert pareto_set(front) == front
        shuffled = list(points)
        rng.shuffle(shuffled)
        assert pareto_set(shuffled) == front


def test_ceiling_monotone_in_cost():
    base = _points([(1, 0.4), (3, 0.6), (5, 0.9)])
    ceilings = []
    for cost in [0.5, 1, 2, 3, 4, 5, 6]:
        probe = EvalPoint('probe', cost, 0.1)
        ceilings.append(ceiling_accuracy(base + [probe], probe))
    assert ceilings == sorted(ceilings)


def test_frontier_records_sorted_by_cost():
    points = _points([(3, 0.9), (1, 0.5), (2, 0.7), (2.5, 0.6)])
    records = frontier_records(points, {'p0': 'ROOT → x'})
    assert [r['cost'] for r in records] == [1, 2, 3]
    assert records[-1]['path'] == 'ROOT → x'
    df = frontier_dataframe(records)
    assert list(df.columns) == ['pipeline_key', 'cost', 'accuracy', 'path']
    assert df['cost'].is_monotonic_increasing


def test_hypervolume_staircase():
    points = _points([(1, 0.5), (2, 0.8)])
    # (2 - 1) * 0.5 + (4 - 2) * 0.8
    assert hypervolume(points, 4.0) == pytest.approx(2.1)
    assert hypervolume(points, 0.5) == 0.0


def test_cost_to_match():
    points = _points([(1, 0.5), (2, 0.8), (3, 0.85)])
    assert cost_to_match(points, 0.8) == 2
    assert cost_to_match(points, 0.95) is None
    assert not math.isnan(cost_to_match(points, 0.0))
