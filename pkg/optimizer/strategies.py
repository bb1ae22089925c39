#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Baseline search strategies and the strategy comparison bench.

Greedy always rewrites the most accurate pipeline found so far; random picks
a selectable node and an objective uniformly. Both share initialization, the
budget ledger and the trace format with the tree search.
"""

import logging
import time
from dataclasses import replace
from typing import Any, Dict, Optional, Sequence

import numpy as np
import pandas as pd
from statsmodels.stats.descriptivestats import sign_test

from optimizer.directives import DirectiveRegistry, Objective
from optimizer.errors import PipelineConfigError, SearchSpaceExhausted
from optimizer.evaluator import LandscapeModel, SimulatedEvaluator, simulate
from optimizer.instantiation import make_instantiator
from optimizer.pareto import cost_to_match, hypervolume
from optimizer.pipeline_ir import ModelCatalog, PipelineSpec
from optimizer.search import SearchConfig, SearchNode, SearchResult, SearchTree

logger = logging.getLogger(__name__)


class GreedySearch(SearchTree):
    """Always rewrites the current best-accuracy pipeline, always for accuracy."""

    strategy = 'greedy'

    def select(self) -> SearchNode:
        with self._lock:
            live = [n for n in self.evaluated_nodes() if not n.disabled and not n.exhausted]
            if not live:
                raise SearchSpaceExhausted("No pipeline left to rewrite")
            node = min(live, key=lambda n: (-n.eval.accuracy, n.eval.cost_micro, n.node_id))
            for member in node.lineage():
                member.n += 1
            return node

    def objective_for(self, node: SearchNode) -> Objective:
        return Objective.IMPROVE_ACCURACY


class RandomSearch(SearchTree):
    """Uniform over selectable nodes, with a uniformly drawn objective."""

    strategy = 'random'

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._rng = np.random.default_rng(self.config.seed)

    def select(self) -> SearchNode:
        with self._lock:
            live = [n for n in self.nodes if not n.disabled and not n.exhausted]
            if not live:
                raise SearchSpaceExhausted("No pipeline left to rewrite")
            node = live[int(self._rng.integers(len(live)))]
            for member in node.lineage():
                member.n += 1
            return node

    def objective_for(self, node: SearchNode) -> Objective:
        with self._lock:
            return Objective.REDUCE_COST if self._rng.random() < 0.5 else Objective.IMPROVE_ACCURACY


STRATEGIES = {
    'uct': SearchTree,
    'greedy': GreedySearch,
    'random': RandomSearch,
}


def make_search(strategy: str, p0: PipelineSpec, catalog: ModelCatalog, evaluator, config: SearchConfig,
                endpoint: Optional[str] = None, registry: Optional[DirectiveRegistry] = None,
                sample_docs: Sequence[Dict[str, Any]] = ()) -> SearchTree:
    """Search object for a strategy name, with the matching instantiator."""
    if strategy not in STRATEGIES:
        raise PipelineConfigError(f"Unknown strategy '{strategy}'; expected one of {sorted(STRATEGIES)}")
    instantiator = make_instantiator(catalog, endpoint=endpoint, strategy=strategy, seed=config.seed)
    return STRATEGIES[strategy](p0, catalog, evaluator, instantiator, config,
                                registry=registry, sample_docs=sample_docs)


def baseline_greedy(p0: PipelineSpec, config: SearchConfig, catalog: ModelCatalog, evaluator,
                    **kwargs) -> SearchResult:
    return make_search('greedy', p0, catalog, evaluator, config, **kwargs).run()


def baseline_random(p0: PipelineSpec, config: SearchConfig, catalog: ModelCatalog, evaluator,
                    **kwargs) -> SearchResult:
    return make_search('random', p0, catalog, evaluator, config, **kwargs).run()


# ----------------------------------------------------------------------------
# Bench
# ----------------------------------------------------------------------------

def bench(p0: PipelineSpec, catalog: ModelCatalog, landscape: LandscapeModel,
          strategies: Sequence[str] = ('uct', 'greedy', 'random'), seeds: int = 20, budget: int = 40,
          workers: int = 1, sample_docs: Sequence[Dict[str, Any]] = ()) -> pd.DataFrame:
    """
    Run every strategy once per seed and return one row per run.

    The seed shifts the landscape's noise stream, so each seed is a different
    draw of the same landscape; all strategies see the same draw for a seed.
    """
    baseline = simulate(p0, catalog, landscape)
    reference_cost = 2.0 * baseline.cost
    rows = []
    for seed in range(seeds):
        evaluator_landscape = replace(landscape, seed=landscape.seed + seed)
        for strategy in strategies:
            config = SearchConfig(budget=budget, workers=workers, seed=seed)
            started = time.time()
            search = make_search(strategy, p0, catalog, SimulatedEvaluator(catalog, evaluator_landscape),
                                 config, sample_docs=sample_docs)
            result = search.run()
            points = search.points()
            matched = cost_to_match(points, baseline.accuracy)
            rows.append({
                'strategy': strategy,
                'seed': seed,
                'best_accuracy': result.best_accuracy,
                'frontier_size': len(result.frontier),
                'hypervolume': hypervolume(points, reference_cost),
                'cost_to_match': matched if matched is not None else np.nan,
                'budget_used': result.budget_used,
                'seconds': round(time.time() - started, 3),
            })
            logger.info(f"bench seed {seed} {strategy}: best accuracy {result.best_accuracy:.4f}, "
                        f"frontier {len(result.frontier)}")
    return pd.DataFrame(rows)


def summarize(runs: pd.DataFrame) -> pd.DataFrame:
    """Mean and standard deviation per strategy."""
    metrics = ['best_accuracy', 'frontier_size', 'hypervolume', 'cost_to_match']
    table = runs.groupby('strategy')[metrics].agg(['mean', 'std'])
    table.columns = [f"{metric}_{stat}" for metric, stat in table.columns]
    return table.reset_index()


def compare(runs: pd.DataFrame, strategy: str = 'uct', baseline: str = 'greedy') -> Dict[str, Any]:
    """
    Paired comparison of best accuracy by seed.

    p_value is the one-sided sign test for strategy > baseline; ties are dropped
    by the test.
    """
    pivot = runs.pivot(index='seed', columns='strategy', values='best_accuracy')
    diff = (pivot[strategy] - pivot[baseline]).to_numpy()
    if np.any(diff != 0):
        statistic, two_sided = sign_test(diff, mu0=0)
        p_value = two_sided / 2 if statistic > 0 else 1.0 - two_sided / 2
    else:
        p_value = 1.0
    return {
        'strategy': strategy,
        'baseline': baseline,
        'runs': int(len(diff)),
        'wins': int((diff > 0).sum()),
        'ties': int((diff == 0).sum()),
        'losses': int((diff < 0).sum()),
        'at_least_as_good': float((diff >= 0).mean()),
        'mean_difference': float(diff.mean()),
        'p_value': float(p_value),
    }
