# -*- coding: utf-8 -*-
"""Baseline strategies and the seeded bench on the adversarial landscape."""

import pandas as pd
import pytest

from optimizer.errors import PipelineConfigError
from optimizer.evaluator import SimulatedEvaluator
from optimizer.instantiation import RandomInstantiator, StubInstantiator
from optimizer.search import SearchConfig, SearchTree
from optimizer.strategies import (
    STRATEGIES,
    GreedySearch,
    RandomSearch,
    baseline_greedy,
    baseline_random,
    bench,
    compare,
    make_search,
    summarize,
)


@pytest.fixture(scope='module')
def adversarial_runs(triage, catalog, adversarial_landscape):
    return bench(triage, catalog, adversarial_landscape, strategies=('uct', 'greedy'), seeds=20, budget=40)


def test_make_search_picks_class_and_instantiator(triage, catalog, evaluator, monkeypatch):
    monkeypatch.delenv('AGENT_ENDPOINT', raising=False)
    config = SearchConfig(budget=20, seed=1)
    uct = make_search('uct', triage, catalog, evaluator, config)
    assert type(uct) is SearchTree
    assert isinstance(uct.instantiator, StubInstantiator)
    assert isinstance(make_search('greedy', triage, catalog, evaluator, config), GreedySearch)
    random_search = make_search('random', triage, catalog, evaluator, config)
    assert isinstance(random_search, RandomSearch)
    assert isinstance(random_search.instantiator, RandomInstantiator)
    assert set(STRATEGIES) == {'uct', 'greedy', 'random'}
    with pytest.raises(PipelineConfigError):
        make_search('beam', triage, catalog, evaluator, config)


def test_greedy_only_chases_accuracy(triage, catalog, adversarial_landscape):
    result = baseline_greedy(triage, SearchConfig(budget=40), catalog,
                             SimulatedEvaluator(catalog, adversarial_landscape))
    searched = [r for r in result.trace if r['phase'] == 'search']
    assert searched
    assert {r['objective'] for r in searched} == {'improve_accuracy'}
    assert result.budget_used <= 40
    assert result.tree.visit_count_violations() == []


def test_greedy_rewrites_the_best_pipeline(triage, catalog, evaluator):
    search = make_search('greedy', triage, catalog, evaluator, SearchConfig(budget=40)).initialize()
    best = max(search.evaluated_nodes(), key=lambda n: (n.eval.accuracy, -n.eval.cost))
    assert search.select() is best


def test_random_search_is_seeded(triage, catalog, default_landscape):
    traces = []
    for _ in range(2):
        result = baseline_random(triage, SearchConfig(budget=30, seed=7), catalog,
                                 SimulatedEvaluator(catalog, default_landscape))
        traces.append([(r.get('node_id'), r.get('directive'), r.get('accuracy')) for r in result.trace])
        assert result.budget_used <= 30
    assert traces[0] == traces[1]


def test_bench_rows(adversarial_runs):
    assert len(adversarial_runs) == 40
    assert set(adversarial_runs['strategy']) == {'uct', 'greedy'}
    assert (adversarial_runs['budget_used'] <= 40).all()
    assert (adversarial_runs['frontier_size'] >= 1).all()
    assert (adversarial_runs['hypervolume'] > 0).all()


def test_uct_beats_greedy_on_adversarial_landscape(adversarial_runs):
    result = compare(adversarial_runs, 'uct', 'greedy')
    assert result['runs'] == 20
    assert result['at_least_as_good'] >= 0.7
    assert result['p_value'] < 0.05
    assert result['wins'] > result['losses']


def test_summarize_has_one_row_per_strategy(adversarial_runs):
    table = summarize(adversarial_runs)
    assert sorted(table['strategy']) == ['greedy', 'uct']
    assert 'best_accuracy_mean' in table.columns
    assert 'hypervolume_std' in table.columns


def test_compare_counts_ties_and_losses():
    runs = pd.DataFrame([
        {'strategy': s, 'seed': seed, 'best_accuracy': acc}
        for seed, (a, b) in enumerate([(0.9, 0.8), (0.8, 0.8), (0.7, 0.75), (0.95, 0.6)])
        for s, acc in (('uct', a), ('greedy', b))
    ])
    result = compare(runs)
    assert (result['wins'], result['ties'], result['losses']) == (2, 1, 1)
    assert result['at_least_as_good'] == pytest.approx(0.75)
    assert 0.0 < result['p_value'] <= 1.0
