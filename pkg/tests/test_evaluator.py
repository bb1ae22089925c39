# -*- coding: utf-8 -*-
"""Simulated evaluator and the evaluation cache."""

import threading
from dataclasses import replace

import pytest

from optimizer.directives import Objective, RewriteRecord, StubHints
from optimizer.errors import EvaluationError, PipelineConfigError, TransientEvaluationError
from optimizer.evaluator import (
    CachedEvaluator,
    EvalResult,
    Evaluator,
    base_accuracy,
    cached,
    directive_tags,
    landscape_from_dict,
    simulate,
)
from optimizer.pipeline_ir import PipelineSpec, estimate_cost, pipeline_key, profile_from_dict, with_model


class CountingEvaluator(Evaluator):
    def __init__(self, inner, fail_first=0):
        self.inner = inner
        self.calls = 0
        self.fail_first = fail_first

    def evaluate(self, p):
        self.calls += 1
        if self.calls <= self.fail_first:
            raise TransientEvaluationError("connection reset")
        return self.inner.evaluate(p)


def _quiet(landscape):
    return replace(landscape, noise_scale=0.0)


def test_closed_form_without_noise(triage, catalog, default_landscape):
    landscape = _quiet(default_landscape)
    result = simulate(triage, catalog, landscape)
    # Both operators on gpt-4.1-mini, no rewrites
    assert result.accuracy == pytest.approx(0.68)
    profile = profile_from_dict(landscape.workload, catalog)
    assert result.cost == pytest.approx(estimate_cost(triage, profile))
    assert result.pipeline_key == pipeline_key(triage)
    assert not result.cache_hit


def test_directive_effects_multiply(registry, triage, catalog, default_landscape):
    landscape = _quiet(default_landscape)
    d = registry.get('clarify_instructions')
    params = d.stub_params(triage, (0, 0), Objective.IMPROVE_ACCURACY, StubHints(catalog=catalog))[0]
    clarified = d.apply(triage, RewriteRecord(d.name, (0, 0), params, Objective.IMPROVE_ACCURACY), catalog)
    assert directive_tags(clarified) == ('clarify_instructions',)
    assert simulate(clarified, catalog, landscape).accuracy == pytest.approx(0.68 * 1.03)


def test_interactions_apply_to_tag_pairs(registry, triage, catalog, adversarial_landscape):
    landscape = _quiet(adversarial_landscape)
    hints = StubHints(catalog=catalog)
    fusion = registry.get('map_filter_fusion')
    fused = fusion.apply(triage, RewriteRecord(fusion.name, (0, 1),
                                               fusion.stub_params(triage, (0, 1), Objective.REDUCE_COST, hints)[0],
                                               Objective.REDUCE_COST), catalog)
    clarify = registry.get('clarify_instructions')
    params = clarify.stub_params(fused, (0, 0), Objective.IMPROVE_ACCURACY, hints)[0]
    both = clarify.apply(fused, RewriteRecord(clarify.name, (0, 0), params, Objective.IMPROVE_ACCURACY), catalog)

    fusion_effect = landscape.effect('map_filter_fusion').accuracy
    clarify_effect = landscape.effect('clarify_instructions').accuracy
    pair = landscape.interaction('clarify_instructions', 'map_filter_fusion')
    assert pair != 1.0
    expected = min(1.0, 0.68 * fusion_effect * clarify_effect * pair)
    assert simulate(both, catalog, landscape).accuracy == pytest.approx(expected)


def test_simulation_is_deterministic(triage, catalog, default_landscape):
    first = simulate(triage, catalog, default_landscape)
    second = simulate(triage, catalog, default_landscape)
    assert first == second
    other_seed = simulate(triage, catalog, replace(default_landscape, seed=default_landscape.seed + 1))
    assert other_seed.cost == first.cost


def test_cheaper_model_strictly_cheaper(seed_pipelines, catalog, default_landscape):
    for p in seed_pipelines.values():
        mini = simulate(with_model(p, 'gpt-4.1-mini'), catalog, default_landscape)
        nano = simulate(with_model(p, 'gpt-4.1-nano'), catalog, default_landscape)
        assert nano.cost < mini.cost


def test_removing_llm_operator_never_increases_cost(triage, catalog, default_landscape):
    mapper_only = PipelineSpec(triage.operators[:1], triage.input_keys, triage.name)
    assert simulate(mapper_only, catalog, default_landscape).cost <= simulate(triage, catalog, default_landscape).cost


def test_code_operators_scale_accuracy(registry, triage, catalog, default_landscape):
    landscape = _quiet(default_landscape)
    d = registry.get('code_substitution')
    params = d.stub_params(triage, (0, 0), Objective.REDUCE_COST, StubHints(catalog=catalog))[0]
    coded = d.apply(triage, RewriteRecord(d.name, (0, 0), params, Objective.REDUCE_COST), catalog)
    expected = 0.68 * landscape.code_quality * landscape.effect('code_substitution').accuracy
    assert base_accuracy(coded, catalog, landscape) == pytest.approx(0.68 * landscape.code_quality)
    assert simulate(coded, catalog, landscape).accuracy == pytest.approx(expected)


def test_invalid_pipeline_is_an_evaluation_error(triage, catalog, default_landscape):
    broken = PipelineSpec(triage.operators[1:], triage.input_keys)
    with pytest.raises(EvaluationError):
        simulate(broken, catalog, default_landscape)


def test_landscape_versioning():
    with pytest.raises(PipelineConfigError):
        landscape_from_dict({'version': 2, 'name': 'future'})
    with pytest.raises(PipelineConfigError):
        landscape_from_dict({'version': 1, 'models': {'m': {'price_factor': 2}}})
    landscape = landscape_from_dict({
        'version': 1, 'name': 'tiny',
        'interactions': [{'pair': ['b', 'a'], 'accuracy': 0.5}],
    })
    assert landscape.interaction('a', 'b') == 0.5
    assert landscape.interaction('a', 'c') == 1.0


def test_cache_hits_skip_the_inner_evaluator(triage, catalog, evaluator):
    counting = CountingEvaluator(evaluator)
    cache = CachedEvaluator(counting)
    first = cache.evaluate(triage)
    renamed = replace(triage, name='renamed')
    second = cache.evaluate(renamed)
    assert not first.cache_hit
    assert second.cache_hit
    assert (second.cost, second.accuracy) == (first.cost, first.accuracy)
    assert counting.calls == 1
    assert cache.inner_calls == 1
    assert triage in cache
    assert len(cache) == 1
    assert cached(cache) is cache


def test_failed_evaluations_are_not_cached(triage, evaluator):
    counting = CountingEvaluator(evaluator, fail_first=1)
    cache = CachedEvaluator(counting)
    with pytest.raises(TransientEvaluationError):
        cache.evaluate(triage)
    assert triage not in cache
    result = cache.evaluate(triage)
    assert not result.cache_hit
    assert counting.calls == 2


def test_concurrent_requests_evaluate_once(triage, evaluator):
    counting = CountingEvaluator(evaluator)
    cache = CachedEvaluator(counting)
    results = []
    lock = threading.Lock()

    def worker():
        outcome = cache.evaluate(triage)
        with lock:
            results.append(outcome)

    threads = [threading.Thread(target=worker) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert counting.calls == 1
    assert len(results) == 8
    assert sum(not r.cache_hit for r in results) == 1
    assert len({(r.cost, r.accuracy) for r in results}) == 1


def test_eval_result_defaults():
    assert EvalResult(0.1, 0.5, 'k').cache_hit is False
