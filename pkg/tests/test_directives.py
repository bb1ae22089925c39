# -*- coding: utf-8 -*-
"""Directive registry: matching, application, closure over the seed pipelines, pruning."""

import pytest

from optimizer.directives import (
    FUSION_DIRECTIVES,
    MODEL_SUBSTITUTION,
    Objective,
    RewriteRecord,
    StubHints,
    check_closure,
    prune_registry,
)
from optimizer.errors import InvalidParams
from optimizer.pipeline_ir import (
    OperatorConfig,
    OperatorType,
    PipelineSpec,
    canonical_serialize,
    estimate_cost,
    llm_call_count,
    operator_costs,
    validate_pipeline,
)


def _map(op_id, prompt, schema, model='gpt-4.1-mini'):
    return OperatorConfig(op_id, OperatorType.MAP, prompt_template=prompt, output_schema=schema, model=model)


def _record(name, span, params, objective=Objective.IMPROVE_ACCURACY):
    return RewriteRecord(name, span, params, objective)


def _stub(d, p, span, catalog, objective=Objective.IMPROVE_ACCURACY, docs=()):
    return d.stub_params(p, span, objective, StubHints(catalog=catalog, docs=list(docs)))


def test_registry_contents(registry):
    assert len(registry) == 19
    assert 'doc_chunking' in registry
    for d in registry:
        assert d.param_sensitive == (d.candidate_count >= 2)
    sensitive = {d.name for d in registry if d.param_sensitive}
    assert sensitive == {'doc_compression_code', 'head_tail_compression', 'chunk_sampling', 'doc_sampling',
                         'cascade_filtering', 'clarify_instructions'}
    with pytest.raises(KeyError):
        registry.get('no_such_directive')


def test_brief_hides_full_doc(registry):
    for d in registry:
        brief = d.brief()
        assert 'full_doc' not in brief
        assert d.full_doc not in brief.values()
        spec = d.full_spec()
        assert spec['full_doc'] == d.full_doc
        assert spec['candidate_count'] == d.candidate_count
        assert 'properties' in spec['param_schema']


def test_dump_lists_every_directive(registry):
    rows = registry.dump()
    assert [r['name'] for r in rows] == registry.names
    assert all({'name', 'category', 'short_doc', 'lhs'} <= set(r) for r in rows)


def test_same_type_fusion_sites(registry):
    p = PipelineSpec((
        _map('a', "People in {{ input.text }}", {'people': 'list[string]'}),
        _map('b', "Places in {{ input.text }}", {'places': 'list[string]'}),
        _map('c', "Dates in {{ input.text }}", {'dates': 'list[string]'}),
    ), {'text'})
    assert registry.get('same_type_fusion').match_sites(p) == [(0, 1), (1, 2)]


def test_map_reduce_fusion_excluded_when_map_emits_group_key(registry):
    p = PipelineSpec((
        _map('classify', "Classify {{ input.text }}", {'category': 'string'}),
        OperatorConfig('by_category', OperatorType.REDUCE, prompt_template="Summarize {{ input.text }}",
                       output_schema={'summary': 'string'}, model='gpt-4.1-mini', group_by_keys=('category',)),
    ), {'text'})
    assert registry.get('map_reduce_fusion').match_sites(p) == []


def test_chunk_sampling_needs_split_gather_prefix(registry, triage, seed_pipelines):
    d = registry.get('chunk_sampling')
    assert d.match_sites(triage) == []
    assert d.match_sites(seed_pipelines['long_filings']) == [(0, 3)]


def test_map_filter_fusion_rhs(registry, triage, catalog):
    d = registry.get('map_filter_fusion')
    assert d.match_sites(triage) == [(0, 1)]
    params = _stub(d, triage, (0, 1), catalog)[0]
    fused = d.apply(triage, _record(d.name, (0, 1), params), catalog)

    assert [op.op_type for op in fused.operators] == [OperatorType.MAP, OperatorType.CODE_FILTER]
    mapper, check = fused.operators
    assert mapper.schema == {'symptoms': 'list[string]', 'visit_summary': 'string', 'is_severe': 'boolean'}
    assert check.schema == {'is_severe': 'boolean'}
    assert "is_severe" in check.code_body
    assert llm_call_count(triage) == 2
    assert llm_call_count(fused) == 1
    assert validate_pipeline(fused).ok


def test_code_substitution_zeroes_operator_cost(registry, triage, catalog, profile):
    d = registry.get('code_substitution')
    params = _stub(d, triage, (0, 0), catalog)[0]
    rewritten = d.apply(triage, _record(d.name, (0, 0), params), catalog)
    op = rewritten.operators[0]
    assert op.op_type == OperatorType.CODE_MAP
    assert op.model is None and op.prompt_template is None
    assert op.output_schema == triage.operators[0].output_schema
    assert operator_costs(rewritten, profile)[0] == 0.0
    assert estimate_cost(rewritten, profile) < estimate_cost(triage, profile)


def test_doc_chunking_rhs(registry, triage, catalog, sample_docs):
    d = registry.get('doc_chunking')
    params = _stub(d, triage, (0, 0), catalog, docs=sample_docs)[0]
    assert params['split_key'] == 'text'
    chunked = d.apply(triage, _record(d.name, (0, 0), params), catalog)
    types = [op.op_type for op in chunked.operators]
    assert types == [OperatorType.SPLIT, OperatorType.GATHER, OperatorType.MAP, OperatorType.REDUCE,
                     OperatorType.FILTER]
    combine = chunked.operators[3]
    assert combine.group_by_keys[0] == 'text_parent_id'
    assert combine.model == triage.operators[0].model
    assert '{{ input.text_chunk_rendered }}' in chunked.operators[2].prompt_template


def test_apply_is_pure(registry, triage, catalog):
    before = canonical_serialize(triage)
    d = registry.get('clarify_instructions')
    params = _stub(d, triage, (0, 0), catalog)[0]
    first = d.apply(triage, _record(d.name, (0, 0), params), catalog)
    second = d.apply(triage, _record(d.name, (0, 0), params), catalog)
    assert canonical_serialize(first) == canonical_serialize(second)
    assert canonical_serialize(triage) == before


def test_apply_rejects_bad_span_and_params(registry, triage, catalog):
    d = registry.get('clarify_instructions')
    with pytest.raises(InvalidParams):
        d.apply(triage, _record(d.name, (0, 1), {'clarified_prompt': 'x {{ input.text }}'}), catalog)
    with pytest.raises(InvalidParams):
        # drops the {{ input.text }} placeholder
        d.apply(triage, _record(d.name, (0, 0), {'clarified_prompt': 'List symptoms.'}), catalog)
    model_sub = registry.get(MODEL_SUBSTITUTION)
    with pytest.raises(InvalidParams):
        model_sub.apply(triage, _record(MODEL_SUBSTITUTION, (0, 0), {'model': 'gpt-99'}), catalog)
    with pytest.raises(InvalidParams):
        model_sub.apply(triage, _record(MODEL_SUBSTITUTION, (0, 0), {'model': 'gpt-4.1-mini'}), catalog)


def test_arbitrary_rewrite_requires_unique_search(registry, triage, catalog):
    d = registry.get('arbitrary_rewrite')
    span = d.match_sites(triage)[0]
    with pytest.raises(InvalidParams):
        d.apply(triage, _record(d.name, span, {'edits': [{'search': 'model: gpt-4.1-mini', 'replace': 'x'}]}),
                catalog)
    params = _stub(d, triage, span, catalog, objective=Objective.REDUCE_COST)[0]
    cheaper = d.apply(triage, _record(d.name, span, params, Objective.REDUCE_COST), catalog)
    assert cheaper.operators[0].model == 'gpt-4.1-nano'


@pytest.mark.parametrize('objective', [Objective.REDUCE_COST, Objective.IMPROVE_ACCURACY])
def test_arbitrary_rewrite_without_model_swap_changes_the_pipeline(registry, triage, catalog, objective):
    single = catalog.subset(['gpt-4.1-mini'])
    d = registry.get('arbitrary_rewrite')
    span = d.match_sites(triage)[0]
    params = _stub(d, triage, span, single, objective=objective)[0]
    revised = d.apply(triage, _record(d.name, span, params, objective), single)

    assert canonical_serialize(revised) != canonical_serialize(triage)
    assert revised.operators[0].prompt_template.startswith(triage.operators[0].prompt_template.rstrip())
    assert revised.operators[1].prompt_template == triage.operators[1].prompt_template
    assert validate_pipeline(revised).ok


def test_closure_over_seed_pipelines(registry, seed_pipelines, catalog, sample_docs):
    rows = check_closure(seed_pipelines.values(), registry, catalog, sample_docs)
    failures = [r for r in rows if not r['ok']]
    assert failures == []
    # Every directive applies somewhere in the corpus
    assert {r['directive'] for r in rows} == set(registry.names)


def test_fusion_never_adds_llm_calls(registry, seed_pipelines, catalog):
    hints = StubHints(catalog=catalog)
    for p in seed_pipelines.values():
        for d in registry:
            if d.name not in FUSION_DIRECTIVES:
                continue
            for span in d.match_sites(p):
                for params in d.stub_params(p, span, Objective.REDUCE_COST, hints):
                    fused = d.apply(p, _record(d.name, span, params, Objective.REDUCE_COST), catalog)
                    assert llm_call_count(fused) < llm_call_count(p)


def test_prune_rules(registry, triage):
    all_names = set(registry.names)

    after_chunking = [_record('doc_chunking', (0, 0), {})]
    kept = {d.name for d in prune_registry(triage, after_chunking, registry)}
    assert not kept & FUSION_DIRECTIVES

    first_layer = [_record(MODEL_SUBSTITUTION, (0, 1), {'model': 'gpt-4.1-nano'})]
    assert MODEL_SUBSTITUTION not in {d.name for d in prune_registry(triage, first_layer, registry)}

    assert {d.name for d in prune_registry(triage, [], registry)} == all_names

    after_summary = [_record('doc_summarization', (0, 0), {})]
    kept = {d.name for d in prune_registry(triage, after_summary, registry)}
    assert 'head_tail_compression' not in kept
    assert 'doc_compression_llm' not in kept


def test_prune_drops_chunking_once_split_exists(registry, seed_pipelines):
    kept = {d.name for d in prune_registry(seed_pipelines['long_filings'], [], registry)}
    assert 'doc_chunking' not in kept


def test_prune_subset_and_order_invariant(registry, triage):
    path = [_record('doc_compression_code', (0, 0), {})]
    forward = prune_registry(triage, path, registry)
    backward = prune_registry(triage, path, list(reversed(list(registry))))
    assert {d.name for d in forward} == {d.name for d in backward}
    assert {d.name for d in forward} <= set(registry.names)
