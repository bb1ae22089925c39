# -*- coding: utf-8 -*-
"""Pipeline representation: validation, key threading, cost model, serialization."""

import pytest

from optimizer.errors import IndexOutOfRange, PipelineConfigError, UnknownModel
from optimizer.pipeline_ir import (
    ModelCatalog,
    ModelEntry,
    OperatorConfig,
    OperatorLoad,
    OperatorType,
    PipelineSpec,
    WorkloadProfile,
    available_keys_after,
    canonical_serialize,
    catalog_from_dict,
    estimate_cost,
    llm_call_count,
    llm_models,
    pipeline_from_dict,
    pipeline_from_yaml,
    pipeline_key,
    pipeline_to_dict,
    pipeline_to_yaml,
    validate_pipeline,
    with_model,
)


@pytest.fixture
def flat_catalog():
    return ModelCatalog((ModelEntry('m', 'fam', 1e-6, 2e-6, 100_000),))


def _map(op_id='m1', prompt="Summarize {{ input.notes }}", schema=None, model='m'):
    return OperatorConfig(op_id, OperatorType.MAP, prompt_template=prompt,
                          output_schema=schema or {'summary': 'string'}, model=model)


def test_minimal_map_validates():
    p = PipelineSpec((_map(),), {'notes'})
    assert validate_pipeline(p).ok


def test_dangling_placeholder_reported():
    p = PipelineSpec((_map(prompt="Rewrite {{ input.summary }}"),), {'notes'})
    report = validate_pipeline(p)
    assert not report.ok
    assert report.rules() == ['dangling_placeholder']
    assert report.violations[0].op_id == 'm1'


def test_map_then_code_filter_on_its_flag_validates():
    p = PipelineSpec((
        _map(schema={'summary': 'string', 'keep': 'boolean'}),
        OperatorConfig('check', OperatorType.CODE_FILTER, code_body="def transform(input):\n    return input['keep']",
                       output_schema={'keep': 'boolean'}),
    ), {'notes'})
    assert validate_pipeline(p).ok


def test_wrong_class_and_duplicate_ids():
    code_with_model = OperatorConfig('c', OperatorType.CODE_MAP, code_body="def transform(input):\n    return {}",
                                     output_schema={'x': 'string'}, model='m')
    p = PipelineSpec((_map('a'), _map('a'), code_with_model), {'notes'})
    rules = validate_pipeline(p).rules()
    assert 'duplicate_id' in rules
    assert 'wrong_class' in rules


def test_llm_operator_without_model_is_wrong_class():
    p = PipelineSpec((_map(model=None),), {'notes'})
    assert 'wrong_class' in validate_pipeline(p).rules()


def test_reduce_group_key_must_exist_upstream():
    reduce_op = OperatorConfig('r', OperatorType.REDUCE, prompt_template="Combine {{ input.summary }}",
                               output_schema={'report': 'string'}, model='m', group_by_keys=('case_type',))
    p = PipelineSpec((_map(), reduce_op), {'notes'})
    assert 'missing_group_key' in validate_pipeline(p).rules()


def test_empty_pipeline_reported():
    assert validate_pipeline(PipelineSpec((), {'notes'})).rules() == ['empty_pipeline']


def test_available_keys_threading():
    enhance = _map(schema={'enhancements': 'list[string]'})
    reduce_op = OperatorConfig('r', OperatorType.REDUCE, prompt_template="Combine {{ input.enhancements }}",
                               output_schema={'summary': 'string'}, model='m', group_by_keys=('case_type',))
    p = PipelineSpec((enhance, reduce_op), {'notes', 'case_type'})
    assert available_keys_after(p, 0) == {'notes', 'case_type'}
    assert available_keys_after(p, 1) == {'notes', 'case_type', 'enhancements'}
    assert available_keys_after(p, 2) == {'case_type', 'summary'}
    with pytest.raises(IndexOutOfRange):
        available_keys_after(p, 3)
    with pytest.raises(IndexOutOfRange):
        available_keys_after(p, -1)


def test_split_renames_text_key(seed_pipelines):
    filings = seed_pipelines['long_filings']
    keys = available_keys_after(filings, 1)
    assert 'text' not in keys
    assert {'text_chunk', 'text_parent_id'} <= keys
    assert 'text_chunk_rendered' in available_keys_after(filings, 2)


def test_estimate_cost_linear_formula(flat_catalog):
    profile = WorkloadProfile(catalog=flat_catalog, num_documents=10,
                              overrides=(('m1', OperatorLoad(input_tokens=1000, output_tokens=100)),))
    p = PipelineSpec((_map(),), {'notes'})
    assert estimate_cost(p, profile) == pytest.approx(0.012)


def test_code_only_pipeline_costs_nothing(flat_catalog):
    profile = WorkloadProfile(catalog=flat_catalog)
    code = OperatorConfig('c', OperatorType.CODE_MAP, code_body="def transform(input):\n    return {'n': 1}",
                          output_schema={'n': 'number'})
    assert estimate_cost(PipelineSpec((code,), {'notes'}), profile) == 0.0


def test_two_identical_maps_cost_twice(flat_catalog):
    profile = WorkloadProfile(catalog=flat_catalog, num_documents=10)
    one = PipelineSpec((_map('a'),), {'notes'})
    two = PipelineSpec((_map('a'), _map('b', schema={'other': 'string'})), {'notes'})
    # Same prompt and same output token profile
    assert estimate_cost(two, profile) == pytest.approx(2 * estimate_cost(one, profile))


def test_unknown_model_raises(flat_catalog):
    profile = WorkloadProfile(catalog=flat_catalog)
    with pytest.raises(UnknownModel):
        estimate_cost(PipelineSpec((_map(model='nope'),), {'notes'}), profile)


def test_seed_pipelines_validate_and_cost_positive(seed_pipelines, profile):
    assert len(seed_pipelines) >= 5
    for p in seed_pipelines.values():
        assert validate_pipeline(p).ok, p.name
        assert estimate_cost(p, profile) > 0


def test_canonical_serialize_ignores_ids_and_schema_order():
    a = PipelineSpec((_map('a', schema={'x': 'string', 'y': 'number'}),), {'notes'})
    b = PipelineSpec((_map('b', schema={'y': 'number', 'x': 'string'}),), {'notes'})
    assert canonical_serialize(a) == canonical_serialize(b)
    assert pipeline_key(a) == pipeline_key(b)

    c = PipelineSpec((_map('a', prompt="Summarise {{ input.notes }}", schema={'x': 'string', 'y': 'number'}),),
                     {'notes'})
    assert canonical_serialize(a) != canonical_serialize(c)


def test_yaml_round_trip(seed_pipelines):
    for p in seed_pipelines.values():
        again = pipeline_from_yaml(pipeline_to_yaml(p))
        assert canonical_serialize(again) == canonical_serialize(p)
        assert again.op_ids == p.op_ids
        assert pipeline_from_dict(pipeline_to_dict(p)) == again


def test_malformed_pipeline_documents():
    with pytest.raises(PipelineConfigError):
        pipeline_from_yaml("operators: [")
    with pytest.raises(PipelineConfigError):
        pipeline_from_dict({'input_keys': ['text'], 'operators': []})
    with pytest.raises(PipelineConfigError):
        pipeline_from_dict({'input_keys': ['text'], 'operators': [{'id': 'x', 'type': 'resolve'}]})


def test_catalog_rules(catalog):
    assert catalog.model_ids == ['gpt-4.1-nano', 'gpt-4.1-mini', 'gemini-2.5-flash']
    assert catalog.cheapest().model_id == 'gpt-4.1-nano'
    assert catalog.most_accurate().model_id == 'gemini-2.5-flash'
    with pytest.raises(UnknownModel):
        catalog.get('gpt-99')
    with pytest.raises(PipelineConfigError):
        catalog_from_dict({'models': []})
    with pytest.raises(PipelineConfigError):
        catalog_from_dict({'models': [{'model_id': 'x', 'family': 'f'}]})


def test_with_model_and_call_count(triage):
    nano = with_model(triage, 'gpt-4.1-nano')
    assert llm_models(nano) == ['gpt-4.1-nano', 'gpt-4.1-nano']
    assert llm_models(triage) == ['gpt-4.1-mini', 'gpt-4.1-mini']
    assert llm_call_count(triage) == 2
