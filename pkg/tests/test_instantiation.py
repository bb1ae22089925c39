# -*- coding: utf-8 -*-
"""Rule-based stub, random instantiator and the two-stage agent adapter."""

import copy
import json

import pytest
import requests

from optimizer.directives import MODEL_SUBSTITUTION, Objective
from optimizer.errors import EndpointError, InstantiationFailed, NoApplicableDirective, PipelineConfigError
from optimizer.instantiation import (
    AgentContext,
    AgentInstantiator,
    ListDocPeek,
    RandomInstantiator,
    StubInstantiator,
    load_sample,
    make_instantiator,
    stub_choose,
)
from optimizer.pipeline_ir import PipelineSpec

CLARIFIED = ("Read the clinical note below and list every symptom the patient reports, then summarize the visit "
             "in one sentence. Use only what the note states.\n\nNote: {{ input.text }}")


class FakeResponse:
    def __init__(self, body):
        self.body = body

    def raise_for_status(self):
        if isinstance(self.body, requests.exceptions.HTTPError):
            raise self.body

    def json(self):
        if isinstance(self.body, ValueError):
            raise self.body
        return self.body


class FakeSession:
    """Replays scripted agent answers and records every request payload."""

    def __init__(self, script):
        self.script = list(script)
        self.requests = []
        self.closed = 0

    def post(self, url, json=None, timeout=None):
        self.requests.append(copy.deepcopy(json))
        answer = self.script.pop(0)
        if isinstance(answer, requests.exceptions.ConnectionError):
            raise answer
        return FakeResponse(answer)

    def close(self):
        self.closed += 1


def _context(pipeline, registry, objective=Objective.IMPROVE_ACCURACY, usage=None, path_models=frozenset()):
    pruned = list(registry)
    return AgentContext(
        pipeline_yaml='',
        directive_briefs=[d.brief() for d in pruned],
        explored_paths=[("ROOT → model_substitution(model=gpt-4.1-nano)", 0.01, 0.58)],
        current_path='ROOT',
        depth=0,
        model_stats={'gpt-4.1-nano': (0.01, 0.58)},
        directive_stats={},
        objective=objective,
        pipeline=pipeline,
        pruned=pruned,
        usage=usage or {},
        path_models=frozenset(path_models),
    )


def _agent(catalog, session, retry_limit=3):
    return AgentInstantiator('http://agent.test/v1', catalog, timeout=5, retry_limit=retry_limit,
                             session_factory=lambda: session)


def _payload_objects(payload):
    """JSON objects carried in the request's message contents."""
    found = []
    for message in payload['messages']:
        try:
            found.append(json.loads(message['content']))
        except ValueError:
            continue
    return found


# ----------------------------------------------------------------------------
# Stub
# ----------------------------------------------------------------------------

def test_stub_prefers_accuracy_tier(triage, registry):
    assert stub_choose(_context(triage, registry), None) == ('clarify_instructions', (0, 0))


def test_stub_ranks_by_usage_then_name(triage, registry):
    context = _context(triage, registry, usage={'clarify_instructions': 2})
    assert stub_choose(context, None)[0] == 'doc_chunking'


def test_stub_cost_tier_prefers_model_substitution(triage, registry, catalog):
    context = _context(triage, registry, objective=Objective.REDUCE_COST, path_models={'gpt-4.1-mini'})
    assert stub_choose(context, catalog)[0] == MODEL_SUBSTITUTION

    # Usage only ranks within a tier
    used = _context(triage, registry, objective=Objective.REDUCE_COST, path_models={'gpt-4.1-mini'},
                    usage={MODEL_SUBSTITUTION: 3})
    assert stub_choose(used, catalog)[0] == MODEL_SUBSTITUTION

    without = [d for d in registry if d.name != MODEL_SUBSTITUTION]
    pruned = _context(triage, without, objective=Objective.REDUCE_COST, path_models={'gpt-4.1-mini'})
    assert stub_choose(pruned, catalog) == ('map_filter_fusion', (0, 1))


def test_stub_skips_model_substitution_when_every_model_was_tried(triage, registry, catalog):
    mapper_only = PipelineSpec(triage.operators[:1], triage.input_keys, 'mapper_only')
    fresh = _context(mapper_only, registry, objective=Objective.REDUCE_COST, path_models={'gpt-4.1-mini'})
    assert stub_choose(fresh, catalog)[0] == MODEL_SUBSTITUTION

    # No fusion site and no untried model: falls through to code synthesis
    tried = _context(mapper_only, registry, objective=Objective.REDUCE_COST, path_models=set(catalog.model_ids))
    assert stub_choose(tried, catalog) == ('code_substitution', (0, 0))


def test_stub_raises_without_applicable_directive(triage):
    context = _context(triage, [])
    with pytest.raises(NoApplicableDirective):
        stub_choose(context, None)


def test_stub_instantiate_is_deterministic(triage, registry, catalog, sample_docs):
    stub = StubInstantiator(catalog)
    d = registry.get('clarify_instructions')
    first = stub.instantiate(d, triage, (0, 0), Objective.IMPROVE_ACCURACY, ListDocPeek(sample_docs))
    second = stub.instantiate(d, triage, (0, 0), Objective.IMPROVE_ACCURACY, ListDocPeek(sample_docs))
    assert len(first) == d.candidate_count == 2
    assert first == second
    for params in first:
        d.validate_params(params, triage, (0, 0))


def test_stub_model_substitution_avoids_path_models(triage, registry, catalog):
    stub = StubInstantiator(catalog)
    d = registry.get(MODEL_SUBSTITUTION)
    context = _context(triage, registry, path_models={'gpt-4.1-mini', 'gpt-4.1-nano'})
    cheaper = stub.instantiate(d, triage, (0, 0), Objective.REDUCE_COST, context=context)
    assert cheaper == [{'model': 'gemini-2.5-flash'}]
    better = stub.instantiate(d, triage, (0, 0), Objective.IMPROVE_ACCURACY)
    assert better == [{'model': 'gemini-2.5-flash'}]


def test_random_instantiator_is_seeded(triage, registry, catalog):
    picks = []
    for _ in range(2):
        random_inst = RandomInstantiator(catalog, seed=5)
        picks.append([random_inst.choose_directive(_context(triage, registry)) for _ in range(10)])
    assert picks[0] == picks[1]
    for name, span in picks[0]:
        assert span in registry.get(name).match_sites(triage)


def test_make_instantiator_selection(catalog, monkeypatch):
    monkeypatch.delenv('AGENT_ENDPOINT', raising=False)
    assert isinstance(make_instantiator(catalog), StubInstantiator)
    assert isinstance(make_instantiator(catalog, strategy='random', seed=1), RandomInstantiator)
    assert isinstance(make_instantiator(catalog, endpoint='http://agent.test'), AgentInstantiator)
    monkeypatch.setenv('AGENT_ENDPOINT', 'http://agent.test')
    assert isinstance(make_instantiator(catalog), AgentInstantiator)


def test_load_sample(sample_docs, tmp_path):
    assert len(sample_docs) == 6
    assert all({'patient_id', 'text'} <= set(doc) for doc in sample_docs)
    bad = tmp_path / 'bad.jsonl'
    bad.write_text('{"text": "ok"}\n[1, 2]\n', encoding='utf-8')
    with pytest.raises(PipelineConfigError):
        load_sample(bad)
    with pytest.raises(PipelineConfigError):
        load_sample(tmp_path / 'missing.jsonl')


def test_context_rejects_invalid_explored_paths(triage, registry):
    with pytest.raises(ValueError):
        AgentContext('', [], [('ROOT', -1.0, 0.5)], 'ROOT', 0, {}, {}, Objective.REDUCE_COST)


# ----------------------------------------------------------------------------
# Agent adapter
# ----------------------------------------------------------------------------

def test_progressive_disclosure_and_refinement(triage, registry, catalog, sample_docs):
    session = FakeSession([
        {'directive': 'clarify_instructions', 'span': [0, 0]},
        {'action': 'read_next_doc'},
        {'params': [{'clarified_prompt': CLARIFIED}]},
        {'params': [{'clarified_prompt': CLARIFIED},
                    {'clarified_prompt': CLARIFIED + "\nReturn [] when no symptom is reported."}]},
    ])
    agent = _agent(catalog, session)
    context = _context(triage, registry)

    name, span = agent.choose_directive(context)
    assert (name, span) == ('clarify_instructions', (0, 0))
    d = registry.get(name)
    candidates = agent.instantiate(d, triage, span, Objective.IMPROVE_ACCURACY, ListDocPeek(sample_docs), context)
    assert len(candidates) == 2
    assert candidates[0]['clarified_prompt'] == CLARIFIED

    stages = [r['stage'] for r in session.requests]
    assert stages == ['choose', 'instantiate', 'instantiate', 'instantiate']

    choose_payload = session.requests[0]
    assert all('full_doc' not in m['content'] for m in choose_payload['messages'])
    briefs = _payload_objects(choose_payload)[0]['directives']
    assert {b['name'] for b in briefs} == set(registry.names)

    for payload in session.requests[1:]:
        specs = [o['directive'] for o in _payload_objects(payload) if isinstance(o, dict) and 'directive' in o
                 and isinstance(o['directive'], dict)]
        assert specs and specs[0]['full_doc'] == d.full_doc
        assert specs[0]['name'] == 'clarify_instructions'

    # The document read is answered with the first sample document
    second = session.requests[2]['messages']
    assert json.loads(second[-1]['content']) == {'document': sample_docs[0]}

    # Wrong candidate count is echoed back before the final answer
    last = session.requests[3]['messages']
    assert last[-1]['role'] == 'user'
    assert last[-1]['content'].startswith('Validation error:')
    assert session.closed == 2


def test_doc_reads_end_when_sample_is_exhausted(triage, registry, catalog):
    session = FakeSession([
        {'action': 'read_next_doc'},
        {'params': [{'clarified_prompt': CLARIFIED},
                    {'clarified_prompt': CLARIFIED + "\nBe brief."}]},
    ])
    agent = _agent(catalog, session)
    d = registry.get('clarify_instructions')
    agent.instantiate(d, triage, (0, 0), Objective.IMPROVE_ACCURACY, ListDocPeek([]), None)
    assert json.loads(session.requests[1]['messages'][-1]['content']) == {'end_of_sample': True}


def test_invalid_choice_is_retried_with_error(triage, registry, catalog):
    session = FakeSession([
        {'directive': 'not_a_directive', 'span': [0, 0]},
        {'directive': 'map_filter_fusion', 'span': [1, 1]},
        {'directive': 'map_filter_fusion', 'span': [0, 1]},
    ])
    agent = _agent(catalog, session)
    assert agent.choose_directive(_context(triage, registry)) == ('map_filter_fusion', (0, 1))
    feedback = [m['content'] for m in session.requests[2]['messages'] if m['content'].startswith('Invalid choice')]
    assert len(feedback) == 2


def test_choice_fails_after_retry_limit(triage, registry, catalog):
    session = FakeSession([{'directive': 'nope', 'span': [0, 0]}] * 3)
    with pytest.raises(InstantiationFailed):
        _agent(catalog, session).choose_directive(_context(triage, registry))
    assert len(session.requests) == 3


def test_invalid_params_exhaust_retries(triage, registry, catalog):
    dropped_placeholder = {'clarified_prompt': 'List the symptoms.'}
    session = FakeSession([{'params': [dropped_placeholder, dropped_placeholder]}] * 3)
    d = registry.get('clarify_instructions')
    with pytest.raises(InstantiationFailed):
        _agent(catalog, session).instantiate(d, triage, (0, 0), Objective.IMPROVE_ACCURACY)
    assert len(session.requests) == 3
    echoed = [m for m in session.requests[-1]['messages'] if m['content'].startswith('Validation error:')]
    assert len(echoed) == 2
    assert 'drops placeholders' in echoed[0]['content']


def test_transport_failures_become_endpoint_errors(triage, registry, catalog):
    down = FakeSession([requests.exceptions.ConnectionError("refused")])
    with pytest.raises(EndpointError):
        _agent(catalog, down).choose_directive(_context(triage, registry))

    garbled = FakeSession([ValueError("Expecting value")])
    with pytest.raises(EndpointError):
        _agent(catalog, garbled).choose_directive(_context(triage, registry))

    listed = FakeSession([['not', 'an', 'object']])
    with pytest.raises(EndpointError):
        _agent(catalog, listed).choose_directive(_context(triage, registry))
