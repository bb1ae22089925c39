#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Directive choice and parameter instantiation.

Three instantiators share one interface:
- StubInstantiator: deterministic preference tiers and template parameters (offline default)
- RandomInstantiator: uniform choice, used by the random baseline
- AgentInstantiator: JSON-over-HTTP agent with the two-stage disclosure protocol

Agent wire format (POST to AGENT_ENDPOINT, one session per call):
    request:  {"stage": "choose" | "instantiate", "messages": [{"role": ..., "content": ...}]}
    response: {"action": "read_next_doc"}
              {"directive": "<name>", "span": [start, end]}          (choose)
              {"params": [{...}, ...]}                                (instantiate)
A read_next_doc action is answered with a user message holding
{"document": {...}} or {"end_of_sample": true}.
"""

import json
import logging
import math
import os
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, FrozenSet, List, Optional, Sequence, Tuple, Union

import numpy as np
import requests

from optimizer.config import AGENT_TIMEOUT, MAX_DOC_READS, RETRY_LIMIT
from optimizer.directives import (
    FUSION_DIRECTIVES,
    MODEL_SUBSTITUTION,
    Category,
    Directive,
    Objective,
    RewriteRecord,
    Span,
    StubHints,
)
from optimizer.errors import (
    EndpointError,
    InstantiationFailed,
    InvalidParams,
    NoApplicableDirective,
    PipelineConfigError,
    RewriteProducesInvalidPipeline,
)
from optimizer.pipeline_ir import ModelCatalog, PipelineSpec

logger = logging.getLogger(__name__)

ACCURACY_TIER = ('clarify_instructions', 'doc_chunking', 'few_shot_examples')
STUB_PEEK_DOCS = 3

SYSTEM_PROMPT = (
    "You optimize semantic-operator pipelines. Pick one rewrite directive and a match site "
    "for the current pipeline, then instantiate its parameters. Respond with JSON only."
)


# ----------------------------------------------------------------------------
# Context and document peeking
# ----------------------------------------------------------------------------

@dataclass
class AgentContext:
    """Everything shown to the agent when choosing a directive for one node."""
    pipeline_yaml: str
    directive_briefs: List[Dict[str, Any]]
    explored_paths: List[Tuple[str, float, float]]
    current_path: str
    depth: int
    model_stats: Dict[str, Tuple[float, float]]
    directive_stats: Dict[str, Tuple[float, float]]
    objective: Objective
    model_catalog: List[Dict[str, Any]] = field(default_factory=list)
    # Not serialized
    pipeline: Optional[PipelineSpec] = field(default=None, repr=False)
    pruned: List[Directive] = field(default_factory=list, repr=False)
    usage: Dict[str, int] = field(default_factory=dict, repr=False)
    path: Tuple[RewriteRecord, ...] = field(default=(), repr=False)
    path_models: FrozenSet[str] = field(default=frozenset(), repr=False)
    messages: List[Dict[str, str]] = field(default_factory=list, repr=False)

    def __post_init__(self):
        for path, cost, accuracy in self.explored_paths:
            if not (math.isfinite(cost) and cost >= 0):
                raise ValueError(f"Explored path {path!r} has invalid cost {cost}")
            if not (math.isfinite(accuracy) and 0.0 <= accuracy <= 1.0):
                raise ValueError(f"Explored path {path!r} has invalid accuracy {accuracy}")

    def to_payload(self) -> Dict[str, Any]:
        return {
            'objective': self.objective.value,
            'pipeline_yaml': self.pipeline_yaml,
            'current_path': self.current_path,
            'depth': self.depth,
            'directives': self.directive_briefs,
            'explored_paths': [
                {'path': path, 'cost': cost, 'accuracy': accuracy}
                for path, cost, accuracy in self.explored_paths
            ],
            'model_stats': {m: {'cost': c, 'accuracy': a} for m, (c, a) in sorted(self.model_stats.items())},
            'directive_stats': {
                d: {'mean_delta_cost': c, 'mean_delta_accuracy': a}
                for d, (c, a) in sorted(self.directive_stats.items())
            },
            'models': self.model_catalog,
        }


class DocPeek(ABC):
    @abstractmethod
    def read_next_doc(self) -> Optional[Dict[str, Any]]:
        """Next sample document, or None at end of sample."""


class ListDocPeek(DocPeek):
    """Deterministic iteration over an in-memory sample."""

    def __init__(self, docs: Sequence[Dict[str, Any]] = ()):
        self._docs = list(docs)
        self._position = 0

    def read_next_doc(self) -> Optional[Dict[str, Any]]:
        if self._position >= len(self._docs):
            return None
        doc = self._docs[self._position]
        self._position += 1
        return doc


def load_sample(path: Union[str, Path]) -> List[Dict[str, Any]]:
    """Read a JSON-lines document sample."""
    path = Path(path)
    if not path.exists():
        raise PipelineConfigError(f"Sample file not found: {path}")
    docs = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as e:
                raise PipelineConfigError(f"{path}:{line_no}: invalid JSON: {e}")
            if not isinstance(doc, dict):
                raise PipelineConfigError(f"{path}:{line_no}: each line must be a JSON object")
            docs.append(doc)
    logger.info(f"Loaded {len(docs)} sample documents from {path.name}")
    return docs


def _peek_docs(peek: Optional[DocPeek], limit: int = STUB_PEEK_DOCS) -> List[Dict[str, Any]]:
    if peek is None:
        return []
    docs = []
    while len(docs) < limit:
        doc = peek.read_next_doc()
        if doc is None:
            break
        docs.append(doc)
    return docs


# ----------------------------------------------------------------------------
# Interface
# ----------------------------------------------------------------------------

class Instantiator(ABC):
    """Chooses a directive for a node and produces its candidate parameters."""

    name = 'instantiator'

    @abstractmethod
    def choose_directive(self, context: AgentContext) -> Tuple[str, Span]:
        """Directive name from context.pruned and one of its match sites."""

    @abstractmethod
    def instantiate(self, d: Directive, p: PipelineSpec, span: Span, objective: Objective,
                    peek: Optional[DocPeek] = None, context: Optional[AgentContext] = None) -> List[Dict[str, Any]]:
        """d.candidate_count parameter dicts, each valid against d's schema."""


# ----------------------------------------------------------------------------
# Rule-based stub
# ----------------------------------------------------------------------------

def _stub_tiers(context: AgentContext, catalog: ModelCatalog) -> List[List[Directive]]:
    by_name = {d.name: d for d in context.pruned}
    if context.objective == Objective.REDUCE_COST:
        tiers = []
        if MODEL_SUBSTITUTION in by_name and any(m not in context.path_models for m in catalog.model_ids):
            tiers.append([by_name[MODEL_SUBSTITUTION]])
        tiers.append([d for d in context.pruned if d.name in FUSION_DIRECTIVES])
        tiers.append([d for d in context.pruned if d.category == Category.CODE_SYNTHESIS])
    else:
        tiers = [[by_name[n] for n in ACCURACY_TIER if n in by_name]]
    tiers.append(list(context.pruned))
    return tiers


def stub_choose(context: AgentContext, catalog: ModelCatalog) -> Tuple[str, Span]:
    """
    Deterministic directive choice by preference tier, then lowest usage, then name.

    Raises:
        NoApplicableDirective: no pruned directive matches the pipeline anywhere
    """
    if context.pipeline is None:
        raise NoApplicableDirective("No pipeline in context")
    for tier in _stub_tiers(context, catalog):
        ranked = sorted(tier, key=lambda d: (context.usage.get(d.name, 0), d.name))
        for d in ranked:
            sites = d.match_sites(context.pipeline)
            if sites:
                return d.name, sites[0]
    raise NoApplicableDirective(f"No directive applies to {context.pipeline.name}")


def stub_instantiate(d: Directive, p: PipelineSpec, span: Span, objective: Objective,
                     catalog: ModelCatalog, peek: Optional[DocPeek] = None,
                     path_models: FrozenSet[str] = frozenset()) -> List[Dict[str, Any]]:
    """Template parameters, one per candidate, deterministic in (d, p, span, objective)."""
    hints = StubHints(catalog=catalog, docs=_peek_docs(peek), path_models=frozenset(path_models))
    params = d.stub_params(p, tuple(span), objective, hints)
    return [dict(candidate) for candidate in params[:d.candidate_count]]


class StubInstantiator(Instantiator):
    name = 'stub'

    def __init__(self, catalog: ModelCatalog):
        self.catalog = catalog

    def choose_directive(self, context: AgentContext) -> Tuple[str, Span]:
        return stub_choose(context, self.catalog)

    def instantiate(self, d, p, span, objective, peek=None, context=None):
        path_models = context.path_models if context is not None else frozenset()
        return stub_instantiate(d, p, span, objective, self.catalog, peek, path_models)


class RandomInstantiator(StubInstantiator):
    """Uniform over applicable directives and their match sites; template parameters."""

    name = 'random'

    def __init__(self, catalog: ModelCatalog, seed: int = 0):
        super().__init__(catalog)
        self._rng = np.random.default_rng(seed)
        self._lock = threading.Lock()

    def choose_directive(self, context: AgentContext) -> Tuple[str, Span]:
        options = [(d.name, site) for d in context.pruned for site in d.match_sites(context.pipeline)]
        if not options:
            raise NoApplicableDirective(f"No directive applies to {context.pipeline.name}")
        with self._lock:
            index = int(self._rng.integers(len(options)))
        return options[index]


# ----------------------------------------------------------------------------
# External agent
# ----------------------------------------------------------------------------

class AgentInstantiator(Instantiator):
    """
    Two-stage agent protocol over HTTP.

    Stage 1 sends only the directive briefs; stage 2 sends the chosen directive's
    full specification. Invalid answers are echoed back for refinement up to
    retry_limit attempts.
    """

    name = 'agent'

    def __init__(self, endpoint: str, catalog: ModelCatalog, timeout: float = AGENT_TIMEOUT,
                 retry_limit: int = RETRY_LIMIT, max_doc_reads: int = MAX_DOC_READS,
                 session_factory: Callable[[], Any] = requests.Session):
        self.endpoint = endpoint
        self.catalog = catalog
        self.timeout = timeout
        self.retry_limit = retry_limit
        self.max_doc_reads = max_doc_reads
        self.session_factory = session_factory

    def _post(self, session, stage: str, messages: List[Dict[str, str]]) -> Dict[str, Any]:
        payload = {'stage': stage, 'messages': messages}
        try:
            response = session.post(self.endpoint, json=payload, timeout=self.timeout)
            response.raise_for_status()
            body = response.json()
        except requests.exceptions.RequestException as e:
            raise EndpointError(f"Agent endpoint {self.endpoint} failed: {e}")
        except ValueError as e:
            raise EndpointError(f"Agent endpoint returned non-JSON body: {e}")
        if not isinstance(body, dict):
            raise EndpointError(f"Agent endpoint returned {type(body).__name__}, expected an object")
        return body

    def _converse(self, session, stage: str, messages: List[Dict[str, str]],
                  peek: Optional[DocPeek]) -> Dict[str, Any]:
        """Post until the agent answers with something other than a document read."""
        reads = 0
        while True:
            body = self._post(session, stage, messages)
            if body.get('action') != 'read_next_doc':
                messages.append({'role': 'assistant', 'content': json.dumps(body, sort_keys=True)})
                return body
            messages.append({'role': 'assistant', 'content': json.dumps(body, sort_keys=True)})
            doc = peek.read_next_doc() if (peek is not None and reads < self.max_doc_reads) else None
            reads += 1
            reply = {'document': doc} if doc is not None else {'end_of_sample': True}
            messages.append({'role': 'user', 'content': json.dumps(reply, sort_keys=True, default=str)})

    def choose_directive(self, context: AgentContext) -> Tuple[str, Span]:
        allowed = {d.name: d for d in context.pruned}
        messages = [
            {'role': 'system', 'content': SYSTEM_PROMPT},
            {'role': 'user', 'content': json.dumps(context.to_payload(), sort_keys=True)},
        ]
        session = self.session_factory()
        try:
            for attempt in range(1, self.retry_limit + 1):
                body = self._converse(session, 'choose', messages, None)
                try:
                    name = body.get('directive')
                    if name not in allowed:
                        raise InvalidParams(f"directive {name!r} is not one of {sorted(allowed)}")
                    span = tuple(int(i) for i in body.get('span') or ())
                    sites = allowed[name].match_sites(context.pipeline)
                    if span not in sites:
                        raise InvalidParams(f"span {list(span)} is not a match site of {name}; sites: "
                                            f"{[list(s) for s in sites]}")
                except (InvalidParams, TypeError, ValueError) as e:
                    logger.warning(f"Agent choice rejected (attempt {attempt}/{self.retry_limit}): {e}")
                    messages.append({'role': 'user', 'content': f"Invalid choice: {e}. Choose again."})
                    continue
                context.messages = messages
                return name, span
        finally:
            session.close()
        raise InstantiationFailed(f"Agent failed to choose a valid directive after {self.retry_limit} attempts")

    def instantiate(self, d, p, span, objective, peek=None, context=None):
        messages = list(context.messages) if context is not None and context.messages else [
            {'role': 'system', 'content': SYSTEM_PROMPT},
        ]
        start, end = span
        request = {
            'directive': d.full_spec(),
            'objective': objective.value,
            'target_span': [start, end],
            'target_operators': [op.id for op in p.operators[start:end + 1]],
            'candidate_count': d.candidate_count,
        }
        messages.append({'role': 'user', 'content': json.dumps(request, sort_keys=True, default=str)})
        session = self.session_factory()
        try:
            for attempt in range(1, self.retry_limit + 1):
                body = self._converse(session, 'instantiate', messages, peek)
                try:
                    candidates = self._check_candidates(d, p, span, objective, body.get('params'))
                except (InvalidParams, RewriteProducesInvalidPipeline) as e:
                    logger.warning(f"Agent params for {d.name} rejected (attempt {attempt}/{self.retry_limit}): {e}")
                    messages.append({'role': 'user', 'content': f"Validation error: {e}. Fix the parameters."})
                    continue
                return candidates
        finally:
            session.close()
        raise InstantiationFailed(f"Agent failed to instantiate {d.name} after {self.retry_limit} attempts")

    def _check_candidates(self, d, p, span, objective, raw) -> List[Dict[str, Any]]:
        if isinstance(raw, dict):
            raw = [raw]
        if not isinstance(raw, list) or len(raw) != d.candidate_count:
            raise InvalidParams(f"expected a list of {d.candidate_count} parameter objects")
        candidates = []
        for params in raw:
            validated = d.validate_params(params, p, span)
            record = RewriteRecord(d.name, tuple(span), params, objective)
            d.apply(p, record, self.catalog)
            candidates.append(validated.model_dump())
        return candidates


def make_instantiator(catalog: ModelCatalog, endpoint: Optional[str] = None,
                      strategy: str = 'uct', seed: int = 0) -> Instantiator:
    """Agent adapter when an endpoint is configured, otherwise the offline stub."""
    endpoint = endpoint or os.environ.get('AGENT_ENDPOINT')
    if strategy == 'random':
        return RandomInstantiator(catalog, seed)
    if endpoint:
        logger.info(f"Using agent endpoint {endpoint}")
        return AgentInstantiator(endpoint, catalog)
    return StubInstantiator(catalog)
