#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Pipeline intermediate representation.
Operator and pipeline types, schema threading, validation, the cost model,
canonical serialization and YAML file I/O.
"""

import hashlib
import json
import logging
import math
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple, Union

import yaml

from optimizer.errors import IndexOutOfRange, PipelineConfigError, UnknownModel

logger = logging.getLogger(__name__)

# Configuration
SCHEMA_TYPES = ('string', 'number', 'boolean', 'list[string]', 'list[object]')

PLACEHOLDER_RE = re.compile(r"\{\{\s*input\.([A-Za-z_][A-Za-z0-9_]*)\s*\}\}")
CODE_REF_RE = re.compile(r"""\b(?:input|doc|item)\[\s*['"]([A-Za-z_][A-Za-z0-9_]*)['"]\s*\]""")

TOKENS_PER_WORD = 1.3


class OperatorType(str, Enum):
    MAP = 'map'
    PARALLEL_MAP = 'parallel_map'
    REDUCE = 'reduce'
    FILTER = 'filter'
    SPLIT = 'split'
    GATHER = 'gather'
    UNNEST = 'unnest'
    SAMPLE = 'sample'
    EXTRACT = 'extract'
    CODE_MAP = 'code_map'
    CODE_REDUCE = 'code_reduce'
    CODE_FILTER = 'code_filter'

    @property
    def is_llm(self) -> bool:
        return self in LLM_TYPES

    @property
    def is_code(self) -> bool:
        return self in CODE_TYPES


LLM_TYPES = frozenset({
    OperatorType.MAP, OperatorType.PARALLEL_MAP, OperatorType.REDUCE,
    OperatorType.FILTER, OperatorType.EXTRACT,
})
CODE_TYPES = frozenset({OperatorType.CODE_MAP, OperatorType.CODE_REDUCE, OperatorType.CODE_FILTER})
AUX_TYPES = frozenset({OperatorType.SPLIT, OperatorType.GATHER, OperatorType.UNNEST, OperatorType.SAMPLE})
GROUPING_TYPES = frozenset({OperatorType.REDUCE, OperatorType.CODE_REDUCE})
FILTER_TYPES = frozenset({OperatorType.FILTER, OperatorType.CODE_FILTER})
SCHEMA_REQUIRED_TYPES = frozenset({
    OperatorType.MAP, OperatorType.PARALLEL_MAP, OperatorType.REDUCE, OperatorType.EXTRACT,
    OperatorType.CODE_MAP, OperatorType.CODE_REDUCE,
})


class SamplingMethod(str, Enum):
    RANDOM = 'random'
    BM25 = 'bm25'
    EMBEDDING = 'embedding'
    STRATIFIED = 'stratified'


Schema = Tuple[Tuple[str, str], ...]


def _freeze(value: Any) -> Any:
    """Turn lists/dicts into hashable tuples so operator configs stay immutable."""
    if isinstance(value, (list, tuple)):
        return tuple(_freeze(v) for v in value)
    if isinstance(value, dict):
        return tuple(sorted((str(k), _freeze(v)) for k, v in value.items()))
    return value


def _thaw(value: Any) -> Any:
    if isinstance(value, tuple):
        return [_thaw(v) for v in value]
    return value


def normalize_schema(schema: Union[Mapping[str, str], Iterable[Tuple[str, str]], None]) -> Schema:
    """Sorted (key, type) tuple form of an output schema."""
    if not schema:
        return ()
    items = schema.items() if isinstance(schema, Mapping) else schema
    return tuple(sorted((str(k), str(v)) for k, v in items))


def placeholders(text: Optional[str]) -> List[str]:
    """Keys referenced as {{ input.<key> }} in a prompt template."""
    if not text:
        return []
    return PLACEHOLDER_RE.findall(text)


def code_references(code: Optional[str]) -> List[str]:
    """Keys referenced as input["key"] / doc["key"] / item["key"] in a code body."""
    if not code:
        return []
    return CODE_REF_RE.findall(code)


def prompt_tokens(text: Optional[str]) -> float:
    if not text:
        return 0.0
    return len(text.split()) * TOKENS_PER_WORD


# ----------------------------------------------------------------------------
# Operator and pipeline types
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplingSpec:
    method: SamplingMethod
    k: int
    query: Optional[str] = None
    strata_keys: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'method', SamplingMethod(self.method))
        object.__setattr__(self, 'strata_keys', tuple(self.strata_keys or ()))

    def violations(self) -> List[str]:
        problems = []
        if not isinstance(self.k, int) or self.k < 1:
            problems.append(f"sample size must be a positive integer, got {self.k!r}")
        needs_query = self.method in (SamplingMethod.BM25, SamplingMethod.EMBEDDING)
        if needs_query and not self.query:
            problems.append(f"method {self.method.value} requires a query")
        if not needs_query and self.query:
            problems.append(f"method {self.method.value} does not take a query")
        if self.method == SamplingMethod.STRATIFIED and not self.strata_keys:
            problems.append("stratified sampling requires strata_keys")
        if self.method != SamplingMethod.STRATIFIED and self.strata_keys:
            problems.append(f"method {self.method.value} does not take strata_keys")
        return problems

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {'method': self.method.value, 'k': self.k}
        if self.query is not None:
            data['query'] = self.query
        if self.strata_keys:
            data['strata_keys'] = list(self.strata_keys)
        return data


@dataclass(frozen=True)
class Branch:
    """One (prompt, schema) pair of a parallel_map."""
    prompt_template: str
    output_schema: Schema

    def __post_init__(self):
        object.__setattr__(self, 'output_schema', normalize_schema(self.output_schema))

    def to_dict(self) -> Dict[str, Any]:
        return {'prompt_template': self.prompt_template, 'output_schema': dict(self.output_schema)}


@dataclass(frozen=True)
class OperatorConfig:
    id: str
    op_type: OperatorType
    prompt_template: Optional[str] = None
    code_body: Optional[str] = None
    output_schema: Schema = ()
    model: Optional[str] = None
    group_by_keys: Tuple[str, ...] = ()
    sampling: Optional[SamplingSpec] = None
    branches: Tuple[Branch, ...] = ()
    extras: Tuple[Tuple[str, Any], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'op_type', OperatorType(self.op_type))
        object.__setattr__(self, 'group_by_keys', tuple(self.group_by_keys or ()))
        object.__setattr__(self, 'branches', tuple(self.branches or ()))
        object.__setattr__(self, 'extras', _freeze(dict(self.extras or ())))
        schema = normalize_schema(self.output_schema)
        if self.op_type == OperatorType.PARALLEL_MAP and not schema and self.branches:
            merged: Dict[str, str] = {}
            for branch in self.branches:
                merged.update(dict(branch.output_schema))
            schema = normalize_schema(merged)
        object.__setattr__(self, 'output_schema', schema)

    @property
    def schema(self) -> Dict[str, str]:
        return dict(self.output_schema)

    @property
    def schema_keys(self) -> List[str]:
        return [k for k, _ in self.output_schema]

    @property
    def is_llm(self) -> bool:
        return self.op_type.is_llm

    @property
    def is_code(self) -> bool:
        return self.op_type.is_code

    def extra(self, key: str, default: Any = None) -> Any:
        return dict(self.extras).get(key, default)

    @property
    def rewrites(self) -> Tuple[str, ...]:
        """Names of the directives that created or modified this operator."""
        return tuple(self.extra('rewrites', ()))

    def prompts(self) -> List[str]:
        if self.op_type == OperatorType.PARALLEL_MAP:
            return [b.prompt_template for b in self.branches]
        return [self.prompt_template] if self.prompt_template else []

    def referenced_keys(self) -> List[str]:
        """Every upstream key this operator reads, in first-use order."""
        refs: List[str] = []
        for prompt in self.prompts():
            refs.extend(placeholders(prompt))
        refs.extend(code_references(self.code_body))
        refs.extend(self.group_by_keys)
        if self.sampling is not None:
            refs.extend(placeholders(self.sampling.query))
            refs.extend(self.sampling.strata_keys)
        for extra_key in ('split_key', 'content_key', 'unnest_key', 'source_key'):
            value = self.extra(extra_key)
            if value:
                refs.append(value)
        seen = set()
        return [k for k in refs if not (k in seen or seen.add(k))]

    def with_changes(self, **changes) -> 'OperatorConfig':
        if 'extras' in changes and isinstance(changes['extras'], dict):
            changes['extras'] = tuple(changes['extras'].items())
        return replace(self, **changes)

    def with_extras(self, **updates) -> 'OperatorConfig':
        merged = {k: _thaw(v) for k, v in self.extras}
        merged.update(updates)
        return replace(self, extras=tuple(merged.items()))

    def tagged(self, directive_name: str) -> 'OperatorConfig':
        """Copy carrying directive_name in its provenance tags."""
        return self.with_extras(rewrites=list(self.rewrites) + [directive_name])


@dataclass(frozen=True)
class PipelineSpec:
    operators: Tuple[OperatorConfig, ...]
    input_keys: FrozenSet[str]
    name: str = 'pipeline'

    def __post_init__(self):
        object.__setattr__(self, 'operators', tuple(self.operators))
        object.__setattr__(self, 'input_keys', frozenset(self.input_keys))

    def __len__(self) -> int:
        return len(self.operators)

    @property
    def op_ids(self) -> List[str]:
        return [op.id for op in self.operators]

    def with_operators(self, operators: Iterable[OperatorConfig]) -> 'PipelineSpec':
        return replace(self, operators=tuple(operators))

    def fresh_id(self, base: str, taken: Optional[Iterable[str]] = None) -> str:
        """Deterministic operator id not used in this pipeline."""
        used = set(self.op_ids) | set(taken or ())
        if base not in used:
            return base
        suffix = 2
        while f"{base}_{suffix}" in used:
            suffix += 1
        return f"{base}_{suffix}"


@dataclass(frozen=True)
class ModelEntry:
    model_id: str
    family: str
    input_price_per_token: float
    output_price_per_token: float
    context_window_tokens: int
    quality_hint: float = 0.5
    long_context_score: Optional[float] = None

    @property
    def blended_price(self) -> float:
        return self.input_price_per_token + self.output_price_per_token

    def to_dict(self) -> Dict[str, Any]:
        data = {
            'model_id': self.model_id,
            'family': self.family,
            'input_price_per_token': self.input_price_per_token,
            'output_price_per_token': self.output_price_per_token,
            'context_window_tokens': self.context_window_tokens,
            'quality_hint': self.quality_hint,
        }
        if self.long_context_score is not None:
            data['long_context_score'] = self.long_context_score
        return data


@dataclass(frozen=True)
class ModelCatalog:
    entries: Tuple[ModelEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, 'entries', tuple(self.entries))
        seen = set()
        for entry in self.entries:
            if entry.model_id in seen:
                raise PipelineConfigError(f"Duplicate model_id in catalog: {entry.model_id}")
            seen.add(entry.model_id)
            if entry.input_price_per_token < 0 or entry.output_price_per_token < 0:
                raise PipelineConfigError(f"Negative price for model {entry.model_id}")
            if entry.context_window_tokens <= 0:
                raise PipelineConfigError(f"Non-positive context window for model {entry.model_id}")
            if not entry.family:
                raise PipelineConfigError(f"Model {entry.model_id} has no family")
            if not 0.0 <= entry.quality_hint <= 1.0:
                raise PipelineConfigError(f"quality_hint out of [0,1] for model {entry.model_id}")

    def __contains__(self, model_id: str) -> bool:
        return any(e.model_id == model_id for e in self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def model_ids(self) -> List[str]:
        return [e.model_id for e in self.entries]

    def get(self, model_id: str) -> ModelEntry:
        for entry in self.entries:
            if entry.model_id == model_id:
                return entry
        raise UnknownModel(model_id)

    def families(self) -> Dict[str, List[ModelEntry]]:
        grouped: Dict[str, List[ModelEntry]] = {}
        for entry in self.entries:
            grouped.setdefault(entry.family, []).append(entry)
        return grouped

    def cheapest(self, exclude: Iterable[str] = ()) -> Optional[ModelEntry]:
        excluded = set(exclude)
        candidates = [e for e in self.entries if e.model_id not in excluded]
        if not candidates:
            return None
        return min(candidates, key=lambda e: (e.blended_price, e.model_id))

    def most_accurate(self, exclude: Iterable[str] = ()) -> Optional[ModelEntry]:
        excluded = set(exclude)
        candidates = [e for e in self.entries if e.model_id not in excluded]
        if not candidates:
            return None
        return min(candidates, key=lambda e: (-e.quality_hint, e.blended_price, e.model_id))

    def subset(self, model_ids: Iterable[str]) -> 'ModelCatalog':
        wanted = list(model_ids)
        return ModelCatalog(tuple(self.get(m) for m in wanted))

    def to_dict(self) -> Dict[str, Any]:
        return {'models': [e.to_dict() for e in self.entries]}


@dataclass(frozen=True)
class OperatorLoad:
    """Per-call token counts and number of calls for one operator."""
    input_tokens: Optional[float] = None
    output_tokens: Optional[float] = None
    documents: Optional[float] = None


DEFAULT_OUTPUT_TOKENS = {
    'string': 50.0,
    'number': 5.0,
    'boolean': 2.0,
    'list[string]': 80.0,
    'list[object]': 150.0,
}


@dataclass(frozen=True)
class WorkloadProfile:
    """Token and document statistics used by the cost model."""
    catalog: ModelCatalog
    num_documents: float = 100.0
    key_tokens: Tuple[Tuple[str, float], ...] = ()
    default_key_tokens: float = 200.0
    prompt_overhead_tokens: float = 50.0
    output_tokens_by_type: Tuple[Tuple[str, float], ...] = ()
    filter_selectivity: float = 0.5
    group_count: float = 10.0
    unnest_fanout: float = 3.0
    overrides: Tuple[Tuple[str, OperatorLoad], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'key_tokens', tuple(sorted(dict(self.key_tokens).items())))
        merged = dict(DEFAULT_OUTPUT_TOKENS)
        merged.update(dict(self.output_tokens_by_type))
        object.__setattr__(self, 'output_tokens_by_type', tuple(sorted(merged.items())))
        object.__setattr__(self, 'overrides', tuple(dict(self.overrides).items()))

    def tokens_for(self, key: str) -> float:
        return dict(self.key_tokens).get(key, self.default_key_tokens)

    def output_tokens_for(self, schema_type: str) -> float:
        return dict(self.output_tokens_by_type).get(schema_type, DEFAULT_OUTPUT_TOKENS['string'])

    def override_for(self, op_id: str) -> Optional[OperatorLoad]:
        return dict(self.overrides).get(op_id)

    def with_catalog(self, catalog: ModelCatalog) -> 'WorkloadProfile':
        return replace(self, catalog=catalog)


# ----------------------------------------------------------------------------
# Schema threading
# ----------------------------------------------------------------------------

def split_output_keys(op: OperatorConfig) -> Tuple[str, str]:
    split_key = op.extra('split_key', '')
    chunk_key = op.extra('chunk_key_out') or f"{split_key}_chunk"
    parent_key = op.extra('parent_key_out') or f"{split_key}_parent_id"
    return chunk_key, parent_key


def gather_output_key(op: OperatorConfig) -> str:
    content_key = op.extra('content_key', '')
    return op.extra('rendered_key_out') or f"{content_key}_rendered"


def keys_after_operator(op: OperatorConfig, keys: FrozenSet[str]) -> FrozenSet[str]:
    """Key set visible downstream of op given the keys visible upstream."""
    op_type = op.op_type
    if op_type in GROUPING_TYPES:
        return frozenset(op.group_by_keys) | frozenset(op.schema_keys)
    if op_type == OperatorType.SPLIT:
        chunk_key, parent_key = split_output_keys(op)
        return (keys - {op.extra('split_key')}) | {chunk_key, parent_key}
    if op_type == OperatorType.GATHER:
        return keys | {gather_output_key(op)}
    if op_type in (OperatorType.UNNEST, OperatorType.SAMPLE):
        return keys
    return keys | frozenset(op.schema_keys)


def available_keys_after(p: PipelineSpec, i: int) -> FrozenSet[str]:
    """
    Key set visible to operator i+1 (0-based: the keys after the first i operators).

    Raises:
        IndexOutOfRange: when i is outside 0..len(p.operators)
    """
    if not isinstance(i, int) or i < 0 or i > len(p.operators):
        raise IndexOutOfRange(f"index {i} outside 0..{len(p.operators)}")
    keys = frozenset(p.input_keys)
    for op in p.operators[:i]:
        keys = keys_after_operator(op, keys)
    return keys


# ----------------------------------------------------------------------------
# Validation
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    op_id: str
    rule: str
    message: str

    def __str__(self) -> str:
        return f"[{self.op_id}] {self.rule}: {self.message}"


@dataclass
class ValidationReport:
    violations: List[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, op_id: str, rule: str, message: str):
        self.violations.append(Violation(op_id, rule, message))

    def rules(self) -> List[str]:
        return [v.rule for v in self.violations]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'ok': self.ok,
            'violations': [{'op_id': v.op_id, 'rule': v.rule, 'message': v.message} for v in self.violations],
        }


def _check_operator_class(op: OperatorConfig, report: ValidationReport):
    has_prompt = bool(op.prompts())
    has_code = bool(op.code_body)
    if op.is_llm:
        if not op.model:
            report.add(op.id, 'wrong_class', f"LLM operator {op.op_type.value} must carry a model")
        if has_code or not has_prompt:
            report.add(op.id, 'wrong_class', f"LLM operator {op.op_type.value} needs a prompt and no code body")
        if op.op_type == OperatorType.PARALLEL_MAP and op.prompt_template:
            report.add(op.id, 'wrong_class', "parallel_map prompts live in its branches")
    else:
        if op.model:
            report.add(op.id, 'wrong_class', f"non-LLM operator {op.op_type.value} must not carry a model")
        if has_prompt:
            report.add(op.id, 'wrong_class', f"non-LLM operator {op.op_type.value} must not carry a prompt")
        if op.is_code and not has_code:
            report.add(op.id, 'wrong_class', f"code operator {op.op_type.value} needs a code body")
        if not op.is_code and has_code:
            report.add(op.id, 'wrong_class', f"auxiliary operator {op.op_type.value} must not carry code")


def _check_schema(op: OperatorConfig, report: ValidationReport):
    for key, schema_type in op.output_schema:
        if schema_type not in SCHEMA_TYPES:
            report.add(op.id, 'invalid_schema_type', f"key {key} has unsupported type {schema_type}")
    if op.op_type in SCHEMA_REQUIRED_TYPES and not op.output_schema:
        report.add(op.id, 'empty_schema', f"{op.op_type.value} requires a non-empty output schema")
    if op.op_type in FILTER_TYPES:
        if len(op.output_schema) != 1 or op.output_schema[0][1] != 'boolean':
            report.add(op.id, 'filter_schema', "filters output exactly one boolean key")
    if op.op_type in AUX_TYPES and op.output_schema:
        report.add(op.id, 'unexpected_schema', f"{op.op_type.value} does not declare an output schema")
    if op.op_type == OperatorType.PARALLEL_MAP:
        if not op.branches:
            report.add(op.id, 'empty_branches', "parallel_map requires at least one branch")
        for branch in op.branches:
            if not branch.output_schema:
                report.add(op.id, 'empty_schema', "every parallel_map branch needs an output schema")


def _check_structure(op: OperatorConfig, report: ValidationReport):
    if op.op_type in GROUPING_TYPES and not op.group_by_keys:
        report.add(op.id, 'missing_group_key', f"{op.op_type.value} requires group_by_keys")
    if op.op_type not in GROUPING_TYPES and op.group_by_keys and op.op_type != OperatorType.SAMPLE:
        report.add(op.id, 'unexpected_group_key', f"{op.op_type.value} does not group")
    if op.op_type == OperatorType.SAMPLE:
        if op.sampling is None:
            report.add(op.id, 'sampling', "sample operator requires a sampling spec")
        else:
            for problem in op.sampling.violations():
                report.add(op.id, 'sampling', problem)
    elif op.sampling is not None:
        report.add(op.id, 'sampling', f"{op.op_type.value} does not take a sampling spec")
    if op.op_type == OperatorType.SPLIT:
        if not op.extra('split_key'):
            report.add(op.id, 'missing_extra', "split requires extras.split_key")
        chunk_size = op.extra('chunk_size')
        if not isinstance(chunk_size, int) or chunk_size < 1:
            report.add(op.id, 'missing_extra', "split requires a positive integer extras.chunk_size")
    if op.op_type == OperatorType.GATHER and not op.extra('content_key'):
        report.add(op.id, 'missing_extra', "gather requires extras.content_key")
    if op.op_type == OperatorType.UNNEST and not op.extra('unnest_key'):
        report.add(op.id, 'missing_extra', "unnest requires extras.unnest_key")


def validate_pipeline(p: PipelineSpec) -> ValidationReport:
    """Check well-formedness; never raises."""
    report = ValidationReport()
    if not p.operators:
        report.add('<pipeline>', 'empty_pipeline', "pipeline has no operators")
        return report

    seen_ids = set()
    keys = frozenset(p.input_keys)
    for op in p.operators:
        if op.id in seen_ids:
            report.add(op.id, 'duplicate_id', f"operator id {op.id} is used twice")
        seen_ids.add(op.id)

        _check_operator_class(op, report)
        _check_schema(op, report)
        _check_structure(op, report)

        for key in op.group_by_keys:
            if key not in keys:
                report.add(op.id, 'missing_group_key', f"group-by key {key} is not produced upstream")
        non_group_refs = [k for k in op.referenced_keys() if k not in op.group_by_keys]
        for key in non_group_refs:
            if key not in keys:
                report.add(op.id, 'dangling_placeholder', f"key {key} is not available upstream")

        keys = keys_after_operator(op, keys)
    return report


# ----------------------------------------------------------------------------
# Cost model
# ----------------------------------------------------------------------------

@dataclass
class _FlowState:
    documents: float
    tokens: Dict[str, float]
    parents: float


def _output_tokens(op: OperatorConfig, profile: WorkloadProfile, schema: Schema) -> float:
    fixed = op.extra('output_tokens')
    if fixed is not None:
        return float(fixed)
    return sum(profile.output_tokens_for(t) for _, t in schema)


def _call_input_tokens(prompt: str, profile: WorkloadProfile, state: _FlowState, per_call_docs: float = 1.0) -> float:
    referenced = sum(state.tokens.get(k, profile.tokens_for(k)) for k in set(placeholders(prompt)))
    return profile.prompt_overhead_tokens + prompt_tokens(prompt) + per_call_docs * referenced


def _source_tokens(op: OperatorConfig, state: _FlowState, profile: WorkloadProfile) -> float:
    source = op.extra('source_key')
    if not source:
        return profile.default_key_tokens
    return state.tokens.get(source, profile.tokens_for(source))


def _operator_cost(op: OperatorConfig, profile: WorkloadProfile, state: _FlowState) -> float:
    if not op.is_llm:
        return 0.0
    entry = profile.catalog.get(op.model)
    override = profile.override_for(op.id) or OperatorLoad()

    if op.op_type == OperatorType.REDUCE:
        calls = min(state.documents, _group_count(op, profile, state))
        docs_per_call = state.documents / calls if calls else 0.0
        input_tokens = _call_input_tokens(op.prompt_template, profile, state, docs_per_call)
        output_tokens = _output_tokens(op, profile, op.output_schema)
    elif op.op_type == OperatorType.PARALLEL_MAP:
        calls = state.documents
        input_tokens = sum(_call_input_tokens(b.prompt_template, profile, state) for b in op.branches)
        output_tokens = sum(_output_tokens(op, profile, b.output_schema) for b in op.branches)
    elif op.op_type == OperatorType.EXTRACT:
        calls = state.documents
        input_tokens = _call_input_tokens(op.prompt_template, profile, state)
        output_tokens = float(op.extra('output_tokens', 20.0))
    else:
        calls = state.documents
        input_tokens = _call_input_tokens(op.prompt_template, profile, state)
        output_tokens = _output_tokens(op, profile, op.output_schema)

    if override.input_tokens is not None:
        input_tokens = override.input_tokens
    if override.output_tokens is not None:
        output_tokens = override.output_tokens
    if override.documents is not None:
        calls = override.documents

    return calls * (input_tokens * entry.input_price_per_token + output_tokens * entry.output_price_per_token)


def _group_count(op: OperatorConfig, profile: WorkloadProfile, state: _FlowState) -> float:
    explicit = op.extra('group_count')
    if explicit is not None:
        return float(explicit)
    if op.extra('per_parent') and state.parents:
        return state.parents
    return float(profile.group_count)


def _advance(op: OperatorConfig, profile: WorkloadProfile, state: _FlowState):
    """Move document and token estimates past one operator."""
    op_type = op.op_type
    if op_type in FILTER_TYPES:
        state.documents *= float(op.extra('selectivity', profile.filter_selectivity))
    if op_type in GROUPING_TYPES:
        state.documents = min(state.documents, _group_count(op, profile, state))
        kept = {k: state.tokens.get(k, profile.tokens_for(k)) for k in op.group_by_keys}
        state.tokens = kept
    elif op_type == OperatorType.SPLIT:
        split_key = op.extra('split_key')
        chunk_size = float(op.extra('chunk_size', 1000))
        source = state.tokens.pop(split_key, profile.tokens_for(split_key))
        chunks = max(1.0, math.ceil(source / chunk_size))
        state.parents = state.documents
        state.documents *= chunks
        chunk_key, parent_key = split_output_keys(op)
        state.tokens[chunk_key] = min(source, chunk_size)
        state.tokens[parent_key] = 2.0
    elif op_type == OperatorType.GATHER:
        content = op.extra('content_key')
        window = 1 + int(op.extra('context_before', 0)) + int(op.extra('context_after', 0))
        state.tokens[gather_output_key(op)] = state.tokens.get(content, profile.tokens_for(content)) * window
    elif op_type == OperatorType.SAMPLE:
        groups = _group_count(op, profile, state) if op.group_by_keys else 1.0
        state.documents = min(state.documents, op.sampling.k * max(groups, 1.0))
    elif op_type == OperatorType.UNNEST:
        state.documents *= float(op.extra('fanout', profile.unnest_fanout))

    if op_type in AUX_TYPES:
        return
    source_tokens = _source_tokens(op, state, profile) if op.extra('source_key') else None
    for key, schema_type in op.output_schema:
        if source_tokens is not None and op.extra('retain_ratio') is not None:
            state.tokens[key] = source_tokens * float(op.extra('retain_ratio'))
        elif source_tokens is not None and op.extra('head_words') is not None:
            kept_words = int(op.extra('head_words')) + int(op.extra('tail_words', 0))
            state.tokens[key] = min(source_tokens, kept_words * TOKENS_PER_WORD)
        elif op.extra('output_tokens') is not None:
            state.tokens[key] = float(op.extra('output_tokens'))
        else:
            state.tokens[key] = profile.output_tokens_for(schema_type)


def operator_costs(p: PipelineSpec, profile: WorkloadProfile) -> List[float]:
    """
    Per-operator cost in pipeline order.

    Raises:
        UnknownModel: if an LLM operator's model is not in the profile's catalog
    """
    state = _FlowState(
        documents=float(profile.num_documents),
        tokens={k: profile.tokens_for(k) for k in p.input_keys},
        parents=0.0,
    )
    costs = []
    for op in p.operators:
        costs.append(_operator_cost(op, profile, state))
        _advance(op, profile, state)
    return costs


def estimate_cost(p: PipelineSpec, profile: WorkloadProfile) -> float:
    """Sum of operator costs; code and auxiliary operators contribute exactly 0."""
    return float(sum(operator_costs(p, profile)))


def llm_call_count(p: PipelineSpec) -> int:
    """LLM passes per document (parallel_map counts each branch)."""
    count = 0
    for op in p.operators:
        if op.op_type == OperatorType.PARALLEL_MAP:
            count += len(op.branches)
        elif op.is_llm:
            count += 1
    return count


def llm_models(p: PipelineSpec) -> List[str]:
    return [op.model for op in p.operators if op.is_llm]


def with_model(p: PipelineSpec, model_id: str) -> PipelineSpec:
    """Copy of p with model_id substituted into every LLM operator."""
    return p.with_operators(
        op.with_changes(model=model_id) if op.is_llm else op for op in p.operators
    )


# ----------------------------------------------------------------------------
# Serialization
# ----------------------------------------------------------------------------

def operator_to_dict(op: OperatorConfig, include_id: bool = True) -> Dict[str, Any]:
    data: Dict[str, Any] = {}
    if include_id:
        data['id'] = op.id
    data['type'] = op.op_type.value
    if op.model:
        data['model'] = op.model
    if op.prompt_template is not None:
        data['prompt_template'] = op.prompt_template
    if op.code_body is not None:
        data['code_body'] = op.code_body
    if op.output_schema:
        data['output_schema'] = dict(op.output_schema)
    if op.group_by_keys:
        data['group_by_keys'] = list(op.group_by_keys)
    if op.sampling is not None:
        data['sampling'] = op.sampling.to_dict()
    if op.branches:
        data['branches'] = [b.to_dict() for b in op.branches]
    if op.extras:
        data['extras'] = {k: _thaw(v) for k, v in op.extras}
    return data


def pipeline_to_dict(p: PipelineSpec) -> Dict[str, Any]:
    return {
        'name': p.name,
        'input_keys': sorted(p.input_keys),
        'operators': [operator_to_dict(op) for op in p.operators],
    }


def canonical_serialize(p: PipelineSpec) -> bytes:
    """Deterministic bytes: ids and name excluded, keys sorted."""
    payload = {
        'input_keys': sorted(p.input_keys),
        'operators': [operator_to_dict(op, include_id=False) for op in p.operators],
    }
    return json.dumps(payload, sort_keys=True, separators=(',', ':'), ensure_ascii=False).encode('utf-8')


def pipeline_key(p: PipelineSpec) -> str:
    """Short hash of the canonical form; identity for caching and Pareto points."""
    return hashlib.sha256(canonical_serialize(p)).hexdigest()[:16]


def _require(mapping: Mapping[str, Any], key: str, where: str) -> Any:
    if key not in mapping:
        raise PipelineConfigError(f"{where}: missing required field '{key}'")
    return mapping[key]


def operator_from_dict(data: Mapping[str, Any], index: int = 0) -> OperatorConfig:
    where = f"Operator {index}"
    if not isinstance(data, Mapping):
        raise PipelineConfigError(f"{where}: must be a mapping")
    op_id = str(_require(data, 'id', where))
    raw_type = _require(data, 'type', f"{where} ({op_id})")
    try:
        op_type = OperatorType(raw_type)
    except ValueError:
        valid = ', '.join(t.value for t in OperatorType)
        raise PipelineConfigError(f"{where} ({op_id}): unknown type '{raw_type}'. Valid types: {valid}")

    sampling = None
    if data.get('sampling') is not None:
        raw = data['sampling']
        try:
            sampling = SamplingSpec(
                method=SamplingMethod(_require(raw, 'method', f"{where} sampling")),
                k=_require(raw, 'k', f"{where} sampling"),
                query=raw.get('query'),
                strata_keys=tuple(raw.get('strata_keys') or ()),
            )
        except ValueError as e:
            raise PipelineConfigError(f"{where} ({op_id}): invalid sampling spec: {e}")

    branches = tuple(
        Branch(_require(b, 'prompt_template', f"{where} branch"), normalize_schema(b.get('output_schema')))
        for b in data.get('branches') or ()
    )
    schema = data.get('output_schema') or {}
    if not isinstance(schema, Mapping):
        raise PipelineConfigError(f"{where} ({op_id}): output_schema must be a mapping")

    return OperatorConfig(
        id=op_id,
        op_type=op_type,
        prompt_template=data.get('prompt_template'),
        code_body=data.get('code_body'),
        output_schema=normalize_schema(schema),
        model=data.get('model'),
        group_by_keys=tuple(data.get('group_by_keys') or ()),
        sampling=sampling,
        branches=branches,
        extras=tuple((data.get('extras') or {}).items()),
    )


def pipeline_from_dict(data: Mapping[str, Any]) -> PipelineSpec:
    """Build a PipelineSpec from parsed YAML/JSON; raises PipelineConfigError on bad structure."""
    if not isinstance(data, Mapping):
        raise PipelineConfigError("Pipeline document must be a mapping")
    operators = data.get('operators')
    if not isinstance(operators, list) or not operators:
        raise PipelineConfigError("Pipeline must define a non-empty 'operators' list")
    input_keys = data.get('input_keys')
    if not isinstance(input_keys, list):
        raise PipelineConfigError("Pipeline must define 'input_keys' as a list")
    return PipelineSpec(
        operators=tuple(operator_from_dict(op, i) for i, op in enumerate(operators)),
        input_keys=frozenset(str(k) for k in input_keys),
        name=str(data.get('name', 'pipeline')),
    )


def pipeline_to_yaml(p: PipelineSpec) -> str:
    return yaml.safe_dump(pipeline_to_dict(p), sort_keys=False, allow_unicode=True, width=10 ** 6)


def pipeline_from_yaml(text: str) -> PipelineSpec:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise PipelineConfigError(f"Invalid YAML: {e}")
    return pipeline_from_dict(data)


def load_pipeline(path: Union[str, Path]) -> PipelineSpec:
    path = Path(path)
    if not path.exists():
        raise PipelineConfigError(f"Pipeline file not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        pipeline = pipeline_from_yaml(f.read())
    logger.info(f"Loaded pipeline '{pipeline.name}' with {len(pipeline)} operators from {path}")
    return pipeline


def catalog_from_dict(data: Any) -> ModelCatalog:
    if isinstance(data, Mapping):
        data = data.get('models')
    if not isinstance(data, list) or not data:
        raise PipelineConfigError("Model catalog must be a non-empty list under 'models'")
    entries = []
    for i, raw in enumerate(data):
        where = f"Model {i}"
        try:
            entries.append(ModelEntry(
                model_id=str(_require(raw, 'model_id', where)),
                family=str(_require(raw, 'family', where)),
                input_price_per_token=float(_require(raw, 'input_price_per_token', where)),
                output_price_per_token=float(_require(raw, 'output_price_per_token', where)),
                context_window_tokens=int(_require(raw, 'context_window_tokens', where)),
                quality_hint=float(raw.get('quality_hint', 0.5)),
                long_context_score=raw.get('long_context_score'),
            ))
        except (TypeError, ValueError) as e:
            raise PipelineConfigError(f"{where}: {e}")
    return ModelCatalog(tuple(entries))


def load_catalog(path: Union[str, Path]) -> ModelCatalog:
    path = Path(path)
    if not path.exists():
        raise PipelineConfigError(f"Model catalog not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise PipelineConfigError(f"Invalid YAML in {path}: {e}")
    catalog = catalog_from_dict(data)
    logger.info(f"Loaded {len(catalog)} models from {path}")
    return catalog


def profile_from_dict(data: Optional[Mapping[str, Any]], catalog: ModelCatalog) -> WorkloadProfile:
    """Workload profile from the optional `workload` section of a landscape file."""
    data = data or {}
    overrides = {
        op_id: OperatorLoad(
            input_tokens=load.get('input_tokens'),
            output_tokens=load.get('output_tokens'),
            documents=load.get('documents'),
        )
        for op_id, load in (data.get('overrides') or {}).items()
    }
    return WorkloadProfile(
        catalog=catalog,
        num_documents=float(data.get('num_documents', 100)),
        key_tokens=tuple((data.get('key_tokens') or {}).items()),
        default_key_tokens=float(data.get('default_key_tokens', 200)),
        prompt_overhead_tokens=float(data.get('prompt_overhead_tokens', 50)),
        output_tokens_by_type=tuple((data.get('output_tokens_by_type') or {}).items()),
        filter_selectivity=float(data.get('filter_selectivity', 0.5)),
        group_count=float(data.get('group_count', 10)),
        unnest_fanout=float(data.get('unnest_fanout', 3)),
        overrides=tuple(overrides.items()),
    )
