#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
The directive catalog.

Each rule pairs an LHS pattern with a pydantic parameter model and the RHS
construction, plus the template parameters the offline instantiator uses.
"""

import json
import logging
import re
from typing import Any, Dict, FrozenSet, List, Literal, Optional, Sequence, Set

from pydantic import BaseModel, ConfigDict, Field, ValidationInfo, field_validator, model_validator

from optimizer.directives import (
    Category,
    Directive,
    DirectiveRegistry,
    LhsPattern,
    Objective,
    PatternElement,
    Span,
    StubHints,
    downstream_references,
    leftmost_model,
    retarget_prompt,
    strip_placeholders,
    text_keys,
    validation_context,
)
from optimizer.errors import PipelineConfigError, RewriteProducesInvalidPipeline
from optimizer.pipeline_ir import (
    FILTER_TYPES,
    LLM_TYPES,
    OperatorConfig,
    OperatorType,
    PipelineSpec,
    SamplingMethod,
    SamplingSpec,
    available_keys_after,
    code_references,
    normalize_schema,
    operator_to_dict,
    pipeline_from_yaml,
    pipeline_to_yaml,
    placeholders,
)

logger = logging.getLogger(__name__)

SchemaType = Literal['string', 'number', 'boolean', 'list[string]', 'list[object]']

PROMPT_OPS = frozenset({OperatorType.MAP, OperatorType.FILTER, OperatorType.REDUCE, OperatorType.EXTRACT})
REORDERABLE = frozenset({
    OperatorType.MAP, OperatorType.PARALLEL_MAP, OperatorType.FILTER, OperatorType.EXTRACT,
    OperatorType.CODE_MAP, OperatorType.CODE_FILTER,
})
CODE_TYPE_FOR = {
    OperatorType.MAP: OperatorType.CODE_MAP,
    OperatorType.PARALLEL_MAP: OperatorType.CODE_MAP,
    OperatorType.FILTER: OperatorType.CODE_FILTER,
    OperatorType.REDUCE: OperatorType.CODE_REDUCE,
}

STOPWORDS = frozenset({
    'about', 'above', 'after', 'again', 'against', 'among', 'answer', 'based', 'being', 'below',
    'between', 'could', 'document', 'documents', 'during', 'every', 'extract', 'field', 'fields',
    'following', 'given', 'input', 'including', 'items', 'other', 'output', 'provide', 'return',
    'should', 'their', 'there', 'these', 'those', 'through', 'under', 'until', 'where', 'which',
    'while', 'whether', 'would', 'write', 'group',
})

PLACEHOLDER_VALUES = {
    'string': '...',
    'number': 0,
    'boolean': False,
    'list[string]': [],
    'list[object]': [],
}

PRECISION_RETAIN = 0.15
RECALL_RETAIN = 0.4
CASCADE_CODE_SELECTIVITY = 0.8
CASCADE_LLM_SELECTIVITY = 0.7
ARBITRARY_COST_NOTE = "Keep the answer as short as the output schema allows."
ARBITRARY_ACCURACY_NOTE = "Check the answer against the input before responding."


class _Params(BaseModel):
    model_config = ConfigDict(extra='forbid')


# ----------------------------------------------------------------------------
# Helpers
# ----------------------------------------------------------------------------

def _check_keys(text: str, allowed: FrozenSet[str], what: str, required: Sequence[str] = ()):
    refs = placeholders(text)
    missing = sorted({k for k in refs if k not in allowed})
    if missing:
        raise ValueError(f"{what} references keys not available upstream: {missing}")
    for key in required:
        if key not in refs:
            raise ValueError(f"{what} must reference {{{{ input.{key} }}}}")


def _check_code(code: str, allowed: FrozenSet[str], what: str):
    if 'def ' not in code:
        raise ValueError(f"{what} must define a function")
    refs = code_references(code)
    if not refs:
        raise ValueError(f"{what} must read at least one document key")
    missing = sorted({k for k in refs if k not in allowed})
    if missing:
        raise ValueError(f"{what} reads keys not available upstream: {missing}")


def _target(info: ValidationInfo) -> Optional[OperatorConfig]:
    ops = validation_context(info).get('ops')
    return ops[0] if ops else None


def _available(info: ValidationInfo) -> Optional[FrozenSet[str]]:
    return validation_context(info).get('available')


def _tag(op: OperatorConfig, name: str, *sources: OperatorConfig) -> OperatorConfig:
    tags: List[str] = list(op.rewrites)
    for source in sources:
        tags.extend(t for t in source.rewrites if t not in tags)
    tags.append(name)
    return op.with_extras(rewrites=tags)


class _Ids:
    """Deterministic fresh-id allocator for one rewrite."""

    def __init__(self, p: PipelineSpec):
        self.p = p
        self.taken: Set[str] = set()

    def __call__(self, base: str) -> str:
        new_id = self.p.fresh_id(base, self.taken)
        self.taken.add(new_id)
        return new_id


def _keywords(prompt: str, limit: int = 5) -> List[str]:
    plain = strip_placeholders(prompt, placeholders(prompt))
    words = []
    for word in re.findall(r"[A-Za-z]{5,}", plain.lower()):
        if word not in STOPWORDS and word not in words:
            words.append(word)
    return words[:limit]


def _task_summary(op: OperatorConfig, limit: int = 40) -> str:
    text = ' '.join(strip_placeholders(prompt, placeholders(prompt)) for prompt in op.prompts())
    words = text.split()
    return ' '.join(words[:limit]) + (' ...' if len(words) > limit else '')


def _fresh_key(base: str, available: FrozenSet[str]) -> str:
    if base not in available:
        return base
    suffix = 2
    while f"{base}_{suffix}" in available:
        suffix += 1
    return f"{base}_{suffix}"


def _longest_key(keys: Sequence[str], docs: Sequence[Dict[str, Any]]) -> str:
    """Key whose values are longest in the peeked documents; first key on ties or no docs."""
    best, best_len = keys[0], -1
    for key in keys:
        length = sum(len(str(doc.get(key, ''))) for doc in docs)
        if length > best_len:
            best, best_len = key, length
    return best


def _example_output(op: OperatorConfig) -> str:
    return json.dumps({k: PLACEHOLDER_VALUES[t] for k, t in op.output_schema}, sort_keys=True)


def _synthesize_code(op: OperatorConfig) -> str:
    """Template code body with the same inputs and outputs as op."""
    refs = [k for k in op.referenced_keys() if k not in op.group_by_keys] or list(op.group_by_keys)
    if op.op_type == OperatorType.REDUCE:
        parts = ' + " " + '.join(f'str(item["{k}"])' for k in refs)
        header = 'def transform(items):\n'
        text_line = f'    text = " ".join({parts} for item in items)\n'
    else:
        parts = ', '.join(f'str(input["{k}"])' for k in refs)
        header = 'def transform(input):\n'
        text_line = f'    text = " ".join([{parts}])\n'
    builders = {
        'string': 'text[:500]',
        'number': 'float(len(text.split()))',
        'boolean': 'bool(text.strip())',
        'list[string]': '[w for w in text.split() if w.istitle()]',
        'list[object]': '[]',
    }
    if op.op_type == OperatorType.FILTER:
        key = op.schema_keys[0]
        return header + text_line + f'    return {{"{key}": bool(text.strip())}}\n'
    fields = ', '.join(f'"{k}": {builders[t]}' for k, t in op.output_schema)
    return header + text_line + f'    return {{{fields}}}\n'


def _schema_text(op: OperatorConfig) -> str:
    return ', '.join(op.schema_keys) or 'the output fields'


# ----------------------------------------------------------------------------
# Fusion and reordering
# ----------------------------------------------------------------------------

class FusedPromptParams(_Params):
    merged_prompt: str = Field(min_length=1)
    output_schema: Optional[Dict[str, SchemaType]] = None
    model: Optional[str] = None

    @field_validator('merged_prompt')
    @classmethod
    def _prompt_reads_available_keys(cls, v: str, info: ValidationInfo) -> str:
        available = _available(info)
        if not placeholders(v):
            raise ValueError("merged prompt must reference at least one input key")
        if available is not None:
            _check_keys(v, available, "merged prompt")
        return v


class SameTypeFusion(Directive):
    name = 'same_type_fusion'
    category = Category.FUSION_REORDERING
    short_doc = ("Fuses a pair of adjacent same-type operators (map+map, filter+filter, reduce+reduce) into one, "
                 "merging their prompts and unioning output schemas. Use to cut LLM calls when two passes read "
                 "the same inputs.")
    full_doc = """Instantiation schema:
  merged_prompt: one prompt performing both tasks; may reference only keys available before the pair.
  output_schema (optional): defaults to the union of both schemas (filters keep the second flag).
  model (optional): defaults to the first operator's model.
Example: map(extract people) -> map(extract places) becomes one map with prompt
"Extract the people ... --- Extract the places ..." and schema {people, places}."""
    param_model = FusedPromptParams

    def build_lhs(self) -> LhsPattern:
        types = frozenset({OperatorType.MAP, OperatorType.FILTER, OperatorType.REDUCE})
        return LhsPattern((PatternElement(types), PatternElement(types)), span_predicate=self._fusable)

    @staticmethod
    def _fusable(p: PipelineSpec, start: int, end: int) -> bool:
        first, second = p.operators[start], p.operators[end]
        if first.op_type != second.op_type:
            return False
        before = available_keys_after(p, start)
        if any(k not in before for k in second.referenced_keys()):
            return False
        if first.op_type == OperatorType.REDUCE and first.group_by_keys != second.group_by_keys:
            return False
        if first.op_type == OperatorType.FILTER and first.schema_keys[0] in downstream_references(p, end):
            return False
        return True

    def rewrite(self, p: PipelineSpec, span: Span, params: FusedPromptParams) -> PipelineSpec:
        first, second = p.operators[span[0]], p.operators[span[1]]
        ids = _Ids(p)
        if params.output_schema:
            schema = params.output_schema
        elif first.op_type == OperatorType.FILTER:
            schema = second.schema
        else:
            schema = {**first.schema, **second.schema}
        fused = first.with_changes(
            id=ids(f"{first.id}_{second.id}_fused"),
            prompt_template=params.merged_prompt,
            output_schema=normalize_schema(schema),
            model=params.model or leftmost_model([first, second]),
        )
        if first.op_type == OperatorType.FILTER and (first.extra('selectivity') or second.extra('selectivity')):
            fused = fused.with_extras(
                selectivity=float(first.extra('selectivity', 0.5)) * float(second.extra('selectivity', 0.5)))
        return self.splice(p, span, [_tag(fused, self.name, second)])

    def stub_params(self, p, span, objective, hints) -> List[Dict[str, Any]]:
        first, second = p.operators[span[0]], p.operators[span[1]]
        return [{'merged_prompt': f"{first.prompt_template}\n\n---\n\n{second.prompt_template}"}]


class MapReduceFusion(Directive):
    name = 'map_reduce_fusion'
    category = Category.FUSION_REORDERING
    short_doc = ("Combines a map and the reduce that follows it into a single reduce that does the per-document "
                 "work while aggregating. Applicable only when the map does not produce a grouping key.")
    full_doc = """Instantiation schema:
  merged_prompt: reduce prompt that also performs the map's task; may reference only keys available before the map.
  output_schema (optional): defaults to the reduce's schema.
  model (optional): defaults to the map's model.
Example: map(extract complaint type) -> reduce by district(summarize complaints) becomes
reduce by district("For each report identify the complaint type, then summarize ...")."""
    param_model = FusedPromptParams

    def build_lhs(self) -> LhsPattern:
        return LhsPattern(
            (PatternElement(frozenset({OperatorType.MAP})), PatternElement(frozenset({OperatorType.REDUCE}))),
            span_predicate=self._no_group_key_from_map,
        )

    @staticmethod
    def _no_group_key_from_map(p: PipelineSpec, start: int, end: int) -> bool:
        mapper, reducer = p.operators[start], p.operators[end]
        return not set(mapper.schema_keys) & set(reducer.group_by_keys)

    def rewrite(self, p: PipelineSpec, span: Span, params: FusedPromptParams) -> PipelineSpec:
        mapper, reducer = p.operators[span[0]], p.operators[span[1]]
        fused = reducer.with_changes(
            id=_Ids(p)(f"{reducer.id}_fused"),
            prompt_template=params.merged_prompt,
            output_schema=normalize_schema(params.output_schema or reducer.schema),
            model=params.model or leftmost_model([mapper, reducer]),
        )
        return self.splice(p, span, [_tag(fused, self.name, mapper)])

    def stub_params(self, p, span, objective, hints) -> List[Dict[str, Any]]:
        mapper, reducer = p.operators[span[0]], p.operators[span[1]]
        reduce_part = strip_placeholders(reducer.prompt_template, mapper.schema_keys)
        return [{'merged_prompt': f"{mapper.prompt_template}\n\nThen, across all documents in the group: {reduce_part}"}]


class FlagFusionParams(_Params):
    merged_prompt: str = Field(min_length=1)
    model: Optional[str] = None

    @field_validator('merged_prompt')
    @classmethod
    def _prompt_reads_available_keys(cls, v: str, info: ValidationInfo) -> str:
        available = _available(info)
        if not placeholders(v):
            raise ValueError("merged prompt must reference at least one input key")
        if available is not None:
            _check_keys(v, available, "merged prompt")
        return v


def _flag_check(flag: str) -> str:
    return f'def keep(input):\n    return bool(input["{flag}"])\n'


def _check_filter(ids: _Ids, filter_op: OperatorConfig, name: str) -> OperatorConfig:
    flag = filter_op.schema_keys[0]
    extras: Dict[str, Any] = {'synthesized_check': True}
    if filter_op.extra('selectivity') is not None:
        extras['selectivity'] = filter_op.extra('selectivity')
    check = OperatorConfig(
        id=ids(f"{filter_op.id}_check"),
        op_type=OperatorType.CODE_FILTER,
        code_body=_flag_check(flag),
        output_schema=normalize_schema({flag: 'boolean'}),
        extras=tuple(extras.items()),
    )
    return _tag(check, name, filter_op)


class MapFilterFusion(Directive):
    name = 'map_filter_fusion'
    category = Category.FUSION_REORDERING
    short_doc = ("Has a map also compute the predicate produced by the following filter, then drops documents "
                 "with a cheap code filter on that flag. Two LLM passes become one.")
    full_doc = """Instantiation schema:
  merged_prompt: map prompt that additionally answers the filter's yes/no question; keys available before the map only.
  model (optional): defaults to the map's model.
RHS: map_z (schema = map schema + the filter's boolean key) -> code_filter keeping documents whose flag is true.
Example: map(extract symptoms) -> filter(is_severe) becomes map("Extract symptoms ... Also decide is_severe")
-> code_filter(input["is_severe"])."""
    param_model = FlagFusionParams

    def build_lhs(self) -> LhsPattern:
        return LhsPattern(
            (PatternElement(frozenset({OperatorType.MAP})), PatternElement(frozenset({OperatorType.FILTER}))),
            span_predicate=lambda p, s, e: p.operators[e].schema_keys[0] not in p.operators[s].schema_keys,
        )

    def rewrite(self, p: PipelineSpec, span: Span, params: FlagFusionParams) -> PipelineSpec:
        mapper, filter_op = p.operators[span[0]], p.operators[span[1]]
        ids = _Ids(p)
        flag = filter_op.schema_keys[0]
        fused = mapper.with_changes(
            id=ids(f"{mapper.id}_{filter_op.id}_fused"),
            prompt_template=params.merged_prompt,
            output_schema=normalize_schema({**mapper.schema, flag: 'boolean'}),
            model=params.model or leftmost_model([mapper, filter_op]),
        )
        return self.splice(p, span, [_tag(fused, self.name, filter_op), _check_filter(ids, filter_op, self.name)])

    def stub_params(self, p, span, objective, hints) -> List[Dict[str, Any]]:
        mapper, filter_op = p.operators[span[0]], p.operators[span[1]]
        flag = filter_op.schema_keys[0]
        question = strip_placeholders(filter_op.prompt_template, mapper.schema_keys)
        return [{'merged_prompt': f"{mapper.prompt_template}\n\nAlso answer the following yes/no question "
                                  f"and return it as `{flag}`: {question}"}]


class FilterMapFusion(Directive):
    name = 'filter_map_fusion'
    category = Category.FUSION_REORDERING
    short_doc = ("Fuses filter and map logic into one map that also emits the filter flag, followed by a code "
                 "filter on that flag. Use when a filter is followed by a map over the same text.")
    full_doc = """Instantiation schema:
  merged_prompt: map prompt that also answers the filter's question; keys available before the filter only.
  model (optional): defaults to the filter's model.
RHS: map_z (schema = map schema + the filter's boolean key) -> code_filter on the flag.
Documents are dropped after the map instead of before it.
Example: filter(mentions_fraud) -> map(extract amounts) becomes map("Does it mention fraud? ... Extract amounts")
-> code_filter(input["mentions_fraud"])."""
    param_model = FlagFusionParams

    def build_lhs(self) -> LhsPattern:
        return LhsPattern(
            (PatternElement(frozenset({OperatorType.FILTER})), PatternElement(frozenset({OperatorType.MAP}))),
            span_predicate=self._independent,
        )

    @staticmethod
    def _independent(p: PipelineSpec, start: int, end: int) -> bool:
        flag = p.operators[start].schema_keys[0]
        mapper = p.operators[end]
        return flag not in mapper.referenced_keys() and flag not in mapper.schema_keys

    def rewrite(self, p: PipelineSpec, span: Span, params: FlagFusionParams) -> PipelineSpec:
        filter_op, mapper = p.operators[span[0]], p.operators[span[1]]
        ids = _Ids(p)
        flag = filter_op.schema_keys[0]
        fused = mapper.with_changes(
            id=ids(f"{filter_op.id}_{mapper.id}_fused"),
            prompt_template=params.merged_prompt,
            output_schema=normalize_schema({**mapper.schema, flag: 'boolean'}),
            model=params.model or leftmost_model([filter_op, mapper]),
        )
        return self.splice(p, span, [_tag(fused, self.name, filter_op), _check_filter(ids, filter_op, self.name)])

    def stub_params(self, p, span, objective, hints) -> List[Dict[str, Any]]:
        filter_op, mapper = p.operators[span[0]], p.operators[span[1]]
        flag = filter_op.schema_keys[0]
        return [{'merged_prompt': f"{filter_op.prompt_template}\nRecord the yes/no answer as `{flag}`.\n\n"
                                  f"{mapper.prompt_template}"}]


class ReorderingParams(_Params):
    commutes_confirmed: bool = True
    rationale: str = ''

    @field_validator('commutes_confirmed')
    @classmethod
    def _must_commute(cls, v: bool) -> bool:
        if not v:
            raise ValueError("reordering requires confirming the operators commute")
        return v


class Reordering(Directive):
    name = 'reordering'
    category = Category.FUSION_REORDERING
    short_doc = ("Reorders commuting operators so that cheaper or more selective ones (filters, code) run earlier. "
                 "Never crosses a reduce or a restructuring operator.")
    full_doc = """Instantiation schema:
  commutes_confirmed: must be true; confirm the later operator reads nothing the earlier one produces.
  rationale: free text.
Example: map(summarize) -> filter(is_english) becomes filter(is_english) -> map(summarize),
so the summary runs only on kept documents."""
    param_model = ReorderingParams

    def build_lhs(self) -> LhsPattern:
        return LhsPattern((PatternElement(REORDERABLE), PatternElement(REORDERABLE)), span_predicate=self._commutes)

    @staticmethod
    def _commutes(p: PipelineSpec, start: int, end: int) -> bool:
        first, second = p.operators[start], p.operators[end]
        if set(second.referenced_keys()) & set(first.schema_keys):
            return False
        if set(first.schema_keys) & set(second.schema_keys):
            return False
        return second.op_type in FILTER_TYPES or (first.is_llm and second.is_code)

    def rewrite(self, p: PipelineSpec, span: Span, params: ReorderingParams) -> PipelineSpec:
        first, second = p.operators[span[0]], p.operators[span[1]]
        return self.splice(p, span, [_tag(second, self.name), first])

    def stub_params(self, p, span, objective, hints) -> List[Dict[str, Any]]:
        first, second = p.operators[span[0]], p.operators[span[1]]
        return [{'commutes_confirmed': True, 'rationale': f"{second.id} reads no key produced by {first.id}"}]


# ----------------------------------------------------------------------------
# Code synthesis
# ----------------------------------------------------------------------------

class CodeParams(_Params):
    code: str = Field(min_length=1)

    @field_validator('code')
    @classmethod
    def _code_reads_available_keys(cls, v: str, info: ValidationInfo) -> str:
        available = _available(info)
        _check_code(v, available if available is not None else frozenset(code_references(v)), "code")
        return v


class CodeSubstitution(Directive):
    name = 'code_substitution'
    category = Category.CODE_SYNTHESIS
    short_doc = ("Replaces an LLM-powered operator with synthesized Python code producing the same output schema. "
                 "Use for deterministic tasks (lookups, regex, arithmetic); code costs nothing to run.")
    full_doc = """Instantiation schema:
  code: Python source defining one function; read document keys as input["key"] (reduce: item["key"]
  over `items`) and return a dict with exactly the operator's output keys.
Example: map(count the words in {{ input.text }}) becomes code_map:
  def transform(input):
      return {"word_count": float(len(str(input["text"]).split()))}"""
    param_model = CodeParams

    def build_lhs(self) -> LhsPattern:
        return LhsPattern((PatternElement(frozenset(CODE_TYPE_FOR)),))

    def rewrite(self, p: PipelineSpec, span: Span, params: CodeParams) -> PipelineSpec:
        op = p.operators[span[0]]
        replacement = op.with_changes(
            id=_Ids(p)(f"{op.id}_code"),
            op_type=CODE_TYPE_FOR[op.op_type],
            prompt_template=None,
            code_body=params.code,
            model=None,
            branches=(),
        )
        return self.splice(p, span, [_tag(replacement, self.name)])

    def stub_params(self, p, span, objective, hints) -> List[Dict[str, Any]]:
        return [{'code': _synthesize_code(p.operators[span[0]])}]


class CodeSubReduceParams(_Params):
    aggregation_code: str = Field(min_length=1)
    aggregate_schema: Dict[str, SchemaType] = Field(min_length=1)
    map_prompt: str = Field(min_length=1)

    @model_validator(mode='after')
    def _check_keys(self, info: ValidationInfo) -> 'CodeSubReduceParams':
        target = _target(info)
        available = _available(info)
        if available is not None:
            _check_code(self.aggregation_code, available, "aggregation code")
        if target is not None:
            allowed = frozenset(target.group_by_keys) | frozenset(self.aggregate_schema)
            _check_keys(self.map_prompt, allowed, "map prompt")
        if not set(placeholders(self.map_prompt)) & set(self.aggregate_schema):
            raise ValueError("map prompt must read at least one aggregated key")
        return self


class CodeSubReduce(Directive):
    name = 'code_sub_reduce'
    category = Category.CODE_SYNTHESIS
    short_doc = ("Splits a reduce into code-based aggregation followed by an LLM map over the aggregate. "
                 "Use when most of the reduce is collecting or counting values.")
    full_doc = """Instantiation schema:
  aggregation_code: function over `items` (read item["key"]) returning the aggregate_schema keys.
  aggregate_schema: keys emitted by the code_reduce.
  map_prompt: LLM prompt over the aggregate; may read the group keys and aggregate keys.
RHS: code_reduce (same group keys) -> map (same output schema and model as the reduce).
Example: reduce by city(summarize all complaints) becomes code_reduce collecting complaint texts into
complaints_values -> map("Summarize these complaints: {{ input.complaints_values }}")."""
    param_model = CodeSubReduceParams

    def build_lhs(self) -> LhsPattern:
        return LhsPattern((PatternElement(frozenset({OperatorType.REDUCE})),))

    def rewrite(self, p: PipelineSpec, span: Span, params: CodeSubReduceParams) -> PipelineSpec:
        reducer = p.operators[span[0]]
        ids = _Ids(p)
        aggregate = OperatorConfig(
            id=ids(f"{reducer.id}_aggregate"),
            op_type=OperatorType.CODE_REDUCE,
            code_body=params.aggregation_code,
            output_schema=normalize_schema(params.aggregate_schema),
            group_by_keys=reducer.group_by_keys,
            extras=tuple((k, v) for k, v in reducer.extras if k in ('group_count', 'per_parent')),
        )
        summarize = OperatorConfig(
            id=ids(f"{reducer.id}_summarize"),
            op_type=OperatorType.MAP,
            prompt_template=params.map_prompt,
            output_schema=reducer.output_schema,
            model=reducer.model,
        )
        return self.splice(p, span, [_tag(aggregate, self.name, reducer), _tag(summarize, self.name)])

    def stub_params(self, p, span, objective, hints) -> List[Dict[str, Any]]:
        reducer = p.operators[span[0]]
        refs = text_keys(reducer)
        if refs:
            schema = {f"{k}_values": 'list[string]' for k in refs}
            lines = ''.join(f'        "{k}_values": [str(item["{k}"]) for item in items],\n' for k in refs)
            prompt = reducer.prompt_template
            for key in refs:
                prompt = retarget_prompt(prompt, key, f"{key}_values")
        else:
            key = reducer.group_by_keys[0]
            schema = {'group_size': 'number'}
            lines = f'        "group_size": float(len([item["{key}"] for item in items])),\n'
            prompt = f"{reducer.prompt_template}\nNumber of documents in the group: {{{{ input.group_size }}}}"
        code = 'def aggregate(items):\n    return {\n' + lines + '    }\n'
        return [{'aggregation_code': code, 'aggregate_schema': schema, 'map_prompt': prompt}]


# ----------------------------------------------------------------------------
# Data decomposition: compression, sampling, cascades, chunking
# ----------------------------------------------------------------------------

def _has_text_key(op: OperatorConfig, keys) -> bool:
    return bool(text_keys(op))


def _text_target_lhs() -> LhsPattern:
    return LhsPattern((PatternElement(PROMPT_OPS, _has_text_key),))


class _CompressionCheck:
    """Shared constraints: source read by the target, fresh output key, retargeted prompt."""

    @staticmethod
    def check(source_key: str, output_key: str, modified_prompt: str, info: ValidationInfo):
        target = _target(info)
        available = _available(info)
        if target is not None and source_key not in text_keys(target):
            raise ValueError(f"source_key {source_key} is not read by the target operator")
        if available is not None:
            if output_key in available:
                raise ValueError(f"output key {output_key} already exists upstream")
            _check_keys(modified_prompt, available | {output_key}, "modified prompt", required=[output_key])
        if source_key in placeholders(modified_prompt):
            raise ValueError(f"modified prompt still reads the uncompressed key {source_key}")


class CodeCompressionParams(_Params):
    source_key: str
    output_key: str
    code: str = Field(min_length=1)
    modified_prompt: str = Field(min_length=1)
    strategy: Literal['precision', 'recall']
    retain_ratio: float = Field(gt=0.0, le=1.0)

    @model_validator(mode='after')
    def _check(self, info: ValidationInfo) -> 'CodeCompressionParams':
        _CompressionCheck.check(self.source_key, self.output_key, self.modified_prompt, info)
        if self.source_key not in code_references(self.code):
            raise ValueError(f"compression code must read input[\"{self.source_key}\"]")
        return self


class DocCompressionCode(Directive):
    name = 'doc_compression_code'
    category = Category.DATA_DECOMPOSITION
    short_doc = ("Inserts a code operator that deterministically extracts only the relevant portions of a long "
                 "text field (regex/keyword windows) before an LLM operator. Produces a precision and a recall variant.")
    full_doc = """Instantiation schema:
  source_key: text key read by the target operator.
  output_key: new key holding the compressed text.
  code: function reading input["<source_key>"] and returning {"<output_key>": text}.
  modified_prompt: the target prompt reading {{ input.<output_key> }} instead of the source.
  strategy: precision (tight keyword sentences) or recall (wider windows); retain_ratio in (0, 1].
Example: map(find medications in {{ input.transcript }}) becomes code_map keeping sentences that mention
dose/mg/tablet -> map(find medications in {{ input.transcript_relevant }})."""
    param_model = CodeCompressionParams
    candidate_count = 2

    def build_lhs(self) -> LhsPattern:
        return _text_target_lhs()

    def rewrite(self, p: PipelineSpec, span: Span, params: CodeCompressionParams) -> PipelineSpec:
        target = p.operators[span[0]]
        compressor = OperatorConfig(
            id=_Ids(p)(f"{target.id}_compress"),
            op_type=OperatorType.CODE_MAP,
            code_body=params.code,
            output_schema=normalize_schema({params.output_key: 'string'}),
            extras=(('source_key', params.source_key), ('retain_ratio', params.retain_ratio),
                    ('strategy', params.strategy)),
        )
        modified = target.with_changes(prompt_template=params.modified_prompt)
        return self.splice(p, span, [_tag(compressor, self.name), _tag(modified, self.name)])

    def stub_params(self, p, span, objective, hints) -> List[Dict[str, Any]]:
        target = p.operators[span[0]]
        source = _longest_key(text_keys(target), hints.docs)
        output = _fresh_key(f"{source}_relevant", available_keys_after(p, span[0]))
        keywords = _keywords(target.prompt_template) or [w.lower() for w in target.schema_keys]
        prompt = retarget_prompt(target.prompt_template, source, output)
        candidates = []
        for strategy, window, ratio in (('precision', 0, PRECISION_RETAIN), ('recall', 1, RECALL_RETAIN)):
            code = (
                "import re\n\n"
                f"KEYWORDS = {json.dumps(keywords)}\n"
                f"WINDOW = {window}\n\n"
                "def transform(input):\n"
                f"    sentences = re.split(r\"(?<=[.!?])\\s+\", str(input[\"{source}\"]))\n"
                "    hits = [i for i, s in enumerate(sentences) if any(k in s.lower() for k in KEYWORDS)]\n"
                "    keep = sorted({j for i in hits for j in range(i - WINDOW, i + WINDOW + 1) if 0 <= j < len(sentences)})\n"
                f"    return {{\"{output}\": \" \".join(sentences[j] for j in keep)}}\n"
            )
            candidates.append({
                'source_key': source, 'output_key': output, 'code': code,
                'modified_prompt': prompt, 'strategy': strategy, 'retain_ratio': ratio,
            })
        return candidates


class HeadTailParams(_Params):
    source_key: str
    head_words: int = Field(ge=1, le=20000)
    tail_words: int = Field(ge=0, le=20000)
    output_key: Optional[str] = None

    @model_validator(mode='after')
    def _check(self, info: ValidationInfo) -> 'HeadTailParams':
        target = _target(info)
        available = _available(info)
        if target is not None and self.source_key not in text_keys(target):
            raise ValueError(f"source_key {self.source_key} is not read by the target operator")
        if available is not None and self.resolved_output_key() in available:
            raise ValueError(f"output key {self.resolved_output_key()} already exists upstream")
        return self

    def resolved_output_key(self) -> str:
        return self.output_key or f"{self.source_key}_head_tail"


class HeadTailCompression(Directive):
    name = 'head_tail_compression'
    category = Category.DATA_DECOMPOSITION
    short_doc = ("Retains only the first h and last l words of a long text field before an LLM operator. "
                 "Use when the information needed sits at the start or end of documents.")
    full_doc = """Instantiation schema:
  source_key: text key read by the target operator.
  head_words (h >= 1), tail_words (l >= 0): words kept from the start and end.
  output_key (optional): defaults to <source_key>_head_tail.
The code body and the retargeted prompt are generated from these values.
Example: h=100, l=50 on {{ input.contract }} keeps the parties and the signature block."""
    param_model = HeadTailParams
    candidate_count = 2

    def build_lhs(self) -> LhsPattern:
        return _text_target_lhs()

    def rewrite(self, p: PipelineSpec, span: Span, params: HeadTailParams) -> PipelineSpec:
        target = p.operators[span[0]]
        source, output = params.source_key, params.resolved_output_key()
        head, tail_words = params.head_words, params.tail_words
        tail = f" + [\"...\"] + words[-{tail_words}:]" if tail_words else ""
        code = (
            "def transform(input):\n"
            f"    words = str(input[\"{source}\"]).split()\n"
            f"    if len(words) <= {head + tail_words}:\n"
            f"        return {{\"{output}\": \" \".join(words)}}\n"
            f"    return {{\"{output}\": \" \".join(words[:{head}]{tail})}}\n"
        )
        compressor = OperatorConfig(
            id=_Ids(p)(f"{target.id}_head_tail"),
            op_type=OperatorType.CODE_MAP,
            code_body=code,
            output_schema=normalize_schema({output: 'string'}),
            extras=(('source_key', source), ('head_words', head), ('tail_words', tail_words)),
        )
        modified = target.with_changes(prompt_template=retarget_prompt(target.prompt_template, source, output))
        return self.splice(p, span, [_tag(compressor, self.name), _tag(modified, self.name)])

    def stub_params(self, p, span, objective, hints) -> List[Dict[str, Any]]:
        target = p.operators[span[0]]
        source = _longest_key(text_keys(target), hints.docs)
        output = _fresh_key(f"{source}_head_tail", available_keys_after(p, span[0]))
        return [
            {'source_key': source, 'head_words': 100, 'tail_words': 50, 'output_key': output},
            {'source_key': source, 'head_words': 300, 'tail_words': 150, 'output_key': output},
        ]


class SamplingParams(_Params):
    method: Literal['random', 'bm25', 'embedding']
    k: int = Field(ge=1, le=10000)
    query: Optional[str] = None

    @model_validator(mode='after')
    def _query_matches_method(self) -> 'SamplingParams':
        needs_query = self.method in ('bm25', 'embedding')
        if needs_query and not self.query:
            raise ValueError(f"method {self.method} requires a query")
        if not needs_query and self.query:
            raise ValueError(f"method {self.method} does not take a query")
        if self.query and '{{' in self.query:
            raise ValueError("sampling queries are plain text")
        return self

    def spec(self) -> SamplingSpec:
        return SamplingSpec(method=SamplingMethod(self.method), k=self.k, query=self.query)


def _sampling_candidates(prompt: str) -> List[Dict[str, Any]]:
    keywords = _keywords(prompt, limit=8) or ['relevant']
    plain = strip_placeholders(prompt, placeholders(prompt))
    return [
        {'method': 'bm25', 'k': 10, 'query': ' '.join(keywords)},
        {'method': 'embedding', 'k': 30, 'query': ' '.join(plain.split()[:60])},
    ]


class ChunkSampling(Directive):
    name = 'chunk_sampling'
    category = Category.DATA_DECOMPOSITION
    short_doc = ("Samples the most relevant chunks of each document (BM25 or embedding similarity) between "
                 "gather and the chunk-level map. Requires split -> gather -> map -> reduce.")
    full_doc = """Instantiation schema:
  method: bm25 | embedding | random;  k: chunks kept per document;  query: retrieval text (bm25/embedding).
RHS: split -> gather -> sample(k per parent document) -> map -> reduce.
Example: a precision variant bm25 k=10 with query "dosage mg tablet" and a recall variant embedding k=30
with the map's task description as query."""
    param_model = SamplingParams
    candidate_count = 2

    def build_lhs(self) -> LhsPattern:
        return LhsPattern(
            (
                PatternElement(frozenset({OperatorType.SPLIT})),
                PatternElement(frozenset({OperatorType.GATHER})),
                PatternElement(frozenset({OperatorType.MAP})),
                PatternElement(frozenset({OperatorType.REDUCE})),
            ),
            span_predicate=self._chunk_chain,
        )

    @staticmethod
    def _chunk_chain(p: PipelineSpec, start: int, end: int) -> bool:
        split, gather, mapper = p.operators[start], p.operators[start + 1], p.operators[start + 2]
        chunk_key = split.extra('chunk_key_out') or f"{split.extra('split_key')}_chunk"
        if gather.extra('content_key') != chunk_key:
            return False
        rendered = gather.extra('rendered_key_out') or f"{chunk_key}_rendered"
        return bool({chunk_key, rendered} & set(mapper.referenced_keys()))

    def rewrite(self, p: PipelineSpec, span: Span, params: SamplingParams) -> PipelineSpec:
        split = p.operators[span[0]]
        parent_key = split.extra('parent_key_out') or f"{split.extra('split_key')}_parent_id"
        sample = OperatorConfig(
            id=_Ids(p)(f"{split.id}_sample"),
            op_type=OperatorType.SAMPLE,
            group_by_keys=(parent_key,),
            sampling=params.spec(),
            extras=(('per_parent', True),),
        )
        ops = list(p.operators[span[0]:span[1] + 1])
        ops.insert(2, _tag(sample, self.name))
        return self.splice(p, span, ops)

    def stub_params(self, p, span, objective, hints) -> List[Dict[str, Any]]:
        return _sampling_candidates(p.operators[span[0] + 2].prompt_template)


class DocSampling(Directive):
    name = 'doc_sampling'
    category = Category.DATA_DECOMPOSITION
    short_doc = ("Samples a subset of documents within each group before a reduce. Use when groups are large "
                 "and the reduce only needs representative evidence.")
    full_doc = """Instantiation schema:
  method: bm25 | embedding | random;  k: documents kept per group;  query: retrieval text (bm25/embedding).
RHS: sample(grouped by the reduce keys) -> reduce.
Example: reduce by product(summarize complaints) gets sample(bm25, k=10, "defect broken refund") before it."""
    param_model = SamplingParams
    candidate_count = 2

    def build_lhs(self) -> LhsPattern:
        return LhsPattern((PatternElement(frozenset({OperatorType.REDUCE})),))

    def rewrite(self, p: PipelineSpec, span: Span, params: SamplingParams) -> PipelineSpec:
        reducer = p.operators[span[0]]
        sample = OperatorConfig(
            id=_Ids(p)(f"{reducer.id}_sample"),
            op_type=OperatorType.SAMPLE,
            group_by_keys=reducer.group_by_keys,
            sampling=params.spec(),
            extras=tuple((k, v) for k, v in reducer.extras if k in ('group_count', 'per_parent')),
        )
        return self.splice(p, span, [_tag(sample, self.name), reducer])

    def stub_params(self, p, span, objective, hints) -> List[Dict[str, Any]]:
        return _sampling_candidates(p.operators[span[0]].prompt_template)


class CascadeParams(_Params):
    code_prefilter: Optional[str] = None
    llm_prefilter_prompt: Optional[str] = None
    llm_prefilter_model: Optional[str] = None

    @model_validator(mode='after')
    def _check(self, info: ValidationInfo) -> 'CascadeParams':
        if not self.code_prefilter and not self.llm_prefilter_prompt:
            raise ValueError("at least one pre-filter is required")
        if self.llm_prefilter_model and not self.llm_prefilter_prompt:
            raise ValueError("llm_prefilter_model given without llm_prefilter_prompt")
        available = _available(info)
        if available is not None:
            if self.code_prefilter:
                _check_code(self.code_prefilter, available, "code pre-filter")
            if self.llm_prefilter_prompt:
                if not placeholders(self.llm_prefilter_prompt):
                    raise ValueError("LLM pre-filter prompt must reference an input key")
                _check_keys(self.llm_prefilter_prompt, available, "LLM pre-filter prompt")
        return self


class CascadeFiltering(Directive):
    name = 'cascade_filtering'
    category = Category.DATA_DECOMPOSITION
    short_doc = ("Inserts one or two cheaper pre-filters (a code check, then a small-model LLM filter) ahead of "
                 "an expensive filter. Pre-filters must prioritize high recall.")
    full_doc = """Instantiation schema:
  code_prefilter (optional): function reading input["key"] returning true to keep the document.
  llm_prefilter_prompt (optional): yes/no prompt for a cheap model; llm_prefilter_model: defaults to the filter's model.
At least one pre-filter is required. Pre-filters run in increasing cost order, then the original filter.
Example: filter(is the review about shipping damage?) gets code_filter(any of "broken", "damaged", "crushed")
and a small-model filter("Could this review mention shipping damage?") in front of it."""
    param_model = CascadeParams
    candidate_count = 2

    def build_lhs(self) -> LhsPattern:
        return LhsPattern((PatternElement(frozenset({OperatorType.FILTER}), _has_text_key),))

    def rewrite(self, p: PipelineSpec, span: Span, params: CascadeParams) -> PipelineSpec:
        filter_op = p.operators[span[0]]
        ids = _Ids(p)
        flag = filter_op.schema_keys[0]
        ops = []
        if params.code_prefilter:
            ops.append(_tag(OperatorConfig(
                id=ids(f"{filter_op.id}_precheck"),
                op_type=OperatorType.CODE_FILTER,
                code_body=params.code_prefilter,
                output_schema=normalize_schema({f"{flag}_precheck": 'boolean'}),
                extras=(('selectivity', CASCADE_CODE_SELECTIVITY),),
            ), self.name))
        if params.llm_prefilter_prompt:
            ops.append(_tag(OperatorConfig(
                id=ids(f"{filter_op.id}_prefilter"),
                op_type=OperatorType.FILTER,
                prompt_template=params.llm_prefilter_prompt,
                output_schema=normalize_schema({f"{flag}_prefilter": 'boolean'}),
                model=params.llm_prefilter_model or filter_op.model,
                extras=(('selectivity', CASCADE_LLM_SELECTIVITY),),
            ), self.name))
        ops.append(_tag(filter_op, self.name))
        return self.splice(p, span, ops)

    def stub_params(self, p, span, objective, hints) -> List[Dict[str, Any]]:
        filter_op = p.operators[span[0]]
        source = _longest_key(text_keys(filter_op), hints.docs)
        keywords = _keywords(filter_op.prompt_template) or ['yes']
        code = (
            f"KEYWORDS = {json.dumps(keywords)}\n\n"
            "def keep(input):\n"
            f"    text = str(input[\"{source}\"]).lower()\n"
            "    return any(k in text for k in KEYWORDS)\n"
        )
        cheapest = hints.catalog.cheapest()
        question = _task_summary(filter_op)
        llm_prompt = (f"Answer yes unless the text is clearly irrelevant to this question: {question}\n\n"
                      f"Text: {{{{ input.{source} }}}}")
        return [
            {'code_prefilter': code},
            {'code_prefilter': code, 'llm_prefilter_prompt': llm_prompt,
             'llm_prefilter_model': cheapest.model_id if cheapest else None},
        ]


class SummarizationParams(_Params):
    source_key: str
    summary_key: str
    summary_prompt: str = Field(min_length=1)
    modified_prompt: str = Field(min_length=1)
    model: Optional[str] = None

    @model_validator(mode='after')
    def _check(self, info: ValidationInfo) -> 'SummarizationParams':
        _CompressionCheck.check(self.source_key, self.summary_key, self.modified_prompt, info)
        available = _available(info)
        if available is not None:
            _check_keys(self.summary_prompt, available, "summary prompt", required=[self.source_key])
        return self


class DocSummarization(Directive):
    name = 'doc_summarization'
    category = Category.PROJECTION_SYNTHESIS
    short_doc = ("Replaces a long text field with an LLM-written, task-focused summary produced by a new map in "
                 "front of the target operator. Use when a cheap model can condense documents.")
    full_doc = """Instantiation schema:
  source_key: text key read by the target; summary_key: new key.
  summary_prompt: map prompt reading {{ input.<source_key> }}.
  modified_prompt: target prompt reading {{ input.<summary_key> }} instead of the source.
  model (optional): summarizer model; defaults to the target's model.
Example: reduce(find recurring themes in {{ input.review }}) gets map("Summarize the review, keeping
complaints and praise: {{ input.review }}") -> reduce(... {{ input.review_summary }})."""
    param_model = SummarizationParams

    def build_lhs(self) -> LhsPattern:
        return _text_target_lhs()

    def rewrite(self, p: PipelineSpec, span: Span, params: SummarizationParams) -> PipelineSpec:
        target = p.operators[span[0]]
        summarizer = OperatorConfig(
            id=_Ids(p)(f"{target.id}_summarize"),
            op_type=OperatorType.MAP,
            prompt_template=params.summary_prompt,
            output_schema=normalize_schema({params.summary_key: 'string'}),
            model=params.model or leftmost_model([target]),
            extras=(('output_tokens', 150),),
        )
        modified = target.with_changes(prompt_template=params.modified_prompt)
        return self.splice(p, span, [_tag(summarizer, self.name), _tag(modified, self.name)])

    def stub_params(self, p, span, objective, hints) -> List[Dict[str, Any]]:
        target = p.operators[span[0]]
        source = _longest_key(text_keys(target), hints.docs)
        summary = _fresh_key(f"{source}_summary", available_keys_after(p, span[0]))
        model = None
        if objective == Objective.REDUCE_COST:
            cheapest = hints.catalog.cheapest()
            model = cheapest.model_id if cheapest else None
        return [{
            'source_key': source,
            'summary_key': summary,
            'summary_prompt': (f"Summarize the text below, keeping every detail needed for this task: "
                               f"{_task_summary(target)}\n\nText: {{{{ input.{source} }}}}"),
            'modified_prompt': retarget_prompt(target.prompt_template, source, summary),
            'model': model,
        }]


class ExtractionParams(_Params):
    source_key: str
    output_key: str
    extract_prompt: str = Field(min_length=1)
    modified_prompt: str = Field(min_length=1)
    model: Optional[str] = None

    @model_validator(mode='after')
    def _check(self, info: ValidationInfo) -> 'ExtractionParams':
        _CompressionCheck.check(self.source_key, self.output_key, self.modified_prompt, info)
        available = _available(info)
        if available is not None:
            _check_keys(self.extract_prompt, available, "extract prompt", required=[self.source_key])
        return self


class DocCompressionLLM(Directive):
    name = 'doc_compression_llm'
    category = Category.PROJECTION_SYNTHESIS
    short_doc = ("Inserts an extract operator that has an LLM return the line ranges of a text field relevant to "
                 "the task; the target then reads only those spans of the original document.")
    full_doc = """Instantiation schema:
  source_key: text key read by the target; output_key: new key holding the extracted spans.
  extract_prompt: prompt reading {{ input.<source_key> }} (line-numbered) asking for relevant line ranges.
  modified_prompt: target prompt reading {{ input.<output_key> }}.
  model (optional): extractor model; defaults to the target's model.
Example: map(list adverse events in {{ input.note }}) gets extract("Return line ranges describing
adverse events: {{ input.note }}") -> map(... {{ input.note_extracted }})."""
    param_model = ExtractionParams

    def build_lhs(self) -> LhsPattern:
        return _text_target_lhs()

    def rewrite(self, p: PipelineSpec, span: Span, params: ExtractionParams) -> PipelineSpec:
        target = p.operators[span[0]]
        extractor = OperatorConfig(
            id=_Ids(p)(f"{target.id}_extract"),
            op_type=OperatorType.EXTRACT,
            prompt_template=params.extract_prompt,
            output_schema=normalize_schema({params.output_key: 'string'}),
            model=params.model or leftmost_model([target]),
            extras=(('source_key', params.source_key), ('retain_ratio', 0.3), ('output_tokens', 20)),
        )
        modified = target.with_changes(prompt_template=params.modified_prompt)
        return self.splice(p, span, [_tag(extractor, self.name), _tag(modified, self.name)])

    def stub_params(self, p, span, objective, hints) -> List[Dict[str, Any]]:
        target = p.operators[span[0]]
        source = _longest_key(text_keys(target), hints.docs)
        output = _fresh_key(f"{source}_extracted", available_keys_after(p, span[0]))
        model = None
        if objective == Objective.REDUCE_COST:
            cheapest = hints.catalog.cheapest()
            model = cheapest.model_id if cheapest else None
        return [{
            'source_key': source,
            'output_key': output,
            'extract_prompt': (f"Return the line ranges of the text below needed for this task: "
                               f"{_task_summary(target)}\n\nText (line-numbered): {{{{ input.{source} }}}}"),
            'modified_prompt': retarget_prompt(target.prompt_template, source, output),
            'model': model,
        }]


class ChunkingParams(_Params):
    split_key: str
    chunk_size: int = Field(ge=50, le=200000)
    context_before: int = Field(default=1, ge=0, le=5)
    context_after: int = Field(default=1, ge=0, le=5)
    reduce_prompt: Optional[str] = None
    model: Optional[str] = None

    @model_validator(mode='after')
    def _check(self, info: ValidationInfo) -> 'ChunkingParams':
        target = _target(info)
        if target is not None and self.split_key not in text_keys(target):
            raise ValueError(f"split_key {self.split_key} is not read by the map")
        downstream = validation_context(info).get('downstream_refs')
        if downstream is not None and self.split_key in downstream:
            raise ValueError(f"split_key {self.split_key} is read downstream and cannot be chunked away")
        return self


class DocChunking(Directive):
    name = 'doc_chunking'
    category = Category.DATA_DECOMPOSITION
    short_doc = ("Splits the largest text field into chunks, runs the map per chunk with neighbouring-chunk "
                 "context, and combines chunk results per document with a synthesized reduce. Use for long "
                 "documents where the map misses details.")
    full_doc = """Instantiation schema:
  split_key: text key read by the map (not read downstream).
  chunk_size: tokens per chunk;  context_before / context_after: neighbouring chunks shown (default 1).
  reduce_prompt (optional): combining prompt; default merges the map's output keys.
  model (optional): model of the synthesized reduce; defaults to the map's model.
RHS: split -> gather -> map (reads the rendered chunk) -> reduce grouped by the parent document.
Example: map(extract all diagnoses from {{ input.record }}) with chunk_size=1000 becomes
split(record) -> gather(record_chunk, 1 before, 1 after) -> map(... {{ input.record_chunk_rendered }})
-> reduce by record_parent_id(combine diagnoses)."""
    param_model = ChunkingParams

    def build_lhs(self) -> LhsPattern:
        return LhsPattern((PatternElement(frozenset({OperatorType.MAP}), _has_text_key),),
                          span_predicate=self._chunkable)

    @staticmethod
    def _chunkable(p: PipelineSpec, start: int, end: int) -> bool:
        downstream = downstream_references(p, end)
        return any(k not in downstream for k in text_keys(p.operators[start]))

    def rewrite(self, p: PipelineSpec, span: Span, params: ChunkingParams) -> PipelineSpec:
        mapper = p.operators[span[0]]
        ids = _Ids(p)
        key = params.split_key
        chunk_key, parent_key, rendered_key = f"{key}_chunk", f"{key}_parent_id", f"{key}_chunk_rendered"
        before = available_keys_after(p, span[0])
        split = OperatorConfig(
            id=ids(f"{mapper.id}_split"),
            op_type=OperatorType.SPLIT,
            extras=(('split_key', key), ('chunk_size', params.chunk_size),
                    ('chunk_key_out', chunk_key), ('parent_key_out', parent_key)),
        )
        gather = OperatorConfig(
            id=ids(f"{mapper.id}_gather"),
            op_type=OperatorType.GATHER,
            extras=(('content_key', chunk_key), ('context_before', params.context_before),
                    ('context_after', params.context_after), ('rendered_key_out', rendered_key)),
        )
        chunk_map = mapper.with_changes(prompt_template=retarget_prompt(mapper.prompt_template, key, rendered_key))
        combine_prompt = params.reduce_prompt or (
            "Combine the chunk-level results below into a single result for the whole document.\n"
            + '\n'.join(f"{k}: {{{{ input.{k} }}}}" for k in mapper.schema_keys)
        )
        combine = OperatorConfig(
            id=ids(f"{mapper.id}_combine"),
            op_type=OperatorType.REDUCE,
            prompt_template=combine_prompt,
            output_schema=mapper.output_schema,
            model=params.model or mapper.model,
            group_by_keys=(parent_key,) + tuple(sorted(before - {key})),
            extras=(('per_parent', True),),
        )
        return self.splice(p, span, [_tag(split, self.name), _tag(gather, self.name),
                                     _tag(chunk_map, self.name), _tag(combine, self.name)])

    def stub_params(self, p, span, objective, hints) -> List[Dict[str, Any]]:
        mapper = p.operators[span[0]]
        downstream = downstream_references(p, span[1])
        keys = [k for k in text_keys(mapper) if k not in downstream]
        key = _longest_key(keys, hints.docs)
        chunk_size = 1000
        lengths = [len(str(doc.get(key, '')).split()) for doc in hints.docs if key in doc]
        if lengths:
            tokens = max(lengths) * 1.3
            chunk_size = int(min(2000, max(200, round(tokens / 4 / 100) * 100)))
        if mapper.model in hints.catalog:
            chunk_size = min(chunk_size, max(50, hints.catalog.get(mapper.model).context_window_tokens // 4))
        return [{'split_key': key, 'chunk_size': chunk_size, 'context_before': 1, 'context_after': 1}]


# ----------------------------------------------------------------------------
# LLM-centric
# ----------------------------------------------------------------------------

class ModelParams(_Params):
    model: str = Field(min_length=1)

    @field_validator('model')
    @classmethod
    def _must_change(cls, v: str, info: ValidationInfo) -> str:
        target = _target(info)
        if target is not None and target.model == v:
            raise ValueError(f"operator already uses model {v}")
        return v


class ModelSubstitution(Directive):
    name = 'model_substitution'
    category = Category.LLM_CENTRIC
    short_doc = ("Replaces an operator's LLM with a different model from the catalog. Cheaper models cut cost; "
                 "stronger or longer-context models raise accuracy on hard or long inputs.")
    full_doc = """Instantiation schema:
  model: a catalog model id different from the operator's current model.
Consult the model statistics (cost and accuracy of the initial pipeline on every model) before choosing.
Example: map(classify sentiment) on a large model switched to a small model of the same family."""
    param_model = ModelParams

    def build_lhs(self) -> LhsPattern:
        return LhsPattern((PatternElement(LLM_TYPES),))

    def rewrite(self, p: PipelineSpec, span: Span, params: ModelParams) -> PipelineSpec:
        op = p.operators[span[0]]
        return self.splice(p, span, [op.with_changes(model=params.model)])

    def stub_params(self, p, span, objective, hints) -> List[Dict[str, Any]]:
        op = p.operators[span[0]]
        exclude = set(hints.path_models) | {op.model}
        if objective == Objective.REDUCE_COST:
            entry = hints.catalog.cheapest(exclude) or hints.catalog.cheapest({op.model})
        else:
            entry = hints.catalog.most_accurate(exclude) or hints.catalog.most_accurate({op.model})
        return [{'model': entry.model_id if entry else op.model}]


class ClarifyParams(_Params):
    clarified_prompt: str = Field(min_length=1)

    @field_validator('clarified_prompt')
    @classmethod
    def _preserves_placeholders(cls, v: str, info: ValidationInfo) -> str:
        target = _target(info)
        available = _available(info)
        if target is not None:
            dropped = sorted(set(placeholders(target.prompt_template)) - set(placeholders(v)))
            if dropped:
                raise ValueError(f"clarified prompt drops placeholders: {dropped}")
            if v.strip() == (target.prompt_template or '').strip():
                raise ValueError("clarified prompt is identical to the original")
        if available is not None:
            _check_keys(v, available, "clarified prompt")
        return v


CLARIFICATIONS = (
    "\n\nBe specific: fill every output field ({fields}) exactly as named, use only information present in "
    "the input, and return an empty value rather than guessing.",
    "\n\nWork step by step: first locate the passages relevant to the task, then derive each output field "
    "({fields}) from them, keeping the evidence you relied on in mind.",
)


class ClarifyInstructions(Directive):
    name = 'clarify_instructions'
    category = Category.LLM_CENTRIC
    short_doc = ("Rewrites an operator's prompt template to be more specific and unambiguous, keeping every "
                 "input placeholder. Use when outputs are inconsistent or the task is underspecified.")
    full_doc = """Instantiation schema:
  clarified_prompt: the new prompt; must keep every {{ input.<key> }} placeholder of the original.
Example: "Extract the enhancements from {{ input.notes }}" becomes "Extract every system enhancement
mentioned in {{ input.notes }}; list each as a short noun phrase; return [] if none"."""
    param_model = ClarifyParams
    candidate_count = 2

    def build_lhs(self) -> LhsPattern:
        return LhsPattern((PatternElement(PROMPT_OPS),))

    def rewrite(self, p: PipelineSpec, span: Span, params: ClarifyParams) -> PipelineSpec:
        op = p.operators[span[0]]
        return self.splice(p, span, [_tag(op.with_changes(prompt_template=params.clarified_prompt), self.name)])

    def stub_params(self, p, span, objective, hints) -> List[Dict[str, Any]]:
        op = p.operators[span[0]]
        return [{'clarified_prompt': op.prompt_template + suffix.format(fields=_schema_text(op))}
                for suffix in CLARIFICATIONS]


class FewShotExample(_Params):
    input: str = Field(min_length=1)
    output: str = Field(min_length=1)

    @field_validator('input', 'output')
    @classmethod
    def _no_placeholders(cls, v: str) -> str:
        if '{{' in v or '}}' in v:
            raise ValueError("examples must not contain template placeholders")
        return v


class FewShotParams(_Params):
    examples: List[FewShotExample] = Field(min_length=1, max_length=5)


class FewShotExamples(Directive):
    name = 'few_shot_examples'
    category = Category.LLM_CENTRIC
    short_doc = ("Adds few-shot input/output examples to an operator's prompt, built from sample documents. "
                 "Use when the expected output format or granularity is easy to show and hard to describe.")
    full_doc = """Instantiation schema:
  examples: 1-5 objects {input, output}; inputs are excerpts of real sample documents (use read_next_doc),
  outputs follow the operator's output schema as JSON. No {{ }} placeholders inside examples.
Example: map(extract enhancements) gets "Examples:\\nInput: ...upgraded the dispatch radio...\\n
Output: {\\"enhancements\\": [\\"dispatch radio upgrade\\"]}"."""
    param_model = FewShotParams

    def build_lhs(self) -> LhsPattern:
        return LhsPattern((PatternElement(PROMPT_OPS),))

    def rewrite(self, p: PipelineSpec, span: Span, params: FewShotParams) -> PipelineSpec:
        op = p.operators[span[0]]
        shots = '\n\n'.join(f"Input: {e.input}\nOutput: {e.output}" for e in params.examples)
        prompt = f"{op.prompt_template}\n\nExamples:\n{shots}"
        return self.splice(p, span, [_tag(op.with_changes(prompt_template=prompt), self.name)])

    def stub_params(self, p, span, objective, hints) -> List[Dict[str, Any]]:
        op = p.operators[span[0]]
        keys = text_keys(op) or list(op.group_by_keys)
        examples = []
        for doc in hints.docs[:2]:
            excerpt = ' '.join(str(doc.get(k, '')) for k in keys if k in doc)
            excerpt = re.sub(r"[{}]", '', excerpt).strip()[:300]
            if excerpt:
                examples.append({'input': excerpt, 'output': _example_output(op)})
        if not examples:
            examples.append({'input': f"(a representative document with {', '.join(keys) or 'text'})",
                             'output': _example_output(op)})
        return [{'examples': examples}]


class SearchReplace(_Params):
    search: str = Field(min_length=1)
    replace: str


class ArbitraryParams(_Params):
    edits: List[SearchReplace] = Field(min_length=1)

    @model_validator(mode='after')
    def _unique_searches(self, info: ValidationInfo) -> 'ArbitraryParams':
        pipeline = validation_context(info).get('pipeline')
        if pipeline is None:
            return self
        text = pipeline_to_yaml(pipeline)
        for i, edit in enumerate(self.edits):
            count = text.count(edit.search)
            if count != 1:
                raise ValueError(f"edit {i}: search string must match exactly once, matched {count} times")
            text = text.replace(edit.search, edit.replace, 1)
        return self


class ArbitraryRewrite(Directive):
    name = 'arbitrary_rewrite'
    category = Category.LLM_CENTRIC
    short_doc = ("Proposes a free-form pipeline transformation as search-and-replace edits over the pipeline "
                 "YAML. Use when no other directive expresses the change.")
    full_doc = """Instantiation schema:
  edits: list of {search, replace}; each search string must occur exactly once in the current YAML
  (after the previous edits). The result is re-parsed and re-validated.
Example: {"search": "- id: classify\\n  type: map\\n  model: large-model\\n",
          "replace": "- id: classify\\n  type: map\\n  model: small-model\\n"}."""
    param_model = ArbitraryParams

    def build_lhs(self) -> LhsPattern:
        return LhsPattern((), whole_pipeline=True)

    def rewrite(self, p: PipelineSpec, span: Span, params: ArbitraryParams) -> PipelineSpec:
        text = pipeline_to_yaml(p)
        for edit in params.edits:
            text = text.replace(edit.search, edit.replace, 1)
        try:
            result = pipeline_from_yaml(text)
        except PipelineConfigError as e:
            raise RewriteProducesInvalidPipeline(f"{self.name}: edited YAML does not parse: {e}")
        originals = {op.id: operator_to_dict(op) for op in p.operators}
        ops = [op if originals.get(op.id) == operator_to_dict(op) else _tag(op, self.name) for op in result.operators]
        return result.with_operators(ops)

    def stub_params(self, p, span, objective, hints) -> List[Dict[str, Any]]:
        for op in p.operators:
            if not op.is_llm:
                continue
            if objective == Objective.REDUCE_COST:
                entry = hints.catalog.cheapest({op.model})
            else:
                entry = hints.catalog.most_accurate({op.model})
            if entry is None:
                break
            head = f"- id: {op.id}\n  type: {op.op_type.value}\n  model: "
            return [{'edits': [{'search': f"{head}{op.model}\n", 'replace': f"{head}{entry.model_id}\n"}]}]

        # No model to swap: append an instruction to the first prompt, or a note to the first program
        note = ARBITRARY_COST_NOTE if objective == Objective.REDUCE_COST else ARBITRARY_ACCURACY_NOTE
        ops = list(p.operators)
        for i, op in enumerate(ops):
            if op.prompt_template is not None:
                ops[i] = op.with_changes(prompt_template=f"{op.prompt_template.rstrip()} {note}")
                break
            if op.code_body is not None:
                ops[i] = op.with_changes(code_body=f"{op.code_body.rstrip()}\n# {note}\n")
                break
        else:
            return [{'edits': [{'search': f"name: {p.name}\n", 'replace': f"name: {p.name}_revised\n"}]}]
        return [{'edits': [{'search': pipeline_to_yaml(p), 'replace': pipeline_to_yaml(p.with_operators(ops))}]}]


# ----------------------------------------------------------------------------
# Registry
# ----------------------------------------------------------------------------

DIRECTIVE_CLASSES = (
    SameTypeFusion, MapReduceFusion, MapFilterFusion, FilterMapFusion, Reordering,
    CodeSubstitution, CodeSubReduce,
    DocCompressionCode, HeadTailCompression, ChunkSampling, DocSampling, CascadeFiltering,
    DocSummarization, DocCompressionLLM,
    ModelSubstitution, ClarifyInstructions, FewShotExamples, ArbitraryRewrite,
    DocChunking,
)


def default_registry() -> DirectiveRegistry:
    """The compiled-in directive catalog."""
    return DirectiveRegistry(cls() for cls in DIRECTIVE_CLASSES)
