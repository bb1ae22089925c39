#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Rewrite directive framework.
LHS patterns over operator subsequences, rewrite records, the directive base
class (match / validate / apply), the registry and search-time pruning.
"""

import hashlib
import json
import logging
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Type

from pydantic import BaseModel, ValidationError

from optimizer.errors import InvalidParams, RewriteProducesInvalidPipeline
from optimizer.pipeline_ir import (
    ModelCatalog,
    OperatorConfig,
    OperatorType,
    PipelineSpec,
    available_keys_after,
    placeholders,
    validate_pipeline,
)

logger = logging.getLogger(__name__)


class Category(str, Enum):
    FUSION_REORDERING = 'fusion_reordering'
    CODE_SYNTHESIS = 'code_synthesis'
    DATA_DECOMPOSITION = 'data_decomposition'
    PROJECTION_SYNTHESIS = 'projection_synthesis'
    LLM_CENTRIC = 'llm_centric'


class Objective(str, Enum):
    IMPROVE_ACCURACY = 'improve_accuracy'
    REDUCE_COST = 'reduce_cost'


# Directive names referenced by pruning and by the stub's preference tiers
FUSION_DIRECTIVES = frozenset({'same_type_fusion', 'map_reduce_fusion', 'map_filter_fusion', 'filter_map_fusion'})
CHAINING_DIRECTIVES = frozenset({
    'doc_chunking', 'code_sub_reduce', 'doc_summarization', 'doc_compression_llm', 'doc_compression_code',
})
COMPRESSION_DIRECTIVES = frozenset({
    'doc_compression_code', 'head_tail_compression', 'doc_summarization', 'doc_compression_llm',
})
CHUNKING_DIRECTIVE = 'doc_chunking'
MODEL_SUBSTITUTION = 'model_substitution'

Predicate = Callable[[OperatorConfig, FrozenSet[str]], bool]
SpanPredicate = Callable[[PipelineSpec, int, int], bool]
Span = Tuple[int, int]


@dataclass(frozen=True)
class PatternElement:
    op_types: FrozenSet[OperatorType]
    predicate: Optional[Predicate] = None

    def matches(self, op: OperatorConfig, keys: FrozenSet[str]) -> bool:
        if op.op_type not in self.op_types:
            return False
        return self.predicate is None or bool(self.predicate(op, keys))

    def signature(self) -> str:
        names = sorted(t.value for t in self.op_types)
        return names[0] if len(names) == 1 else '(' + '|'.join(names) + ')'


@dataclass(frozen=True)
class LhsPattern:
    """
    Contiguous operator pattern.

    Element predicates see the matched operator and the keys available to it;
    span_predicate sees the whole pipeline and the inclusive span.
    """
    elements: Tuple[PatternElement, ...]
    span_predicate: Optional[SpanPredicate] = None
    whole_pipeline: bool = False

    def __post_init__(self):
        if not self.elements and not self.whole_pipeline:
            raise ValueError("LHS pattern must have at least one element")

    def signature(self) -> str:
        if self.whole_pipeline:
            return 'P (whole pipeline)'
        return ' -> '.join(e.signature() for e in self.elements)

    def match_sites(self, p: PipelineSpec) -> List[Span]:
        if self.whole_pipeline:
            return [(0, len(p.operators) - 1)] if p.operators else []
        width = len(self.elements)
        sites = []
        for start in range(0, len(p.operators) - width + 1):
            if self._matches_at(p, start):
                sites.append((start, start + width - 1))
        return sites

    def _matches_at(self, p: PipelineSpec, start: int) -> bool:
        for offset, element in enumerate(self.elements):
            index = start + offset
            if not element.matches(p.operators[index], available_keys_after(p, index)):
                return False
        end = start + len(self.elements) - 1
        return self.span_predicate is None or bool(self.span_predicate(p, start, end))


@dataclass(frozen=True)
class RewriteRecord:
    directive_name: str
    match_span: Span
    params: Mapping[str, Any]
    objective: Objective

    def params_sha(self) -> str:
        payload = json.dumps(dict(self.params), sort_keys=True, default=str).encode('utf-8')
        return hashlib.sha256(payload).hexdigest()[:16]

    def describe(self) -> str:
        """Compact form used in rewrite-path strings, e.g. doc_chunking(chunk_size=1000)."""
        shown = []
        for key, value in sorted(self.params.items()):
            if isinstance(value, (int, float, bool)) or (isinstance(value, str) and len(value) <= 32 and '\n' not in value):
                shown.append(f"{key}={value}")
        return f"{self.directive_name}({', '.join(shown)})"

    def to_dict(self) -> Dict[str, Any]:
        return {
            'directive': self.directive_name,
            'match_span': list(self.match_span),
            'params': dict(self.params),
            'objective': self.objective.value,
        }


@dataclass
class StubHints:
    """What the rule-based instantiator may consult besides the pipeline."""
    catalog: ModelCatalog
    docs: List[Dict[str, Any]] = field(default_factory=list)
    path_models: FrozenSet[str] = frozenset()


# ----------------------------------------------------------------------------
# Prompt and key helpers shared by the rewrite rules
# ----------------------------------------------------------------------------

def retarget_prompt(prompt: str, old_key: str, new_key: str) -> str:
    """Point every {{ input.old_key }} placeholder at new_key."""
    pattern = re.compile(r"\{\{\s*input\." + re.escape(old_key) + r"\s*\}\}")
    return pattern.sub('{{ input.' + new_key + ' }}', prompt)


def strip_placeholders(prompt: str, keys: Iterable[str]) -> str:
    """Turn placeholders for keys into plain words (the value is no longer an input)."""
    for key in keys:
        pattern = re.compile(r"\{\{\s*input\." + re.escape(key) + r"\s*\}\}")
        prompt = pattern.sub(key.replace('_', ' '), prompt)
    return prompt


def refs_before(p: PipelineSpec, index: int) -> FrozenSet[str]:
    return available_keys_after(p, index)


def downstream_references(p: PipelineSpec, end: int) -> FrozenSet[str]:
    refs = set()
    for op in p.operators[end + 1:]:
        refs.update(op.referenced_keys())
    return frozenset(refs)


def leftmost_model(ops: Sequence[OperatorConfig]) -> Optional[str]:
    for op in ops:
        if op.is_llm and op.model:
            return op.model
    return None


def text_keys(op: OperatorConfig) -> List[str]:
    """Prompt-referenced keys that are not grouping keys, in first-use order."""
    seen: List[str] = []
    for prompt in op.prompts():
        for key in placeholders(prompt):
            if key not in seen and key not in op.group_by_keys:
                seen.append(key)
    return seen


def validation_context(info) -> Dict[str, Any]:
    """Context dict passed to pydantic validators (empty when absent)."""
    return dict(getattr(info, 'context', None) or {})


# ----------------------------------------------------------------------------
# Directive base
# ----------------------------------------------------------------------------

class Directive(ABC):
    """
    A rewrite rule: documentation bundle, LHS pattern, parameter schema and apply logic.
    """

    name: str = ''
    category: Category = Category.LLM_CENTRIC
    short_doc: str = ''
    full_doc: str = ''
    param_model: Type[BaseModel] = BaseModel
    candidate_count: int = 1

    def __init__(self):
        if self.candidate_count < 1:
            raise ValueError(f"{self.name}: candidate_count must be >= 1")
        self.lhs = self.build_lhs()

    @property
    def param_sensitive(self) -> bool:
        return self.candidate_count >= 2

    @abstractmethod
    def build_lhs(self) -> LhsPattern:
        """The operator pattern this directive rewrites."""

    @abstractmethod
    def rewrite(self, p: PipelineSpec, span: Span, params: BaseModel) -> PipelineSpec:
        """Replace the matched span per the directive's RHS."""

    @abstractmethod
    def stub_params(self, p: PipelineSpec, span: Span, objective: Objective, hints: StubHints) -> List[Dict[str, Any]]:
        """Template parameters used by the offline instantiator (one per candidate)."""

    # -- documentation --------------------------------------------------------

    def brief(self) -> Dict[str, str]:
        """Stage-1 disclosure: never includes full_doc."""
        return {
            'name': self.name,
            'category': self.category.value,
            'short_doc': self.short_doc,
            'lhs': self.lhs.signature(),
        }

    def full_spec(self) -> Dict[str, Any]:
        """Stage-2 disclosure: instantiation schema and worked example."""
        spec = self.brief()
        spec['full_doc'] = self.full_doc
        spec['param_schema'] = self.param_model.model_json_schema()
        spec['candidate_count'] = self.candidate_count
        return spec

    # -- matching and application --------------------------------------------

    def match_sites(self, p: PipelineSpec) -> List[Span]:
        return self.lhs.match_sites(p)

    def validation_context(self, p: PipelineSpec, span: Span) -> Dict[str, Any]:
        start, end = span
        return {
            'pipeline': p,
            'span': span,
            'ops': p.operators[start:end + 1],
            'available': available_keys_after(p, start),
            'downstream_refs': downstream_references(p, end),
        }

    def validate_params(self, raw: Any, p: PipelineSpec, span: Span) -> BaseModel:
        """
        Validate raw parameters against the schema with the target span as context.

        Raises:
            InvalidParams: on any schema or constraint violation
        """
        if isinstance(raw, self.param_model):
            raw = raw.model_dump()
        try:
            return self.param_model.model_validate(raw, context=self.validation_context(p, span))
        except ValidationError as e:
            raise InvalidParams(f"{self.name}: {e}")
        except (TypeError, ValueError) as e:
            raise InvalidParams(f"{self.name}: {e}")

    def apply(self, p: PipelineSpec, record: RewriteRecord, catalog: Optional[ModelCatalog] = None) -> PipelineSpec:
        """
        Apply record to p; p itself is never modified.

        Raises:
            InvalidParams: span is not a match site or params fail the schema
            RewriteProducesInvalidPipeline: the result fails validation
        """
        span = tuple(record.match_span)
        if span not in self.match_sites(p):
            raise InvalidParams(f"{self.name}: span {span} is not a match site")
        params = self.validate_params(record.params, p, span)
        result = self.rewrite(p, span, params)

        if catalog is not None:
            for op in result.operators:
                if op.is_llm and op.model not in catalog:
                    raise InvalidParams(f"{self.name}: model {op.model} is not in the catalog")

        report = validate_pipeline(result)
        if not report.ok:
            details = '; '.join(str(v) for v in report.violations)
            raise RewriteProducesInvalidPipeline(f"{self.name} produced an invalid pipeline: {details}",
                                                 report.violations)
        return result

    @staticmethod
    def splice(p: PipelineSpec, span: Span, new_ops: Sequence[OperatorConfig]) -> PipelineSpec:
        start, end = span
        return p.with_operators(p.operators[:start] + tuple(new_ops) + p.operators[end + 1:])


def match_sites(d: Directive, p: PipelineSpec) -> List[Span]:
    return d.match_sites(p)


def apply(d: Directive, p: PipelineSpec, r: RewriteRecord, catalog: Optional[ModelCatalog] = None) -> PipelineSpec:
    return d.apply(p, r, catalog)


# ----------------------------------------------------------------------------
# Registry and pruning
# ----------------------------------------------------------------------------

class DirectiveRegistry:
    """Immutable, ordered collection of directives keyed by name."""

    def __init__(self, directives: Iterable[Directive]):
        self._directives: Tuple[Directive, ...] = tuple(directives)
        names = [d.name for d in self._directives]
        duplicates = {n for n in names if names.count(n) > 1}
        if duplicates:
            raise ValueError(f"Duplicate directive names: {sorted(duplicates)}")
        self._by_name = {d.name: d for d in self._directives}

    def __iter__(self):
        return iter(self._directives)

    def __len__(self) -> int:
        return len(self._directives)

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def get(self, name: str) -> Directive:
        if name not in self._by_name:
            raise KeyError(f"Unknown directive: {name}")
        return self._by_name[name]

    @property
    def names(self) -> List[str]:
        return [d.name for d in self._directives]

    def by_category(self, category: Category) -> List[Directive]:
        return [d for d in self._directives if d.category == category]

    def dump(self) -> List[Dict[str, Any]]:
        """Catalog entries (name, category, short_doc, LHS signature) plus candidate counts."""
        rows = []
        for d in self._directives:
            row = d.brief()
            row['param_sensitive'] = d.param_sensitive
            row['candidate_count'] = d.candidate_count
            rows.append(row)
        return rows


def prune_registry(p_star: PipelineSpec, path: Sequence[RewriteRecord], registry: Iterable[Directive]) -> List[Directive]:
    """
    Drop directives that would undo or repeat the preceding rewrite.

    Removes fusion after a chaining rewrite, model substitution on depth-1
    model variants, chunking once a split exists, and compression right
    after compression. Order of the input is preserved.
    """
    last = path[-1].directive_name if path else None
    depth_one_variant = len(path) == 1 and last == MODEL_SUBSTITUTION
    has_split = any(op.op_type == OperatorType.SPLIT for op in p_star.operators)

    kept = []
    for d in registry:
        if d.name in FUSION_DIRECTIVES and last in CHAINING_DIRECTIVES:
            continue
        if d.name == MODEL_SUBSTITUTION and depth_one_variant:
            continue
        if d.name == CHUNKING_DIRECTIVE and has_split:
            continue
        if d.name in COMPRESSION_DIRECTIVES and last in COMPRESSION_DIRECTIVES:
            continue
        kept.append(d)
    return kept


def check_closure(pipelines: Iterable[PipelineSpec], registry: Iterable[Directive], catalog: ModelCatalog,
                  docs: Sequence[Dict[str, Any]] = ()) -> List[Dict[str, Any]]:
    """
    Apply every directive at every match site of every pipeline with stub
    parameters, for both objectives. One row per candidate; ok is False when
    the rewrite was rejected.
    """
    hints = StubHints(catalog=catalog, docs=list(docs))
    rows = []
    for p in pipelines:
        for d in registry:
            for span in d.match_sites(p):
                for objective in Objective:
                    for index, params in enumerate(d.stub_params(p, span, objective, hints)):
                        record = RewriteRecord(d.name, span, params, objective)
                        error = None
                        try:
                            d.apply(p, record, catalog)
                        except (InvalidParams, RewriteProducesInvalidPipeline) as e:
                            error = str(e)
                            logger.error(f"{d.name} at {span} on {p.name} ({objective.value}, #{index}): {e}")
                        rows.append({
                            'pipeline': p.name,
                            'directive': d.name,
                            'span': list(span),
                            'objective': objective.value,
                            'candidate': index,
                            'ok': error is None,
                            'error': error,
                        })
    return rows
