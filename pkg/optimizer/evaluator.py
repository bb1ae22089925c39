#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Pipeline evaluation.

The simulated evaluator scores pipelines on a synthetic landscape: cost comes from
the cost model under landscape prices, accuracy from model qualities, directive
effects, pairwise interactions and seeded noise. Everything is a pure function of
the pipeline's canonical form, so the cache and replays stay coherent.
"""

import hashlib
import logging
import threading
from abc import ABC, abstractmethod
from concurrent.futures import Future
from dataclasses import dataclass, replace
from itertools import combinations
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple, Union

import numpy as np
import yaml

from optimizer.errors import EvaluationError, PipelineConfigError
from optimizer.pipeline_ir import (
    ModelCatalog,
    ModelEntry,
    PipelineSpec,
    WorkloadProfile,
    canonical_serialize,
    estimate_cost,
    pipeline_key,
    profile_from_dict,
    validate_pipeline,
)

logger = logging.getLogger(__name__)

LANDSCAPE_VERSION = 1


@dataclass(frozen=True)
class EvalResult:
    cost: float
    accuracy: float
    pipeline_key: str
    cache_hit: bool = False


class Evaluator(ABC):
    """Scores a pipeline on the optimization sample."""

    @abstractmethod
    def evaluate(self, p: PipelineSpec) -> EvalResult:
        """Cost and accuracy of p; raises EvaluationError (or TransientEvaluationError)."""


# ----------------------------------------------------------------------------
# Landscape
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelFactor:
    quality: float
    price_factor: float = 1.0


@dataclass(frozen=True)
class DirectiveEffect:
    accuracy: float = 1.0
    accuracy_sd: float = 0.0
    cost: float = 1.0


@dataclass(frozen=True)
class LandscapeModel:
    """Synthetic accuracy/cost landscape, loaded from a versioned YAML fixture."""
    name: str
    seed: int = 0
    noise_scale: float = 0.0
    code_quality: float = 0.9
    models: Tuple[Tuple[str, ModelFactor], ...] = ()
    directives: Tuple[Tuple[str, DirectiveEffect], ...] = ()
    interactions: Tuple[Tuple[Tuple[str, str], float], ...] = ()
    workload: Optional[Mapping[str, Any]] = None

    def __post_init__(self):
        if self.noise_scale < 0:
            raise PipelineConfigError(f"Landscape {self.name}: noise_scale must be >= 0")
        if not 0.0 <= self.code_quality <= 1.0:
            raise PipelineConfigError(f"Landscape {self.name}: code_quality must lie in [0, 1]")
        pairs = tuple(sorted((tuple(sorted(pair)), float(v)) for pair, v in self.interactions))
        object.__setattr__(self, 'interactions', pairs)
        object.__setattr__(self, 'models', tuple(sorted(self.models)))
        object.__setattr__(self, 'directives', tuple(sorted(self.directives)))

    def model_factor(self, entry: ModelEntry) -> ModelFactor:
        return dict(self.models).get(entry.model_id, ModelFactor(quality=entry.quality_hint))

    def effect(self, directive_name: str) -> DirectiveEffect:
        return dict(self.directives).get(directive_name, DirectiveEffect())

    def interaction(self, a: str, b: str) -> float:
        return dict(self.interactions).get(tuple(sorted((a, b))), 1.0)

    def priced_catalog(self, catalog: ModelCatalog) -> ModelCatalog:
        """Catalog with landscape price factors applied."""
        entries = []
        for entry in catalog.entries:
            factor = self.model_factor(entry).price_factor
            entries.append(replace(
                entry,
                input_price_per_token=entry.input_price_per_token * factor,
                output_price_per_token=entry.output_price_per_token * factor,
            ))
        return ModelCatalog(tuple(entries))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'version': LANDSCAPE_VERSION,
            'name': self.name,
            'seed': self.seed,
            'noise_scale': self.noise_scale,
            'code_quality': self.code_quality,
            'models': {m: {'quality': f.quality, 'price_factor': f.price_factor} for m, f in self.models},
            'directives': {
                d: {'accuracy': e.accuracy, 'accuracy_sd': e.accuracy_sd, 'cost': e.cost}
                for d, e in self.directives
            },
            'interactions': [{'pair': list(pair), 'accuracy': v} for pair, v in self.interactions],
            'workload': dict(self.workload) if self.workload else None,
        }


def landscape_from_dict(data: Mapping[str, Any]) -> LandscapeModel:
    if not isinstance(data, Mapping):
        raise PipelineConfigError("Landscape document must be a mapping")
    version = data.get('version', LANDSCAPE_VERSION)
    if version != LANDSCAPE_VERSION:
        raise PipelineConfigError(f"Unsupported landscape version {version} (expected {LANDSCAPE_VERSION})")
    try:
        models = tuple(
            (str(m), ModelFactor(quality=float(v['quality']), price_factor=float(v.get('price_factor', 1.0))))
            for m, v in (data.get('models') or {}).items()
        )
        directives = tuple(
            (str(d), DirectiveEffect(
                accuracy=float(v.get('accuracy', 1.0)),
                accuracy_sd=float(v.get('accuracy_sd', 0.0)),
                cost=float(v.get('cost', 1.0)),
            ))
            for d, v in (data.get('directives') or {}).items()
        )
        interactions = tuple(
            ((str(i['pair'][0]), str(i['pair'][1])), float(i['accuracy']))
            for i in (data.get('interactions') or [])
        )
        return LandscapeModel(
            name=str(data.get('name', 'landscape')),
            seed=int(data.get('seed', 0)),
            noise_scale=float(data.get('noise_scale', 0.0)),
            code_quality=float(data.get('code_quality', 0.9)),
            models=models,
            directives=directives,
            interactions=interactions,
            workload=data.get('workload'),
        )
    except (KeyError, IndexError, TypeError, ValueError) as e:
        raise PipelineConfigError(f"Malformed landscape: {e}")


def load_landscape(path: Union[str, Path]) -> LandscapeModel:
    path = Path(path)
    if not path.exists():
        raise PipelineConfigError(f"Landscape file not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise PipelineConfigError(f"Invalid YAML in {path}: {e}")
    landscape = landscape_from_dict(data)
    logger.info(f"Loaded landscape '{landscape.name}' (noise {landscape.noise_scale}) from {path}")
    return landscape


# ----------------------------------------------------------------------------
# Simulation
# ----------------------------------------------------------------------------

def _rng_for(p: PipelineSpec, landscape: LandscapeModel) -> np.random.Generator:
    digest = hashlib.sha256(canonical_serialize(p) + str(landscape.seed).encode('utf-8')).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], 'big'))


def directive_tags(p: PipelineSpec) -> Tuple[str, ...]:
    """Distinct directive names present in the pipeline's provenance, sorted."""
    tags = set()
    for op in p.operators:
        tags.update(op.rewrites)
    return tuple(sorted(tags))


def base_accuracy(p: PipelineSpec, catalog: ModelCatalog, landscape: LandscapeModel) -> float:
    """Mean model quality over LLM operators times code quality per synthesized code operator."""
    qualities = [landscape.model_factor(catalog.get(op.model)).quality for op in p.operators if op.is_llm]
    accuracy = float(np.mean(qualities)) if qualities else 1.0
    for op in p.operators:
        if op.is_code and not op.extra('synthesized_check'):
            accuracy *= landscape.code_quality
    return accuracy


def simulate(p: PipelineSpec, catalog: ModelCatalog, landscape: LandscapeModel,
             profile: Optional[WorkloadProfile] = None) -> EvalResult:
    """
    Score p on the landscape.

    Raises:
        EvaluationError: p fails validation
        UnknownModel: an LLM operator's model is not in the catalog
    """
    report = validate_pipeline(p)
    if not report.ok:
        raise EvaluationError(f"Cannot evaluate invalid pipeline: {report.violations[0]}")

    priced = landscape.priced_catalog(catalog)
    profile = (profile or profile_from_dict(landscape.workload, priced)).with_catalog(priced)
    tags = directive_tags(p)
    rng = _rng_for(p, landscape)

    cost = estimate_cost(p, profile)
    accuracy = base_accuracy(p, catalog, landscape)
    for tag in tags:
        effect = landscape.effect(tag)
        factor = effect.accuracy
        if effect.accuracy_sd > 0:
            factor = rng.normal(effect.accuracy, effect.accuracy_sd)
        accuracy *= factor
        cost *= effect.cost
    for a, b in combinations(tags, 2):
        accuracy *= landscape.interaction(a, b)
    if landscape.noise_scale > 0:
        accuracy += rng.normal(0.0, landscape.noise_scale)

    accuracy = float(np.clip(accuracy, 0.0, 1.0))
    return EvalResult(cost=float(cost), accuracy=accuracy, pipeline_key=pipeline_key(p))


class SimulatedEvaluator(Evaluator):
    def __init__(self, catalog: ModelCatalog, landscape: LandscapeModel,
                 profile: Optional[WorkloadProfile] = None):
        self.catalog = catalog
        self.landscape = landscape
        self.profile = profile

    def evaluate(self, p: PipelineSpec) -> EvalResult:
        return simulate(p, self.catalog, self.landscape, self.profile)


# ----------------------------------------------------------------------------
# Cache
# ----------------------------------------------------------------------------

class CachedEvaluator(Evaluator):
    """
    Canonical-form keyed cache with atomic get-or-insert.

    Concurrent requests for the same pipeline wait on the first caller's
    evaluation. Failed evaluations are not cached.
    """

    def __init__(self, inner: Evaluator):
        self.inner = inner
        self.inner_calls = 0
        self._lock = threading.Lock()
        self._results: Dict[bytes, Future] = {}

    def evaluate(self, p: PipelineSpec) -> EvalResult:
        key = canonical_serialize(p)
        with self._lock:
            future = self._results.get(key)
            owner = future is None
            if owner:
                future = Future()
                self._results[key] = future
                self.inner_calls += 1

        if not owner:
            return replace(future.result(), cache_hit=True)

        try:
            result = self.inner.evaluate(p)
        except Exception as e:
            with self._lock:
                self._results.pop(key, None)
            future.set_exception(e)
            raise
        result = replace(result, cache_hit=False)
        future.set_result(result)
        return result

    def __contains__(self, p: PipelineSpec) -> bool:
        with self._lock:
            future = self._results.get(canonical_serialize(p))
        return future is not None and future.done() and future.exception() is None

    def __len__(self) -> int:
        with self._lock:
            return len(self._results)


def cached(e: Evaluator) -> CachedEvaluator:
    return e if isinstance(e, CachedEvaluator) else CachedEvaluator(e)
