#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Multi-objective tree search over rewritten pipelines.

Initialization sweeps the model catalog and seeds two rewrites per frontier
variant; the main loop selects nodes by UCT with progressive widening, picks an
objective from the node's accuracy rank, instantiates and evaluates candidate
rewrites, and keeps the most accurate one as a new child.
"""

import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from optimizer.config import (
    DEFAULT_BUDGET,
    DEFAULT_WORKERS,
    MAX_CONSECUTIVE_FAILURES,
    MODEL_CAP,
    MODELS_PER_FAMILY,
    RETRY_LIMIT,
)
from optimizer.directives import (
    MODEL_SUBSTITUTION,
    DirectiveRegistry,
    Objective,
    RewriteRecord,
    prune_registry,
)
from optimizer.errors import (
    BudgetExhausted,
    EndpointError,
    EvaluationError,
    InstantiationFailed,
    InvalidParams,
    NoApplicableDirective,
    PipelineConfigError,
    RewriteProducesInvalidPipeline,
    SearchSpaceExhausted,
    UnknownModel,
)
from optimizer.evaluator import CachedEvaluator, EvalResult, Evaluator, cached
from optimizer.instantiation import AgentContext, Instantiator, ListDocPeek
from optimizer.pareto import EvalPoint, all_deltas, frontier_records, pareto_set, sorted_frontier, to_micro
from optimizer.pipeline_ir import (
    ModelCatalog,
    PipelineSpec,
    llm_models,
    pipeline_key,
    pipeline_to_yaml,
    validate_pipeline,
    with_model,
)
from optimizer.rewrite_rules import default_registry

logger = logging.getLogger(__name__)


class FailureKind(str, Enum):
    PARSE = 'parse'
    TRANSIENT = 'transient'
    NO_DIRECTIVE = 'no_directive'
    BUDGET = 'budget'


def widening_cap(n: int) -> int:
    """Maximum children for a node with n visits: max(2, floor(1 + sqrt(n)))."""
    if n < 1:
        raise ValueError(f"visit count must be >= 1, got {n}")
    return max(2, 1 + math.isqrt(n))


# ----------------------------------------------------------------------------
# Tree state
# ----------------------------------------------------------------------------

@dataclass(eq=False)
class SearchNode:
    node_id: int
    pipeline: PipelineSpec
    eval: Optional[EvalPoint] = None
    parent: Optional['SearchNode'] = field(default=None, repr=False)
    children: List['SearchNode'] = field(default_factory=list, repr=False)
    n: int = 1
    depth: int = 0
    last_action: Optional[str] = None
    disabled: bool = False
    exhausted: bool = False
    path: Tuple[RewriteRecord, ...] = ()

    @property
    def is_root(self) -> bool:
        return self.parent is None

    def lineage(self) -> Iterator['SearchNode']:
        """This node and its ancestors up to the root."""
        node = self
        while node is not None:
            yield node
            node = node.parent

    def descendants(self) -> List['SearchNode']:
        found = []
        stack = list(self.children)
        while stack:
            node = stack.pop()
            found.append(node)
            stack.extend(node.children)
        return found


def path_string(node: SearchNode) -> str:
    """ROOT → model_substitution(model=m) → ... (cost: $x, acc: y)"""
    steps = ['ROOT'] + [record.describe() for record in node.path]
    text = ' → '.join(steps)
    if node.eval is not None:
        text += f" (cost: ${node.eval.cost:.4f}, acc: {node.eval.accuracy:.3f})"
    return text


def utility(node: SearchNode, delta_of: Callable[[SearchNode], float]) -> float:
    """
    UCT score of a non-root node.

    Exploitation is the delta sum over the node's subtree divided by its visit
    count; exploration is sqrt(2 ln n(parent) / n(node)).
    """
    if node.parent is None:
        raise ValueError("the root is never scored")
    subtree = [node] + node.descendants()
    exploit = sum(delta_of(member) for member in subtree) / node.n
    explore = math.sqrt(2.0 * math.log(node.parent.n) / node.n)
    return exploit + explore


@dataclass
class SearchConfig:
    budget: int = DEFAULT_BUDGET
    workers: int = DEFAULT_WORKERS
    model_cap: int = MODEL_CAP
    models_per_family: int = MODELS_PER_FAMILY
    retry_limit: int = RETRY_LIMIT
    max_consecutive_failures: int = MAX_CONSECUTIVE_FAILURES
    seed: int = 0

    def __post_init__(self):
        for name in ('budget', 'workers', 'model_cap', 'models_per_family', 'retry_limit',
                     'max_consecutive_failures'):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise PipelineConfigError(f"SearchConfig.{name} must be a positive integer, got {value!r}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'budget': self.budget,
            'workers': self.workers,
            'model_cap': self.model_cap,
            'models_per_family': self.models_per_family,
            'retry_limit': self.retry_limit,
            'max_consecutive_failures': self.max_consecutive_failures,
            'seed': self.seed,
        }


@dataclass
class RunStats:
    """Model sweep results, running directive deltas and per-node usage counts."""
    model_stats: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    directive_deltas: Dict[str, List[Tuple[float, float]]] = field(default_factory=dict)
    usage: Dict[Tuple[int, str], int] = field(default_factory=dict)

    def record_delta(self, directive: str, delta_cost: float, delta_accuracy: float):
        self.directive_deltas.setdefault(directive, []).append((delta_cost, delta_accuracy))

    @property
    def directive_stats(self) -> Dict[str, Tuple[float, float]]:
        stats = {}
        for name, deltas in self.directive_deltas.items():
            values = np.asarray(deltas, dtype=float)
            stats[name] = (float(values[:, 0].mean()), float(values[:, 1].mean()))
        return stats

    def bump_usage(self, node: SearchNode, directive: str):
        key = (node.node_id, directive)
        self.usage[key] = self.usage.get(key, 0) + 1

    def usage_for(self, node: SearchNode) -> Dict[str, int]:
        return {d: count for (node_id, d), count in self.usage.items() if node_id == node.node_id}

    def to_dict(self) -> Dict[str, Any]:
        return {
            'model_stats': {m: {'cost': c, 'accuracy': a} for m, (c, a) in sorted(self.model_stats.items())},
            'directive_stats': {
                d: {'mean_delta_cost': c, 'mean_delta_accuracy': a, 'count': len(self.directive_deltas[d])}
                for d, (c, a) in sorted(self.directive_stats.items())
            },
        }


class BudgetLedger:
    """Evaluation budget shared by all workers: reserve before evaluating, then commit or release."""

    def __init__(self, budget: int):
        self.budget = budget
        self.used = 0
        self.reserved = 0
        self._lock = threading.Lock()

    def available(self) -> int:
        with self._lock:
            return self.budget - self.used - self.reserved

    def reserve(self, k: int) -> int:
        with self._lock:
            granted = max(0, min(k, self.budget - self.used - self.reserved))
            self.reserved += granted
            return granted

    def commit(self, n: int = 1):
        with self._lock:
            self.reserved -= n
            self.used += n

    def release(self, n: int = 1):
        with self._lock:
            self.reserved -= n


@dataclass
class SearchResult:
    frontier: List[EvalPoint]
    records: List[Dict[str, Any]]
    trace: List[Dict[str, Any]]
    stats: RunStats
    budget_used: int
    tree: 'SearchTree' = field(repr=False)

    @property
    def best_accuracy(self) -> float:
        return max((p.accuracy for p in self.frontier), default=0.0)


def subsample_models(catalog: ModelCatalog, default_model: Optional[str], cap: int,
                     per_family: int, seed: int) -> List[str]:
    """
    Models to sweep: the whole catalog if it fits under cap, otherwise up to
    per_family models from randomly ordered families, always keeping the default.
    """
    if len(catalog) <= cap:
        return catalog.model_ids
    rng = np.random.default_rng(seed)
    families = catalog.families()
    chosen: List[str] = []
    if default_model in catalog:
        chosen.append(default_model)
    for family in rng.permutation(sorted(families)):
        members = [e.model_id for e in families[family]]
        quota = per_family - sum(1 for m in chosen if m in members)
        remaining = [m for m in members if m not in chosen]
        take = min(quota, len(remaining), cap - len(chosen))
        if take > 0:
            picks = rng.choice(len(remaining), size=take, replace=False)
            chosen.extend(remaining[i] for i in sorted(picks))
        if len(chosen) >= cap:
            break
    order = {m: i for i, m in enumerate(catalog.model_ids)}
    return sorted(chosen, key=order.get)


def default_model_of(p: PipelineSpec) -> Optional[str]:
    models = llm_models(p)
    return models[0] if models else None


# ----------------------------------------------------------------------------
# Search
# ----------------------------------------------------------------------------

class SearchTree:
    """
    UCT search with progressive widening.

    Selection, admission and statistics updates happen under one lock;
    instantiation and evaluation run outside it.
    """

    strategy = 'uct'

    def __init__(self, p0: PipelineSpec, catalog: ModelCatalog, evaluator: Evaluator,
                 instantiator: Instantiator, config: Optional[SearchConfig] = None,
                 registry: Optional[DirectiveRegistry] = None, sample_docs: Sequence[Dict[str, Any]] = ()):
        self.p0 = p0
        self.catalog = catalog
        self.evaluator: CachedEvaluator = cached(evaluator)
        self.instantiator = instantiator
        self.config = config or SearchConfig()
        self.registry = registry or default_registry()
        self.sample_docs = list(sample_docs)

        self.ledger = BudgetLedger(self.config.budget)
        self.stats = RunStats()
        self.trace: List[Dict[str, Any]] = []
        self.nodes: List[SearchNode] = []
        self.root: Optional[SearchNode] = None
        self.swept_models: List[str] = []
        self.consecutive_failures = 0
        self.space_exhausted = False

        self._lock = threading.RLock()
        self._deltas: Optional[Dict[int, float]] = None

    # -- frontier bookkeeping -------------------------------------------------

    def evaluated_nodes(self) -> List[SearchNode]:
        """V_t: every evaluated node except the root."""
        return [n for n in self.nodes if not n.is_root and n.eval is not None]

    def points(self) -> List[EvalPoint]:
        return [n.eval for n in self.evaluated_nodes()]

    def frontier(self) -> List[EvalPoint]:
        return sorted_frontier(self.points())

    def delta_of(self, node: SearchNode) -> float:
        with self._lock:
            if self._deltas is None:
                by_point = all_deltas(self.points())
                self._deltas = {n.node_id: by_point[n.eval] for n in self.evaluated_nodes()}
            return self._deltas.get(node.node_id, 0.0)

    def utility(self, node: SearchNode) -> float:
        return utility(node, self.delta_of)

    def objective_for(self, node: SearchNode) -> Objective:
        """Cost reduction for nodes ranked in the more accurate half of V_t."""
        with self._lock:
            evaluated = self.evaluated_nodes()
            ranked = evaluated if node in evaluated else evaluated + [node]
            ranked = sorted(ranked, key=lambda n: (-n.eval.accuracy, n.eval.cost_micro, n.node_id))
            rank = ranked.index(node) + 1
            return Objective.REDUCE_COST if rank <= len(evaluated) / 2 else Objective.IMPROVE_ACCURACY

    # -- selection ------------------------------------------------------------

    def select(self) -> SearchNode:
        """
        Descend from the root by maximum utility until a node has fewer children
        than its widening cap, then count the visit on every node of the path.

        Raises:
            SearchSpaceExhausted: no selectable node remains
        """
        with self._lock:
            node = self._descend(self.root)
            if node is None:
                raise SearchSpaceExhausted("Every node is disabled, exhausted or capped")
            for member in node.lineage():
                member.n += 1
            return node

    def _descend(self, node: SearchNode) -> Optional[SearchNode]:
        if node.disabled:
            return None
        if not node.exhausted and len(node.children) < widening_cap(node.n):
            return node
        live = [c for c in node.children if not c.disabled]
        for child in sorted(live, key=lambda c: (-self.utility(c), c.node_id)):
            found = self._descend(child)
            if found is not None:
                return found
        return None

    def visit_count_violations(self) -> List[int]:
        """Nodes whose visit count differs from 1 + number of descendants."""
        return [n.node_id for n in self.nodes if n.n != 1 + len(n.descendants())]

    # -- context --------------------------------------------------------------

    def _path_models(self, node: SearchNode) -> frozenset:
        models = set()
        for member in node.lineage():
            models.update(llm_models(member.pipeline))
        return frozenset(models)

    def build_context(self, node: SearchNode, objective: Objective, pruned) -> AgentContext:
        with self._lock:
            explored = [(path_string(n), n.eval.cost, n.eval.accuracy) for n in self.evaluated_nodes()]
            return AgentContext(
                pipeline_yaml=pipeline_to_yaml(node.pipeline),
                directive_briefs=[d.brief() for d in pruned],
                explored_paths=explored,
                current_path=path_string(node),
                depth=node.depth,
                model_stats=dict(self.stats.model_stats),
                directive_stats=self.stats.directive_stats,
                objective=objective,
                model_catalog=[e.to_dict() for e in self.catalog.entries],
                pipeline=node.pipeline,
                pruned=list(pruned),
                usage=self.stats.usage_for(node),
                path=node.path,
                path_models=self._path_models(node),
            )

    # -- trace ----------------------------------------------------------------

    def _log(self, **record):
        with self._lock:
            record = {'iter': len(self.trace), **record}
            record['budget_used'] = self.ledger.used
            record['frontier_size'] = len(pareto_set(self.points()))
            self.trace.append(record)

    # -- rewrite and evaluate -------------------------------------------------

    def expand(self, node: SearchNode, objective: Optional[Objective] = None,
               phase: str = 'search') -> Optional[SearchNode]:
        """
        Choose a directive for node, evaluate its candidates and admit the most
        accurate one. Returns the new child, or None when the attempt is discarded.
        """
        objective = objective or self.objective_for(node)
        pruned = [d for d in prune_registry(node.pipeline, node.path, self.registry) if d.match_sites(node.pipeline)]
        if not pruned:
            node.exhausted = True
            return self.handle_failure(node, FailureKind.NO_DIRECTIVE, phase, objective,
                                       "no applicable directive after pruning")

        last_error = ''
        chosen = None
        for attempt in range(1, self.config.retry_limit + 1):
            directive_name = None
            try:
                context = self.build_context(node, objective, pruned)
                directive_name, span = self.instantiator.choose_directive(context)
                chosen = directive_name
                directive = self.registry.get(directive_name)
                raw = self.instantiator.instantiate(directive, node.pipeline, span, objective,
                                                    ListDocPeek(self.sample_docs), context)
                candidates = self._apply_candidates(directive, node, span, raw, objective)
            except NoApplicableDirective as e:
                node.exhausted = True
                return self.handle_failure(node, FailureKind.NO_DIRECTIVE, phase, objective, str(e))
            except EndpointError as e:
                return self.handle_failure(node, FailureKind.TRANSIENT, phase, objective, str(e))
            except (InvalidParams, RewriteProducesInvalidPipeline, InstantiationFailed, UnknownModel, KeyError) as e:
                last_error = str(e)
                logger.warning(f"Rewrite attempt {attempt}/{self.config.retry_limit} on node {node.node_id} "
                               f"failed: {e}")
                self._log(phase=phase, status='retry', failure=FailureKind.PARSE.value, node_id=node.node_id,
                          directive=directive_name, objective=objective.value, attempt=attempt)
                continue
            with self._lock:
                self.stats.bump_usage(node, directive_name)
            return self._evaluate_candidates(node, directive_name, candidates, objective, phase)

        # One usage per expansion, however many attempts it took
        if chosen is not None:
            with self._lock:
                self.stats.bump_usage(node, chosen)
        return self.handle_failure(node, FailureKind.PARSE, phase, objective, last_error)

    def _apply_candidates(self, directive, node: SearchNode, span, raw: Sequence[Dict[str, Any]],
                          objective: Objective) -> List[Tuple[int, RewriteRecord, PipelineSpec]]:
        candidates = []
        for index, params in enumerate(list(raw)[:directive.candidate_count]):
            record = RewriteRecord(directive.name, tuple(span), dict(params), objective)
            try:
                pipeline = directive.apply(node.pipeline, record, self.catalog)
            except (InvalidParams, RewriteProducesInvalidPipeline, UnknownModel) as e:
                logger.warning(f"Candidate {index} of {directive.name} rejected: {e}")
                continue
            candidates.append((index, record, pipeline))
        if not candidates:
            raise InvalidParams(f"{directive.name}: no candidate produced a valid pipeline")
        return candidates

    def _evaluate(self, pipeline: PipelineSpec) -> EvalResult:
        """One budgeted evaluation; the reservation must already be held."""
        try:
            result = self.evaluator.evaluate(pipeline)
        except EvaluationError:
            self.ledger.commit(1)
            raise
        if result.cache_hit:
            self.ledger.release(1)
        else:
            self.ledger.commit(1)
        return result

    def _evaluate_candidates(self, node: SearchNode, directive_name: str, candidates,
                             objective: Objective, phase: str) -> Optional[SearchNode]:
        granted = self.ledger.reserve(len(candidates))
        if granted == 0:
            return self.handle_failure(node, FailureKind.BUDGET, phase, objective, "budget exhausted")
        if granted < len(candidates):
            logger.info(f"Budget allows {granted} of {len(candidates)} candidates for {directive_name}")

        scored = []
        for index, record, pipeline in candidates[:granted]:
            try:
                result = self._evaluate(pipeline)
            except EvaluationError as e:
                logger.warning(f"Evaluation of {directive_name} candidate {index} discarded: {e}")
                continue
            scored.append((index, record, pipeline, result))
        if not scored:
            return self.handle_failure(node, FailureKind.TRANSIENT, phase, objective,
                                       f"all {directive_name} candidates failed to evaluate")

        index, record, pipeline, result = min(
            scored, key=lambda s: (-s[3].accuracy, to_micro(s[3].cost), s[0]))
        return self._admit(node, record, pipeline, result, phase, candidates=len(scored))

    def _admit(self, parent: SearchNode, record: RewriteRecord, pipeline: PipelineSpec,
               result: EvalResult, phase: str, candidates: int = 1) -> Optional[SearchNode]:
        with self._lock:
            if parent.disabled:
                return self.handle_failure(parent, FailureKind.TRANSIENT, phase, record.objective,
                                           "parent was disabled")
            child = SearchNode(
                node_id=len(self.nodes),
                pipeline=pipeline,
                eval=EvalPoint(result.pipeline_key, result.cost, result.accuracy),
                parent=parent,
                depth=parent.depth + 1,
                last_action=record.directive_name,
                path=parent.path + (record,),
            )
            parent.children.append(child)
            self.nodes.append(child)
            self._deltas = None
            if parent.eval is not None and phase != 'sweep':
                self.stats.record_delta(record.directive_name, child.eval.cost - parent.eval.cost,
                                        child.eval.accuracy - parent.eval.accuracy)
            self._log(
                phase=phase,
                status='ok',
                objective=record.objective.value,
                selected_path=path_string(parent),
                parent_id=parent.node_id,
                node_id=child.node_id,
                directive=record.directive_name,
                params_sha=record.params_sha(),
                candidates=candidates,
                pipeline_key=result.pipeline_key,
                cost=result.cost,
                accuracy=result.accuracy,
                cache_hit=result.cache_hit,
                children=len(parent.children),
                cap=widening_cap(parent.n),
                path=path_string(child),
            )
            logger.info(f"[{phase}] node {child.node_id} <- {parent.node_id} via {record.describe()}: "
                        f"cost ${result.cost:.4f}, acc {result.accuracy:.3f}")
            return child

    def handle_failure(self, node: SearchNode, kind: FailureKind, phase: str,
                       objective: Optional[Objective], message: str = '') -> None:
        """Discard the attempt and undo the visit counted when node was selected."""
        with self._lock:
            for member in node.lineage():
                member.n -= 1
            logger.warning(f"[{phase}] discarded {kind.value} failure on node {node.node_id}: {message}")
            self._log(phase=phase, status='discarded', failure=kind.value, node_id=node.node_id,
                      objective=objective.value if objective else None)
        return None

    # -- initialization -------------------------------------------------------

    def initialize(self) -> 'SearchTree':
        """
        Model sweep, then one accuracy and one cost rewrite per frontier variant;
        non-frontier variants are disabled.

        Raises:
            PipelineConfigError: P0 fails validation
            UnknownModel: P0 names a model outside the catalog
            BudgetExhausted: the budget cannot cover initialization
        """
        report = validate_pipeline(self.p0)
        if not report.ok:
            raise PipelineConfigError(f"Initial pipeline is invalid: {'; '.join(str(v) for v in report.violations)}")
        for model in llm_models(self.p0):
            self.catalog.get(model)

        default = default_model_of(self.p0)
        models = subsample_models(self.catalog, default, self.config.model_cap,
                                  self.config.models_per_family, self.config.seed)
        if self.config.budget < len(models) + 2:
            raise BudgetExhausted(f"Budget {self.config.budget} cannot cover a sweep of {len(models)} models "
                                  f"plus two rewrites")
        self.swept_models = models
        logger.info(f"Initializing: sweeping {len(models)} models, budget {self.config.budget}")

        self.root = SearchNode(node_id=0, pipeline=self.p0)
        self.nodes = [self.root]
        default_price = self.catalog.get(default).blended_price if default else 0.0
        for model in models:
            entry = self.catalog.get(model)
            objective = Objective.REDUCE_COST if entry.blended_price <= default_price else Objective.IMPROVE_ACCURACY
            variant = with_model(self.p0, model)
            record = RewriteRecord(MODEL_SUBSTITUTION, (0, len(self.p0) - 1), {'model': model}, objective)
            self.ledger.reserve(1)
            try:
                result = self._evaluate(variant)
            except EvaluationError as e:
                logger.warning(f"Model sweep variant {model} discarded: {e}")
                self._log(phase='sweep', status='discarded', failure=FailureKind.TRANSIENT.value, node_id=0,
                          directive=MODEL_SUBSTITUTION)
                continue
            self.root.n += 1
            self._admit(self.root, record, variant, result, 'sweep')
            self.stats.model_stats[model] = (result.cost, result.accuracy)

        sweep = list(self.root.children)
        if not sweep:
            logger.warning("Model sweep produced no evaluated variants, nothing to search")
            self.space_exhausted = True
            return self

        self.ledger.reserve(1)
        try:
            root_result = self._evaluate(self.p0)
        except EvaluationError as e:
            logger.warning(f"Evaluation of the initial pipeline discarded: {e}")
            self._log(phase='root', status='discarded', failure=FailureKind.TRANSIENT.value, node_id=0)
        else:
            self.root.eval = EvalPoint(root_result.pipeline_key, root_result.cost, root_result.accuracy)
            self._log(phase='root', status='ok', node_id=0, pipeline_key=root_result.pipeline_key,
                      cost=root_result.cost, accuracy=root_result.accuracy, cache_hit=root_result.cache_hit)

        frontier = pareto_set(c.eval for c in sweep)
        frontier_children = sorted((c for c in sweep if c.eval in frontier), key=lambda c: (c.eval.cost_micro, c.node_id))
        if self.ledger.available() < 2 * len(frontier_children):
            raise BudgetExhausted(f"Budget left ({self.ledger.available()}) cannot seed "
                                  f"{len(frontier_children)} frontier variants")

        for child in frontier_children:
            for objective in (Objective.IMPROVE_ACCURACY, Objective.REDUCE_COST):
                with self._lock:
                    for member in child.lineage():
                        member.n += 1
                self.expand(child, objective, phase='init')

        for child in sweep:
            if child not in frontier_children:
                child.disabled = True
        logger.info(f"Initialization done: {len(self.evaluated_nodes())} pipelines, "
                    f"{len(frontier_children)} frontier variants, budget used {self.ledger.used}")
        return self

    # -- main loop ------------------------------------------------------------

    def should_continue(self) -> bool:
        return (self.ledger.available() > 0 and not self.space_exhausted
                and self.consecutive_failures < self.config.max_consecutive_failures)

    def iterate(self) -> bool:
        """
        One select + rewrite-and-evaluate round; False when the search space is exhausted.

        Rounds that add no freshly evaluated pipeline (discards and pure cache
        hits) count toward the consecutive-failure cap, so a search that only
        rediscovers known pipelines still terminates.
        """
        try:
            node = self.select()
        except SearchSpaceExhausted as e:
            logger.info(f"Stopping: {e}")
            self.space_exhausted = True
            return False
        used_before = self.ledger.used
        child = self.expand(node)
        with self._lock:
            progressed = child is not None and self.ledger.used > used_before
            self.consecutive_failures = 0 if progressed else self.consecutive_failures + 1
        return True

    def _worker_loop(self):
        while self.should_continue():
            if not self.iterate():
                break

    def run(self) -> SearchResult:
        if self.root is None:
            self.initialize()
        if self.config.workers <= 1:
            self._worker_loop()
        else:
            with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                futures = [pool.submit(self._worker_loop) for _ in range(self.config.workers)]
                for future in futures:
                    future.result()
        if self.consecutive_failures >= self.config.max_consecutive_failures:
            logger.warning(f"Stopped after {self.consecutive_failures} consecutive discarded iterations")
        return self.result()

    def result(self) -> SearchResult:
        paths: Dict[str, str] = {}
        for node in self.evaluated_nodes():
            paths.setdefault(node.eval.pipeline_key, path_string(node))
        frontier = self.frontier()
        logger.info(f"[{self.strategy}] frontier has {len(frontier)} pipelines, budget used "
                    f"{self.ledger.used}/{self.config.budget}")
        return SearchResult(
            frontier=frontier,
            records=frontier_records(frontier, paths),
            trace=list(self.trace),
            stats=self.stats,
            budget_used=self.ledger.used,
            tree=self,
        )

    def pipeline_for(self, key: str) -> Optional[PipelineSpec]:
        for node in self.nodes:
            if node.eval is not None and node.eval.pipeline_key == key:
                return node.pipeline
        return None


def initialize(p0: PipelineSpec, catalog: ModelCatalog, evaluator: Evaluator, instantiator: Instantiator,
               config: Optional[SearchConfig] = None, **kwargs) -> SearchTree:
    return SearchTree(p0, catalog, evaluator, instantiator, config, **kwargs).initialize()


def run(p0: PipelineSpec, config: SearchConfig, catalog: ModelCatalog, evaluator: Evaluator,
        instantiator: Instantiator, **kwargs) -> SearchResult:
    return SearchTree(p0, catalog, evaluator, instantiator, config, **kwargs).run()
