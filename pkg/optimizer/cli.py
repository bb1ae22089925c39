#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Command-line interface for the pipeline optimizer.

Usage:
    python -m optimizer.cli optimize --pipeline data/pipelines/symptom_triage.yaml --budget 40 --out runs/demo
    python -m optimizer.cli frontier --trace runs/demo/trace.jsonl
    python -m optimizer.cli replay --trace runs/demo/trace.jsonl
    python -m optimizer.cli bench --strategies uct,greedy,random --seeds 20
    python -m optimizer.cli registry dump
    python -m optimizer.cli registry check

Exit codes: 0 success, 2 validation or configuration error, 3 budget or
infrastructure failure.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from optimizer.config import (
    ADVERSARIAL_LANDSCAPE_FILE,
    DEFAULT_BUDGET,
    DEFAULT_LANDSCAPE_FILE,
    DEFAULT_MODELS_FILE,
    DEFAULT_WORKERS,
    LOG_FORMAT,
    LOG_LEVEL,
    PIPELINES_DIR,
    RUNS_DIR,
)
from optimizer.directives import check_closure
from optimizer.errors import (
    BudgetExhausted,
    EndpointError,
    EvaluationError,
    IndexOutOfRange,
    InstantiationFailed,
    InvalidParams,
    NoApplicableDirective,
    OptimizerError,
    PipelineConfigError,
    PointNotFound,
    ReplayMismatch,
    RewriteProducesInvalidPipeline,
    SearchSpaceExhausted,
    UnknownModel,
)
from optimizer.evaluator import SimulatedEvaluator, load_landscape
from optimizer.instantiation import load_sample
from optimizer.pareto import frontier_dataframe
from optimizer.pipeline_ir import load_catalog, load_pipeline
from optimizer.rewrite_rules import default_registry
from optimizer.search import SearchConfig
from optimizer.strategies import STRATEGIES, bench, compare, make_search, summarize
from optimizer.trace import frontier_from_trace, read_trace, replay, trace_header, write_outputs

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_INFRASTRUCTURE = 3

INVALID_ERRORS = (PipelineConfigError, UnknownModel, InvalidParams, IndexOutOfRange,
                  RewriteProducesInvalidPipeline, NoApplicableDirective)
INFRASTRUCTURE_ERRORS = (BudgetExhausted, EndpointError, SearchSpaceExhausted, ReplayMismatch, EvaluationError,
                         InstantiationFailed, PointNotFound)


def _banner(title: str):
    print("=" * 60)
    print(title)
    print("=" * 60)


def _print_frontier(records):
    df = frontier_dataframe(records)
    if df.empty:
        print("(empty frontier)")
        return
    print(df[['cost', 'accuracy', 'path']].to_string(index=False))


# ----------------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------------

def cmd_optimize(args) -> int:
    p0 = load_pipeline(args.pipeline)
    catalog = load_catalog(args.models)
    landscape = load_landscape(args.landscape)
    landscape = replace(landscape, seed=landscape.seed + args.seed)
    docs = load_sample(args.sample) if args.sample else []

    config = SearchConfig(budget=args.budget, workers=args.workers, seed=args.seed)
    search = make_search(args.strategy, p0, catalog, SimulatedEvaluator(catalog, landscape), config,
                         endpoint=args.agent_endpoint, sample_docs=docs)

    _banner(f"Optimizing '{p0.name}' ({args.strategy}, budget {args.budget}, {len(catalog)} models)")
    result = search.run()
    out_dir = Path(args.out) if args.out else RUNS_DIR / f"{p0.name}-{args.strategy}-seed{args.seed}"
    paths = write_outputs(out_dir, result, trace_header(search, landscape))

    print(f"\nFrontier ({len(result.frontier)} pipelines, {result.budget_used}/{args.budget} evaluations):")
    _print_frontier(result.records)
    print(f"\nOutputs written to {out_dir}")
    for name, path in paths.items():
        print(f"  {name}: {path.name}")
    return EXIT_OK


def cmd_frontier(args) -> int:
    header, records = read_trace(args.trace)
    frontier = frontier_from_trace(records)
    _banner(f"Frontier recomputed from {args.trace} ({header.get('strategy')})")
    _print_frontier(frontier)
    if args.json:
        print(json.dumps(frontier, indent=2))
    return EXIT_OK


def cmd_replay(args) -> int:
    header, records = read_trace(args.trace)
    _banner(f"Replaying {args.trace} ({len(records)} records)")
    result = replay(header, records)
    print(f"Replay matched: {len(records)} records, frontier of {len(result.frontier)} pipelines")
    return EXIT_OK


def cmd_bench(args) -> int:
    strategies = [s.strip() for s in args.strategies.split(',') if s.strip()]
    unknown = [s for s in strategies if s not in STRATEGIES]
    if unknown:
        raise PipelineConfigError(f"Unknown strategies: {unknown}")
    p0 = load_pipeline(args.pipeline)
    catalog = load_catalog(args.models)
    landscape = load_landscape(args.landscape)

    _banner(f"Bench: {', '.join(strategies)} x {args.seeds} seeds on '{landscape.name}' (budget {args.budget})")
    runs = bench(p0, catalog, landscape, strategies=strategies, seeds=args.seeds, budget=args.budget,
                 workers=args.workers)
    print(summarize(runs).to_string(index=False))

    comparisons = [compare(runs, strategies[0], other) for other in strategies[1:]]
    for c in comparisons:
        print(f"\n{c['strategy']} vs {c['baseline']}: {c['wins']} wins, {c['ties']} ties, {c['losses']} losses "
              f"(at least as good in {c['at_least_as_good']:.0%}), sign test p = {c['p_value']:.4g}")

    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        runs.to_csv(out / 'bench_runs.csv', index=False)
        summarize(runs).to_csv(out / 'bench_summary.csv', index=False)
        with open(out / 'bench_comparisons.json', 'w', encoding='utf-8') as f:
            json.dump(comparisons, f, indent=2)
        print(f"\nBench tables written to {out}")
    return EXIT_OK


def cmd_registry(args) -> int:
    registry = default_registry()
    if args.action == 'dump':
        print(json.dumps(registry.dump(), indent=2))
        return EXIT_OK

    catalog = load_catalog(args.models)
    files = sorted(Path(args.pipelines).glob('*.yaml'))
    if not files:
        raise PipelineConfigError(f"No seed pipelines found in {args.pipelines}")
    pipelines = [load_pipeline(f) for f in files]
    docs = load_sample(args.sample) if args.sample else []
    rows = check_closure(pipelines, registry, catalog, docs)
    failures = [r for r in rows if not r['ok']]

    _banner(f"Closure check: {len(registry)} directives x {len(pipelines)} pipelines")
    print(f"{len(rows)} rewrites applied, {len(failures)} invalid")
    for row in failures:
        print(f"  {row['pipeline']}: {row['directive']} at {row['span']} ({row['objective']}) -> {row['error']}")
    return EXIT_INVALID if failures else EXIT_OK


# ----------------------------------------------------------------------------
# Entry point
# ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='optimizer', description="Multi-objective semantic pipeline optimizer")
    parser.add_argument('-v', '--verbose', action='store_true', help="Debug logging")
    sub = parser.add_subparsers(dest='command', required=True)

    opt = sub.add_parser('optimize', help="Search for cost/accuracy trade-offs of a pipeline")
    opt.add_argument('--pipeline', required=True, help="Pipeline YAML")
    opt.add_argument('--models', default=str(DEFAULT_MODELS_FILE), help="Model catalog YAML")
    opt.add_argument('--budget', type=int, default=DEFAULT_BUDGET, help=f"Evaluations (default: {DEFAULT_BUDGET})")
    opt.add_argument('--seed', type=int, default=0)
    opt.add_argument('--workers', type=int, default=DEFAULT_WORKERS)
    opt.add_argument('--strategy', choices=sorted(STRATEGIES), default='uct')
    opt.add_argument('--landscape', default=str(DEFAULT_LANDSCAPE_FILE), help="Landscape YAML for simulation")
    opt.add_argument('--agent-endpoint', default=None, help="Agent URL (default: AGENT_ENDPOINT or the stub)")
    opt.add_argument('--sample', default=None, help="Sample documents (JSON lines)")
    opt.add_argument('--out', default=None, help="Output directory")
    opt.set_defaults(func=cmd_optimize)

    front = sub.add_parser('frontier', help="Recompute the frontier from a trace")
    front.add_argument('--trace', required=True)
    front.add_argument('--json', action='store_true', help="Also print JSON records")
    front.set_defaults(func=cmd_frontier)

    rep = sub.add_parser('replay', help="Rerun a trace and check it reproduces exactly")
    rep.add_argument('--trace', required=True)
    rep.set_defaults(func=cmd_replay)

    ben = sub.add_parser('bench', help="Compare strategies over seeds")
    ben.add_argument('--strategies', default='uct,greedy,random')
    ben.add_argument('--seeds', type=int, default=20)
    ben.add_argument('--budget', type=int, default=DEFAULT_BUDGET)
    ben.add_argument('--workers', type=int, default=1)
    ben.add_argument('--pipeline', default=str(PIPELINES_DIR / 'symptom_triage.yaml'))
    ben.add_argument('--models', default=str(DEFAULT_MODELS_FILE))
    ben.add_argument('--landscape', default=str(ADVERSARIAL_LANDSCAPE_FILE))
    ben.add_argument('--out', default=None, help="Directory for CSV/JSON tables")
    ben.set_defaults(func=cmd_bench)

    reg = sub.add_parser('registry', help="Directive catalog")
    reg.add_argument('action', choices=['dump', 'check'])
    reg.add_argument('--pipelines', default=str(PIPELINES_DIR), help="Directory of seed pipelines (check)")
    reg.add_argument('--models', default=str(DEFAULT_MODELS_FILE))
    reg.add_argument('--sample', default=None)
    reg.set_defaults(func=cmd_registry)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else getattr(logging, LOG_LEVEL.upper(), logging.INFO),
                        format=LOG_FORMAT)
    try:
        return args.func(args)
    except INVALID_ERRORS as e:
        logger.error(f"Invalid input: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except INFRASTRUCTURE_ERRORS as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INFRASTRUCTURE
    except OptimizerError as e:
        logger.error(f"Unexpected {type(e).__name__}: {e}")
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INFRASTRUCTURE


if __name__ == "__main__":
    sys.exit(main())
