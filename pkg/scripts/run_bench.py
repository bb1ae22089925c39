#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Run the complete benchmark locally: directive closure, one demo optimization
and the strategy comparison on the adversarial landscape.
"""

import sys
import os
import logging
from pathlib import Path

# Add project root to path
ROOT_DIR = Path(__file__).parent.parent
sys.path.insert(0, str(ROOT_DIR))
os.chdir(ROOT_DIR)

SEEDS = int(os.environ.get('BENCH_SEEDS', 20))
BUDGET = int(os.environ.get('BENCH_BUDGET', 40))


def main():
    from optimizer.config import (
        ADVERSARIAL_LANDSCAPE_FILE,
        DEFAULT_LANDSCAPE_FILE,
        DEFAULT_MODELS_FILE,
        LOG_FORMAT,
        PIPELINES_DIR,
        RUNS_DIR,
    )
    from optimizer.directives import check_closure
    from optimizer.errors import OptimizerError
    from optimizer.evaluator import SimulatedEvaluator, load_landscape
    from optimizer.pipeline_ir import load_catalog, load_pipeline
    from optimizer.rewrite_rules import default_registry
    from optimizer.search import SearchConfig
    from optimizer.strategies import bench, compare, make_search, summarize
    from optimizer.trace import trace_header, write_outputs

    logging.basicConfig(level=logging.WARNING, format=LOG_FORMAT)

    print("=" * 60)
    print("Semantic Pipeline Optimizer - Benchmark")
    print("=" * 60)

    catalog = load_catalog(DEFAULT_MODELS_FILE)
    pipelines = [load_pipeline(f) for f in sorted(PIPELINES_DIR.glob('*.yaml'))]
    out_dir = RUNS_DIR / "bench"
    out_dir.mkdir(parents=True, exist_ok=True)

    # Step 1: Closure of the directive registry over the seed pipelines
    print("\n[1/3] Checking directive closure...")
    rows = check_closure(pipelines, default_registry(), catalog)
    failures = [r for r in rows if not r['ok']]
    print(f"  {len(rows)} rewrites over {len(pipelines)} pipelines, {len(failures)} invalid")
    if failures:
        for row in failures:
            print(f"  {row['pipeline']}: {row['directive']} -> {row['error']}")
        return 1

    # Step 2: Demo optimization
    print("\n[2/3] Optimizing symptom_triage on the default landscape...")
    p0 = load_pipeline(PIPELINES_DIR / 'symptom_triage.yaml')
    landscape = load_landscape(DEFAULT_LANDSCAPE_FILE)
    try:
        search = make_search('uct', p0, catalog, SimulatedEvaluator(catalog, landscape),
                             SearchConfig(budget=BUDGET, workers=1))
        result = search.run()
    except OptimizerError as e:
        print(f"Optimization error: {e}")
        return 1
    write_outputs(out_dir / "demo", result, trace_header(search, landscape))
    print(f"  Frontier: {len(result.frontier)} pipelines, best accuracy {result.best_accuracy:.3f}, "
          f"{result.budget_used}/{BUDGET} evaluations")

    # Step 3: Strategy comparison
    print(f"\n[3/3] Comparing strategies over {SEEDS} seeds (budget {BUDGET})...")
    adversarial = load_landscape(ADVERSARIAL_LANDSCAPE_FILE)
    runs = bench(p0, catalog, adversarial, seeds=SEEDS, budget=BUDGET)
    runs.to_csv(out_dir / "bench_runs.csv", index=False)
    table = summarize(runs)
    table.to_csv(out_dir / "bench_summary.csv", index=False)
    print(table.to_string(index=False))
    for baseline in ('greedy', 'random'):
        c = compare(runs, 'uct', baseline)
        print(f"  uct vs {baseline}: {c['wins']}/{c['ties']}/{c['losses']} (win/tie/loss), p = {c['p_value']:.4g}")

    print("\n" + "=" * 60)
    print(f"Done. Results in {out_dir}")
    print("=" * 60)
    print("\nTo inspect a run:")
    print(f"  python -m optimizer.cli frontier --trace {out_dir / 'demo' / 'trace.jsonl'}")
    print("\nTo start the API server:")
    print("  python -m optimizer.app")
    return 0


if __name__ == "__main__":
    sys.exit(main())
