#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Run traces and frontier export.

A trace is JSON Lines: one header record with everything needed to rebuild
the run (pipeline, catalog, landscape, search config, strategy, sample docs),
then one record per search event.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from optimizer.errors import PipelineConfigError, ReplayMismatch
from optimizer.evaluator import LandscapeModel, SimulatedEvaluator, landscape_from_dict
from optimizer.pareto import EvalPoint, frontier_dataframe, frontier_records, sorted_frontier
from optimizer.pipeline_ir import catalog_from_dict, pipeline_from_dict, pipeline_to_dict
from optimizer.search import SearchConfig, SearchResult, SearchTree
from optimizer.strategies import make_search

logger = logging.getLogger(__name__)

TRACE_VERSION = 1
TRACE_FILE = 'trace.jsonl'
FRONTIER_JSON = 'frontier.json'
FRONTIER_CSV = 'frontier.csv'
STATS_FILE = 'stats.json'


def trace_header(search: SearchTree, landscape: LandscapeModel) -> Dict[str, Any]:
    return {
        'type': 'header',
        'version': TRACE_VERSION,
        'strategy': search.strategy,
        'instantiator': getattr(search.instantiator, 'name', type(search.instantiator).__name__),
        'pipeline': pipeline_to_dict(search.p0),
        'catalog': search.catalog.to_dict(),
        'landscape': landscape.to_dict(),
        'config': search.config.to_dict(),
        'sample_docs': list(search.sample_docs),
    }


def _normalize(record: Dict[str, Any]) -> Dict[str, Any]:
    """JSON round trip so tuples and enums compare the way they were written."""
    return json.loads(json.dumps(record, default=str))


def write_trace(path: Union[str, Path], header: Dict[str, Any], records: Sequence[Dict[str, Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(json.dumps(header, default=str) + '\n')
        for record in records:
            f.write(json.dumps({'type': 'record', **record}, default=str) + '\n')
    logger.info(f"Wrote trace with {len(records)} records to {path}")
    return path


def read_trace(path: Union[str, Path]) -> Tuple[Dict[str, Any], List[Dict[str, Any]]]:
    path = Path(path)
    if not path.exists():
        raise PipelineConfigError(f"Trace file not found: {path}")
    header = None
    records = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_no, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                entry = json.loads(line)
            except json.JSONDecodeError as e:
                raise PipelineConfigError(f"{path}:{line_no}: invalid JSON: {e}")
            kind = entry.pop('type', None)
            if kind == 'header':
                header = entry
            elif kind == 'record':
                records.append(entry)
            else:
                raise PipelineConfigError(f"{path}:{line_no}: unknown trace entry type {kind!r}")
    if header is None:
        raise PipelineConfigError(f"{path}: trace has no header")
    if header.get('version') != TRACE_VERSION:
        raise PipelineConfigError(f"{path}: unsupported trace version {header.get('version')}")
    return header, records


def frontier_from_trace(records: Sequence[Dict[str, Any]]) -> List[Dict[str, Any]]:
    """Recompute the frontier from the evaluated nodes recorded in a trace."""
    points = []
    paths = {}
    for record in records:
        if record.get('status') != 'ok' or record.get('phase') == 'root':
            continue
        points.append(EvalPoint(record['pipeline_key'], record['cost'], record['accuracy']))
        paths.setdefault(record['pipeline_key'], record.get('path', ''))
    return frontier_records(sorted_frontier(points), paths)


def write_outputs(out_dir: Union[str, Path], result: SearchResult, header: Dict[str, Any]) -> Dict[str, Path]:
    """frontier.json, frontier.csv, stats.json and trace.jsonl under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        'frontier_json': out_dir / FRONTIER_JSON,
        'frontier_csv': out_dir / FRONTIER_CSV,
        'stats': out_dir / STATS_FILE,
        'trace': out_dir / TRACE_FILE,
    }
    with open(paths['frontier_json'], 'w', encoding='utf-8') as f:
        json.dump(result.records, f, indent=2)
    frontier_dataframe(result.records).to_csv(paths['frontier_csv'], index=False)
    stats = {
        'strategy': header.get('strategy'),
        'budget_used': result.budget_used,
        'budget': header.get('config', {}).get('budget'),
        'frontier_size': len(result.frontier),
        'best_accuracy': result.best_accuracy,
        'evaluated_pipelines': len(result.tree.evaluated_nodes()),
        'evaluator_calls': result.tree.evaluator.inner_calls,
        **result.stats.to_dict(),
    }
    with open(paths['stats'], 'w', encoding='utf-8') as f:
        json.dump(stats, f, indent=2)
    write_trace(paths['trace'], header, result.trace)
    return paths


def rebuild_search(header: Dict[str, Any]) -> Tuple[SearchTree, LandscapeModel]:
    """Fresh single-worker search configured exactly as the traced run."""
    if header.get('instantiator') == 'agent':
        raise PipelineConfigError("Runs driven by an external agent cannot be replayed offline")
    config = dict(header['config'])
    if config.get('workers', 1) != 1:
        raise PipelineConfigError(f"Only single-worker runs replay deterministically "
                                  f"(trace has workers={config['workers']})")
    p0 = pipeline_from_dict(header['pipeline'])
    catalog = catalog_from_dict(header['catalog'])
    landscape = landscape_from_dict(header['landscape'])
    search = make_search(header['strategy'], p0, catalog, SimulatedEvaluator(catalog, landscape),
                         SearchConfig(**config), sample_docs=header.get('sample_docs') or ())
    return search, landscape


def replay(header: Dict[str, Any], records: Sequence[Dict[str, Any]],
           fields: Optional[Sequence[str]] = None) -> SearchResult:
    """
    Rerun the traced search and compare it record by record.

    Raises:
        ReplayMismatch: the rerun diverges from the recorded trace
    """
    search, _ = rebuild_search(header)
    result = search.run()
    replayed = [_normalize(r) for r in result.trace]
    recorded = [_normalize(r) for r in records]

    def project(record):
        return {k: record.get(k) for k in fields} if fields else record

    if len(replayed) != len(recorded):
        raise ReplayMismatch(f"Replay produced {len(replayed)} records, trace has {len(recorded)}")
    for i, (got, want) in enumerate(zip(replayed, recorded)):
        if project(got) != project(want):
            diff = sorted(k for k in set(got) | set(want) if got.get(k) != want.get(k))
            raise ReplayMismatch(f"Record {i} differs in {diff}: replay {project(got)} vs trace {project(want)}")
    logger.info(f"Replay matched {len(recorded)} records")
    return result


def replay_file(path: Union[str, Path]) -> SearchResult:
    header, records = read_trace(path)
    return replay(header, records)
