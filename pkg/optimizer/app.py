#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Flask API for the pipeline optimizer.
Validates pipelines, serves the directive catalog and runs simulated optimizations.
"""

import logging
import os
import re
from dataclasses import replace
from datetime import datetime

from flask import Flask, jsonify, request, send_from_directory
from flask_cors import CORS

from optimizer.config import (
    ADVERSARIAL_LANDSCAPE_FILE,
    DEFAULT_BUDGET,
    DEFAULT_LANDSCAPE_FILE,
    DEFAULT_MODELS_FILE,
    LOG_FORMAT,
    LOG_LEVEL,
    RUNS_DIR,
)
from optimizer.errors import OptimizerError, PipelineConfigError, UnknownModel
from optimizer.evaluator import SimulatedEvaluator, load_landscape
from optimizer.pipeline_ir import load_catalog, pipeline_from_dict, pipeline_from_yaml, pipeline_key, validate_pipeline
from optimizer.rewrite_rules import default_registry
from optimizer.search import SearchConfig
from optimizer.strategies import STRATEGIES, make_search
from optimizer.trace import FRONTIER_JSON, trace_header, write_outputs

# Configure logging
logging.basicConfig(
    level=getattr(logging, LOG_LEVEL.upper(), logging.INFO),
    format=LOG_FORMAT
)
logger = logging.getLogger(__name__)

LANDSCAPES = {
    'default': DEFAULT_LANDSCAPE_FILE,
    'adversarial': ADVERSARIAL_LANDSCAPE_FILE,
}
MAX_API_BUDGET = 200
RUN_ID_PATTERN = re.compile(r'^[A-Za-z0-9_.-]+$')

app = Flask(__name__)
CORS(app)


def _pipeline_from_request():
    """Pipeline from a JSON body ({"pipeline": {...}} or the pipeline itself) or YAML text."""
    if request.is_json:
        body = request.get_json(silent=True)
        if body is None:
            raise PipelineConfigError("Request body is not valid JSON")
        data = body.get('pipeline', body) if isinstance(body, dict) else body
        if isinstance(data, str):
            return pipeline_from_yaml(data)
        return pipeline_from_dict(data)
    return pipeline_from_yaml(request.get_data(as_text=True))


@app.route('/')
def index():
    """API health check."""
    return jsonify({
        'status': 'ok',
        'service': 'Semantic Pipeline Optimizer API',
        'timestamp': datetime.now().isoformat(),
        'endpoints': {
            'status': '/api/status',
            'registry': '/api/registry',
            'validate': '/api/validate (POST)',
            'optimize': '/api/optimize (POST)',
            'frontier': '/api/runs/<run_id>/frontier',
        }
    })


@app.route('/api/status')
def status():
    """Stored runs and their output files."""
    runs_info = {}
    if RUNS_DIR.exists():
        for run_dir in sorted(p for p in RUNS_DIR.iterdir() if p.is_dir()):
            frontier = run_dir / FRONTIER_JSON
            if frontier.exists():
                stat = frontier.stat()
                runs_info[run_dir.name] = {
                    'exists': True,
                    'size_kb': round(stat.st_size / 1024, 1),
                    'modified': datetime.fromtimestamp(stat.st_mtime).isoformat()
                }
            else:
                runs_info[run_dir.name] = {'exists': False}

    return jsonify({
        'status': 'ok',
        'runs': runs_info,
        'timestamp': datetime.now().isoformat()
    })


@app.route('/api/registry')
def registry():
    """Directive catalog (brief entries only)."""
    return jsonify({
        'success': True,
        'directives': default_registry().dump(),
    })


@app.route('/api/validate', methods=['POST'])
def validate():
    """Validate a pipeline given as YAML text or JSON."""
    try:
        pipeline = _pipeline_from_request()
    except PipelineConfigError as e:
        return jsonify({'success': False, 'error': str(e)}), 400

    report = validate_pipeline(pipeline)
    return jsonify({
        'success': True,
        'pipeline': pipeline.name,
        'pipeline_key': pipeline_key(pipeline),
        **report.to_dict(),
    })


@app.route('/api/optimize', methods=['POST'])
def optimize():
    """Run a simulated optimization (protected by API key)."""
    api_key = os.environ.get('RUN_API_KEY')
    provided_key = request.headers.get('X-API-Key')
    if not provided_key and request.is_json:
        provided_key = (request.get_json(silent=True) or {}).get('api_key')

    if not api_key or provided_key != api_key:
        return jsonify({'error': 'Unauthorized', 'message': 'Valid API key required'}), 401

    body = request.get_json(silent=True) or {}
    try:
        pipeline = _pipeline_from_request()
        budget = int(body.get('budget', DEFAULT_BUDGET))
        seed = int(body.get('seed', 0))
        strategy = body.get('strategy', 'uct')
        landscape_name = body.get('landscape', 'default')
        if not 1 <= budget <= MAX_API_BUDGET:
            raise PipelineConfigError(f"budget must lie in [1, {MAX_API_BUDGET}]")
        if strategy not in STRATEGIES:
            raise PipelineConfigError(f"Unknown strategy '{strategy}'")
        if landscape_name not in LANDSCAPES:
            raise PipelineConfigError(f"Unknown landscape '{landscape_name}'; expected one of {sorted(LANDSCAPES)}")
    except (PipelineConfigError, TypeError, ValueError) as e:
        return jsonify({'success': False, 'error': str(e)}), 400

    try:
        catalog = load_catalog(DEFAULT_MODELS_FILE)
        landscape = load_landscape(LANDSCAPES[landscape_name])
        landscape = replace(landscape, seed=landscape.seed + seed)
        config = SearchConfig(budget=budget, workers=1, seed=seed)
        search = make_search(strategy, pipeline, catalog, SimulatedEvaluator(catalog, landscape), config)
        result = search.run()

        run_id = f"{datetime.now():%Y%m%d-%H%M%S}-{pipeline_key(pipeline)[:8]}-{strategy}-s{seed}"
        write_outputs(RUNS_DIR / run_id, result, trace_header(search, landscape))
        logger.info(f"API run {run_id} finished: {len(result.frontier)} frontier pipelines")
        return jsonify({
            'success': True,
            'run_id': run_id,
            'budget_used': result.budget_used,
            'frontier': result.records,
        })
    except (PipelineConfigError, UnknownModel) as e:
        return jsonify({'success': False, 'error': str(e)}), 400
    except OptimizerError as e:
        logger.error(f"Optimization error: {e}")
        return jsonify({'success': False, 'error': str(e)}), 500


@app.route('/api/runs/<run_id>/frontier')
def get_frontier(run_id):
    """Serve the frontier of a stored run."""
    if not RUN_ID_PATTERN.match(run_id):
        return jsonify({'error': 'Invalid run id'}), 400

    run_dir = RUNS_DIR / run_id
    if not (run_dir / FRONTIER_JSON).exists():
        return jsonify({'error': 'Run not found'}), 404

    return send_from_directory(run_dir, FRONTIER_JSON, mimetype='application/json')


if __name__ == '__main__':
    port = int(os.environ.get('PORT', 5000))
    app.run(host='0.0.0.0', port=port, debug=False)
