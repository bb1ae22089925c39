# -*- coding: utf-8 -*-
"""Shared fixtures: catalogs, seed pipelines, landscapes and evaluators."""

import sys
from pathlib import Path

import pytest

# Add project root to path
ROOT_DIR = Path(__file__).parent.parent
sys.path.insert(0, str(ROOT_DIR))

from optimizer.config import (  # noqa: E402
    ADVERSARIAL_LANDSCAPE_FILE,
    DATA_DIR,
    DEFAULT_LANDSCAPE_FILE,
    DEFAULT_MODELS_FILE,
    PIPELINES_DIR,
    SAMPLES_DIR,
)
from optimizer.evaluator import SimulatedEvaluator, load_landscape  # noqa: E402
from optimizer.instantiation import load_sample  # noqa: E402
from optimizer.pipeline_ir import load_catalog, load_pipeline, profile_from_dict  # noqa: E402
from optimizer.rewrite_rules import default_registry  # noqa: E402


@pytest.fixture(scope='session')
def catalog():
    return load_catalog(DEFAULT_MODELS_FILE)


@pytest.fixture(scope='session')
def large_catalog():
    return load_catalog(DATA_DIR / 'models_large.yaml')


@pytest.fixture(scope='session')
def seed_pipelines():
    """Every shipped seed pipeline, keyed by name."""
    pipelines = [load_pipeline(path) for path in sorted(PIPELINES_DIR.glob('*.yaml'))]
    return {p.name: p for p in pipelines}


@pytest.fixture(scope='session')
def triage(seed_pipelines):
    """map -> filter over clinical notes."""
    return seed_pipelines['symptom_triage']


@pytest.fixture(scope='session')
def registry():
    return default_registry()


@pytest.fixture(scope='session')
def default_landscape():
    return load_landscape(DEFAULT_LANDSCAPE_FILE)


@pytest.fixture(scope='session')
def adversarial_landscape():
    return load_landscape(ADVERSARIAL_LANDSCAPE_FILE)


@pytest.fixture(scope='session')
def profile(catalog, default_landscape):
    return profile_from_dict(default_landscape.workload, catalog)


@pytest.fixture(scope='session')
def sample_docs():
    return load_sample(SAMPLES_DIR / 'clinical_notes.jsonl')


@pytest.fixture
def evaluator(catalog, default_landscape):
    return SimulatedEvaluator(catalog, default_landscape)
