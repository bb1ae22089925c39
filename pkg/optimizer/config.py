#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Configuration for the pipeline optimizer.
Paths, search defaults and environment overrides.
"""

import os
from pathlib import Path

# Configuration
BASE_DIR = Path(__file__).parent.parent
DATA_DIR = BASE_DIR / "data"
PIPELINES_DIR = DATA_DIR / "pipelines"
LANDSCAPES_DIR = DATA_DIR / "landscapes"
SAMPLES_DIR = DATA_DIR / "samples"
RUNS_DIR = Path(os.environ.get('OPTIMIZER_RUNS_DIR', str(DATA_DIR / "runs")))

DEFAULT_MODELS_FILE = DATA_DIR / "models.yaml"
DEFAULT_LANDSCAPE_FILE = LANDSCAPES_DIR / "default.yaml"
ADVERSARIAL_LANDSCAPE_FILE = LANDSCAPES_DIR / "adversarial.yaml"

# Search defaults
DEFAULT_BUDGET = 40
DEFAULT_WORKERS = int(os.environ.get('OPTIMIZER_WORKERS', 3))
MODEL_CAP = 12
MODELS_PER_FAMILY = 3
RETRY_LIMIT = 3
MAX_CONSECUTIVE_FAILURES = 15
DEFAULT_CANDIDATES = 2

# Agent adapter (AGENT_ENDPOINT is read at call time, see instantiation.make_instantiator)
AGENT_TIMEOUT = float(os.environ.get('AGENT_TIMEOUT', 60))
MAX_DOC_READS = 5

# Logging
LOG_LEVEL = os.environ.get('OPTIMIZER_LOG_LEVEL', 'INFO')
LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'
