"""
Pipeline Optimizer
Multi-objective search over rewrites of semantic-operator pipelines.
"""

__version__ = "0.1.0"
