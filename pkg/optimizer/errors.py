#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Exception hierarchy shared by the optimizer modules.
"""


class OptimizerError(Exception):
    """Base class for every error raised by the optimizer."""


class PipelineConfigError(OptimizerError):
    """Raised when a pipeline, catalog or landscape file is malformed."""


class UnknownModel(OptimizerError):
    """Raised when an operator references a model absent from the catalog."""

    def __init__(self, model_id: str):
        super().__init__(f"Unknown model: {model_id}")
        self.model_id = model_id


class IndexOutOfRange(OptimizerError):
    """Raised when an operator index falls outside the pipeline."""


class InvalidParams(OptimizerError):
    """Raised when directive parameters violate the directive's schema."""


class RewriteProducesInvalidPipeline(OptimizerError):
    """Raised when a rewrite yields a pipeline that fails validation."""

    def __init__(self, message: str, violations=None):
        super().__init__(message)
        self.violations = list(violations or [])


class NoApplicableDirective(OptimizerError):
    """Raised when no pruned directive matches the pipeline anywhere."""


class EndpointError(OptimizerError):
    """Transport failure talking to the external agent endpoint."""


class InstantiationFailed(OptimizerError):
    """Raised when the agent exhausts its retries without valid parameters."""


class EvaluationError(OptimizerError):
    """Raised when a pipeline cannot be evaluated."""


class TransientEvaluationError(EvaluationError):
    """Evaluator transport/API failure; the pipeline is discarded, never retried."""


class BudgetExhausted(OptimizerError):
    """Raised when the evaluation budget cannot cover initialization."""


class SearchSpaceExhausted(OptimizerError):
    """Raised when selection finds no expandable node."""


class PointNotFound(OptimizerError):
    """Raised when a Pareto query names a point outside the set."""


class ReplayMismatch(OptimizerError):
    """Raised when a replayed run diverges from its recorded trace."""
