"""Exception hierarchy shared across the toolkit."""

from __future__ import annotations


class CpdError(Exception):
    """Base class for all toolkit errors."""


class ScenarioError(CpdError):
    """Invalid scenario construction input (bad orbit spec, bad policy, ...)."""


class FileFormatError(CpdError):
    """A persisted artifact (scenario, plan, corpus) failed validation on load."""


class PlanError(CpdError):
    """Plan structurally incompatible with the scenario (dimension mismatch)."""


class InfeasiblePlanError(CpdError):
    """A plan violating the feasibility constraints where a feasible one is required."""

    def __init__(self, message: str, violations=None):
        super().__init__(message)
        self.violations = list(violations) if violations is not None else []


class EvaluatorError(CpdError):
    """Base class for objective-evaluator failures."""


class EvaluationError(EvaluatorError):
    """The evaluator died, timed out, or could not produce a value."""


class ProtocolError(EvaluatorError):
    """The remote evaluator sent something that is not valid protocol traffic."""


class HandshakeError(EvaluatorError):
    """The remote evaluator is protocol- or shape-incompatible."""


class NoMoveError(CpdError):
    """No legal neighbor move exists for the given scenario (nothing is ever visible)."""


class AnnealingAborted(CpdError):
    """An optimization run died mid-flight; carries the partial history."""

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = history
