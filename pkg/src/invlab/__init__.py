"""Stochastic invariance laboratory: controlled SDEs, boundary conditions for
invariance of closed sets, and Monte-Carlo and smooth-noise cross-checks."""

from .catalog import get_set, get_system
from .invariance import AuditBudget, Tolerances, equivalence_audit
from .sde_core import ClosedSet, ControlSystem, TestFunction

__version__ = "0.1.0"

__all__ = ["AuditBudget", "ClosedSet", "ControlSystem", "TestFunction", "Tolerances",
           "equivalence_audit", "get_set", "get_system", "__version__"]
