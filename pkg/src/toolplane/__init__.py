"""toolplane: a control plane that agents bind to as a single tool.

Agents send an intent; the control plane validates it, picks a registered
tool (plus anything that tool depends on), runs it with retries and
fallbacks, validates the output, logs the interaction and learns from
feedback.
"""

from toolplane.config import Config
from toolplane.registry import AgentDescriptor, MetricDefinition, Registry, ToolDescriptor
from toolplane.service import ControlPlane
from toolplane.validation import SchemaNode, ValidationRule

__version__ = "0.1.0"

__all__ = [
    "AgentDescriptor",
    "Config",
    "ControlPlane",
    "MetricDefinition",
    "Registry",
    "SchemaNode",
    "ToolDescriptor",
    "ValidationRule",
]
