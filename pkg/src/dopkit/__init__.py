"""Agentic extraction and question answering over Declarations of
Performance, with the evaluation harness used to score it."""

from .agent import AgentOptions, AgentOutcome, run_agent
from .config import RunConfig
from .state import AgentState, AgentStatus, ToolInvocationRecord
from .tools import ToolDescriptor, ToolError, ToolRegistry, register_default_tools

__version__ = "0.1.0"

__all__ = [
    "AgentOptions",
    "AgentOutcome",
    "AgentState",
    "AgentStatus",
    "RunConfig",
    "ToolDescriptor",
    "ToolError",
    "ToolInvocationRecord",
    "ToolRegistry",
    "register_default_tools",
    "run_agent",
]
