"""Model boundary: backends, usage accounting, prompts and planner decisions."""

from .backends import (
    BackendUnavailable,
    Completion,
    ContentFilterError,
    Gateway,
    HttpBackend,
    LlmBackend,
    LlmError,
    ScriptedBackend,
    ScriptExhausted,
)
from .decisions import ParseError, PlannerDecision, parse_planner_decision, recover_malformed
from .ledger import Pricing, UsageEntry, UsageLedger, estimate_tokens, ledger_report, merge_ledgers
from .prompts import build_planner_prompt, build_recovery_prompt, task_prompt

__all__ = [
    "BackendUnavailable",
    "Completion",
    "ContentFilterError",
    "Gateway",
    "HttpBackend",
    "LlmBackend",
    "LlmError",
    "ParseError",
    "PlannerDecision",
    "Pricing",
    "ScriptExhausted",
    "ScriptedBackend",
    "UsageEntry",
    "UsageLedger",
    "build_planner_prompt",
    "build_recovery_prompt",
    "estimate_tokens",
    "ledger_report",
    "merge_ledgers",
    "parse_planner_decision",
    "recover_malformed",
    "task_prompt",
]
