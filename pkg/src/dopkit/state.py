"""Shared agent memory: status flag, run state and tool invocation records."""

from __future__ import annotations

import copy
import enum
import json
import re
from dataclasses import asdict, dataclass, field, fields
from typing import Any

_WS = re.compile(r"\s+")


class AgentStatus(str, enum.Enum):
    PLAN = "PLAN"
    NEED_TOOL = "NEED_TOOL"
    RESPOND = "RESPOND"
    SUCCESS = "SUCCESS"
    END = "END"

    @property
    def terminal(self) -> bool:
        return self in (AgentStatus.SUCCESS, AgentStatus.END)


ALLOWED_TRANSITIONS = frozenset(
    {
        (AgentStatus.PLAN, AgentStatus.NEED_TOOL),
        (AgentStatus.PLAN, AgentStatus.RESPOND),
        (AgentStatus.PLAN, AgentStatus.END),
        (AgentStatus.NEED_TOOL, AgentStatus.PLAN),
        (AgentStatus.RESPOND, AgentStatus.SUCCESS),
        (AgentStatus.RESPOND, AgentStatus.PLAN),
    }
)


def _collapse(value: Any) -> Any:
    if isinstance(value, str):
        return _WS.sub(" ", value).strip()
    if isinstance(value, dict):
        return {str(k): _collapse(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_collapse(v) for v in value]
    return value


def canonical_json(value: Any) -> str:
    """Stable text form of a JSON value: sorted keys, compact separators,
    whitespace runs inside strings collapsed. Equal inputs compare equal."""
    return json.dumps(_collapse(value), sort_keys=True, ensure_ascii=False, separators=(",", ":"))


@dataclass
class ToolInvocationRecord:
    tool_name: str
    input: str  # canonical_json of the normalized input
    output: Any
    success: bool
    planner_reasoning: str
    timestamp: float
    changed_fields: list[str] = field(default_factory=list)
    error_kind: str | None = None


# Fields that describe task progress; bookkeeping fields are excluded from
# the state diff used by loop detection.
PROGRESS_FIELDS = (
    "user_intent",
    "pdf_type",
    "document_text",
    "document_language",
    "user_language",
    "target_keys",
    "translated_target_keys",
    "extracted_kvps",
    "translated_kvps",
    "qa_question",
    "translated_question",
    "qa_answer",
    "translated_answer",
    "verification_result",
)


@dataclass
class AgentState:
    user_input: str
    pdf_path: str
    user_intent: str | None = None
    pdf_type: str | None = None
    document_text: str | None = None
    document_language: str | None = None
    user_language: str | None = None
    target_keys: list[str] | None = None
    translated_target_keys: list[str] | None = None
    extracted_kvps: dict[str, Any] | None = None
    translated_kvps: dict[str, Any] | None = None
    qa_question: str | None = None
    translated_question: str | None = None
    qa_answer: str | list[str] | None = None
    translated_answer: str | list[str] | None = None
    verification_result: dict[str, Any] | None = None
    tool_history: list[ToolInvocationRecord] = field(default_factory=list)
    reasoning_history: list[str] = field(default_factory=list)
    last_tool: str | None = None
    last_tool_output: Any = None
    last_error: dict[str, Any] | None = None
    status: AgentStatus = AgentStatus.PLAN
    step_count: int = 0
    # planner -> executor hand-off
    next_tool: str | None = None
    next_tool_input: dict[str, Any] | None = None
    misuse_count: int = 0
    final_answer: Any = None
    fallback_message: str | None = None
    end_reason: str | None = None

    def has(self, name: str) -> bool:
        """True when a progress field carries a usable value.

        Empty strings and containers count as absent, except for answers:
        an empty answer is the legitimate reply to an unanswerable question.
        """
        value = getattr(self, name)
        if value is None:
            return False
        if name in ("qa_answer", "translated_answer"):
            return True
        return value not in ("", [], {})

    def progress_snapshot(self) -> dict[str, str]:
        return {name: canonical_json(getattr(self, name)) for name in PROGRESS_FIELDS}

    def changed_since(self, snapshot: dict[str, str]) -> list[str]:
        now = self.progress_snapshot()
        return [name for name in PROGRESS_FIELDS if now[name] != snapshot[name]]

    def apply(self, updates: dict[str, Any]) -> None:
        names = {f.name for f in fields(self)}
        for key, value in updates.items():
            if key not in names:
                raise KeyError(f"unknown AgentState field {key!r}")
            setattr(self, key, value)

    def copy(self) -> AgentState:
        return copy.deepcopy(self)

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["status"] = self.status.value
        return data
