"""The planner's JSON decision contract: parsing and one-shot recovery."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any

from ..metrics import strip_code_fences
from .backends import Gateway
from .prompts import build_recovery_prompt


class ParseError(ValueError):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class PlannerDecision:
    reasoning: str
    need_tool: bool
    tool: str | None = None
    tool_input: dict[str, Any] | None = None

    def to_json(self) -> str:
        data: dict[str, Any] = {"reasoning": self.reasoning, "need_tool": self.need_tool}
        if self.tool is not None:
            data["tool"] = self.tool
        if self.tool_input is not None:
            data["tool_input"] = self.tool_input
        return json.dumps(data, ensure_ascii=False)


def parse_planner_decision(raw: str) -> PlannerDecision:
    """Strict parse after fence stripping. Unknown fields are ignored."""
    if not isinstance(raw, str):
        raise ParseError("planner output is not text", repr(raw))
    try:
        data = json.loads(strip_code_fences(raw))
    except ValueError as exc:
        raise ParseError(f"not valid JSON: {exc}", raw) from exc
    if not isinstance(data, dict):
        raise ParseError("planner output must be a JSON object", raw)
    need_tool = data.get("need_tool")
    if not isinstance(need_tool, bool):
        raise ParseError("need_tool must be a boolean", raw)
    reasoning = data.get("reasoning", "")
    if not isinstance(reasoning, str):
        raise ParseError("reasoning must be a string", raw)
    tool = data.get("tool")
    tool_input = data.get("tool_input")
    if need_tool:
        if not isinstance(tool, str) or not tool:
            raise ParseError("need_tool is true but no tool is named", raw)
        if tool_input is not None and not isinstance(tool_input, dict):
            raise ParseError("tool_input must be an object", raw)
    else:
        # tool fields are meaningless when no tool is needed
        tool = tool if isinstance(tool, str) and tool else None
        tool_input = tool_input if isinstance(tool_input, dict) else None
    return PlannerDecision(reasoning, need_tool, tool, tool_input)


def recover_malformed(gateway: Gateway, planner_prompt: str, raw: str) -> PlannerDecision:
    """Exactly one recovery completion; a second failure propagates."""
    completion = gateway.complete(build_recovery_prompt(planner_prompt, raw), call_site="planner:recovery")
    return parse_planner_decision(completion.text)
