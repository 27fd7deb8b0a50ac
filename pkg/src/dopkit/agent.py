"""The planner -> executor -> responder state graph over one AgentState."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

from .llm.backends import Gateway, LlmError
from .llm.decisions import ParseError, parse_planner_decision, recover_malformed
from .llm.prompts import EXCERPT_CHARS, HISTORY_ENTRIES, build_planner_prompt
from .state import ALLOWED_TRANSITIONS, AgentState, AgentStatus, ToolInvocationRecord
from .tools import ToolError, ToolRegistry, invoke

log = logging.getLogger(__name__)

DEFAULT_MAX_STEPS = 25
LOOP_WINDOW = 2

# Tool intents that contradict a user intent.
MISUSE = {
    "kvp_extraction": frozenset({"question_answering"}),
    "question_answering": frozenset({"kvp_extraction", "key_parsing"}),
}

FALLBACK_MESSAGES = {
    "en": "No verified result could be produced for this document.",
    "de": "Für dieses Dokument konnte kein verifiziertes Ergebnis erstellt werden.",
}

END_BUDGET = "step budget exhausted"
END_LOOP = "loop detected"
END_MISUSE = "tool misuse"
END_PARSE = "planner output unparseable"
END_BACKEND = "backend unreachable"


@dataclass
class AgentOptions:
    max_steps: int = DEFAULT_MAX_STEPS
    loop_window: int = LOOP_WINDOW
    misuse_retries: int = 1
    excerpt_chars: int = EXCERPT_CHARS
    history_entries: int = HISTORY_ENTRIES

    def __post_init__(self) -> None:
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.loop_window < 2:
            raise ValueError("loop_window must be at least 2")


@dataclass
class AgentOutcome:
    final_answer: Any
    state: AgentState
    status: AgentStatus
    trace: list[dict[str, Any]] = field(default_factory=list)
    transitions: list[tuple[AgentStatus, AgentStatus]] = field(default_factory=list)

    @property
    def succeeded(self) -> bool:
        return self.status is AgentStatus.SUCCESS


def detect_unproductive_loop(history: list[ToolInvocationRecord], window: int = LOOP_WINDOW) -> bool:
    """True when the last ``window`` invocations repeat one tool with one
    canonical input and none of them changed the state."""
    if window < 2:
        raise ValueError("window must be at least 2")
    if len(history) < window:
        return False
    tail = history[-window:]
    first = tail[0]
    return all(r.tool_name == first.tool_name and r.input == first.input and not r.changed_fields for r in tail)


def _fallback(state: AgentState) -> str:
    return FALLBACK_MESSAGES.get(state.user_language or "en", FALLBACK_MESSAGES["en"])


def _end(state: AgentState, reason: str) -> AgentState:
    state.status = AgentStatus.END
    state.end_reason = reason
    state.fallback_message = _fallback(state)
    return state


def planner_step(
    state: AgentState,
    registry: ToolRegistry,
    gateway: Gateway,
    options: AgentOptions | None = None,
) -> AgentState:
    """One planning cycle. Safeguards, in order: requirement gate (only
    usable tools are offered), repeat suppression, misuse check, and the
    last error carried into the prompt."""
    if state.status is not AgentStatus.PLAN:
        raise ValueError(f"planner_step needs status PLAN, got {state.status.value}")
    options = options or AgentOptions()
    if state.last_error and state.last_error.get("fatal"):
        return _end(state, END_BACKEND)
    if state.step_count >= options.max_steps:
        return _end(state, END_BUDGET)
    state.step_count += 1

    offered = registry.compatible_with(state)
    notices: list[str] = []
    suppressed = None
    if detect_unproductive_loop(state.tool_history, options.loop_window):
        suppressed = state.tool_history[-1].tool_name
        offered = [t for t in offered if t.name != suppressed]
        notices.append(
            f"{suppressed} ran {options.loop_window} times with the same input and changed nothing; "
            "it is no longer available."
        )
    prompt = build_planner_prompt(
        state,
        offered,
        notices,
        excerpt_chars=options.excerpt_chars,
        history_entries=options.history_entries,
    )

    try:
        raw = gateway.complete(prompt, "planner").text
        try:
            decision = parse_planner_decision(raw)
        except ParseError:
            state.reasoning_history.append("Planner output was not valid JSON; asking for a corrected decision.")
            decision = recover_malformed(gateway, prompt, raw)
    except ParseError as exc:
        state.last_error = {"tool": None, "message": f"planner output could not be parsed: {exc}", "raw_output": exc.raw}
        state.reasoning_history.append("Recovery response was not valid JSON either; stopping.")
        return _end(state, END_PARSE)
    except LlmError as exc:
        state.last_error = {"tool": None, "message": f"planner call failed: {exc}", "raw_output": None, "fatal": True}
        return _end(state, END_BACKEND)

    state.reasoning_history.append(decision.reasoning)
    if not decision.need_tool:
        if not any(state.has(f) for f in ("extracted_kvps", "qa_answer", "document_text")):
            state.last_error = {
                "tool": None,
                "message": "planner chose to respond before any text or result was available",
                "raw_output": raw,
            }
        state.status = AgentStatus.RESPOND
        return state

    name = decision.tool
    if suppressed is not None and name == suppressed:
        state.last_error = {"tool": name, "message": f"{name} repeated with identical input", "raw_output": None}
        return _end(state, END_LOOP)
    tool = registry.get(name or "")
    if tool is None:
        state.last_error = {"tool": name, "message": f"unknown tool {name!r}", "raw_output": raw}
        return state
    if state.user_intent and tool.intent in MISUSE.get(state.user_intent, ()):
        state.misuse_count += 1
        state.last_error = {
            "tool": name,
            "message": f"{name} serves {tool.intent}, which does not fit the user intent {state.user_intent}",
            "raw_output": None,
        }
        if state.misuse_count > options.misuse_retries:
            return _end(state, END_MISUSE)
        return state
    if not tool.available(state):
        missing = tool.missing_requirements(state)
        reason = f"requires {', '.join(missing)}" if missing else f"not compatible with a {state.pdf_type} PDF"
        state.last_error = {"tool": name, "message": f"{name} cannot run yet: {reason}", "raw_output": None}
        return state

    state.next_tool = name
    state.next_tool_input = decision.tool_input or {}
    state.status = AgentStatus.NEED_TOOL
    return state


def _record(
    state: AgentState,
    name: str,
    reasoning: str,
    clock: Callable[[], float],
    run: Callable[[], Any],
) -> tuple[bool, ToolError | None]:
    snapshot = state.progress_snapshot()
    try:
        result = run()
    except ToolError as err:
        output: Any = {"error": err.kind, "message": err.message}
        state.tool_history.append(
            ToolInvocationRecord(name, err.input, output, False, reasoning, clock(), [], err.kind)
        )
        state.last_tool, state.last_tool_output = name, output
        return False, err
    state.apply(result.updates)
    changed = state.changed_since(snapshot)
    state.tool_history.append(ToolInvocationRecord(name, result.input, result.output, True, reasoning, clock(), changed))
    state.last_tool, state.last_tool_output = name, result.output
    return True, None


def executor_step(
    state: AgentState,
    registry: ToolRegistry,
    clock: Callable[[], float] = time.monotonic,
) -> AgentState:
    """Run the selected tool and fold its output into the state. Failures
    are recorded, never raised; the status always returns to PLAN."""
    if state.status is not AgentStatus.NEED_TOOL:
        raise ValueError(f"executor_step needs status NEED_TOOL, got {state.status.value}")
    name = state.next_tool or ""
    params = state.next_tool_input or {}
    reasoning = state.reasoning_history[-1] if state.reasoning_history else ""
    state.next_tool, state.next_tool_input = None, None
    state.status = AgentStatus.PLAN

    tool = registry.get(name)
    if tool is None:
        state.last_error = {"tool": name, "message": f"unknown tool {name!r}", "raw_output": None}
        return state

    ok, err = _record(state, name, reasoning, clock, lambda: invoke(tool, state, params))
    sanitizer = registry.get("sanitize_ocr_text")
    if err is not None and err.kind == "content_filter" and sanitizer is not None and state.has("document_text"):
        cleaned, _ = _record(state, sanitizer.name, "content filter triggered; sanitizing OCR text", clock,
                             lambda: invoke(sanitizer, state, {}))
        if cleaned:
            ok, err = _record(state, name, reasoning, clock, lambda: invoke(tool, state, params))

    if err is None:
        state.last_error = None
    else:
        state.last_error = {"tool": name, "message": err.message, "raw_output": err.raw_output}
        if err.kind == "unavailable":
            state.last_error["fatal"] = True
    return state


def responder_step(state: AgentState) -> AgentState:
    """Release verified results, preferring their translated form; hold
    back anything unverified."""
    if state.status is not AgentStatus.RESPOND:
        raise ValueError(f"responder_step needs status RESPOND, got {state.status.value}")
    verified = bool((state.verification_result or {}).get("verified"))
    intent = state.user_intent
    kvp = intent == "kvp_extraction" or (intent is None and state.has("extracted_kvps"))
    qa = intent == "question_answering" or (intent is None and not kvp and state.has("qa_answer"))

    if verified and kvp and state.has("extracted_kvps"):
        state.final_answer = state.translated_kvps if state.has("translated_kvps") else state.extracted_kvps
        state.status = AgentStatus.SUCCESS
        return state
    if verified and qa and state.has("qa_answer"):
        state.final_answer = state.translated_answer if state.has("translated_answer") else state.qa_answer
        state.status = AgentStatus.SUCCESS
        return state
    if not any(state.has(f) for f in ("extracted_kvps", "qa_answer", "document_text")):
        state.fallback_message = _fallback(state)
    state.status = AgentStatus.PLAN
    return state


class TraceWriter:
    """JSON Lines sink for per-node trace records."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh = open(self.path, "w", encoding="utf-8")

    def __call__(self, record: Mapping[str, Any]) -> None:
        self._fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> TraceWriter:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def run_agent(
    user_input: str,
    pdf_path: str | Path,
    config: Any = None,
    *,
    registry: ToolRegistry | None = None,
    gateway: Gateway | None = None,
    initial: Mapping[str, Any] | None = None,
    clock: Callable[[], float] = time.monotonic,
    trace: Callable[[Mapping[str, Any]], None] | None = None,
) -> AgentOutcome:
    """Drive the state graph until SUCCESS or END.

    ``config`` is an :class:`AgentOptions` or a ``RunConfig``; when a
    ``RunConfig`` is given, the gateway and registry it describes are built
    unless passed explicitly. ``initial`` presets state fields, for example a
    known user intent or user language.
    """
    options = config if isinstance(config, AgentOptions) else None
    if options is None and config is not None:
        options = config.agent_options()
        if gateway is None:
            gateway = config.build_gateway()
        if registry is None:
            registry = config.build_registry(gateway)
    options = options or AgentOptions()
    if gateway is None or registry is None:
        raise ValueError("run_agent needs a gateway and a registry (directly or through a RunConfig)")

    state = AgentState(user_input=user_input, pdf_path=str(pdf_path))
    if initial:
        state.apply(dict(initial))
    records: list[dict[str, Any]] = []
    transitions: list[tuple[AgentStatus, AgentStatus]] = []

    while not state.status.terminal:
        before = state.status
        start = clock()
        tool_name = state.next_tool if before is AgentStatus.NEED_TOOL else None
        history_len = len(state.tool_history)
        if before is AgentStatus.PLAN:
            node = "planner"
            planner_step(state, registry, gateway, options)
        elif before is AgentStatus.NEED_TOOL:
            node = "executor"
            executor_step(state, registry, clock)
        else:
            node = "responder"
            responder_step(state)
        after = state.status
        if after is not before:
            if (before, after) not in ALLOWED_TRANSITIONS:
                raise RuntimeError(f"illegal transition {before.value} -> {after.value}")
            transitions.append((before, after))
        record: dict[str, Any] = {
            "node": node,
            "status_before": before.value,
            "status_after": after.value,
            "elapsed_ms": round((clock() - start) * 1000, 3),
        }
        if node == "executor":
            new = state.tool_history[history_len:]
            record["tool"] = tool_name
            record["success"] = bool(new) and new[-1].success
        records.append(record)
        if trace is not None:
            trace(record)

    final = state.final_answer if state.status is AgentStatus.SUCCESS else None
    if state.status is AgentStatus.END:
        log.info("agent ended: %s", state.end_reason)
    return AgentOutcome(final, state, state.status, records, transitions)
