from __future__ import annotations

import json
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dopkit.agent import (
    END_BACKEND,
    END_BUDGET,
    END_LOOP,
    END_MISUSE,
    END_PARSE,
    AgentOptions,
    TraceWriter,
    detect_unproductive_loop,
    executor_step,
    planner_step,
    responder_step,
    run_agent,
)
from dopkit.state import ALLOWED_TRANSITIONS, AgentState, AgentStatus, ToolInvocationRecord
from conftest import DOP_DE, KVPS_EN, decision, happy_kvp_script, make_runtime, respond

KVP = {"user_intent": "kvp_extraction", "user_language": "en"}


def run(script, doc, initial=KVP, **options):
    backend, gateway, registry = make_runtime(script)
    outcome = run_agent("Extract all keys", doc, AgentOptions(**options), registry=registry, gateway=gateway, initial=initial)
    return outcome, backend


def tools_run(outcome):
    return [r.tool_name for r in outcome.state.tool_history]


def assert_legal(outcome):
    assert all(edge in ALLOWED_TRANSITIONS for edge in outcome.transitions)


def record(name, inp="{}", changed=()):
    return ToolInvocationRecord(name, inp, None, True, "", 0.0, list(changed))


class TestRuns:
    def test_kvp_happy_path_order(self, doc_en):
        outcome, _ = run(happy_kvp_script(), doc_en)
        assert outcome.status is AgentStatus.SUCCESS
        assert outcome.final_answer == KVPS_EN
        assert tools_run(outcome) == [
            "check_if_scanned", "extract_text_direct", "detect_language",
            "get_user_target_keys", "extract_key_values", "verify_extraction",
        ]
        assert_legal(outcome)

    def test_kvp_with_translation_returns_user_language(self, doc_de):
        outcome, _ = run(happy_kvp_script(translate=True), doc_de)
        assert outcome.status is AgentStatus.SUCCESS
        assert outcome.state.document_language == "de"
        assert outcome.final_answer == KVPS_EN
        assert tools_run(outcome)[4:] == ["translate_text", "extract_key_values", "verify_extraction", "translate_text"]

    def test_qa_trace_answer_in_user_language(self, doc_de):
        script = {
            "planner": [
                decision("check_if_scanned"), decision("extract_text_direct"), decision("detect_language"),
                decision("translate_text", kind="question"), decision("answer_question"),
                decision("verify_extraction"), decision("translate_text", kind="answer"), respond(),
            ],
            "tool:translate_text": ['{"translation": "Wer ist der Hersteller?"}', '{"translation": "Example Bricks GmbH"}'],
            "tool:answer_question": ['"Beispiel Ziegel GmbH"'],
            "tool:verify_extraction": ['{"verified": true}'],
        }
        initial = {"user_intent": "question_answering", "user_language": "en", "qa_question": "Who is the Manufacturer?"}
        outcome, backend = run(script, doc_de, initial)
        assert outcome.status is AgentStatus.SUCCESS
        assert outcome.state.qa_answer == "Beispiel Ziegel GmbH"
        assert outcome.final_answer == "Example Bricks GmbH"
        answer_prompt = [p for site, p in backend.calls if site == "tool:answer_question"][0]
        assert "Wer ist der Hersteller?" in answer_prompt

    def test_immediate_respond_with_verified_answer(self, doc_en):
        initial = {"user_intent": "question_answering", "qa_answer": "X", "verification_result": {"verified": True}}
        outcome, _ = run({"planner": [respond()]}, doc_en, initial)
        assert outcome.status is AgentStatus.SUCCESS and outcome.final_answer == "X"
        assert outcome.state.step_count == 1

    def test_repeat_ends_with_loop(self, doc_en):
        outcome, _ = run({"planner": [decision("check_if_scanned")] * 4}, doc_en)
        assert outcome.status is AgentStatus.END
        assert outcome.state.end_reason == END_LOOP
        assert outcome.state.step_count <= 4
        assert len(outcome.state.tool_history) == 3
        assert_legal(outcome)

    def test_one_malformed_reply_recovers(self, doc_en):
        script = happy_kvp_script()
        script["planner"].insert(0, "I think we should check the PDF type first.")
        outcome, backend = run(script, doc_en)
        assert outcome.status is AgentStatus.SUCCESS
        assert sum(1 for site, _ in backend.calls if site == "planner:recovery") == 1

    def test_two_malformed_replies_end(self, doc_en):
        outcome, _ = run({"planner": ["not json", "still not json"]}, doc_en)
        assert outcome.status is AgentStatus.END
        assert outcome.state.end_reason == END_PARSE
        assert outcome.final_answer is None
        assert outcome.state.fallback_message

    def test_misuse_retry_then_end(self, doc_en):
        script = {"planner": [decision("answer_question"), decision("answer_question")]}
        outcome, _ = run(script, doc_en)
        assert outcome.state.end_reason == END_MISUSE
        assert outcome.state.misuse_count == 2

    def test_step_budget(self, doc_en):
        outcome, _ = run(happy_kvp_script(), doc_en, max_steps=3)
        assert outcome.state.end_reason == END_BUDGET
        assert outcome.state.step_count == 3

    def test_backend_unreachable_in_tool(self, doc_en):
        script = happy_kvp_script()
        script["tool:extract_key_values"] = [{"error": "unreachable"}]
        outcome, _ = run(script, doc_en)
        assert outcome.state.end_reason == END_BACKEND
        assert outcome.state.last_error["tool"] == "extract_key_values"

    def test_backend_unreachable_in_planner(self, doc_en):
        outcome, _ = run({"planner": [{"error": "unreachable"}]}, doc_en)
        assert outcome.state.end_reason == END_BACKEND

    def test_content_filter_sanitizes_and_retries(self, doc_en):
        script = happy_kvp_script()
        script["tool:extract_key_values"].insert(0, {"error": "content_filter"})
        outcome, _ = run(script, doc_en)
        assert outcome.status is AgentStatus.SUCCESS
        assert tools_run(outcome)[4:7] == ["extract_key_values", "sanitize_ocr_text", "extract_key_values"]

    def test_unverified_result_is_held_back(self, doc_en):
        script = happy_kvp_script()
        script["tool:verify_extraction"] = ['{"verified": false, "notes": "Manufacturer missing"}']
        script["planner"] += [respond()] * 3
        outcome, _ = run(script, doc_en, max_steps=8)
        assert outcome.status is AgentStatus.END
        assert outcome.final_answer is None
        assert (AgentStatus.RESPOND, AgentStatus.PLAN) in outcome.transitions

    def test_trace_file(self, doc_en, tmp_path):
        _, gateway, registry = make_runtime(happy_kvp_script())
        with TraceWriter(tmp_path / "t.jsonl") as trace:
            run_agent("Extract", doc_en, AgentOptions(), registry=registry, gateway=gateway, initial=KVP, trace=trace)
        rows = [json.loads(line) for line in (tmp_path / "t.jsonl").read_text().splitlines()]
        assert rows[0]["node"] == "planner" and rows[-1]["status_after"] == "SUCCESS"
        assert rows[1] == {**rows[1], "node": "executor", "tool": "check_if_scanned", "success": True}

    def test_needs_runtime(self, doc_en):
        with pytest.raises(ValueError):
            run_agent("x", doc_en)


class TestSteps:
    def test_planner_selects_tool(self):
        _, gateway, registry = make_runtime({"planner": [decision("check_if_scanned")]})
        state = planner_step(AgentState("x", "d.pdf"), registry, gateway)
        assert state.status is AgentStatus.NEED_TOOL and state.next_tool == "check_if_scanned"

    def test_planner_responds_when_done(self):
        _, gateway, registry = make_runtime({"planner": [respond()]})
        state = AgentState("x", "d.pdf", extracted_kvps={"a": "b"}, translated_kvps={"a": "b"},
                           verification_result={"verified": True})
        assert planner_step(state, registry, gateway).status is AgentStatus.RESPOND

    def test_planner_unavailable_tool_stays_in_plan(self):
        _, gateway, registry = make_runtime({"planner": [decision("extract_key_values")]})
        state = planner_step(AgentState("x", "d.pdf"), registry, gateway)
        assert state.status is AgentStatus.PLAN
        assert "cannot run yet" in state.last_error["message"]

    def test_executor_detects_german(self):
        _, _, registry = make_runtime({})
        state = AgentState("x", "d.pdf", document_text=DOP_DE, status=AgentStatus.NEED_TOOL, next_tool="detect_language")
        executor_step(state, registry)
        assert state.document_language == "de" and state.status is AgentStatus.PLAN
        assert state.tool_history[-1].changed_fields == ["document_language"]

    def test_executor_failure_recorded(self):
        _, _, registry = make_runtime({})
        state = AgentState("x", "d.pdf", document_text="", document_language="en", target_keys=["a"],
                           status=AgentStatus.NEED_TOOL, next_tool="extract_key_values")
        executor_step(state, registry)
        assert state.last_error["tool"] == "extract_key_values"
        assert state.tool_history[-1].success is False
        assert state.tool_history[-1].error_kind == "validation"

    def test_repeated_direct_extraction_visible(self, doc_en):
        _, _, registry = make_runtime({})
        state = AgentState("x", str(doc_en), pdf_type="text")
        for _ in range(2):
            state.status, state.next_tool = AgentStatus.NEED_TOOL, "extract_text_direct"
            executor_step(state, registry)
        first, second = state.tool_history
        assert first.input == second.input
        assert first.changed_fields == ["document_text"] and second.changed_fields == []

    def test_responder_prefers_translation(self):
        state = AgentState("x", "d.pdf", status=AgentStatus.RESPOND, user_intent="kvp_extraction",
                           extracted_kvps={"Hersteller": "X"}, translated_kvps={"Manufacturer": "X"},
                           verification_result={"verified": True})
        responder_step(state)
        assert state.status is AgentStatus.SUCCESS and state.final_answer == {"Manufacturer": "X"}

    def test_responder_gate_closed(self):
        state = AgentState("x", "d.pdf", status=AgentStatus.RESPOND, extracted_kvps={"a": "b"})
        responder_step(state)
        assert state.status is AgentStatus.PLAN and state.final_answer is None

    def test_responder_fallback_on_empty_state(self):
        state = AgentState("x", "d.pdf", status=AgentStatus.RESPOND, user_language="de")
        responder_step(state)
        assert state.status is AgentStatus.PLAN
        assert state.fallback_message.startswith("Für dieses Dokument")

    def test_step_preconditions(self):
        _, gateway, registry = make_runtime({})
        with pytest.raises(ValueError):
            planner_step(AgentState("x", "d", status=AgentStatus.RESPOND), registry, gateway)
        with pytest.raises(ValueError):
            executor_step(AgentState("x", "d"), registry)
        with pytest.raises(ValueError):
            responder_step(AgentState("x", "d"))


class TestLoopDetection:
    def test_identical_no_effect(self):
        assert detect_unproductive_loop([record("t"), record("t")], 2)

    def test_different_inputs(self):
        assert not detect_unproductive_loop([record("t", "{}"), record("t", '{"a":1}')], 2)

    def test_state_change_breaks_loop(self):
        assert not detect_unproductive_loop([record("t"), record("t", changed=["document_language"])], 2)

    def test_window(self):
        assert not detect_unproductive_loop([record("t")], 2)
        with pytest.raises(ValueError):
            detect_unproductive_loop([], 1)


_TOOLS = ["check_if_scanned", "extract_text_direct", "detect_language", "get_user_target_keys",
          "extract_key_values", "verify_extraction", "translate_text", "answer_question", "bogus"]
_replies = st.one_of(
    st.builds(lambda t: decision(t), st.sampled_from(_TOOLS)),
    st.just(respond()),
    st.just("garbage"),
    st.just({"error": "unreachable"}),
)


@settings(max_examples=40, deadline=None)
@given(st.lists(_replies, min_size=0, max_size=30))
def test_any_planner_behaviour_terminates_legally(tmp_path_factory, replies):
    doc = tmp_path_factory.mktemp("d") / "doc.txt"
    doc.write_text(DOP_DE, encoding="utf-8")
    script = {
        "planner": replies + [respond()] * 30,
        "tool": ['{"verified": true}'] * 40,
    }
    start = time.perf_counter()
    outcome, _ = run(script, doc, max_steps=12)
    assert outcome.status.terminal
    assert outcome.state.step_count <= 12
    assert_legal(outcome)
    assert time.perf_counter() - start < 1.0
