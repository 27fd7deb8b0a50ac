"""Prompt templates: planner, recovery, tool tasks and single-pass baselines.

All builders are pure functions of their arguments.
"""

from __future__ import annotations

import json
from typing import TYPE_CHECKING, Any, Mapping, Sequence

from ..annotations import SCHEMA_DE, SCHEMA_EN, target_keys, translate_key

if TYPE_CHECKING:
    from ..state import AgentState

LANGUAGE_NAMES = {"en": "ENGLISH", "de": "DEUTSCH"}
HISTORY_ENTRIES = 5
EXCERPT_CHARS = 4000

DECISION_SCHEMA = """{
  "reasoning": "...",
  "need_tool": true/false,
  "tool": "...",
  "tool_input": ...
}"""


def _check_language(language: str) -> None:
    if language not in LANGUAGE_NAMES:
        raise ValueError(f"no prompt template for language {language!r}; supported: en, de")


def _dump(value: Any) -> str:
    return json.dumps(value, ensure_ascii=False, indent=2)


def schema_for(language: str) -> dict[str, Any]:
    _check_language(language)
    return SCHEMA_EN if language == "en" else SCHEMA_DE


def schema_for_keys(keys: Sequence[str] | None, language: str) -> dict[str, Any]:
    """Template restricted to ``keys``; the full template when ``keys`` is
    empty or covers all twelve keys."""
    full = schema_for(language)
    if not keys or set(keys) >= set(target_keys(language)):
        return full
    out: dict[str, Any] = {}
    for key in keys:
        top = key.split("/", 1)[0]
        local = translate_key(top, language)
        out[key if "/" in key else local] = "<string>" if "/" in key else full.get(local, "<string>")
    return out


# -- planner -------------------------------------------------------------------


def _excerpt(text: str | None, limit: int) -> str:
    if not text:
        return "(not extracted yet)"
    if len(text) <= limit:
        return text
    return text[:limit] + f"\n[... truncated: showing {limit} of {len(text)} characters]"


def _short(value: Any, limit: int = 800) -> str:
    text = value if isinstance(value, str) else json.dumps(value, ensure_ascii=False, default=str)
    return text if len(text) <= limit else text[:limit] + " [...]"


def extracted_facts(state: AgentState) -> list[str]:
    facts: list[str] = []
    if not state.has("user_intent"):
        facts.append("User intent is unknown. Call classify_intent first.")
    else:
        facts.append(f"User intent: {state.user_intent}")
    if not state.has("pdf_type"):
        facts.append("PDF type is unknown. Call check_if_scanned.")
    else:
        facts.append(f"PDF type: {state.pdf_type}")
    if not state.has("document_text"):
        tool = "extract_text_ocr" if state.pdf_type == "scanned" else "extract_text_direct"
        facts.append(f"Document text is missing. Call {tool}.")
    if not state.has("document_language"):
        facts.append("Document language is still unknown. Call detect_language before extracting content.")
    else:
        facts.append(f"Document language: {state.document_language}")
    if state.has("user_language"):
        facts.append(f"User language: {state.user_language}")
    else:
        facts.append('User language is unknown. Call detect_language with target "user".')
    if state.has("target_keys"):
        facts.append("Target keys: " + ", ".join(state.target_keys or []))
    elif state.user_intent == "kvp_extraction":
        facts.append("Target keys are missing. Call get_user_target_keys.")
    if state.user_intent == "kvp_extraction":
        if not state.has("extracted_kvps"):
            facts.append("Extracted key-value pairs: missing (call extract_key_values).")
        elif not state.has("verification_result"):
            facts.append("Verification: missing (call verify_extraction).")
    if state.user_intent == "question_answering":
        if not state.has("qa_answer"):
            facts.append("Answer: missing (call answer_question).")
        elif not state.has("verification_result"):
            facts.append("Verification: missing (call verify_extraction).")
    if state.has("verification_result"):
        verdict = state.verification_result or {}
        facts.append(f"Verification result: verified={bool(verdict.get('verified'))}; notes: {verdict.get('notes', '')}")
    if _languages_differ(state):
        for name, label in (("extracted_kvps", "translated_kvps"), ("qa_answer", "translated_answer")):
            if state.has(name) and not state.has(label):
                facts.append(f"{label} missing: translate {name} into {state.user_language} with translate_text.")
    return facts


def _languages_differ(state: AgentState) -> bool:
    return bool(state.document_language and state.user_language and state.document_language != state.user_language)


def decision_rules(state: AgentState) -> list[str]:
    rules = [
        "General steps:",
        "- Identify user_intent if it is missing.",
        "- Check the PDF type, then extract the document text with the matching extractor.",
        "- Determine the document language and the user language.",
    ]
    differ = _languages_differ(state)
    doc, user = state.document_language or "?", state.user_language or "?"
    if state.user_intent == "kvp_extraction":
        rules.append("If user_intent is kvp_extraction:")
        rules.append("- Call get_user_target_keys if target_keys are not available yet.")
        if differ:
            rules += [
                f"- document_language ({doc}) differs from user_language ({user}):",
                "  * Translate target_keys into the document language.",
                "  * Extract the key-value pairs.",
                "  * Verify the extracted output.",
                "  * Translate the extracted_kvps into the user language.",
            ]
        else:
            rules += ["- Extract the key-value pairs.", "- Verify the extracted output."]
    elif state.user_intent == "question_answering":
        rules.append("If user_intent is question_answering:")
        if differ:
            rules += [
                f"- document_language ({doc}) differs from user_language ({user}):",
                "  * Translate the user question into the document language.",
                "  * Answer the question from the document.",
                "  * Verify the answer.",
                "  * Translate the answer into the user language.",
            ]
        else:
            rules += ["- Answer the question from the document.", "- Verify the answer."]
    rules.append("- Once the result is verified (and translated when required), set need_tool to false.")
    rules.append("- Do not call a tool again with the same input unless the state has changed.")
    return rules


def _tool_block(tool: Any) -> str:
    fields = ", ".join(f"{name} ({'required' if req else 'optional'})" for name, req in tool.input_fields())
    return f"- {tool.name} [{tool.intent}]: {tool.description} Input: {{{fields}}}"


def build_planner_prompt(
    state: AgentState,
    offered_tools: Sequence[Any],
    notices: Sequence[str] = (),
    *,
    excerpt_chars: int = EXCERPT_CHARS,
    history_entries: int = HISTORY_ENTRIES,
) -> str:
    """The planner prompt: context, facts, adjustments, rules, tools and
    the output contract, in that order."""
    history = [
        f"- {r.tool_name} input={_short(r.input, 200)} success={r.success}"
        + (f" changed={','.join(r.changed_fields)}" if r.changed_fields else " changed=none")
        for r in state.tool_history
    ]
    context = [
        "## Context",
        f"User request: {state.user_input}",
        f"User intent: {state.user_intent or 'unknown'}",
        f"PDF path: {state.pdf_path}",
        f"PDF type: {state.pdf_type or 'unknown'}",
        f"Document language: {state.document_language or 'unknown'}",
        f"User language: {state.user_language or 'unknown'}",
        "Target keys: " + (", ".join(state.target_keys) if state.target_keys else "none"),
    ]
    if state.qa_question:
        context.append(f"Question: {state.qa_question}")
    context += [
        "Document text excerpt:",
        _excerpt(state.document_text, excerpt_chars),
        "Tool history:",
        *(history or ["(none)"]),
        f"Last tool: {state.last_tool or 'none'}",
        "Last tool output: " + (_short(state.last_tool_output) if state.last_tool_output is not None else "none"),
    ]
    if state.last_error:
        context.append("Last error: " + _short(state.last_error))
    recent = state.reasoning_history[-history_entries:] if history_entries > 0 else []
    if recent:
        context.append("Previous reasoning:")
        context += [f"- {r}" for r in recent]

    adjustments = ["## Dynamic adjustments"]
    adjustments += [f"- {n}" for n in notices]
    if state.has("pdf_type"):
        adjustments.append(f"- PDF type is already confirmed as {state.pdf_type}; do not check it again.")
    if state.has("document_text"):
        adjustments.append("- Document text is already extracted; do not extract it again unless it failed.")
    if len(adjustments) == 1:
        adjustments.append("- none")

    if offered_tools:
        tools = ["## Available tools"] + [_tool_block(t) for t in offered_tools]
        output = [
            "## Output format",
            "Respond with one strict JSON object and nothing else:",
            DECISION_SCHEMA,
            "Set need_tool to true and name one of the available tools, or set need_tool to false to finish.",
        ]
    else:
        tools = ["## Available tools", "(none available in the current state)"]
        output = [
            "## Output format",
            "No tool can be called now. Respond with need_tool set to false, as one strict JSON object:",
            '{\n  "reasoning": "...",\n  "need_tool": false\n}',
        ]
    sections = [
        "You are the planner of a document-understanding agent. Decide the single next action.",
        "\n".join(context),
        "## Extracted facts\n" + "\n".join(f"- {f}" for f in extracted_facts(state)),
        "\n".join(adjustments),
        "## Decision rules\n" + "\n".join(decision_rules(state)),
        "\n".join(tools),
        "\n".join(output),
    ]
    return "\n\n".join(sections)


def build_recovery_prompt(planner_prompt: str, raw: str) -> str:
    return "\n\n".join(
        [
            "The previous response from the planner could not be parsed as valid JSON.",
            "Previous response:\n" + _short(raw, 1000),
            "Recover from this failure: re-read the current state below and choose the next best action.",
            planner_prompt,
            "Respond in valid JSON format:\n" + DECISION_SCHEMA,
        ]
    )


def build_intent_prompt(user_input: str) -> str:
    return "\n\n".join(
        [
            "Classify the request of a user working with a Declaration of Performance document.",
            f"Request: {user_input}",
            'Answer with JSON only: {"intent": "kvp_extraction"} for extracting key-value pairs, '
            'or {"intent": "question_answering"} for a question about the document.',
        ]
    )


# -- tool task templates -------------------------------------------------------

EXTRACTION_RULES = {
    "en": [
        "Return exactly one JSON object whose keys are the target keys.",
        "Keep the nested structure for Declared Performance and Signature.",
        'If a value cannot be found, use an empty string "".',
        "Copy identifiers, numbers and units exactly as printed.",
        "Do not add explanations or Markdown.",
    ],
    "de": [
        "Gib genau ein JSON-Objekt zurück, dessen Schlüssel die Zielschlüssel sind.",
        "Behalte die verschachtelte Struktur für Erklärte Leistung und Unterschrift bei.",
        'Wenn ein Wert nicht gefunden wird, verwende eine leere Zeichenfolge "".',
        "Übernimm Kennungen, Zahlen und Einheiten exakt wie gedruckt.",
        "Keine Erklärungen und kein Markdown.",
    ],
}


def _rules(language: str) -> str:
    return "\n".join(f"- {r}" for r in EXTRACTION_RULES[language])


def _kvp_prompt(language: str, payload: Mapping[str, Any]) -> str:
    schema = _dump(schema_for_keys(payload.get("target_keys"), language))
    name = LANGUAGE_NAMES[language]
    if language == "en":
        return (
            "You extract structured information from a Declaration of Performance.\n\n"
            "Read the document below and fill the target schema as a JSON object. Values may be "
            "phrased differently from the key names; use the document structure to locate them.\n\n"
            f"Language constraint: All extracted values must be returned in {name}. Do not translate or paraphrase.\n\n"
            f"Target schema:\n{schema}\n\nExtraction rules:\n{_rules(language)}\n\n"
            f"Document content:\n{payload.get('document_text', '')}"
        )
    return (
        "Du extrahierst strukturierte Informationen aus einer Leistungserklärung.\n\n"
        "Lies das folgende Dokument und fülle das Zielschema als JSON-Objekt aus. Werte können anders "
        "formuliert sein als die Schlüssel; nutze die Struktur des Dokuments.\n\n"
        f"Sprachvorgabe: Alle extrahierten Werte müssen auf {name} zurückgegeben werden.\n\n"
        f"Zielschema:\n{schema}\n\nExtraktionsregeln:\n{_rules(language)}\n\n"
        f"Dokumentinhalt:\n{payload.get('document_text', '')}"
    )


def _qa_prompt(language: str, payload: Mapping[str, Any]) -> str:
    name = LANGUAGE_NAMES[language]
    if language == "en":
        return (
            "You answer technical questions about construction product performance under the "
            "Construction Products Regulation. The questions are technical and not sensitive.\n\n"
            "Analyse the document as needed, but reply with the answer value only.\n\n"
            "Instructions:\n"
            "- Return the answer as a string or a list of strings.\n"
            '- If no answer can be found, return an empty string "".\n'
            "- No introductions, code blocks or extra characters.\n\n"
            f"Extraction rules:\n{_rules(language)}\n\n"
            f"Document content:\n{payload.get('document_text', '')}\n\n"
            f"Question: {payload.get('question', '')}\n\n"
            f"Language constraint: All extracted values must be returned in {name}."
        )
    return (
        "Du beantwortest technische Fragen zu Produktleistungen nach der Bauproduktenverordnung (CPR). "
        "Die Fragen sind technischer und nicht sensibler Natur.\n\n"
        "Analysiere das Dokument nach Bedarf, antworte aber nur mit dem Antwortwert.\n\n"
        "Anweisungen:\n"
        "- Gib die Antwort als String oder Liste von Strings zurück.\n"
        '- Wenn keine Antwort gefunden werden kann, gib "" zurück.\n'
        "- Keine Einleitungen, keine Codeblöcke, keine zusätzlichen Zeichen.\n\n"
        f"Extraktionsregeln:\n{_rules(language)}\n\n"
        f"Dokumentinhalt:\n{payload.get('document_text', '')}\n\n"
        f"Frage: {payload.get('question', '')}\n\n"
        f"Sprachvorgabe: Alle extrahierten Werte müssen auf {name} zurückgegeben werden."
    )


def _verify_prompt(language: str, payload: Mapping[str, Any]) -> str:
    subject = _dump(payload.get("result"))
    question = payload.get("question")
    lines = [
        "Check whether the result below is complete and grounded in the document text.",
        f"Question: {question}" if question else "Task: key-value extraction",
        f"Result:\n{subject}",
        f"Document content:\n{payload.get('document_text', '')}",
        'Reply with JSON only: {"verified": true or false, "notes": "short justification"}.',
        f"Write the notes in {LANGUAGE_NAMES[language]}.",
    ]
    return "\n\n".join(lines)


def _translate_prompt(language: str, payload: Mapping[str, Any]) -> str:
    kind = payload.get("kind", "text")
    source = payload.get("source_language", "auto")
    lines = [
        f"Translate the {kind} below from '{source}' into {LANGUAGE_NAMES[language]}.",
        "Keep the JSON structure, identifiers, numbers and units unchanged; translate keys and text values.",
        f"Content:\n{_dump(payload.get('content'))}",
        'Reply with JSON only: {"translation": <translated content with the same structure>}.',
        f"All values must be returned in {LANGUAGE_NAMES[language]}.",
    ]
    return "\n\n".join(lines)


_TASKS = {"kvp": _kvp_prompt, "qa": _qa_prompt, "verify": _verify_prompt, "translate": _translate_prompt}


def task_prompt(kind: str, language: str, payload: Mapping[str, Any]) -> str:
    _check_language(language)
    if kind not in _TASKS:
        raise ValueError(f"unknown prompt kind {kind!r}")
    return _TASKS[kind](language, payload)


# -- single-pass baselines -----------------------------------------------------


def baseline_kvp_prompt(
    mode: str, language: str, document_text: str, schema: Mapping[str, Any] | None = None
) -> str:
    """``mode`` is ``"T"`` (task only) or ``"T+S"`` (task plus schema);
    ``schema`` replaces the built-in template for T+S."""
    _check_language(language)
    if mode not in ("T", "T+S"):
        raise ValueError(f"unknown baseline mode {mode!r}")
    schema_text = None
    if mode == "T+S":
        schema_text = _dump(dict(schema) if schema is not None else schema_for(language))
    if language == "en":
        parts = [
            "You are a multilingual information extraction assistant. Extract the key-value pairs from "
            "the document text below and return them as one valid JSON object that keeps the structure "
            "of the document.",
        ]
        if schema_text:
            parts.append(f"Target keys (required fields):\n{schema_text}")
        parts += [
            "Language requirement:\n- Key names and values must be in the language of this prompt (English).\n"
            "- Do not translate or localize terms.",
            "Missing values:\n- If a key is relevant but no value can be found, include it with an empty string: \"\"",
            "Output format:\n- Return a single valid JSON object.\n- No explanations, Markdown or extra text.",
            f"Document content:\n{document_text}",
        ]
    else:
        parts = [
            "Sie sind ein Assistent für mehrsprachige Informationsextraktion. Extrahieren Sie die "
            "Schlüssel-Wert-Paare aus dem folgenden Dokumenttext und geben Sie sie als ein gültiges "
            "JSON-Objekt zurück, das die Struktur des Dokuments bewahrt.",
        ]
        if schema_text:
            parts.append(f"Zielschlüssel (Pflichtfelder):\n{schema_text}")
        parts += [
            "Sprachanforderung:\n- Schlüsselnamen und Werte müssen in der Sprache dieser Eingabe (Deutsch) sein.\n"
            "- Begriffe nicht übersetzen oder lokalisieren.",
            "Fehlende Werte:\n- Wenn ein Schlüssel relevant ist, aber kein Wert gefunden wird, fügen Sie ihn mit "
            "einer leeren Zeichenfolge ein: \"\"",
            "Ausgabeformat:\n- Geben Sie ein einzelnes gültiges JSON-Objekt zurück.\n"
            "- Keine Erklärungen, kein Markdown, kein zusätzlicher Text.",
            f"Dokumentinhalt:\n{document_text}",
        ]
    return "\n\n".join(parts)


def baseline_qa_prompt(language: str, question: str, document_text: str | None = None) -> str:
    """Single-pass QA prompt; without ``document_text`` it addresses page
    images attached to the request."""
    _check_language(language)
    if language == "en":
        source = (
            f"Document content:\n{document_text}" if document_text is not None else "The document is provided as page images."
        )
        return "\n\n".join(
            [
                "You are a helpful assistant. Answer the question about the document as accurately as possible.",
                "Rules:\nReturn only the answer, without explanations.\n"
                "- A single value is returned as a plain string.\n"
                "- Several values are returned as a list of strings.\n"
                '- If no answer can be found, return an empty string: ""',
                source,
                f"Question: {question}",
                "Answer:",
            ]
        )
    source = (
        f"Dokumentinhalt:\n{document_text}" if document_text is not None else "Das Dokument liegt als Seitenbilder vor."
    )
    return "\n\n".join(
        [
            "Du bist ein hilfreicher Assistent. Beantworte die Frage zum Dokument so genau wie möglich.",
            "Regeln:\nGib nur die Antwort zurück, ohne Erklärungen.\n"
            "- Ein einzelner Wert wird als String zurückgegeben.\n"
            "- Mehrere Werte werden als Liste von Strings zurückgegeben.\n"
            '- Wenn keine Antwort gefunden werden kann, gib "" zurück.',
            source,
            f"Frage: {question}",
            "Antwort:",
        ]
    )
