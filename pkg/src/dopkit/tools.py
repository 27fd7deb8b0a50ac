"""Declarative tool descriptors, the immutable registry and the eleven
default tools (deterministic document utilities plus model-backed steps)."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Any, Callable, Iterable, Iterator, Literal, Mapping

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .annotations import TARGET_KEYS, canonical_key, target_keys, translate_key
from .ingest import DocumentAdapters, IngestError, LanguageDetectionError, detect_language, sanitize_ocr_text
from .llm.backends import BackendUnavailable, ContentFilterError, Gateway, LlmBackend, LlmError
from .llm.prompts import build_intent_prompt, task_prompt
from .metrics import clean_json, strip_code_fences
from .state import AgentState, canonical_json

INTENTS = frozenset(
    {
        "text_extraction",
        "language_detection",
        "modality_detection",
        "intent_classification",
        "key_parsing",
        "kvp_extraction",
        "question_answering",
        "verification",
        "translation",
        "sanitization",
    }
)
PDF_TYPES = frozenset({"scanned", "text"})
USER_INTENTS = ("kvp_extraction", "question_answering")


class ToolError(Exception):
    KINDS = ("validation", "runtime", "content_filter", "parse", "unavailable")

    def __init__(self, kind: str, message: str, raw_output: Any = None):
        if kind not in self.KINDS:
            raise ValueError(f"unknown tool error kind {kind!r}")
        super().__init__(message)
        self.kind = kind
        self.message = message
        self.raw_output = raw_output
        self.input = ""  # canonical input, filled in by invoke


class DuplicateToolError(ValueError):
    pass


Normalizer = Callable[[AgentState, Mapping[str, Any]], dict[str, Any]]
Postprocessor = Callable[[Any, AgentState, BaseModel], dict[str, Any]]


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    fn: Callable[[BaseModel], Any]
    intent: str
    input_model: type[BaseModel]
    normalize_input: Normalizer
    postprocess: Postprocessor
    updates: frozenset[str]
    compatible_pdf_types: frozenset[str] = PDF_TYPES
    requires: tuple[str, ...] = ()
    requires_any: tuple[str, ...] = ()
    description: str = ""

    def __post_init__(self) -> None:
        if self.intent not in INTENTS:
            raise ValueError(f"{self.name}: unknown intent {self.intent!r}")
        if not self.compatible_pdf_types <= PDF_TYPES:
            raise ValueError(f"{self.name}: unknown pdf types {set(self.compatible_pdf_types) - PDF_TYPES}")

    @property
    def requires_previous_output(self) -> bool:
        return bool(self.requires or self.requires_any)

    def input_fields(self) -> list[tuple[str, bool]]:
        return [(name, info.is_required()) for name, info in self.input_model.model_fields.items()]

    def input_schema(self) -> dict[str, dict[str, Any]]:
        """Field list for documentation: name -> {type, required}."""
        props = self.input_model.model_json_schema().get("properties", {})
        return {
            name: {"type": props.get(name, {}).get("type", "any"), "required": required}
            for name, required in self.input_fields()
        }

    def missing_requirements(self, state: AgentState) -> list[str]:
        missing = [f for f in self.requires if not state.has(f)]
        if self.requires_any and not any(state.has(f) for f in self.requires_any):
            missing.append(" or ".join(self.requires_any))
        return missing

    def available(self, state: AgentState) -> bool:
        if state.pdf_type is not None and state.pdf_type not in self.compatible_pdf_types:
            return False
        return not self.missing_requirements(state)


class ToolRegistry:
    """Name -> descriptor map fixed at construction."""

    def __init__(self, tools: Iterable[ToolDescriptor] = ()):
        table: dict[str, ToolDescriptor] = {}
        for tool in tools:
            if tool.name in table:
                raise DuplicateToolError(f"tool {tool.name!r} registered twice")
            table[tool.name] = tool
        self._tools = MappingProxyType(table)

    @classmethod
    def merge(cls, *groups: Iterable[ToolDescriptor]) -> ToolRegistry:
        return cls(t for group in groups for t in group)

    @property
    def tools(self) -> Mapping[str, ToolDescriptor]:
        return self._tools

    def get(self, name: str) -> ToolDescriptor | None:
        return self._tools.get(name)

    def __contains__(self, name: object) -> bool:
        return name in self._tools

    def __iter__(self) -> Iterator[ToolDescriptor]:
        return iter(self._tools.values())

    def __len__(self) -> int:
        return len(self._tools)

    @property
    def names(self) -> list[str]:
        return list(self._tools)

    def compatible_with(self, state: AgentState) -> list[ToolDescriptor]:
        """Tools usable in ``state``, in registration order."""
        return [t for t in self._tools.values() if t.available(state)]


def compatible_with(registry: ToolRegistry, state: AgentState) -> list[ToolDescriptor]:
    return registry.compatible_with(state)


@dataclass
class ToolResult:
    updates: dict[str, Any]
    output: Any
    input: str = ""


def invoke(tool: ToolDescriptor, state: AgentState, raw_params: Mapping[str, Any] | None) -> ToolResult:
    """normalize -> validate -> execute -> postprocess. ``state`` is only
    read; the caller applies ``updates``."""
    raw_params = dict(raw_params or {})
    try:
        params = tool.normalize_input(state, raw_params)
        model = tool.input_model.model_validate(params)
    except (ValidationError, ValueError, TypeError, KeyError) as exc:
        err = ToolError("validation", f"{tool.name}: invalid input: {exc}")
        err.input = canonical_json(raw_params)
        raise err from exc
    canonical = canonical_json(model.model_dump(mode="json"))

    try:
        output = tool.fn(model)
        updates = tool.postprocess(output, state, model)
    except ToolError as exc:
        exc.input = canonical
        raise
    except ContentFilterError as exc:
        err, cause = ToolError("content_filter", f"{tool.name}: {exc}"), exc
    except BackendUnavailable as exc:
        err, cause = ToolError("unavailable", f"{tool.name}: backend unreachable: {exc}"), exc
    except (LlmError, IngestError, LanguageDetectionError, OSError, ValueError) as exc:
        err, cause = ToolError("runtime", f"{tool.name}: {exc}"), exc
    else:
        stray = set(updates) - tool.updates
        if stray:
            raise RuntimeError(f"{tool.name} tried to update undeclared fields {sorted(stray)}")
        return ToolResult(updates, output, canonical)
    err.input = canonical
    raise err from cause


# -- input models ---------------------------------------------------------------

Language = Literal["en", "de"]


class _Input(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PdfInput(_Input):
    pdf_path: str = Field(min_length=1)


class DetectLanguageInput(_Input):
    text: str = Field(min_length=1)
    target: Literal["document", "user"] = "document"


class ClassifyIntentInput(_Input):
    user_input: str = Field(min_length=1)


class TargetKeysInput(_Input):
    user_input: str
    language: Language = "en"


class ExtractKvInput(_Input):
    document_text: str = Field(min_length=1)
    language: Language
    target_keys: list[str] = Field(min_length=1)


class AnswerInput(_Input):
    document_text: str = Field(min_length=1)
    language: Language
    question: str = Field(min_length=1)


class VerifyInput(_Input):
    document_text: str = Field(min_length=1)
    language: Language
    subject: Literal["kvps", "answer"]
    result: Any
    question: str | None = None


class TranslateInput(_Input):
    kind: Literal["target_keys", "kvps", "answer", "question"]
    content: Any
    source_language: Language
    target_language: Language


class SanitizeInput(_Input):
    text: str


# -- helpers --------------------------------------------------------------------


def _lang(value: Any) -> str:
    return value if value in ("en", "de") else "en"


def _parse_object(raw: str, tool: str) -> dict[str, Any]:
    parsed = clean_json(raw)
    if parsed is None:
        raise ToolError("parse", f"{tool}: model output is not a JSON object", raw)
    return parsed


def parse_answer(raw: str) -> str | list[str]:
    """Answer text from a QA completion: a JSON string or list is
    unwrapped, anything else is taken verbatim."""
    text = strip_code_fences(raw).strip()
    try:
        value = json.loads(text)
    except ValueError:
        return text
    if isinstance(value, str):
        return value.strip()
    if isinstance(value, list) and all(isinstance(v, (str, int, float)) for v in value):
        return [str(v) for v in value]
    if isinstance(value, dict) and "answer" in value:
        inner = value["answer"]
        return inner if isinstance(inner, (str, list)) else json.dumps(inner, ensure_ascii=False)
    return text


_QUOTED = re.compile(r"\"([^\"]+)\"|'([^']+)'|„([^“”]+)[“”]|«([^»]+)»")
_ALL_KEYS = [k for pair in TARGET_KEYS for k in pair]


def parse_target_keys(user_input: str, language: str) -> list[str]:
    """Key paths named in the request (quoted segments or known key names);
    all twelve keys in ``language`` when none are named."""
    found: list[str] = []
    for match in _QUOTED.finditer(user_input):
        segment = next(g for g in match.groups() if g).strip()
        top = segment.split("/", 1)[0]
        if canonical_key(top) is None:
            continue
        rest = segment[len(top) :]
        found.append(translate_key(top, language) + rest)
    lowered = user_input.lower()
    for key in sorted(_ALL_KEYS, key=len, reverse=True):
        local = translate_key(key, language)
        if key.lower() in lowered and not any(f.split("/", 1)[0] == local for f in found):
            found.append(local)
    if not found:
        return target_keys(language)
    order = {k: i for i, k in enumerate(target_keys(language))}
    return sorted(dict.fromkeys(found), key=lambda k: order.get(k.split("/", 1)[0], len(order)))


def _translation_kind(state: AgentState, requested: str | None) -> str:
    if requested:
        return requested
    pending = [
        ("kvps", "extracted_kvps", "translated_kvps"),
        ("answer", "qa_answer", "translated_answer"),
        ("target_keys", "target_keys", "translated_target_keys"),
        ("question", "qa_question", "translated_question"),
    ]
    for kind, source, target in pending:
        if state.has(source) and not state.has(target):
            return kind
    for kind, source, _ in pending:
        if state.has(source):
            return kind
    raise ValueError("nothing to translate")


_TRANSLATION = {
    "target_keys": ("target_keys", "translated_target_keys"),
    "kvps": ("extracted_kvps", "translated_kvps"),
    "answer": ("qa_answer", "translated_answer"),
    "question": ("qa_question", "translated_question"),
}


# -- default tool set -----------------------------------------------------------


def text_tools(adapters: DocumentAdapters) -> list[ToolDescriptor]:
    def pdf_input(state: AgentState, raw: Mapping[str, Any]) -> dict[str, Any]:
        return {"pdf_path": raw.get("pdf_path") or state.pdf_path}

    def extract(mode: str) -> Callable[[BaseModel], str]:
        def run(params: BaseModel) -> str:
            text = adapters.extract_text(Path(params.pdf_path), mode)
            if not text.replace("\f", "").strip():
                raise ToolError("runtime", f"no text could be extracted from {params.pdf_path}")
            return text

        return run

    def detect_input(state: AgentState, raw: Mapping[str, Any]) -> dict[str, Any]:
        target = raw.get("target", "document")
        text = state.user_input if target == "user" else state.document_text
        return {"text": text or "", "target": target}

    return [
        ToolDescriptor(
            name="check_if_scanned",
            fn=lambda p: adapters.check_if_scanned(Path(p.pdf_path)),
            intent="modality_detection",
            input_model=PdfInput,
            normalize_input=pdf_input,
            postprocess=lambda out, s, p: {"pdf_type": out},
            updates=frozenset({"pdf_type"}),
            description="Decides whether the PDF is text-based or scanned.",
        ),
        ToolDescriptor(
            name="extract_text_direct",
            fn=extract("direct"),
            intent="text_extraction",
            input_model=PdfInput,
            normalize_input=pdf_input,
            postprocess=lambda out, s, p: {"document_text": out},
            updates=frozenset({"document_text"}),
            compatible_pdf_types=frozenset({"text"}),
            requires=("pdf_type",),
            description="Extracts native text from a text-based PDF, with OCR for unreadable pages.",
        ),
        ToolDescriptor(
            name="extract_text_ocr",
            fn=extract("ocr"),
            intent="text_extraction",
            input_model=PdfInput,
            normalize_input=pdf_input,
            postprocess=lambda out, s, p: {"document_text": out},
            updates=frozenset({"document_text"}),
            compatible_pdf_types=frozenset({"scanned"}),
            requires=("pdf_type",),
            description="OCRs text from scanned PDFs.",
        ),
        ToolDescriptor(
            name="detect_language",
            fn=lambda p: detect_language(p.text),
            intent="language_detection",
            input_model=DetectLanguageInput,
            normalize_input=detect_input,
            postprocess=lambda out, s, p: {"user_language" if p.target == "user" else "document_language": out},
            updates=frozenset({"document_language", "user_language"}),
            requires=("document_text",),
            description='Detects the language (en or de) of the document text, or of the user request with target "user".',
        ),
        ToolDescriptor(
            name="get_user_target_keys",
            fn=lambda p: parse_target_keys(p.user_input, p.language),
            intent="key_parsing",
            input_model=TargetKeysInput,
            normalize_input=lambda s, raw: {"user_input": s.user_input, "language": _lang(s.user_language)},
            postprocess=lambda out, s, p: {"target_keys": out},
            updates=frozenset({"target_keys"}),
            description="Parses the requested key paths from the user request; defaults to all twelve keys.",
        ),
        ToolDescriptor(
            name="sanitize_ocr_text",
            fn=lambda p: sanitize_ocr_text(p.text),
            intent="sanitization",
            input_model=SanitizeInput,
            normalize_input=lambda s, raw: {"text": s.document_text or ""},
            postprocess=lambda out, s, p: {"document_text": out},
            updates=frozenset({"document_text"}),
            requires=("document_text",),
            description="Removes control characters, zero-width characters and punctuation runs from OCR text.",
        ),
    ]


def llm_tools(gateway: Gateway) -> list[ToolDescriptor]:
    def classify(p: ClassifyIntentInput) -> str:
        raw = gateway.complete(build_intent_prompt(p.user_input), "tool:classify_intent").text
        intent = _parse_object(raw, "classify_intent").get("intent")
        if intent not in USER_INTENTS:
            raise ToolError("parse", f"classify_intent: unknown intent {intent!r}", raw)
        return intent

    def extract_input(state: AgentState, raw: Mapping[str, Any]) -> dict[str, Any]:
        keys = state.translated_target_keys if state.has("translated_target_keys") else state.target_keys
        return {"document_text": state.document_text, "language": state.document_language, "target_keys": keys}

    def extract_kv(p: ExtractKvInput) -> str:
        payload = {"document_text": p.document_text, "target_keys": p.target_keys}
        return gateway.complete(task_prompt("kvp", p.language, payload), "tool:extract_key_values").text

    def answer_input(state: AgentState, raw: Mapping[str, Any]) -> dict[str, Any]:
        question = state.translated_question or state.qa_question or raw.get("question") or state.user_input
        return {"document_text": state.document_text, "language": state.document_language, "question": question}

    def answer(p: AnswerInput) -> str:
        payload = {"document_text": p.document_text, "question": p.question}
        return gateway.complete(task_prompt("qa", p.language, payload), "tool:answer_question").text

    def verify_input(state: AgentState, raw: Mapping[str, Any]) -> dict[str, Any]:
        qa = state.user_intent == "question_answering" or not state.has("extracted_kvps")
        return {
            "document_text": state.document_text,
            "language": _lang(state.document_language),
            "subject": "answer" if qa else "kvps",
            "result": state.qa_answer if qa else state.extracted_kvps,
            "question": (state.translated_question or state.qa_question) if qa else None,
        }

    def verify(p: VerifyInput) -> str:
        payload = {"document_text": p.document_text, "result": p.result, "question": p.question}
        return gateway.complete(task_prompt("verify", p.language, payload), "tool:verify_extraction").text

    def verify_post(out: str, state: AgentState, p: BaseModel) -> dict[str, Any]:
        data = _parse_object(out, "verify_extraction")
        verified = data.get("verified")
        if not isinstance(verified, bool):
            raise ToolError("parse", "verify_extraction: 'verified' must be a boolean", out)
        return {"verification_result": {"verified": verified, "notes": str(data.get("notes", ""))}}

    def translate_input(state: AgentState, raw: Mapping[str, Any]) -> dict[str, Any]:
        kind = _translation_kind(state, raw.get("kind"))
        source, _ = _TRANSLATION[kind]
        to_document = kind in ("target_keys", "question")
        return {
            "kind": kind,
            "content": getattr(state, source),
            "source_language": state.user_language if to_document else state.document_language,
            "target_language": state.document_language if to_document else state.user_language,
        }

    def translate(p: TranslateInput) -> str:
        payload = {"kind": p.kind, "content": p.content, "source_language": p.source_language}
        return gateway.complete(task_prompt("translate", p.target_language, payload), "tool:translate_text").text

    def translate_post(out: str, state: AgentState, p: TranslateInput) -> dict[str, Any]:
        data = _parse_object(out, "translate_text")
        if "translation" not in data:
            raise ToolError("parse", "translate_text: missing 'translation'", out)
        value = data["translation"]
        expected = {"target_keys": list, "kvps": dict, "answer": (str, list), "question": str}[p.kind]
        if not isinstance(value, expected) or (p.kind == "target_keys" and not all(isinstance(k, str) for k in value)):
            raise ToolError("parse", f"translate_text: translation has the wrong shape for {p.kind}", out)
        return {_TRANSLATION[p.kind][1]: value}

    return [
        ToolDescriptor(
            name="classify_intent",
            fn=classify,
            intent="intent_classification",
            input_model=ClassifyIntentInput,
            normalize_input=lambda s, raw: {"user_input": s.user_input},
            postprocess=lambda out, s, p: {"user_intent": out},
            updates=frozenset({"user_intent"}),
            description="Classifies the request as kvp_extraction or question_answering.",
        ),
        ToolDescriptor(
            name="extract_key_values",
            fn=extract_kv,
            intent="kvp_extraction",
            input_model=ExtractKvInput,
            normalize_input=extract_input,
            postprocess=lambda out, s, p: {"extracted_kvps": _parse_object(out, "extract_key_values")},
            updates=frozenset({"extracted_kvps"}),
            requires=("document_text", "document_language", "target_keys"),
            description="Extracts the target keys from the document text as a JSON object.",
        ),
        ToolDescriptor(
            name="answer_question",
            fn=answer,
            intent="question_answering",
            input_model=AnswerInput,
            normalize_input=answer_input,
            postprocess=lambda out, s, p: {"qa_answer": parse_answer(out)},
            updates=frozenset({"qa_answer"}),
            requires=("document_text", "document_language"),
            description="Answers the (translated) user question from the document text.",
        ),
        ToolDescriptor(
            name="verify_extraction",
            fn=verify,
            intent="verification",
            input_model=VerifyInput,
            normalize_input=verify_input,
            postprocess=verify_post,
            updates=frozenset({"verification_result"}),
            requires=("document_text",),
            requires_any=("extracted_kvps", "qa_answer"),
            description="Checks that the extracted pairs or the answer are complete and grounded in the text.",
        ),
        ToolDescriptor(
            name="translate_text",
            fn=translate,
            intent="translation",
            input_model=TranslateInput,
            normalize_input=translate_input,
            postprocess=translate_post,
            updates=frozenset({"translated_target_keys", "translated_kvps", "translated_answer", "translated_question"}),
            requires=("document_language", "user_language"),
            requires_any=("target_keys", "extracted_kvps", "qa_answer", "qa_question"),
            description=(
                "Translates target_keys or the question into the document language, or the extracted pairs "
                "or the answer into the user language. Optional input kind: target_keys, kvps, answer, question."
            ),
        ),
    ]


DEFAULT_ORDER = (
    "check_if_scanned",
    "extract_text_direct",
    "extract_text_ocr",
    "detect_language",
    "classify_intent",
    "get_user_target_keys",
    "extract_key_values",
    "answer_question",
    "verify_extraction",
    "translate_text",
    "sanitize_ocr_text",
)


def register_default_tools(backend: Gateway | LlmBackend, adapters: DocumentAdapters | None = None) -> ToolRegistry:
    gateway = backend if isinstance(backend, Gateway) else Gateway(backend)
    available = {t.name: t for t in text_tools(adapters or DocumentAdapters()) + llm_tools(gateway)}
    return ToolRegistry(available[name] for name in DEFAULT_ORDER)
