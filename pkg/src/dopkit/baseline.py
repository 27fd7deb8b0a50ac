"""Single-pass zero-shot baselines: one completion per document (KVP) or
per question (QA), raw outputs kept for evaluation."""

from __future__ import annotations

import base64
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .annotations import QaItem
from .evaluation import ErrorLog, ErrorRecord
from .ingest import DocumentAdapters, IngestError
from .llm.backends import Gateway, LlmError
from .llm.prompts import baseline_kvp_prompt, baseline_qa_prompt

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def load_page_images(images_dir: str | Path, doc_name: str) -> list[str]:
    """Pre-rendered page images for ``doc_name`` as data URLs, from
    ``images_dir/<doc stem>/`` in file-name order."""
    folder = Path(images_dir) / Path(doc_name).stem
    files = sorted(p for p in folder.glob("*") if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise IngestError(f"no page images in {folder}")
    urls = []
    for f in files:
        kind = "png" if f.suffix.lower() == ".png" else "jpeg"
        urls.append(f"data:image/{kind};base64," + base64.b64encode(f.read_bytes()).decode("ascii"))
    return urls


def _fan_out(fn, items: Sequence[Any], workers: int) -> list[Any]:
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def run_kvp_baseline(
    documents: Iterable[str | Path],
    *,
    mode: str,
    language: str,
    gateway: Gateway,
    adapters: DocumentAdapters,
    workers: int = 4,
    errors: ErrorLog | None = None,
    schema: Mapping[str, Any] | None = None,
) -> dict[str, dict[str, str]]:
    """``{doc_name: {language: raw output}}``. Documents that fail are
    logged and left out, so evaluation zero-pads them."""
    docs = sorted((Path(d) for d in documents), key=lambda p: p.name)

    def one(path: Path) -> tuple[str, str | None]:
        try:
            text = adapters.extract_text(path, "direct")
            prompt = baseline_kvp_prompt(mode, language, text, schema)
            return path.name, gateway.complete(prompt, f"baseline:kvp:{path.name}").text
        except (IngestError, LlmError) as exc:
            stage = "ingest" if isinstance(exc, IngestError) else "agent"
            log.warning("%s: %s", path.name, exc)
            if errors is not None:
                errors.add(ErrorRecord(path.name, language, stage, str(exc)))
            return path.name, None

    results = _fan_out(one, docs, workers)
    return {name: {language: raw} for name, raw in results if raw is not None}


def run_qa_baseline(
    items: Sequence[QaItem],
    documents: Mapping[str, str | Path],
    *,
    gateway: Gateway,
    adapters: DocumentAdapters,
    workers: int = 4,
    errors: ErrorLog | None = None,
    images_dir: str | Path | None = None,
    language: str | None = None,
) -> dict[str, dict[str, dict[str, str]]]:
    """``{doc: {language: {question: raw answer}}}`` for every QA item
    whose document is available (text mode) or has page images (vision
    mode). Questions are grouped per document so text is extracted once."""
    selected = [i for i in items if language is None or i.user_language == language]
    by_doc: dict[str, list[QaItem]] = {}
    for item in selected:
        by_doc.setdefault(item.doc_name, []).append(item)

    def one(doc: str) -> list[tuple[QaItem, str | None]]:
        questions = by_doc[doc]
        try:
            if images_dir is not None:
                images, text = load_page_images(images_dir, doc), None
            else:
                if doc not in documents:
                    raise IngestError(f"document {doc} not found")
                images, text = None, adapters.extract_text(Path(documents[doc]), "direct")
        except IngestError as exc:
            if errors is not None:
                for q in questions:
                    errors.add(ErrorRecord(doc, q.user_language, "ingest", str(exc), q.key))
            return [(q, None) for q in questions]
        out = []
        for q in questions:
            prompt = baseline_qa_prompt(q.user_language, q.question, text)
            try:
                out.append((q, gateway.complete(prompt, f"baseline:qa:{doc}", images=images).text))
            except LlmError as exc:
                if errors is not None:
                    errors.add(ErrorRecord(doc, q.user_language, "agent", str(exc), q.key))
                out.append((q, None))
        return out

    predictions: dict[str, dict[str, dict[str, str]]] = {}
    for group in _fan_out(one, sorted(by_doc), workers):
        for q, raw in group:
            if raw is not None:
                predictions.setdefault(q.doc_name, {}).setdefault(q.user_language, {})[q.question] = raw
    return predictions
