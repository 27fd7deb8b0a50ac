"""Command-line entry point.

Exit codes: 0 on success, 1 on input or configuration errors, 2 when an
agent run ends without a result.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict
from pathlib import Path
from typing import Any, Sequence

from pydantic import ValidationError

from .agent import TraceWriter, run_agent
from .annotations import (
    LANGUAGES,
    dataset_stats,
    dump_qa_items,
    generate_qa_dataset,
    load_kvp_annotations,
    load_qa_items,
    sample_eval_set,
)
from .baseline import run_kvp_baseline, run_qa_baseline
from .config import RunConfig
from .evaluation import (
    ErrorLog,
    ErrorRecord,
    evaluate_kvp_dataset,
    evaluate_nested_dataset,
    evaluate_qa,
    kvp_summary,
    qa_summary,
    write_qa_csv,
    write_scores_csv,
    write_summary,
)
from .ingest import IngestError, detect_language
from .llm.ledger import UsageLedger
from .report import render_report
from .state import AgentStatus
from .tools import parse_answer

log = logging.getLogger("dopkit")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_END = 2

DOC_SUFFIXES = (".pdf", ".txt")


class InputError(Exception):
    """Bad input file or configuration; maps to exit code 1."""


# -- shared helpers ------------------------------------------------------------


def _load_config(args: argparse.Namespace) -> RunConfig:
    try:
        config = RunConfig.load(args.config) if args.config else RunConfig()
        backend = args.backend or ("scripted" if args.script else None)
        return config.with_overrides(
            {
                "seed": args.seed,
                "agent.max_steps": args.max_steps,
                "backend.kind": backend,
                "backend.script": args.script,
                "user_language": getattr(args, "user_language", None),
            }
        )
    except (OSError, ValueError, ValidationError) as exc:
        raise InputError(f"configuration error: {exc}") from exc


def _build_gateway(config: RunConfig, ledger: UsageLedger):
    try:
        return config.build_gateway(ledger)
    except (OSError, ValueError) as exc:
        raise InputError(f"backend error: {exc}") from exc


def _read_json(path: str | Path) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def _write_json(data: Any, path: str | Path) -> None:
    Path(path).write_text(json.dumps(data, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _emit_error(record: ErrorRecord) -> None:
    print(json.dumps(asdict(record), ensure_ascii=False), file=sys.stderr)


def _check_document(config: RunConfig, doc: str, language: str) -> None:
    """Fail fast on unreadable documents before any model call."""
    try:
        pages = config.build_adapters().native_extractor(Path(doc))
    except IngestError as exc:
        _emit_error(ErrorRecord(Path(doc).name, language, "ingest", str(exc)))
        raise InputError(str(exc)) from exc
    if not pages:
        _emit_error(ErrorRecord(Path(doc).name, language, "ingest", "document has no pages"))
        raise InputError(f"{doc}: document has no pages")


def _collect_documents(paths: Sequence[str]) -> list[Path]:
    docs: list[Path] = []
    for raw in paths:
        path = Path(raw)
        if path.is_dir():
            docs.extend(sorted(p for p in path.iterdir() if p.suffix.lower() in DOC_SUFFIXES))
        elif path.is_file():
            docs.append(path)
        else:
            raise InputError(f"no such document: {raw}")
    return docs


# -- agent commands ------------------------------------------------------------


def _run_agent_command(args: argparse.Namespace, user_input: str, initial: dict[str, Any]) -> tuple[int, Any]:
    config = _load_config(args)
    initial.setdefault("user_language", config.user_language)
    _check_document(config, args.doc, initial["user_language"])
    ledger = UsageLedger(pricing=config.price_table())
    gateway = _build_gateway(config, ledger)
    registry = config.build_registry(gateway)

    start = time.monotonic()
    trace = TraceWriter(args.trace) if args.trace else None
    try:
        outcome = run_agent(
            user_input, args.doc, config.agent_options(),
            registry=registry, gateway=gateway, initial=initial, trace=trace,
        )
    finally:
        if trace is not None:
            trace.close()
    ledger.elapsed_ms = (time.monotonic() - start) * 1000
    if args.ledger:
        ledger.save(args.ledger)

    if outcome.status is AgentStatus.SUCCESS:
        return EXIT_OK, outcome.final_answer
    state = outcome.state
    message = state.fallback_message or "No result."
    print(f"agent ended: {state.end_reason} ({message})", file=sys.stderr)
    if state.last_error:
        print(f"last error: {json.dumps(state.last_error, ensure_ascii=False)}", file=sys.stderr)
    return EXIT_END, {"status": "END", "end_reason": state.end_reason, "message": message}


def cmd_extract(args: argparse.Namespace) -> int:
    request = "Extract the key-value pairs from this declaration of performance."
    if args.keys:
        request += " Keys: " + ", ".join(f'"{k}"' for k in args.keys)
    initial = {"user_intent": "kvp_extraction"}
    if args.user_language:
        initial["user_language"] = args.user_language
    code, result = _run_agent_command(args, request, initial)
    if args.out:
        _write_json(result, args.out)
    else:
        print(json.dumps(result, ensure_ascii=False, indent=2, sort_keys=True))
    return code


def cmd_ask(args: argparse.Namespace) -> int:
    initial = {"user_intent": "question_answering", "qa_question": args.question}
    if args.user_language:
        initial["user_language"] = args.user_language
    code, result = _run_agent_command(args, args.question, initial)
    if code == EXIT_OK:
        text = "; ".join(result) if isinstance(result, list) else str(result or "")
        print(text)
        if args.out:
            _write_json({"question": args.question, "answer": result}, args.out)
    elif args.out:
        _write_json(result, args.out)
    return code


# -- data commands -------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace) -> int:
    config = _load_config(args)
    adapters = config.build_adapters()
    doc = Path(args.doc)
    try:
        pdf_type = adapters.check_if_scanned(doc)
        mode = args.mode if args.mode != "auto" else ("ocr" if pdf_type == "scanned" else "direct")
        text = adapters.extract_text(doc, mode)
    except IngestError as exc:
        _emit_error(ErrorRecord(doc.name, config.user_language, "ingest", str(exc)))
        return EXIT_INPUT
    try:
        language = detect_language(text)
    except ValueError:
        language = None
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(json.dumps({"document": doc.name, "pdf_type": pdf_type, "mode": mode, "language": language, "chars": len(text)}))
    return EXIT_OK


def cmd_generate_qa(args: argparse.Namespace) -> int:
    config = _load_config(args)
    try:
        annotations = load_kvp_annotations(args.kvp_file)
    except (OSError, ValueError, TypeError, KeyError) as exc:
        raise InputError(f"cannot read annotations {args.kvp_file}: {exc}") from exc
    items = generate_qa_dataset(annotations)
    sampled = sample_eval_set(items, config.seed)
    dump_qa_items(items, args.out)
    if args.sampled_out:
        dump_qa_items(sampled, args.sampled_out)
    print(json.dumps(dataset_stats(annotations, items, sampled), sort_keys=True))
    return EXIT_OK


def cmd_baseline(args: argparse.Namespace) -> int:
    config = _load_config(args)
    docs = _collect_documents(args.docs)
    ledger = UsageLedger(pricing=config.price_table())
    gateway = _build_gateway(config, ledger)
    adapters = config.build_adapters()
    errors = ErrorLog()
    workers = args.workers or config.effective_workers
    schema = _read_json(config.schema_file) if config.schema_file and args.mode == "T+S" else None

    start = time.monotonic()
    if args.task == "kvp":
        language = args.language or config.user_language
        predictions: Any = run_kvp_baseline(
            docs, mode=args.mode, language=language, gateway=gateway,
            adapters=adapters, workers=workers, errors=errors, schema=schema,
        )
    else:
        if not args.qa_file:
            raise InputError("--task qa needs --qa-file")
        try:
            items = load_qa_items(args.qa_file)
        except (OSError, ValueError, TypeError) as exc:
            raise InputError(f"cannot read QA items {args.qa_file}: {exc}") from exc
        predictions = run_qa_baseline(
            items, {d.name: d for d in docs}, gateway=gateway, adapters=adapters, workers=workers,
            errors=errors, images_dir=args.images_dir, language=args.language,
        )
    ledger.elapsed_ms = (time.monotonic() - start) * 1000

    _write_json(predictions, args.out)
    if args.ledger:
        ledger.save(args.ledger)
    if args.errors:
        errors.write_jsonl(args.errors)
    for record in errors.records:
        log.warning("%s [%s] %s: %s", record.doc_name, record.language, record.stage, record.message)
    return EXIT_OK


def _qa_predictions(data: Any) -> dict[tuple[str, str, str], Any]:
    if not isinstance(data, dict):
        raise InputError("QA predictions must map doc -> language -> question -> answer")
    flat: dict[tuple[str, str, str], Any] = {}
    for doc, per_lang in data.items():
        for lang, answers in (per_lang or {}).items():
            for question, raw in (answers or {}).items():
                flat[(doc, lang, question)] = parse_answer(raw) if isinstance(raw, str) else raw
    return flat


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = _load_config(args)
    predictions = _read_json(args.predictions)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    languages = (args.language,) if args.language else LANGUAGES
    errors = ErrorLog()

    if args.task == "kvp":
        if not isinstance(predictions, dict):
            raise InputError("KVP predictions must map doc -> raw output")
        try:
            annotations = load_kvp_annotations(args.ground_truth)
        except (OSError, ValueError, TypeError, KeyError) as exc:
            raise InputError(f"cannot read annotations {args.ground_truth}: {exc}") from exc
        default_language = args.language or config.user_language
        rows = evaluate_kvp_dataset(
            predictions, annotations, languages=languages, default_language=default_language, errors=errors
        )
        write_scores_csv(rows, out_dir / "scores.csv")
        nested_rows = None
        if args.nested:
            nested_rows = evaluate_nested_dataset(
                predictions, annotations, languages=languages, default_language=default_language, errors=errors
            )
            write_scores_csv(nested_rows, out_dir / "nested_scores.csv", nested=True)
        summary = kvp_summary(rows, nested_rows)
    else:
        try:
            items = [i for i in load_qa_items(args.ground_truth) if i.user_language in languages]
        except (OSError, ValueError, TypeError) as exc:
            raise InputError(f"cannot read QA items {args.ground_truth}: {exc}") from exc
        flat = _qa_predictions(predictions)
        rows, averages = evaluate_qa(flat, items, errors=errors)
        write_qa_csv(rows, out_dir / "scores.csv")
        nested_items = [i for i in items if i.is_nested]
        nested_averages = None
        if args.nested or nested_items:
            nested_averages = evaluate_qa(flat, nested_items)[1]
        summary = qa_summary(averages, nested_averages)

    write_summary(summary, out_dir / "summary.json")
    errors.write_jsonl(out_dir / "errors.jsonl")
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    runs = []
    for path in args.ledger or []:
        try:
            runs.append((Path(path).stem, UsageLedger.load(path)))
        except (OSError, ValueError, TypeError, KeyError) as exc:
            raise InputError(f"cannot read ledger {path}: {exc}") from exc
    summaries = [(Path(p).parent.name or Path(p).stem, _read_json(p)) for p in args.scores or []]
    text = render_report(runs, summaries)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        print(text, end="")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dopkit", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="TOML run configuration")
    parser.add_argument("--seed", type=int, help="seed for every stochastic choice")
    parser.add_argument("--max-steps", type=int, help="planner step budget")
    parser.add_argument("--backend", choices=("scripted", "http"))
    parser.add_argument("--script", help="JSON script for the scripted backend")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def agent_io(p: argparse.ArgumentParser) -> None:
        p.add_argument("--user-language", choices=LANGUAGES)
        p.add_argument("--out", help="write the result as JSON")
        p.add_argument("--trace", help="write the per-node trace as JSON Lines")
        p.add_argument("--ledger", help="write token usage as JSON")

    p = sub.add_parser("extract", help="extract key-value pairs with the agent")
    p.add_argument("doc")
    p.add_argument("--keys", nargs="+", help="restrict extraction to these keys")
    agent_io(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("ask", help="answer a question about a document with the agent")
    p.add_argument("doc")
    p.add_argument("question")
    agent_io(p)
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("ingest", help="classify a document and extract its text")
    p.add_argument("doc")
    p.add_argument("--mode", choices=("auto", "direct", "ocr"), default="auto")
    p.add_argument("--out", help="write the extracted text here")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("generate-qa", help="build the QA dataset from KVP annotations")
    p.add_argument("kvp_file")
    p.add_argument("--out", required=True)
    p.add_argument("--sampled-out")
    p.set_defaults(func=cmd_generate_qa)

    p = sub.add_parser("baseline", help="single-pass zero-shot predictions")
    p.add_argument("docs", nargs="+", help="documents or directories of documents")
    p.add_argument("--mode", choices=("T", "T+S"), default="T")
    p.add_argument("--language", choices=LANGUAGES)
    p.add_argument("--task", choices=("kvp", "qa"), default="kvp")
    p.add_argument("--qa-file")
    p.add_argument("--images-dir", help="pre-rendered page images for vision mode")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--ledger")
    p.add_argument("--errors", help="write per-document errors as JSON Lines")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    p.add_argument("predictions")
    p.add_argument("ground_truth")
    p.add_argument("--task", choices=("kvp", "qa"), default="kvp")
    p.add_argument("--nested", action="store_true", help="also score nested values path by path")
    p.add_argument("--language", choices=LANGUAGES)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="render a markdown report")
    p.add_argument("--ledger", nargs="*", help="usage ledger JSON files")
    p.add_argument("--scores", nargs="*", help="summary.json files")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
