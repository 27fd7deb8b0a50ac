"""Markdown run report: cost table plus score summaries."""

from __future__ import annotations

from typing import Any, Mapping, Sequence

from .llm.ledger import TABLE_COLUMNS, UsageLedger, ledger_report, merge_ledgers

SCORE_METRICS = ("valid", "key_match", "em", "bleu", "rouge")


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def cost_table(runs: Sequence[tuple[str, UsageLedger]]) -> list[str]:
    lines = [
        "| Run | " + " | ".join(TABLE_COLUMNS) + " |",
        "|---|" + "---:|" * len(TABLE_COLUMNS),
    ]
    rows = list(runs)
    if len(rows) > 1:
        rows.append(("Total", merge_ledgers(ledger for _, ledger in runs)))
    for name, ledger in rows:
        row = ledger_report(ledger)["row"]
        lines.append(
            f"| {name} | {row[TABLE_COLUMNS[0]]:.4f} | {row[TABLE_COLUMNS[1]]:.2f} | {row[TABLE_COLUMNS[2]]:.2f} |"
        )
    return lines


def score_table(summaries: Sequence[tuple[str, Mapping[str, Any]]]) -> list[str]:
    lines = [
        "| Run | Group | Language | " + " | ".join(SCORE_METRICS) + " |",
        "|---|---|---|" + "---:|" * len(SCORE_METRICS),
    ]
    for name, summary in summaries:
        for group, block in summary.items():
            scopes = list(block.get("per_language", {}).items()) + [("all", block.get("global", {}))]
            for language, scores in scopes:
                cells = [_fmt(scores[m]) if m in scores else "" for m in SCORE_METRICS]
                lines.append(f"| {name} | {group} | {language} | " + " | ".join(cells) + " |")
    return lines


def render_report(
    runs: Sequence[tuple[str, UsageLedger]] = (),
    summaries: Sequence[tuple[str, Mapping[str, Any]]] = (),
) -> str:
    parts = ["# Run report", "", "## Cost and runtime", ""]
    parts += cost_table(runs)
    if not runs:
        parts.append("")
        parts.append("No usage ledgers given.")
    parts += ["", "## Scores", ""]
    parts += score_table(summaries)
    if not summaries:
        parts.append("")
        parts.append("No score summaries given.")
    return "\n".join(parts) + "\n"
