"""Shared fixtures: small declaration texts and scripted planner runs."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import pytest

from dopkit.llm import Gateway, ScriptedBackend, UsageLedger
from dopkit.tools import register_default_tools

DOP_EN = """Declaration of Performance No. DoP-2021-07
1. Unique identification code of the product type: KS 10DF
2. Intended use: load-bearing masonry for walls in buildings
3. Manufacturer: Example Bricks GmbH, Hauptstrasse 1, 04720 Loebnitz
4. The system of assessment and verification of constancy of performance is System 2+
5. The notified body 0123 issued the certificate of conformity of the factory production control.
6. Declared performance: gross dry density class 1.4 and mean compressive strength 12 N/mm2
The performance of the product identified above is in conformity with the declared performance.
Signed for and on behalf of the manufacturer by G. Wolff, managing director, at Loebnitz on 28 February 2021.
"""

DOP_DE = """Leistungserklärung Nr. DoP-2021-07
1. Eindeutiger Kenncode des Produkttyps: KS 10DF
2. Verwendungszweck: tragendes Mauerwerk für Wände in Gebäuden
3. Hersteller: Beispiel Ziegel GmbH, Hauptstraße 1, 04720 Löbnitz
4. Das System zur Bewertung und Überprüfung der Leistungsbeständigkeit ist System 2+
5. Die notifizierte Stelle 0123 hat das Zertifikat für die werkseigene Produktionskontrolle ausgestellt.
6. Erklärte Leistung: Klasse der Brutto-Trockenrohdichte 1,4 und die mittlere Druckfestigkeit 12 N/mm2
Die Leistung des oben genannten Produkts entspricht der erklärten Leistung.
Unterzeichnet für den Hersteller und im Namen des Herstellers von G. Wolff, Geschäftsführer, in Löbnitz am 28. Februar 2021.
"""

KVPS_EN = {
    "Declaration Number": "DoP-2021-07",
    "Product Identification Code": "KS 10DF",
    "Manufacturer": "Example Bricks GmbH",
}


def decision(tool: str | None = None, reasoning: str = "next step", **tool_input: Any) -> str:
    """One planner reply in the decision format."""
    return json.dumps(
        {"reasoning": reasoning, "need_tool": tool is not None, "tool": tool, "tool_input": tool_input}
    )


def respond(reasoning: str = "done") -> str:
    return decision(None, reasoning)


def make_runtime(script: dict[str, list[Any]], ledger: UsageLedger | None = None):
    backend = ScriptedBackend(script)
    gateway = Gateway(backend, ledger if ledger is not None else UsageLedger())
    return backend, gateway, register_default_tools(gateway)


def happy_kvp_script(translate: bool = False) -> dict[str, list[Any]]:
    """KVP run in the planner-rule order; with ``translate`` the document is
    German and the user English, so keys and results pass through translation."""
    plan = [
        decision("check_if_scanned"),
        decision("extract_text_direct"),
        decision("detect_language"),
        decision("get_user_target_keys"),
    ]
    if translate:
        plan.append(decision("translate_text", kind="target_keys"))
    plan += [decision("extract_key_values"), decision("verify_extraction")]
    if translate:
        plan.append(decision("translate_text", kind="kvps"))
    plan.append(respond())
    script: dict[str, list[Any]] = {
        "planner": plan,
        "tool:extract_key_values": [json.dumps(KVPS_EN)],
        "tool:verify_extraction": ['{"verified": true, "notes": ""}'],
    }
    if translate:
        script["tool:translate_text"] = [
            json.dumps({"translation": ["Erklärungsnummer", "Hersteller"]}),
            json.dumps({"translation": KVPS_EN}),
        ]
        script["tool:extract_key_values"] = [
            json.dumps({"Erklärungsnummer": "DoP-2021-07", "Hersteller": "Beispiel Ziegel GmbH"})
        ]
    return script


@pytest.fixture
def doc_en(tmp_path: Path) -> Path:
    path = tmp_path / "dop_en.txt"
    path.write_text(DOP_EN, encoding="utf-8")
    return path


@pytest.fixture
def doc_de(tmp_path: Path) -> Path:
    path = tmp_path / "dop_de.txt"
    path.write_text(DOP_DE, encoding="utf-8")
    return path


# -- acceptance reporting ------------------------------------------------------

_CRITERIA: dict[int, dict[str, Any]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and not report.skipped and not report.failed):
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "outcomes": []})
    entry["outcomes"].append("skipped" if report.skipped else "failed" if report.failed else "passed")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        outcomes = entry["outcomes"]
        if "failed" in outcomes:
            verdict = "FAIL"
        elif "passed" in outcomes:
            verdict = "PASS"
        else:
            verdict = "SKIP"
        skipped = outcomes.count("skipped")
        note = f" ({skipped} check(s) skipped)" if skipped and verdict != "SKIP" else ""
        terminalreporter.write_line(f"{verdict} criterion {number}: {entry['title']}{note}")
