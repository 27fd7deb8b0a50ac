from __future__ import annotations

import json
import sys
from pathlib import Path

import pytest

from dopkit.annotations import SCHEMA_EN, dump_kvp_annotations, target_keys
from dopkit.cli import main
from dopkit.config import RunConfig
from dopkit.evaluation import ground_truth_by_doc
from dopkit.llm import ScriptedBackend, UsageEntry, UsageLedger
from conftest import decision, happy_kvp_script, respond
from corpus import corpus
from test_ingest import make_pdf

TWELVE = {key: f"value {i}" for i, key in enumerate(target_keys("en"))}


def write_script(tmp_path: Path, script: dict, name: str = "script.json") -> Path:
    path = tmp_path / name
    path.write_text(json.dumps(script), encoding="utf-8")
    return path


def qa_script(answer: str) -> dict:
    return {
        "planner": [
            decision("check_if_scanned"), decision("extract_text_direct"), decision("detect_language"),
            decision("answer_question"), decision("verify_extraction"), respond(),
        ],
        "tool:answer_question": [json.dumps(answer)],
        "tool:verify_extraction": ['{"verified": true}'],
    }


class TestExtract:
    def test_happy_path_writes_twelve_keys(self, tmp_path, doc_en):
        script = happy_kvp_script()
        script["tool:extract_key_values"] = [json.dumps(TWELVE)]
        out, trace, ledger = tmp_path / "out.json", tmp_path / "trace.jsonl", tmp_path / "ledger.json"
        code = main([
            "--script", str(write_script(tmp_path, script)), "extract", str(doc_en),
            "--out", str(out), "--trace", str(trace), "--ledger", str(ledger),
        ])
        assert code == 0
        assert json.loads(out.read_text()) == TWELVE
        tools = [json.loads(line).get("tool") for line in trace.read_text().splitlines()]
        assert "extract_key_values" in tools and "extract_text_ocr" not in tools
        assert len(UsageLedger.load(ledger).entries) == 9

    def test_missing_file(self, tmp_path, capsys):
        code = main(["--script", str(write_script(tmp_path, {})), "extract", str(tmp_path / "absent.pdf")])
        assert code == 1
        record = json.loads(capsys.readouterr().err.splitlines()[0])
        assert record["stage"] == "ingest"

    def test_loop_ends_with_exit_two(self, tmp_path, doc_en):
        script = write_script(tmp_path, {"planner": [decision("check_if_scanned")] * 5})
        out = tmp_path / "out.json"
        assert main(["--script", str(script), "extract", str(doc_en), "--out", str(out)]) == 2
        assert json.loads(out.read_text())["end_reason"] == "loop detected"

    def test_keys_reach_the_request(self, tmp_path, doc_en):
        script = happy_kvp_script()
        out = tmp_path / "out.json"
        code = main(["--script", str(write_script(tmp_path, script)), "extract", str(doc_en),
                     "--keys", "Manufacturer", "--out", str(out)])
        assert code == 0

    def test_bad_config(self, tmp_path, doc_en):
        cfg = tmp_path / "bad.toml"
        cfg.write_text("[agent]\nmax_steps = 0\n")
        assert main(["--config", str(cfg), "extract", str(doc_en)]) == 1

    def test_max_steps_flag(self, tmp_path, doc_en):
        script = write_script(tmp_path, happy_kvp_script())
        assert main(["--script", str(script), "--max-steps", "2", "extract", str(doc_en)]) == 2


class TestAsk:
    def test_answer_printed(self, tmp_path, doc_en, capsys):
        script = write_script(tmp_path, qa_script("Example Bricks GmbH"))
        assert main(["--script", str(script), "ask", str(doc_en), "Who is the Manufacturer?"]) == 0
        assert capsys.readouterr().out.strip() == "Example Bricks GmbH"

    def test_unanswerable_gives_empty_answer(self, tmp_path, doc_en, capsys):
        script = write_script(tmp_path, qa_script(""))
        out = tmp_path / "a.json"
        assert main(["--script", str(script), "ask", str(doc_en), "Who is the Authorised Representative?", "--out", str(out)]) == 0
        assert capsys.readouterr().out == "\n"
        assert json.loads(out.read_text())["answer"] == ""

    def test_scanned_document_goes_through_ocr(self, tmp_path):
        pdf = make_pdf(tmp_path, "scan.pdf", ["image"])
        cfg = tmp_path / "run.toml"
        ocr = f"{sys.executable} -c \"print('Manufacturer: Example Bricks GmbH and the declaration of performance')\""
        cfg.write_text(f"[ingest]\nocr_command = {json.dumps(ocr)}\n", encoding="utf-8")
        script = qa_script("Example Bricks GmbH")
        script["planner"][1] = decision("extract_text_ocr")
        trace = tmp_path / "trace.jsonl"
        code = main(["--config", str(cfg), "--script", str(write_script(tmp_path, script)),
                     "ask", str(pdf), "Who is the Manufacturer?", "--trace", str(trace)])
        assert code == 0
        tools = [json.loads(line).get("tool") for line in trace.read_text().splitlines()]
        assert "extract_text_ocr" in tools and "extract_text_direct" not in tools


class TestIngest:
    def test_text_document(self, doc_de, tmp_path, capsys):
        out = tmp_path / "text.txt"
        assert main(["ingest", str(doc_de), "--out", str(out)]) == 0
        info = json.loads(capsys.readouterr().out)
        assert info["pdf_type"] == "text" and info["language"] == "de"
        assert out.read_text(encoding="utf-8").startswith("Leistungserklärung")

    def test_missing(self, tmp_path):
        assert main(["ingest", str(tmp_path / "absent.pdf")]) == 1


class TestGenerateQa:
    def test_deterministic_sampled_file(self, tmp_path, capsys):
        kvp = tmp_path / "kvp.json"
        dump_kvp_annotations(corpus(2), kvp)
        outs = []
        for run in ("a", "b"):
            qa, sampled = tmp_path / f"qa_{run}.json", tmp_path / f"s_{run}.json"
            assert main(["--seed", "4", "generate-qa", str(kvp), "--out", str(qa), "--sampled-out", str(sampled)]) == 0
            outs.append(sampled.read_bytes())
        assert outs[0] == outs[1]
        stats = json.loads(capsys.readouterr().out.splitlines()[-1])
        assert stats["qa_initial"] == 48 and stats["qa_sampled"] == 64

    def test_bad_file(self, tmp_path):
        bad = tmp_path / "kvp.json"
        bad.write_text("{not json")
        assert main(["generate-qa", str(bad), "--out", str(tmp_path / "q.json")]) == 1


def _docs(tmp_path: Path, n: int) -> Path:
    folder = tmp_path / "docs"
    folder.mkdir()
    for i in range(n):
        (folder / f"doc{i:02d}.txt").write_text(f"Declaration of performance number {i} for the product", encoding="utf-8")
    return folder


class TestBaseline:
    def test_kvp_predictions_deterministic(self, tmp_path):
        folder = _docs(tmp_path, 3)
        script = {"baseline": [json.dumps({"Manufacturer": f"M{i}"}) for i in range(3)]}
        files = []
        for run in ("a", "b"):
            out = tmp_path / f"pred_{run}.json"
            code = main(["--script", str(write_script(tmp_path, script)), "baseline", str(folder),
                         "--mode", "T+S", "--language", "de", "--out", str(out)])
            assert code == 0
            files.append(out.read_bytes())
        assert files[0] == files[1]
        preds = json.loads(files[0])
        assert preds["doc00.txt"] == {"de": '{"Manufacturer": "M0"}'}

    def test_backend_error_logged_and_run_continues(self, tmp_path):
        folder = _docs(tmp_path, 2)
        script = {"baseline": [{"error": "unreachable"}, '{"a": "b"}']}
        out, errors = tmp_path / "pred.json", tmp_path / "errors.jsonl"
        code = main(["--script", str(write_script(tmp_path, script)), "baseline", str(folder),
                     "--out", str(out), "--errors", str(errors)])
        assert code == 0
        assert list(json.loads(out.read_text())) == ["doc01.txt"]
        assert json.loads(errors.read_text())["doc_name"] == "doc00.txt"

    def test_qa_vision_mode_needs_images(self, tmp_path):
        folder = _docs(tmp_path, 1)
        qa = tmp_path / "qa.json"
        qa.write_text(json.dumps([{
            "doc_name": "doc00.txt", "user_language": "en", "parent_key": "Manufacturer",
            "key": "Manufacturer", "value": "M", "question": "Who is the Manufacturer?",
        }]))
        images = tmp_path / "images" / "doc00"
        images.mkdir(parents=True)
        (images / "p1.png").write_bytes(b"\x89PNG fake")
        out = tmp_path / "pred.json"
        script = write_script(tmp_path, {"baseline": ['"M"']})
        code = main(["--script", str(script), "baseline", str(folder), "--task", "qa", "--qa-file", str(qa),
                     "--images-dir", str(tmp_path / "images"), "--out", str(out)])
        assert code == 0
        assert json.loads(out.read_text()) == {"doc00.txt": {"en": {"Who is the Manufacturer?": '"M"'}}}

    def test_qa_needs_items(self, tmp_path):
        folder = _docs(tmp_path, 1)
        assert main(["--script", str(write_script(tmp_path, {})), "baseline", str(folder), "--task", "qa",
                     "--out", str(tmp_path / "p.json")]) == 1


class TestEvaluate:
    def _files(self, tmp_path, drop=None):
        anns = corpus(2)
        gt_file = tmp_path / "gt.json"
        dump_kvp_annotations(anns, gt_file)
        gt = ground_truth_by_doc(anns)
        preds = {doc: {lang: json.dumps(v, ensure_ascii=False) for lang, v in per.items()}
                 for doc, per in gt.items() if doc != drop}
        pred_file = tmp_path / "pred.json"
        pred_file.write_text(json.dumps(preds, ensure_ascii=False), encoding="utf-8")
        return pred_file, gt_file

    def test_self_prediction(self, tmp_path):
        pred, gt = self._files(tmp_path)
        out = tmp_path / "eval"
        assert main(["evaluate", str(pred), str(gt), "--nested", "--out-dir", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["fixed_schema"]["global"]["em"] == pytest.approx(1.0)
        assert summary["open_schema"]["global"]["em"] == pytest.approx(1.0)
        assert (out / "nested_scores.csv").exists()
        assert (out / "errors.jsonl").read_text() == ""

    def test_missing_document(self, tmp_path):
        pred, gt = self._files(tmp_path, drop="doc01.pdf")
        out = tmp_path / "eval"
        assert main(["evaluate", str(pred), str(gt), "--out-dir", str(out)]) == 0
        rows = (out / "scores.csv").read_text().splitlines()
        assert "doc01.pdf,en,0,0.0,0.0,0.0,0.0" in rows
        errors = [json.loads(line) for line in (out / "errors.jsonl").read_text().splitlines()]
        assert {e["doc_name"] for e in errors} == {"doc01.pdf"}

    def test_qa_task(self, tmp_path):
        kvp = tmp_path / "kvp.json"
        dump_kvp_annotations(corpus(1), kvp)
        qa = tmp_path / "qa.json"
        main(["generate-qa", str(kvp), "--out", str(qa)])
        items = json.loads(qa.read_text())
        preds: dict = {}
        for item in items:
            preds.setdefault(item["doc_name"], {}).setdefault(item["user_language"], {})[item["question"]] = json.dumps(item["value"])
        pred = tmp_path / "pred.json"
        pred.write_text(json.dumps(preds))
        out = tmp_path / "eval"
        assert main(["evaluate", str(pred), str(qa), "--task", "qa", "--out-dir", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["all"]["global"]["em"] == pytest.approx(1.0)
        assert summary["nested"]["global"]["em"] == pytest.approx(1.0)

    def test_unreadable_predictions(self, tmp_path):
        _, gt = self._files(tmp_path)
        assert main(["evaluate", str(tmp_path / "absent.json"), str(gt)]) == 1


class TestReport:
    def test_table_and_totals(self, tmp_path, capsys):
        a = UsageLedger([UsageEntry("p", 1_000_000, 0, 30_000.0)])
        b = UsageLedger([UsageEntry("p", 500_000, 100_000, 30_000.0)])
        a.save(tmp_path / "agent.json")
        b.save(tmp_path / "baseline.json")
        summary = tmp_path / "run1" / "summary.json"
        summary.parent.mkdir()
        summary.write_text(json.dumps({"fixed_schema": {"per_language": {"en": {"em": 0.5}}, "global": {"em": 0.5}}}))
        assert main(["report", "--ledger", str(tmp_path / "agent.json"), str(tmp_path / "baseline.json"),
                     "--scores", str(summary)]) == 0
        text = capsys.readouterr().out
        assert "| Run | Total Tokens (M) | Total Cost (USD) | Runtime (min) |" in text
        assert "| agent | 1.0000 | 2.50 | 0.50 |" in text
        assert "| Total | 1.6000 | 4.75 | 1.00 |" in text
        assert "| run1 | fixed_schema | en |  |  | 0.5000 |  |  |" in text

    def test_empty_report(self, tmp_path):
        out = tmp_path / "r.md"
        assert main(["report", "--out", str(out)]) == 0
        text = out.read_text()
        assert text.startswith("# Run report")
        assert "No usage ledgers given." in text and "No score summaries given." in text


def test_schema_file_used_for_baseline(tmp_path, monkeypatch):
    folder = _docs(tmp_path, 1)
    schema = tmp_path / "schema.json"
    schema.write_text(json.dumps({"Only Key": "<string>"}))
    cfg = tmp_path / "run.toml"
    cfg.write_text(f"schema_file = {json.dumps(str(schema))}\n")
    backend = ScriptedBackend({"baseline": ["{}"]})
    monkeypatch.setattr(RunConfig, "build_backend", lambda self: backend)
    script = write_script(tmp_path, {})
    assert main(["--config", str(cfg), "--script", str(script), "baseline", str(folder), "--mode", "T+S",
                 "--out", str(tmp_path / "p.json")]) == 0
    prompt = backend.calls[0][1]
    assert "Only Key" in prompt
    assert json.dumps(SCHEMA_EN, ensure_ascii=False, indent=2) not in prompt
