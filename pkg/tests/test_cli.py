import json
import shutil
import subprocess
from dataclasses import replace
import sys
from pathlib import Path

import pytest

import newsinsight.pipeline as pipeline
from newsinsight.cli import main
from newsinsight.config import bundled, load_config
from newsinsight.pipeline import PipelineBusy, WorkQueue, process_lock, run_process
from newsinsight.providers import ScriptedProvider, TransientProviderError
from newsinsight.store import InsightStore, Query

OFFLINE = Path(__file__).resolve().parents[1] / "config" / "offline.yaml"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def work(tmp_path):
    return tmp_path / "work"


def offline(*argv, work):
    return [*argv, "-c", OFFLINE, "--work-dir", work]


@pytest.mark.parametrize("command", ["ingest", "process", "serve", "match", "eval"])
def test_subcommand_help(command, capsys):
    with pytest.raises(SystemExit) as info:
        main([command, "--help"])
    assert info.value.code == 0
    assert "usage:" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["match"], ["serve", "--port", "abc"]])
def test_misuse_exits_nonzero(argv, capsys):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 2


def test_console_script_version():
    exe = shutil.which("newsinsight")
    cmd = [exe] if exe else [sys.executable, "-m", "newsinsight.cli"]
    out = subprocess.run(cmd + ["--version"], capture_output=True, text=True, check=True)
    assert out.stdout.strip().startswith("newsinsight ")


def test_missing_config_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.yaml"
    code, _, err = run(capsys, "ingest", "-c", missing)
    assert code == 1 and str(missing) in err


def test_offline_ingest_process_cycle(work, capsys):
    assert run(capsys, *offline("ingest", work=work))[:2] == (0, "ingested 3\n")
    assert run(capsys, *offline("ingest", work=work))[:2] == (0, "ingested 0\n")
    assert run(capsys, *offline("process", work=work))[:2] == (0, "stored 3\n")
    assert run(capsys, *offline("process", work=work))[:2] == (0, "stored 0\n")
    with InsightStore(work / "insights.jsonl") as store:
        recs = store.query(Query(ticker="PFE")).records
    assert len(recs) == 1 and {"ABBV", "PFE"} <= recs[0].tickers
    assert {i.ticker: i.sentiment for i in recs[0].insights}["PFE"] == "negative"


def test_match_command(capsys):
    code, out, _ = run(capsys, "match", "Pfizer")
    assert code == 0 and out.startswith("best: PFE ")
    code, out, _ = run(capsys, "match", "Google")
    assert "[override]" in out.splitlines()[0] and "GOOG" in out
    code, out, _ = run(capsys, "match", "Google", "--no-overrides")
    assert "[override]" not in out and "  1. " in out


def test_eval_command(tmp_path, capsys):
    code, out, _ = run(capsys, "eval", bundled("golden/mini_corpus.jsonl"), "--out", tmp_path / "r")
    assert code == 0 and "report.txt" in out
    golden = Path(__file__).parent / "golden" / "report" / "report.txt"
    assert (tmp_path / "r" / "report.txt").read_bytes() == golden.read_bytes()


def test_eval_missing_dataset(tmp_path, capsys):
    code, _, err = run(capsys, "eval", tmp_path / "absent.jsonl", "--out", tmp_path / "r")
    assert code == 1 and "absent.jsonl" in err
    assert not (tmp_path / "r").exists()


def test_eval_empty_dataset(tmp_path, capsys):
    (tmp_path / "e.jsonl").write_text("")
    assert run(capsys, "eval", tmp_path / "e.jsonl", "--out", tmp_path / "r")[0] == 1


def test_provider_down_exits_3_and_keeps_queue(work, capsys, monkeypatch):
    assert run(capsys, *offline("ingest", work=work))[0] == 0
    monkeypatch.setattr(pipeline, "make_provider", lambda *a, **k: ScriptedProvider([TransientProviderError("503")]))
    code, _, err = run(capsys, *offline("process", work=work))
    assert code == 3 and "unavailable" in err
    assert len(WorkQueue(work)) == 3


def test_concurrent_process_rejected(work, capsys):
    work.mkdir()
    with process_lock(work):
        code, _, err = run(capsys, *offline("process", work=work))
        assert code == 1 and "process.lock" in err
        with pytest.raises(PipelineBusy):
            run_process(replace(load_config(OFFLINE), work_dir=work, store=work / "s.jsonl"))


def test_all_mentions_discarded_still_stored(work, capsys):
    assert run(capsys, *offline("ingest", work=work))[0] == 0
    answer = json.dumps({
        "title": "T", "summary": "S.", "keywords": [],
        "companies": [{"name": "Acme Robotics Inc.", "ticker": "ACME", "sentiment_reasoning": "r", "sentiment": "neutral"}],
    })[1:]
    no = '"verdicts": [{"index": 0, "match": false}]}'
    cfg = replace(load_config(OFFLINE), work_dir=work, store=work / "insights.jsonl")
    summary = run_process(cfg, provider=ScriptedProvider([answer, no] * 3), sleep=lambda s: None)
    assert summary.stored == 3 and summary.failed == 0
    with InsightStore(work / "insights.jsonl") as store:
        recs = store.query(Query()).records
    assert len(recs) == 3
    assert all(r.tickers == frozenset() and r.insights == () and r.description == "S." for r in recs)
