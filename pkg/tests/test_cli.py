import json

import pytest
import yaml

from conflictcast import cli, pipeline
from conflictcast.config import load_config
from conflictcast.errors import ConfigError
from conflictcast.ingestion import read_jsonl


def _edit_config(root, **changes):
    path = root / "config.yaml"
    data = yaml.safe_load(path.read_text())
    for dotted, value in changes.items():
        node = data
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    path.write_text(yaml.safe_dump(data))
    return path


def test_all_on_mini_corpus(mini_run):
    preds = read_jsonl(mini_run / "predictions.jsonl")
    assert len(preds) == 3 * 7 * 2
    assert sum(p["parse_failed"] for p in preds) == 1
    sudan_may = mini_run / "sudan" / "2023-05" / "rag"
    assert (sudan_may / "prompt.txt").exists() and (sudan_may / "reply.txt").exists()
    assert json.loads((sudan_may / "context.json").read_text())["weekly_fatalities"]
    manifest = json.loads((mini_run / "manifest.json").read_text())
    assert [s["status"] for s in manifest["stages"].values()] == ["ok"] * 5
    assert "acled.csv" in manifest["input_checksums"]
    assert (mini_run / "report.md").read_text().startswith("## mock-gpt:")


def test_figures_are_written(mini_dir):
    cfg = str(mini_dir / "config.yaml")
    assert cli.main(["all", "-c", cfg]) == 0
    figs = sorted(p.name for p in (mini_dir / "runs" / "mini" / "figures").glob("*.png"))
    assert "metrics_mock-gpt.png" in figs
    assert "confusion_mock-gpt_rag_sudan.png" in figs
    assert "fatalities_ethiopia.png" in figs


def test_missing_acled_exits_2(mini_dir, capsys):
    (mini_dir / "acled.csv").unlink()
    assert cli.main(["ingest", "-c", str(mini_dir / "config.yaml")]) == 2
    assert "ACLED export not found" in capsys.readouterr().err


def test_bad_config_exits_2(mini_dir, capsys):
    path = _edit_config(mini_dir, bogus_key=1)
    assert cli.main(["ingest", "-c", str(path)]) == 2
    assert "bogus_key" in capsys.readouterr().err
    with pytest.raises(ConfigError):
        load_config(mini_dir / "nope.yaml")


def test_empty_predictions_exit_2(mini_dir, capsys):
    cfg = str(mini_dir / "config.yaml")
    for stage in ("ingest", "build-index", "make-labels"):
        assert cli.main([stage, "-c", cfg]) == 0
    (mini_dir / "runs" / "mini" / "predictions.jsonl").write_text("")
    assert cli.main(["evaluate", "-c", cfg]) == 2
    assert "no scorable records" in capsys.readouterr().err


def test_stage_out_of_order_exits_2(mini_dir, capsys):
    assert cli.main(["run", "-c", str(mini_dir / "config.yaml")]) == 2
    assert "error:" in capsys.readouterr().err


def test_resume_skips_completed_tasks(mini_dir, capsys):
    cfg = str(mini_dir / "config.yaml")
    assert cli.main(["all", "-c", cfg, "--no-figures"]) == 0
    capsys.readouterr()
    assert cli.main(["run", "-c", cfg]) == 0
    assert "42 already done, 0 to run" in capsys.readouterr().out


def test_provider_failures_are_partial_then_resumable(mini_dir, monkeypatch, capsys):
    monkeypatch.delenv("OPENAI_API_KEY", raising=False)
    cfg_path = _edit_config(mini_dir, **{"provider.kind": "http"})
    cfg = str(cfg_path)
    for stage in ("ingest", "build-index", "make-labels"):
        assert cli.main([stage, "-c", cfg]) == 0
    assert cli.main(["run", "-c", cfg]) == 1
    preds = read_jsonl(mini_dir / "runs" / "mini" / "predictions.jsonl")
    assert all(p["error"].startswith("provider: AuthMissing") for p in preds)
    # the token never appears anywhere, and the failed tasks are retried on the next run
    _edit_config(mini_dir, **{"provider.kind": "mock"})
    capsys.readouterr()
    assert cli.main(["run", "-c", cfg]) == 0
    assert "0 already done, 42 to run" in capsys.readouterr().out


class _DeadTransport:
    def post(self, *a, **kw):
        raise AssertionError("network must not be touched in replay mode")


def test_replay_reproduces_recorded_run(mini_dir, monkeypatch):
    monkeypatch.setenv("OPENAI_API_KEY", "sk-never-written")
    cfg_path = _edit_config(mini_dir, **{"cache.mode": "record"})
    assert cli.main(["all", "-c", str(cfg_path), "--no-figures"]) == 0
    recorded = (mini_dir / "runs" / "mini" / "predictions.jsonl").read_text()

    _edit_config(mini_dir, **{"cache.mode": "replay", "provider.kind": "http", "run_id": "replayed"})
    cfg = load_config(cfg_path)
    for stage in (pipeline.ingest, pipeline.build_index, pipeline.make_labels):
        stage(cfg)
    result = pipeline.run(cfg, transport=_DeadTransport())
    assert not result.partial
    pipeline.evaluate(cfg, figures=False)
    assert (mini_dir / "runs" / "replayed" / "predictions.jsonl").read_text() == recorded
    assert (mini_dir / "runs" / "replayed" / "report.csv").read_text() == \
        (mini_dir / "runs" / "mini" / "report.csv").read_text()
    for f in (mini_dir / "cache").rglob("*.json"):
        assert "sk-never-written" not in f.read_text()


def test_report_subcommand(mini_run, tmp_path):
    out = tmp_path / "out"
    code = cli.main(["report", "--metrics", str(mini_run / "metrics.json"), "--out", str(out), "--no-figures"])
    assert code == 0
    assert (out / "report.csv").read_text() == (mini_run / "report.csv").read_text()
    assert cli.main(["report", "--metrics", str(tmp_path / "missing.json"), "--out", str(out)]) == 2


def test_init_mini(tmp_path, capsys):
    assert cli.main(["init-mini", str(tmp_path / "m")]) == 0
    assert (tmp_path / "m" / "config.yaml").exists()
    assert (tmp_path / "m" / "pages" / "pages.json").exists()
