import json
from datetime import date

import numpy as np
import pytest

from conflictcast import pipeline
from conflictcast.config import RunConfig, load_config
from conflictcast.errors import ConfigError, EmbedFailed
from conflictcast.forecasting import Experiment
from conflictcast.ingestion import read_jsonl
from conflictcast.retrieval import RemoteEmbedder


def test_defaults():
    cfg = load_config()
    assert cfg.first_month == date(2020, 1, 1) and cfg.last_month == date(2024, 12, 1)
    assert cfg.experiments == [Experiment.PARAMETRIC, Experiment.RAG]
    assert cfg.provider.temperature == 0.2 and cfg.retrieval.k == 12
    assert cfg.labeling.labeling_config().ratio_threshold == 0.25


def test_relative_paths_resolve_against_config_dir(tmp_path):
    (tmp_path / "sub").mkdir()
    path = tmp_path / "sub" / "c.yaml"
    path.write_text("run_id: r1\npaths: {data_dir: data, runs_dir: out}\nexperiment: rag\n")
    cfg = load_config(path)
    assert cfg.data_dir == tmp_path / "sub" / "data"
    assert cfg.run_dir == tmp_path / "sub" / "out" / "r1"
    assert cfg.experiments == [Experiment.RAG]
    assert load_config(path, {"run_id": "r2"}).run_id == "r2"


@pytest.mark.parametrize("text, fragment", [
    ("date_range: ['2024-05', '2024-01']\n", "date_range"),
    ("date_range: ['2024-13', '2024-14']\n", "date_range"),
    ("provider: {temperature: 5}\n", "provider.temperature"),
    ("retrieval: {chunk_chars: 100, overlap_chars: 100}\n", "overlap_chars"),
    ("run_id: ../escape\n", "run_id"),
    ("cache: {mode: sometimes}\n", "cache.mode"),
    ("- just\n- a list\n", "mapping"),
    ("key: [unclosed\n", "not valid YAML"),
])
def test_invalid_configs(tmp_path, text, fragment):
    path = tmp_path / "c.yaml"
    path.write_text(text)
    with pytest.raises(ConfigError, match=fragment.replace(".", r"\.")):
        load_config(path)


def test_snapshot_is_json_ready():
    snap = RunConfig().snapshot()
    assert snap["cache"]["mode"] == "off" and snap["date_range"] == ["2020-01", "2024-12"]


class _EmbedTransport:
    def __init__(self, status=200, vec=None):
        self.status, self.vec = status, vec

    def post(self, url, json=None, headers=None, timeout=None):
        body = {"data": [{"embedding": self.vec}]}
        return type("R", (), {"status_code": self.status, "json": lambda self_: body})()


def test_remote_embedder():
    ok = RemoteEmbedder("https://e/v1/embeddings", "m", 3, transport=_EmbedTransport(vec=[1, 2, 3]))
    assert np.array_equal(ok.embed("x"), [1.0, 2.0, 3.0])
    with pytest.raises(EmbedFailed):
        RemoteEmbedder("https://e", "m", 4, transport=_EmbedTransport(vec=[1, 2, 3])).embed("x")
    with pytest.raises(EmbedFailed):
        RemoteEmbedder("https://e", "m", 3, transport=_EmbedTransport(status=503)).embed("x")


def test_llm_summaries_in_pipeline(mini_dir):
    cfg = load_config(mini_dir / "config.yaml", {"retrieval": {"summarize_with_llm": True}, "experiment": "rag"})
    for stage in (pipeline.ingest, pipeline.build_index, pipeline.make_labels, pipeline.run):
        stage(cfg)
    ctx_files = sorted(cfg.run_dir.glob("*/*/rag/context.json"))
    assert len(ctx_files) == 21
    methods = {json.loads(p.read_text())["summary"]["method"] for p in ctx_files}
    assert methods == {"llm"}
    assert len(read_jsonl(cfg.run_dir / "predictions.jsonl")) == 21
