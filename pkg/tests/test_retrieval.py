import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conflictcast.errors import DimsMismatch, ProviderExhausted, NotEmbeddable
from conflictcast.retrieval import (
    Chunk,
    HashingEmbedder,
    SummaryMethod,
    VectorIndex,
    chunk_text,
    embed,
    extractive_summary,
    search,
    summarize,
)
from oracles import cosine_topk_oracle


def _random_index(rng, n, dims):
    index = VectorIndex(dims)
    vectors = rng.normal(size=(n, dims))
    ids = [f"doc{i}#0" for i in range(n)]
    for cid, v in zip(ids, vectors):
        index.add(cid, v)
    return index, ids, vectors


def test_search_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(10):
        index, ids, vectors = _random_index(rng, int(rng.integers(1, 120)), 32)
        q = rng.normal(size=32)
        k = int(rng.integers(1, 15))
        got = search(index, q, k)
        want = cosine_topk_oracle(ids, vectors.tolist(), q.tolist(), k)
        assert [g[0] for g in got] == [w[0] for w in want]
        assert np.allclose([g[1] for g in got], [w[1] for w in want], atol=1e-12)


def test_ties_keep_insertion_order():
    index = VectorIndex(3)
    for cid in ("c", "a", "b"):
        index.add(cid, np.array([1.0, 1.0, 0.0]))
    index.add("z", np.array([1.0, 0.0, 0.0]))
    assert [cid for cid, _ in search(index, np.array([1.0, 1.0, 0.0]), 3)] == ["c", "a", "b"]


def test_index_validation():
    index = VectorIndex(4)
    with pytest.raises(DimsMismatch):
        index.add("x", np.ones(3))
    with pytest.raises(NotEmbeddable):
        index.add("x", np.zeros(4))
    index.add("x", np.ones(4))
    with pytest.raises(ValueError):
        index.add("x", np.ones(4))
    with pytest.raises(DimsMismatch):
        search(index, np.ones(5), 1)
    assert search(VectorIndex(4), np.ones(4), 3) == []


def test_save_load_roundtrip_is_exact(tmp_path):
    rng = np.random.default_rng(1)
    index, ids, _ = _random_index(rng, 20, 16)
    index.save(tmp_path / "idx.jsonl")
    loaded = VectorIndex.load(tmp_path / "idx.jsonl")
    assert loaded.ids == ids
    assert np.array_equal(loaded.matrix, index.matrix)


def test_subset_and_snapshot_preserve_order():
    rng = np.random.default_rng(2)
    index, ids, _ = _random_index(rng, 10, 8)
    sub = index.subset({ids[7], ids[2], ids[5]})
    assert sub.ids == [ids[2], ids[5], ids[7]]
    snap = index.snapshot()
    index.add("late", np.ones(8))
    assert len(snap) == 10 and len(index) == 11


def test_hashing_embedder_deterministic_and_normalized():
    e = HashingEmbedder(256)
    a = embed("Clashes reported near Khartoum", e)
    b = embed("clashes, reported near KHARTOUM!", e)
    assert np.array_equal(a, b)
    assert np.linalg.norm(a) == pytest.approx(1.0)
    with pytest.raises(NotEmbeddable):
        embed("   ", e)
    with pytest.raises(NotEmbeddable):
        embed("!!! ---", e)


SENTENCES = st.lists(st.text(alphabet="abcdefgh ", min_size=5, max_size=120).map(lambda s: s.strip() + "."),
                     min_size=1, max_size=60)


@given(SENTENCES, st.integers(min_value=300, max_value=1500))
def test_chunks_cover_text_with_overlap(sentences, size):
    body = " ".join(sentences)
    overlap = size // 6
    chunks = chunk_text("u", body, size, overlap)
    assert chunks[0].char_span[0] == 0 and chunks[-1].char_span[1] == len(body)
    for prev, cur in zip(chunks, chunks[1:]):
        assert cur.char_span[0] == prev.char_span[1] - overlap
        assert cur.char_span[0] > prev.char_span[0]
    for c in chunks:
        assert c.text == body[c.char_span[0]:c.char_span[1]]
        assert len(c.text) <= size + 100
    assert [c.seq for c in chunks] == list(range(len(chunks)))


def test_chunk_prefers_sentence_boundary():
    body = ("A" * 95 + ". ") * 30
    chunks = chunk_text("u", body, 1200, 200)
    assert chunks[0].text.endswith(". ")


def test_chunk_rejects_bad_sizes():
    with pytest.raises(ValueError):
        chunk_text("u", "text", 100, 100)


def _chunk(url, text, seq=0):
    return Chunk(url, seq, text, (0, len(text)))


def test_extractive_summary_budget_and_sources():
    chunks = [_chunk("a", "First from a. Second from a."), _chunk("b", "First from b. Second from b.")]
    s = extractive_summary(chunks, 1500)
    assert s.text == "First from a. First from b. Second from a. Second from b."
    assert s.source_chunk_ids == ["a#0", "b#0"]
    short = extractive_summary(chunks, 30)
    assert short.text == "First from a. First from b."
    assert len(extractive_summary([_chunk("a", "x" * 500 + ".")], 40).text) <= 40


class _FailingClient:
    def complete(self, request, meta=None):
        raise ProviderExhausted("down")


class _EchoClient:
    def __init__(self):
        self.requests = []

    def complete(self, request, meta=None):
        self.requests.append((request, meta))
        return "  Fighting intensified in the capital.  "


def test_summarize_llm_and_fallback():
    chunks = [_chunk("a", "First from a. Second from a.")]
    client = _EchoClient()
    s = summarize(chunks, client, country="Sudan")
    assert s.method is SummaryMethod.LLM and s.text == "Fighting intensified in the capital."
    assert client.requests[0][1]["purpose"] == "summary"
    assert "First from a." in client.requests[0][0].user_text
    fallback = summarize(chunks, _FailingClient())
    assert fallback.method is SummaryMethod.EXTRACTIVE and fallback.text.startswith("First from a.")
    assert summarize([], client).text == ""
