"""Chunking, embedding, exact cosine search and context summaries."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConflictCastError, DimsMismatch, EmbedFailed, NotEmbeddable
from .llm import ChatRequest

logger = logging.getLogger(__name__)

SENTENCE_END = re.compile(r"(?<=[.!?])\s+|\n+")
QUERY_TEMPLATE = "armed conflict violence escalation {country} {month_range}"
SUMMARY_INSTRUCTION = (
    "Summarize the following conflict-related news excerpts for {country} in a short factual "
    "paragraph. Mention actors, locations, violent incidents and any signs of escalation or "
    "de-escalation. Do not speculate beyond the excerpts."
)


@dataclass(frozen=True)
class Chunk:
    doc_url: str
    seq: int
    text: str
    char_span: tuple[int, int]

    @property
    def id(self) -> str:
        return f"{self.doc_url}#{self.seq}"

    def to_dict(self) -> dict:
        return {"doc_url": self.doc_url, "seq": self.seq, "text": self.text, "char_span": list(self.char_span)}

    @classmethod
    def from_dict(cls, d: dict) -> "Chunk":
        return cls(d["doc_url"], int(d["seq"]), d["text"], tuple(d["char_span"]))


def _cut_point(body: str, target: int, lo: int, hi: int) -> int:
    """Sentence boundary in ``[lo, hi]`` closest to ``target``, else ``target``."""
    best = None
    for m in SENTENCE_END.finditer(body, lo, min(hi, len(body)) + 1):
        pos = m.end()
        if not (lo <= pos <= hi):
            continue
        if best is None or abs(pos - target) < abs(best - target):
            best = pos
    return best if best is not None else target


def chunk_text(url: str, body: str, chunk_chars: int = 1200, overlap_chars: int = 200,
               slack: int = 100) -> list[Chunk]:
    if not chunk_chars > overlap_chars >= 0:
        raise ValueError("need chunk_chars > overlap_chars >= 0")
    chunks: list[Chunk] = []
    start, n = 0, len(body)
    while start < n:
        target = start + chunk_chars
        if target >= n:
            end = n
        else:
            # cut must leave room for forward progress past the overlap
            lo = max(target - slack, start + overlap_chars + 1)
            end = _cut_point(body, target, lo, target + slack)
        chunks.append(Chunk(url, len(chunks), body[start:end], (start, end)))
        if end >= n:
            break
        start = end - overlap_chars
    return chunks


def chunk_articles(articles: Iterable, chunk_chars: int = 1200, overlap_chars: int = 200) -> list[Chunk]:
    out: list[Chunk] = []
    for art in articles:
        out.extend(chunk_text(art.url, art.body, chunk_chars, overlap_chars))
    return out


# --- embedders ----------------------------------------------------------------

_TOKEN = re.compile(r"[^0-9a-z]+")


class HashingEmbedder:
    """Deterministic bag-of-words embedder: blake2b-keyed token hashing into ``dims`` buckets."""

    def __init__(self, dims: int = 256, seed: int = 0x5EED_C0FF_EE12_3456):
        self.dims = dims
        self._key = seed.to_bytes(8, "little")

    def _bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=self._key).digest()
        return int.from_bytes(digest, "little") % self.dims

    def embed(self, text: str) -> np.ndarray:
        counts = np.zeros(self.dims, dtype=np.float64)
        for tok in _TOKEN.split(text.lower()):
            if tok:
                counts[self._bucket(tok)] += 1.0
        return counts


class RemoteEmbedder:
    """Embeddings over an OpenAI-style ``/embeddings`` endpoint."""

    def __init__(self, endpoint_url: str, model: str, dims: int, auth_token_env_var: str = "EMBEDDING_API_KEY",
                 transport=None, timeout_s: float = 30.0):
        self.endpoint_url = endpoint_url
        self.model = model
        self.dims = dims
        self.auth_token_env_var = auth_token_env_var
        self.timeout_s = timeout_s
        if transport is None:
            import requests

            transport = requests.Session()
        self.transport = transport

    def embed(self, text: str) -> np.ndarray:
        token = os.environ.get(self.auth_token_env_var)
        headers = {"Content-Type": "application/json"}
        if token:
            headers["Authorization"] = f"Bearer {token}"
        try:
            resp = self.transport.post(self.endpoint_url, json={"model": self.model, "input": text},
                                       headers=headers, timeout=self.timeout_s)
        except Exception as exc:
            raise EmbedFailed(f"transport error: {type(exc).__name__}") from exc
        if resp.status_code != 200:
            raise EmbedFailed(f"HTTP {resp.status_code}")
        try:
            vec = np.asarray(resp.json()["data"][0]["embedding"], dtype=np.float64)
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise EmbedFailed("malformed embedding response") from exc
        if vec.shape != (self.dims,):
            raise EmbedFailed(f"expected {self.dims} dims, got {vec.shape}")
        return vec


def embed(text: str, embedder) -> np.ndarray:
    """Embed and L2-normalize; raises NotEmbeddable for empty or zero vectors."""
    if not text.strip():
        raise NotEmbeddable("empty text")
    vec = np.asarray(embedder.embed(text), dtype=np.float64)
    if not np.all(np.isfinite(vec)):
        raise NotEmbeddable("non-finite embedding")
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise NotEmbeddable("text has no embeddable tokens")
    return vec / norm


# --- flat index ---------------------------------------------------------------

class VectorIndex:
    """Exact flat index over unit vectors; cosine similarity is a dot product.

    Writers take the lock; ``snapshot()`` gives readers a frozen view.
    """

    def __init__(self, dims: int):
        self.dims = dims
        self.ids: list[str] = []
        self._rows: list[np.ndarray] = []
        self._matrix: np.ndarray | None = np.zeros((0, dims))
        self._id_set: set[str] = set()
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.ids)

    def add(self, chunk_id: str, vector: np.ndarray) -> None:
        vector = np.asarray(vector, dtype=np.float64)
        if vector.shape != (self.dims,):
            raise DimsMismatch(f"index has {self.dims} dims, vector has {vector.shape}")
        norm = float(np.linalg.norm(vector))
        if norm == 0.0 or not np.isfinite(norm):
            raise NotEmbeddable(f"cannot index zero/non-finite vector for {chunk_id}")
        with self._lock:
            if chunk_id in self._id_set:
                raise ValueError(f"duplicate chunk id {chunk_id}")
            self._id_set.add(chunk_id)
            self.ids.append(chunk_id)
            self._rows.append(vector / norm)
            self._matrix = None

    @property
    def matrix(self) -> np.ndarray:
        with self._lock:
            if self._matrix is None:
                self._matrix = np.vstack(self._rows) if self._rows else np.zeros((0, self.dims))
            return self._matrix

    def snapshot(self) -> "VectorIndex":
        snap = VectorIndex(self.dims)
        matrix = self.matrix
        snap.ids = list(self.ids)
        snap._id_set = set(snap.ids)
        snap._rows = list(matrix)
        snap._matrix = matrix
        return snap

    def subset(self, keep: Iterable[str]) -> "VectorIndex":
        """New index restricted to ``keep``, preserving insertion order."""
        keep = set(keep)
        mask = [cid in keep for cid in self.ids]
        sub = VectorIndex(self.dims)
        sub.ids = [cid for cid, m in zip(self.ids, mask) if m]
        sub._id_set = set(sub.ids)
        sub._matrix = self.matrix[np.asarray(mask, dtype=bool)] if self.ids else np.zeros((0, self.dims))
        sub._rows = list(sub._matrix)
        return sub

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps({"dims": self.dims, "count": len(self)}) + "\n")
            for cid, row in zip(self.ids, self.matrix):
                # repr floats round-trip exactly through json
                fh.write(json.dumps({"id": cid, "v": row.tolist()}) + "\n")
        tmp.replace(path)

    @classmethod
    def load(cls, path: str | Path) -> "VectorIndex":
        with open(path, encoding="utf-8") as fh:
            header = json.loads(fh.readline())
            idx = cls(int(header["dims"]))
            rows = [json.loads(line) for line in fh if line.strip()]
        if len(rows) != header["count"]:
            raise ValueError(f"{path}: header count {header['count']} != {len(rows)} entries")
        idx.ids = [r["id"] for r in rows]
        idx._id_set = set(idx.ids)
        idx._matrix = np.asarray([r["v"] for r in rows], dtype=np.float64).reshape(len(rows), idx.dims)
        idx._rows = list(idx._matrix)
        return idx


def search(index: VectorIndex, query_vector: np.ndarray, k: int) -> list[tuple[str, float]]:
    """Exact top-k by cosine similarity; ties keep insertion order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(query_vector, dtype=np.float64)
    if q.shape != (index.dims,):
        raise DimsMismatch(f"index has {index.dims} dims, query has {q.shape}")
    if len(index) == 0:
        return []
    norm = float(np.linalg.norm(q))
    if norm == 0.0:
        raise NotEmbeddable("zero query vector")
    scores = np.clip(index.matrix @ (q / norm), -1.0, 1.0)
    order = np.argsort(-scores, kind="stable")[:k]
    return [(index.ids[i], float(scores[i])) for i in order]


# --- summaries -----------------------------------------------------------------

class SummaryMethod(str, enum.Enum):
    LLM = "llm"
    EXTRACTIVE = "extractive"


@dataclass
class Summary:
    text: str
    source_chunk_ids: list[str] = field(default_factory=list)
    method: SummaryMethod = SummaryMethod.EXTRACTIVE

    def to_dict(self) -> dict:
        return {"text": self.text, "source_chunk_ids": self.source_chunk_ids, "method": self.method.value}


def split_sentences(text: str) -> list[str]:
    return [s.strip() for s in SENTENCE_END.split(text) if s.strip()]


def extractive_summary(chunks: Sequence[Chunk], char_budget: int = 1500) -> Summary:
    """Round-robin over chunks taking one leading sentence at a time until the budget is hit."""
    if not chunks:
        return Summary("", [], SummaryMethod.EXTRACTIVE)
    queues = [split_sentences(c.text) for c in chunks]
    parts: list[str] = []
    used: list[str] = []
    length = 0
    depth = 0
    full = False
    while not full and any(depth < len(q) for q in queues):
        for chunk, q in zip(chunks, queues):
            if depth >= len(q):
                continue
            sentence = q[depth]
            if sentence in parts:
                continue
            extra = len(sentence) + (1 if parts else 0)
            if length + extra > char_budget:
                full = True
                break
            parts.append(sentence)
            length += extra
            if chunk.id not in used:
                used.append(chunk.id)
        depth += 1
    if not parts:
        # first sentence alone overflows: keep a truncated prefix so sources stay non-empty
        first = next((q[0] for q in queues if q), chunks[0].text)
        return Summary(first[:char_budget].rstrip(), [chunks[0].id], SummaryMethod.EXTRACTIVE)
    return Summary(" ".join(parts), used, SummaryMethod.EXTRACTIVE)


def summarize(chunks: Sequence[Chunk], llm_client=None, char_budget: int = 1500, country: str = "",
              request_chars: int = 6000) -> Summary:
    """LLM summary of the top chunks, degrading to the extractive summary on any failure."""
    if not chunks:
        return Summary("", [], SummaryMethod.EXTRACTIVE)
    if llm_client is None:
        return extractive_summary(chunks, char_budget)

    picked, excerpts, used = [], [], 0
    for c in chunks:
        block = f"[{len(picked) + 1}] {c.text.strip()}"
        if picked and used + len(block) > request_chars:
            break
        picked.append(c)
        excerpts.append(block)
        used += len(block) + 2
    request = ChatRequest(
        system_text="You summarize news for conflict analysts.",
        user_text=SUMMARY_INSTRUCTION.format(country=country or "the country") + "\n\n" + "\n\n".join(excerpts),
    )
    try:
        text = llm_client.complete(request, meta={"purpose": "summary", "country": country}).strip()
    except ConflictCastError as exc:
        logger.warning("summarization failed (%s); using extractive fallback", type(exc).__name__)
        return extractive_summary(chunks, char_budget)
    if not text:
        return extractive_summary(chunks, char_budget)
    return Summary(text[:char_budget], [c.id for c in picked], SummaryMethod.LLM)
