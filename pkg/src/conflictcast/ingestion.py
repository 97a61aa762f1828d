"""Parsing GDELT/ACLED exports and scraping article bodies into a normalized corpus."""

from __future__ import annotations

import csv
import gzip
import hashlib
import io
import json
import logging
import re
import threading
import time
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from html.parser import HTMLParser
from pathlib import Path
from typing import IO, Iterable, NamedTuple, Sequence
from urllib.parse import urlparse

from .errors import (
    ColumnMapIncomplete,
    EmptyBody,
    FetchFailed,
    MissingHeader,
    UnreadableStream,
)

logger = logging.getLogger(__name__)

# GDELT 2.0 event table, zero-based column positions.
GDELT_V2_COLUMNS = {
    "SQLDATE": 1,
    "Actor1CountryCode": 7,
    "Actor2CountryCode": 17,
    "GoldsteinScale": 30,
    "AvgTone": 34,
    "SOURCEURL": 60,
}
GDELT_V2_WIDTH = 61

COUNTRY_CODES = {
    "Djibouti": "DJI",
    "Egypt": "EGY",
    "Eritrea": "ERI",
    "Ethiopia": "ETH",
    "Iran": "IRN",
    "Iraq": "IRQ",
    "Israel": "ISR",
    "Jordan": "JOR",
    "Kenya": "KEN",
    "Lebanon": "LBN",
    "Palestine": "PSE",
    "Saudi Arabia": "SAU",
    "Somalia": "SOM",
    "South Sudan": "SSD",
    "Sudan": "SDN",
    "Syria": "SYR",
    "Uganda": "UGA",
    "Yemen": "YEM",
}

MAX_REPORTED_LINES = 100


@dataclass(frozen=True)
class GdeltEvent:
    event_date: date
    actor1_country: str | None
    actor2_country: str | None
    goldstein: float
    avg_tone: float
    source_url: str | None

    def to_dict(self) -> dict:
        return {
            "source": "gdelt",
            "event_date": self.event_date.isoformat(),
            "actor1_country": self.actor1_country,
            "actor2_country": self.actor2_country,
            "goldstein": self.goldstein,
            "avg_tone": self.avg_tone,
            "source_url": self.source_url,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GdeltEvent":
        return cls(
            event_date=date.fromisoformat(d["event_date"]),
            actor1_country=d.get("actor1_country"),
            actor2_country=d.get("actor2_country"),
            goldstein=float(d["goldstein"]),
            avg_tone=float(d["avg_tone"]),
            source_url=d.get("source_url"),
        )


@dataclass(frozen=True)
class AcledEvent:
    event_date: date
    country: str
    fatalities: int

    def to_dict(self) -> dict:
        return {
            "source": "acled",
            "event_date": self.event_date.isoformat(),
            "country": self.country,
            "fatalities": self.fatalities,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AcledEvent":
        return cls(date.fromisoformat(d["event_date"]), d["country"], int(d["fatalities"]))


@dataclass
class Article:
    url: str
    fetched_at: datetime
    title: str
    body: str
    origin_event_dates: list[date] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "url": self.url,
            "fetched_at": self.fetched_at.astimezone(timezone.utc).isoformat(),
            "title": self.title,
            "body": self.body,
            "origin_event_dates": [d.isoformat() for d in sorted(self.origin_event_dates)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Article":
        return cls(
            url=d["url"],
            fetched_at=datetime.fromisoformat(d["fetched_at"]),
            title=d.get("title", ""),
            body=d["body"],
            origin_event_dates=[date.fromisoformat(s) for s in d.get("origin_event_dates", [])],
        )


@dataclass
class CorpusManifest:
    country: str
    date_range: tuple[date, date]
    article_count: int
    event_count: int
    checksum: str

    def to_dict(self) -> dict:
        return {
            "country": self.country,
            "date_range": [self.date_range[0].isoformat(), self.date_range[1].isoformat()],
            "article_count": self.article_count,
            "event_count": self.event_count,
            "checksum": self.checksum,
        }


@dataclass
class RejectReport:
    """Tally of rows that failed to parse; keeps the first 100 line numbers."""

    count: int = 0
    lines: list[int] = field(default_factory=list)
    reasons: dict[str, int] = field(default_factory=dict)

    def add(self, line_no: int, reason: str) -> None:
        self.count += 1
        if len(self.lines) < MAX_REPORTED_LINES:
            self.lines.append(line_no)
        self.reasons[reason] = self.reasons.get(reason, 0) + 1

    def __len__(self) -> int:
        return self.count

    def summary(self) -> str:
        if not self.count:
            return "0 rejected rows"
        reasons = ", ".join(f"{k}: {v}" for k, v in sorted(self.reasons.items()))
        return f"{self.count} rejected rows ({reasons}); first lines {self.lines[:10]}"


class Parsed(NamedTuple):
    records: list
    rejects: RejectReport


class _MalformedRow(ValueError):
    pass


def _read_bytes(stream: bytes | IO[bytes]) -> bytes:
    try:
        raw = stream if isinstance(stream, (bytes, bytearray)) else stream.read()
    except (OSError, ValueError) as exc:
        raise UnreadableStream(str(exc)) from exc
    if not isinstance(raw, (bytes, bytearray)):
        raise UnreadableStream("stream did not yield bytes")
    raw = bytes(raw)
    try:
        if raw[:2] == b"\x1f\x8b":
            return gzip.decompress(raw)
        if raw[:4] == b"PK\x03\x04":
            with zipfile.ZipFile(io.BytesIO(raw)) as zf:
                names = [n for n in zf.namelist() if not n.endswith("/")]
                if not names:
                    raise UnreadableStream("empty zip archive")
                return zf.read(names[0])
    except (OSError, zipfile.BadZipFile, EOFError) as exc:
        raise UnreadableStream(str(exc)) from exc
    return raw


def _decode(raw: bytes) -> str:
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError:
        # GDELT dumps occasionally carry stray latin-1 bytes in URLs
        return raw.decode("latin-1")


def _ranged_float(text: str, lo: float, hi: float, name: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise _MalformedRow(f"bad {name}") from None
    if not (lo <= value <= hi):
        raise _MalformedRow(f"{name} out of range")
    return value


def parse_gdelt_export(stream: bytes | IO[bytes], column_map: dict[str, int] | None = None) -> Parsed:
    """Parse a headerless GDELT event TSV (plain, gzip or zip).

    Out-of-range Goldstein/tone values are rejected rather than clamped.
    Blank lines are not counted as data rows.
    """
    cmap = dict(GDELT_V2_COLUMNS)
    if column_map is not None:
        cmap.update(column_map)
    missing = [k for k in GDELT_V2_COLUMNS if cmap.get(k) is None]
    if missing:
        raise ColumnMapIncomplete(f"no column index for {', '.join(missing)}")
    text = _decode(_read_bytes(stream))

    events: list[GdeltEvent] = []
    rejects = RejectReport()
    need = max(cmap[k] for k in GDELT_V2_COLUMNS) + 1
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        cols = line.split("\t")
        try:
            if len(cols) < need:
                raise _MalformedRow("too few columns")
            try:
                event_date = datetime.strptime(cols[cmap["SQLDATE"]].strip(), "%Y%m%d").date()
            except ValueError:
                raise _MalformedRow("bad date") from None
            goldstein = _ranged_float(cols[cmap["GoldsteinScale"]], -10.0, 10.0, "goldstein")
            tone = _ranged_float(cols[cmap["AvgTone"]], -100.0, 100.0, "tone")
        except _MalformedRow as exc:
            rejects.add(line_no, str(exc))
            continue
        events.append(
            GdeltEvent(
                event_date=event_date,
                actor1_country=cols[cmap["Actor1CountryCode"]].strip() or None,
                actor2_country=cols[cmap["Actor2CountryCode"]].strip() or None,
                goldstein=goldstein,
                avg_tone=tone,
                source_url=cols[cmap["SOURCEURL"]].strip() or None,
            )
        )
    return Parsed(events, rejects)


def _parse_acled_date(text: str) -> date:
    text = text.strip()
    for fmt in ("%Y-%m-%d", "%d %B %Y", "%d-%B-%Y", "%m/%d/%Y"):
        try:
            return datetime.strptime(text, fmt).date()
        except ValueError:
            continue
    raise _MalformedRow("bad date")


def parse_acled_csv(stream: bytes | IO[bytes]) -> Parsed:
    """Parse an ACLED CSV export with at least event_date, country, fatalities columns."""
    text = _decode(_read_bytes(stream))
    if text.startswith("\ufeff"):
        text = text[1:]
    reader = csv.reader(io.StringIO(text, newline=""))
    header = next(reader, None)
    if header is None:
        raise MissingHeader("empty ACLED file")
    index = {name.strip().lower(): i for i, name in enumerate(header)}
    missing = [k for k in ("event_date", "country", "fatalities") if k not in index]
    if missing:
        raise MissingHeader(f"ACLED header lacks {', '.join(missing)}")
    i_date, i_country, i_fat = index["event_date"], index["country"], index["fatalities"]

    events: list[AcledEvent] = []
    rejects = RejectReport()
    for row in reader:
        if not row or all(not c.strip() for c in row):
            continue
        line_no = reader.line_num
        try:
            if len(row) <= max(i_date, i_country, i_fat):
                raise _MalformedRow("too few columns")
            event_date = _parse_acled_date(row[i_date])
            country = row[i_country].strip()
            if not country:
                raise _MalformedRow("empty country")
            try:
                fatalities = int(row[i_fat].strip(), 10)
            except ValueError:
                raise _MalformedRow("bad fatalities") from None
            if fatalities < 0:
                raise _MalformedRow("negative fatalities")
        except _MalformedRow as exc:
            rejects.add(line_no, str(exc))
            continue
        events.append(AcledEvent(event_date, country, fatalities))
    return Parsed(events, rejects)


# --- article extraction -----------------------------------------------------

_SKIP_TAGS = {"script", "style", "noscript", "template", "svg", "head"}
_BLOCK_TAGS = {"p", "div", "br", "li", "h1", "h2", "h3", "h4", "h5", "h6", "tr", "section", "article"}
_WS = re.compile(r"\s+")
_TAGLIKE = re.compile(r"<[^<>]{0,200}>")


class _TextExtractor(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.title_parts: list[str] = []
        self.paragraphs: list[str] = []
        self.blocks: list[str] = []
        self._skip = 0
        self._in_title = False
        self._in_p = 0
        self._p_buf: list[str] = []
        self._buf: list[str] = []

    def handle_starttag(self, tag, attrs):
        if tag in _SKIP_TAGS:
            self._skip += 1
        elif tag == "title":
            self._in_title = True
        if tag in _BLOCK_TAGS:
            self._flush_block()
        if tag == "p":
            self._in_p += 1

    def handle_endtag(self, tag):
        if tag in _SKIP_TAGS and self._skip:
            self._skip -= 1
        elif tag == "title":
            self._in_title = False
        if tag == "p" and self._in_p:
            self._in_p -= 1
            if not self._in_p:
                text = _WS.sub(" ", "".join(self._p_buf)).strip()
                if text:
                    self.paragraphs.append(text)
                self._p_buf = []
        if tag in _BLOCK_TAGS:
            self._flush_block()

    def handle_data(self, data):
        if self._in_title:
            self.title_parts.append(data)
            return
        if self._skip:
            return
        self._buf.append(data)
        if self._in_p:
            self._p_buf.append(data)

    def _flush_block(self):
        text = _WS.sub(" ", "".join(self._buf)).strip()
        if text:
            self.blocks.append(text)
        self._buf = []

    def close(self):
        super().close()
        self._flush_block()


def extract_text(html: str) -> tuple[str, str]:
    """Return (title, body) from an HTML document; paragraphs win over loose text."""
    parser = _TextExtractor()
    parser.feed(html)
    parser.close()
    parts = parser.paragraphs or parser.blocks
    body = "\n".join(_TAGLIKE.sub(" ", p).strip() for p in parts)
    body = re.sub(r"[ \t]+", " ", body).strip()
    title = _WS.sub(" ", "".join(parser.title_parts)).strip()
    return title, body


@dataclass
class ExtractionConfig:
    max_chars: int = 20_000
    min_chars: int = 200
    timeout_s: float = 20.0
    user_agent: str = "conflictcast/0.1 (+research harness)"


def fetch_article(url: str, http_client, extraction_config: ExtractionConfig | None = None) -> Article:
    """Fetch ``url`` with a requests-compatible client and extract its visible text."""
    cfg = extraction_config or ExtractionConfig()
    scheme = urlparse(url).scheme
    if scheme not in ("http", "https"):
        raise FetchFailed(url, f"unsupported scheme {scheme!r}")
    try:
        resp = http_client.get(url, timeout=cfg.timeout_s, headers={"User-Agent": cfg.user_agent})
    except Exception as exc:  # transport errors vary by client
        raise FetchFailed(url, type(exc).__name__) from exc
    if resp.status_code != 200:
        raise FetchFailed(url, resp.status_code)
    title, body = extract_text(resp.text)
    if len(body) < cfg.min_chars:
        raise EmptyBody(f"{url}: {len(body)} chars extracted, need {cfg.min_chars}")
    return Article(
        url=url,
        fetched_at=datetime.now(timezone.utc),
        title=title,
        body=body[: cfg.max_chars],
    )


class _HostThrottle:
    """Per-host minimum spacing between request starts."""

    def __init__(self, delay_s: float, clock=time.monotonic, sleep=time.sleep):
        self.delay_s = delay_s
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next: dict[str, float] = {}

    def wait(self, host: str) -> None:
        with self._lock:
            now = self._clock()
            start = max(now, self._next.get(host, now))
            self._next[host] = start + self.delay_s
        if start > now:
            self._sleep(start - now)


def fetch_articles(
    url_dates: dict[str, list[date]],
    http_client,
    extraction_config: ExtractionConfig | None = None,
    concurrency: int = 8,
    politeness_ms: int = 500,
) -> tuple[list[Article], dict[str, str]]:
    """Fetch many URLs with bounded parallelism.

    Returns articles sorted by URL plus a ``url -> error`` map of failures.
    """
    throttle = _HostThrottle(politeness_ms / 1000.0)

    def one(url: str):
        throttle.wait(urlparse(url).netloc)
        try:
            art = fetch_article(url, http_client, extraction_config)
        except (FetchFailed, EmptyBody) as exc:
            return url, None, str(exc)
        art.origin_event_dates = sorted(set(url_dates[url]))
        return url, art, None

    articles, failures = [], {}
    urls = sorted(url_dates)
    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        for url, art, err in pool.map(one, urls):
            if art is None:
                failures[url] = err
            else:
                articles.append(art)
    return articles, failures


class _LocalResponse:
    def __init__(self, status_code: int, text: str):
        self.status_code = status_code
        self.text = text


class LocalPageClient:
    """Serves pre-downloaded pages from a directory indexed by ``pages.json`` (url -> file)."""

    def __init__(self, pages_dir: str | Path):
        self.pages_dir = Path(pages_dir)
        index_path = self.pages_dir / "pages.json"
        self.index = json.loads(index_path.read_text(encoding="utf-8")) if index_path.exists() else {}

    def get(self, url: str, timeout=None, headers=None) -> _LocalResponse:
        name = self.index.get(url)
        if name is None:
            return _LocalResponse(404, "")
        return _LocalResponse(200, (self.pages_dir / name).read_text(encoding="utf-8"))


# --- filtering ----------------------------------------------------------------

def country_code(country: str, overrides: dict[str, str] | None = None) -> str | None:
    """Map a country name (or an alpha-3 code) to its alpha-3 code."""
    table = {**COUNTRY_CODES, **(overrides or {})}
    key = country.strip()
    for name, code in table.items():
        if name.casefold() == key.casefold():
            return code
    if len(key) == 3 and key.isalpha():
        return key.upper()
    return None


def country_name(country: str, overrides: dict[str, str] | None = None) -> str:
    table = {**COUNTRY_CODES, **(overrides or {})}
    key = country.strip()
    for name, code in table.items():
        if code == key.upper():
            return name
    return key


def filter_events(events: Sequence, country: str, date_window: tuple[date, date],
                  overrides: dict[str, str] | None = None) -> list:
    """Keep events in the closed date window that involve ``country``.

    GDELT events match on either actor's alpha-3 code; ACLED events on the
    case-folded country name.
    """
    start, end = date_window
    if start > end:
        raise ValueError("date window start after end")
    code = country_code(country, overrides)
    name = country_name(country, overrides).casefold()
    out = []
    for ev in events:
        if not (start <= ev.event_date <= end):
            continue
        if isinstance(ev, GdeltEvent):
            if code is not None and code in (ev.actor1_country, ev.actor2_country):
                out.append(ev)
        elif ev.country.strip().casefold() == name:
            out.append(ev)
    return out


# --- corpus persistence -------------------------------------------------------

def write_jsonl(path: str | Path, rows: Iterable[dict]) -> None:
    """Atomically replace ``path`` with one JSON object per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
    tmp.replace(path)


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def serialize_events(events: Iterable) -> list[dict]:
    return [ev.to_dict() for ev in events]


def deserialize_events(rows: Iterable[dict]) -> list:
    out = []
    for row in rows:
        kind = row.get("source")
        if kind == "gdelt":
            out.append(GdeltEvent.from_dict(row))
        elif kind == "acled":
            out.append(AcledEvent.from_dict(row))
        else:
            raise ValueError(f"unknown event source {kind!r}")
    return out


def corpus_checksum(events: Iterable, articles: Iterable[Article]) -> str:
    """SHA-256 over the canonical corpus content. Fetch timestamps are excluded."""
    h = hashlib.sha256()
    for ev in events:
        h.update(json.dumps(ev.to_dict(), sort_keys=True).encode())
        h.update(b"\n")
    h.update(b"--articles--\n")
    for art in sorted(articles, key=lambda a: a.url):
        d = art.to_dict()
        d.pop("fetched_at")
        h.update(json.dumps(d, sort_keys=True, ensure_ascii=False).encode())
        h.update(b"\n")
    return h.hexdigest()


def write_corpus(corpus_dir: str | Path, events: Sequence, articles: Sequence[Article],
                 country: str, date_range: tuple[date, date]) -> CorpusManifest:
    corpus_dir = Path(corpus_dir)
    articles = sorted(articles, key=lambda a: a.url)
    write_jsonl(corpus_dir / "events.jsonl", serialize_events(events))
    write_jsonl(corpus_dir / "articles.jsonl", (a.to_dict() for a in articles))
    manifest = CorpusManifest(
        country=country,
        date_range=date_range,
        article_count=len(articles),
        event_count=len(events),
        checksum=corpus_checksum(events, articles),
    )
    tmp = corpus_dir / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(corpus_dir / "manifest.json")
    return manifest


def read_corpus(corpus_dir: str | Path) -> tuple[list, list[Article]]:
    corpus_dir = Path(corpus_dir)
    events = deserialize_events(read_jsonl(corpus_dir / "events.jsonl"))
    articles_path = corpus_dir / "articles.jsonl"
    articles = [Article.from_dict(r) for r in read_jsonl(articles_path)] if articles_path.exists() else []
    return events, articles
