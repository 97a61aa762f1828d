"""Forecast tasks, prompt construction and reply parsing."""

from __future__ import annotations

import enum
import math
import re
import string
from dataclasses import dataclass, field
from datetime import date, timedelta
from importlib import resources
from pathlib import Path
from typing import Sequence

from .errors import AmbiguousLabel, MissingFatalities, MissingLabel, NotEmbeddable, TemplateMissingPlaceholder
from .ingestion import Article, GdeltEvent, filter_events
from .labeling import Granularity, TrendLabel, add_months, aggregate_fatalities, month_start, months_between
from .retrieval import QUERY_TEMPLATE, Chunk, Summary, VectorIndex, embed, search, summarize

MONTH_NAMES = ("January", "February", "March", "April", "May", "June", "July",
               "August", "September", "October", "November", "December")
LABEL_SET = ", ".join(label.value for label in TrendLabel.ordered())
REPLY_FORMAT = (
    "Reply using exactly these two lines:\n"
    f"TREND: <one of: {LABEL_SET}>\n"
    "FATALITIES: <number or low-high>"
)
SYSTEM_TEXT = "You are an analyst producing monthly armed-conflict forecasts for early-warning purposes."

PARAMETRIC_PLACEHOLDERS = ("country", "target_month", "label_set")
RAG_PLACEHOLDERS = PARAMETRIC_PLACEHOLDERS + ("summary", "avg_tone", "avg_goldstein", "weekly_fatalities")


class Experiment(str, enum.Enum):
    PARAMETRIC = "parametric"
    RAG = "rag"

    @property
    def display(self) -> str:
        return "Exp 1" if self is Experiment.PARAMETRIC else "Exp 2"


@dataclass(frozen=True)
class ForecastTask:
    country: str
    target_month: date
    experiment: Experiment

    def __post_init__(self):
        object.__setattr__(self, "target_month", month_start(self.target_month))
        object.__setattr__(self, "experiment", Experiment(self.experiment))

    @property
    def as_of(self) -> date:
        return self.target_month - timedelta(days=1)

    @property
    def context_start(self) -> date:
        return add_months(self.target_month, -3)

    @property
    def month_key(self) -> str:
        return self.target_month.strftime("%Y-%m")

    def key(self) -> tuple[str, str, str]:
        return (self.experiment.value, self.country, self.month_key)

    def to_dict(self) -> dict:
        return {"country": self.country, "target_month": self.month_key, "experiment": self.experiment.value,
                "as_of": self.as_of.isoformat()}

    @classmethod
    def from_dict(cls, d: dict) -> "ForecastTask":
        return cls(d["country"], date.fromisoformat(d["target_month"] + "-01"), Experiment(d["experiment"]))


def build_task_grid(countries: Sequence[str], first_month: date, last_month: date,
                    experiments: Sequence[Experiment]) -> list[ForecastTask]:
    """Every month in range that has at least one prior month in range, per country and experiment."""
    months = months_between(first_month, last_month)[1:]
    return [ForecastTask(c, m, e) for e in experiments for c in countries for m in months]


def display_month(d: date) -> str:
    return f"{MONTH_NAMES[d.month - 1]} {d.year}"


@dataclass
class RagContext:
    summary: Summary
    avg_tone: float
    avg_goldstein: float
    weekly_fatalities: list[int]
    weeks: list[date] = field(default_factory=list)
    empty_context: bool = False

    def __post_init__(self):
        if len(self.weekly_fatalities) != 12:
            raise ValueError("weekly_fatalities must have 12 entries")
        if not -100.0 <= self.avg_tone <= 100.0 or not -10.0 <= self.avg_goldstein <= 10.0:
            raise ValueError("tone/goldstein average out of range")

    def to_dict(self) -> dict:
        return {
            "summary": self.summary.to_dict(),
            "avg_tone": self.avg_tone,
            "avg_goldstein": self.avg_goldstein,
            "weekly_fatalities": self.weekly_fatalities,
            "weeks": [w.isoformat() for w in self.weeks],
            "empty_context": self.empty_context,
        }


@dataclass
class ForecastOutput:
    label: TrendLabel
    fatalities_point: float
    fatalities_range: tuple[float, float] | None = None
    raw_text: str = ""

    def to_dict(self) -> dict:
        return {
            "label": self.label.value,
            "fatalities_point": self.fatalities_point,
            "fatalities_range": list(self.fatalities_range) if self.fatalities_range else None,
        }


@dataclass
class RetrievalStore:
    """A country's chunk index plus the chunk texts and article metadata it was built from."""

    index: VectorIndex
    chunks: dict[str, Chunk]
    articles: dict[str, Article]


def twelve_week_window(as_of: date) -> tuple[date, date]:
    """Monday..Sunday span of the 12 complete ISO weeks ending on or before ``as_of``."""
    last_sunday = as_of - timedelta(days=(as_of.weekday() + 1) % 7)
    return last_sunday - timedelta(days=83), last_sunday


def _mean(values: list[float]) -> float:
    return math.fsum(values) / len(values) if values else 0.0


def build_rag_context(task: ForecastTask, gdelt_events: Sequence[GdeltEvent], store: RetrievalStore,
                      embedder, acled_events: Sequence, llm_client=None, k: int = 12,
                      char_budget: int = 1500, country_codes: dict[str, str] | None = None) -> RagContext:
    """Retrieve, summarize and compute indicators from the three months before the target.

    Tasks with neither events nor articles in the window come back with
    ``empty_context=True`` instead of raising.
    """
    window = (task.context_start, task.as_of)
    window_events = filter_events(gdelt_events, task.country, window, country_codes)
    cited = {ev.source_url for ev in window_events if ev.source_url}
    eligible_docs = {
        url for url in cited
        if url in store.articles
        and store.articles[url].origin_event_dates
        and max(store.articles[url].origin_event_dates) <= task.as_of
    }
    sub = store.index.subset(cid for cid, ch in store.chunks.items() if ch.doc_url in eligible_docs)

    first = task.context_start
    last = add_months(task.target_month, -1)
    month_range = f"{display_month(first)} - {display_month(last)}"
    retrieved: list[Chunk] = []
    if len(sub):
        try:
            q = embed(QUERY_TEMPLATE.format(country=task.country, month_range=month_range), embedder)
            retrieved = [store.chunks[cid] for cid, _ in search(sub, q, k)]
        except NotEmbeddable:
            retrieved = []
    summary = summarize(retrieved, llm_client, char_budget, country=task.country)

    retrieved_docs = {c.doc_url for c in retrieved}
    matched = [ev for ev in window_events if ev.source_url in retrieved_docs]
    basis = matched or window_events
    avg_tone = _mean([ev.avg_tone for ev in basis])
    avg_goldstein = _mean([ev.goldstein for ev in basis])

    w_start, w_end = twelve_week_window(task.as_of)
    weekly = aggregate_fatalities(acled_events, task.country, Granularity.WEEKLY, (w_start, w_end))
    return RagContext(
        summary=summary,
        avg_tone=avg_tone,
        avg_goldstein=avg_goldstein,
        weekly_fatalities=weekly.sums,
        weeks=weekly.periods,
        empty_context=not window_events and not eligible_docs,
    )


# --- prompt rendering ------------------------------------------------------------

def load_template(name_or_path: str | Path) -> str:
    """Load a bundled template by name (``parametric``/``rag``) or any file path."""
    path = Path(name_or_path)
    if path.suffix == ".txt" and path.exists():
        return path.read_text(encoding="utf-8")
    return resources.files("conflictcast").joinpath(f"data/templates/{name_or_path}.txt").read_text(encoding="utf-8")


def _check_placeholders(template: str, required: Sequence[str]) -> None:
    present = {fname for _, fname, _, _ in string.Formatter().parse(template) if fname}
    missing = [p for p in required if p not in present]
    if missing:
        raise TemplateMissingPlaceholder(f"template lacks {', '.join('{' + m + '}' for m in missing)}")


def _fill(template: str, values: dict) -> str:
    text = template.format_map(values)
    if "{reply_format}" not in template:
        text = text.rstrip("\n") + "\n\n" + REPLY_FORMAT + "\n"
    return text


def _fmt2(x: float) -> str:
    return f"{x + 0.0:.2f}"


def render_prompt_parametric(task: ForecastTask, template: str) -> str:
    _check_placeholders(template, PARAMETRIC_PLACEHOLDERS)
    return _fill(template, {
        "country": task.country,
        "target_month": display_month(task.target_month),
        "label_set": LABEL_SET,
        "reply_format": REPLY_FORMAT,
    })


def render_prompt_rag(task: ForecastTask, context: RagContext, template: str) -> str:
    _check_placeholders(template, RAG_PLACEHOLDERS)
    return _fill(template, {
        "country": task.country,
        "target_month": display_month(task.target_month),
        "label_set": LABEL_SET,
        "reply_format": REPLY_FORMAT,
        "summary": context.summary.text or "(no relevant news excerpts were retrieved)",
        "avg_tone": _fmt2(context.avg_tone),
        "avg_goldstein": _fmt2(context.avg_goldstein),
        "weekly_fatalities": ", ".join(str(v) for v in context.weekly_fatalities),
    })


# --- reply parsing -----------------------------------------------------------------

_LABEL_RE = re.compile(
    r"\b(?P<de>de[-\s]?escalat\w*)"
    r"|\b(?P<esc>escalat\w*)"
    r"|\b(?P<peace>peace\w*|no[-\s]+conflict)"
    r"|\b(?P<stable>stable)\b",
    re.IGNORECASE,
)
_LABEL_GROUPS = {
    "de": TrendLabel.DEESCALATE,
    "esc": TrendLabel.ESCALATE,
    "peace": TrendLabel.PEACE,
    "stable": TrendLabel.STABLE,
}
_TREND_MARKER = re.compile(r"\bTREND\s*[:：]\s*(?P<rest>[^\n]*)", re.IGNORECASE)
_FAT_MARKER = re.compile(r"\bFATALIT(?:IES|Y)\s*[:：]\s*(?P<rest>[^\n]*)", re.IGNORECASE)
_NUM = r"(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?"
_RANGE = re.compile(rf"(?P<a>{_NUM})\s*(?:-|\u2013|\u2014|to)\s*(?P<b>{_NUM})(?![\d,])", re.IGNORECASE)
_BETWEEN = re.compile(rf"between\s+(?P<a>{_NUM})\s+and\s+(?P<b>{_NUM})(?![\d,])", re.IGNORECASE)
_SINGLE = re.compile(rf"(?P<a>{_NUM})(?![\d,])")
_DATE_LIKE = re.compile(
    r"\b\d{4}-\d{2}(?:-\d{2})?\b|\b(?:" + "|".join(MONTH_NAMES) + r")\s+\d{4}\b",
    re.IGNORECASE,
)


def _first_label(text: str) -> TrendLabel | None:
    m = _LABEL_RE.search(text)
    if m is None:
        return None
    return _LABEL_GROUPS[m.lastgroup]


def _to_float(s: str) -> float:
    return float(s.replace(",", ""))


def _first_quantity(text: str) -> tuple[float, tuple[float, float] | None] | None:
    """Earliest range or number in ``text``; a range starting where a number does wins."""
    candidates = [m for m in (_BETWEEN.search(text), _RANGE.search(text)) if m is not None]
    single = _SINGLE.search(text)
    best = min(candidates, key=lambda m: m.start("a"), default=None)
    if best is not None and (single is None or best.start("a") <= single.start()):
        a, b = _to_float(best.group("a")), _to_float(best.group("b"))
        lo, hi = min(a, b), max(a, b)
        return (lo + hi) / 2, (lo, hi)
    if single is not None:
        return _to_float(single.group("a")), None
    return None


def parse_forecast(reply_text: str) -> ForecastOutput:
    """Extract (label, fatalities) from a model reply.

    Looks after ``TREND:``/``FATALITIES:`` markers first and falls back to the
    first label keyword / number anywhere in the text. Dates are never read
    as fatality counts in the fallback scan.
    """
    text = reply_text.replace("*", "").replace("`", "")

    marked = []
    for m in _TREND_MARKER.finditer(text):
        lab = _first_label(m.group("rest"))
        if lab is not None:
            marked.append(lab)
    if len(set(marked)) > 1:
        raise AmbiguousLabel(f"conflicting TREND markers: {sorted(l.value for l in set(marked))}")
    label = marked[0] if marked else _first_label(text)
    if label is None:
        raise MissingLabel("no recognizable trend label in reply")

    quantity = None
    for m in _FAT_MARKER.finditer(text):
        quantity = _first_quantity(m.group("rest"))
        if quantity is not None:
            break
    if quantity is None:
        masked = _DATE_LIKE.sub(lambda mm: " " * len(mm.group(0)), text)
        quantity = _first_quantity(masked)
    if quantity is None:
        raise MissingFatalities("no fatality number or range in reply")
    point, rng = quantity
    return ForecastOutput(label, point, rng, reply_text)


def _fmt_num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def render_reply(output: ForecastOutput) -> str:
    """Canonical two-line reply; ``parse_forecast`` inverts it."""
    if output.fatalities_range is not None:
        lo, hi = output.fatalities_range
        fat = f"{_fmt_num(lo)}-{_fmt_num(hi)}"
    else:
        fat = _fmt_num(output.fatalities_point)
    return f"TREND: {output.label.value}\nFATALITIES: {fat}"


# --- temporal hygiene ----------------------------------------------------------------

_ISO_DATE = re.compile(r"\b(\d{4})-(\d{2})-(\d{2})\b")
_MIN_SENTENCE = 30


def audit_prompt(prompt: str, task: ForecastTask, articles: Sequence[Article]) -> list[str]:
    """Return leakage findings: ISO dates at/after the target month, or verbatim
    sentences from articles cited on/after it."""
    findings = []
    cutoff = task.target_month
    for m in _ISO_DATE.finditer(prompt):
        try:
            d = date(int(m.group(1)), int(m.group(2)), int(m.group(3)))
        except ValueError:
            continue
        if d >= cutoff:
            findings.append(f"date {d.isoformat()} >= {cutoff.isoformat()}")
    for art in articles:
        if not art.origin_event_dates or max(art.origin_event_dates) < cutoff:
            continue
        for sentence in re.split(r"(?<=[.!?])\s+|\n+", art.body):
            sentence = sentence.strip()
            if len(sentence) >= _MIN_SENTENCE and sentence in prompt:
                findings.append(f"text from {art.url} (cited {max(art.origin_event_dates)})")
                break
    return findings
