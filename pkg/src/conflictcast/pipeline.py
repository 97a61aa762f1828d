"""Pipeline stages behind the CLI subcommands.

Everything a stage writes lives under ``runs/{run_id}/``:

    corpus/{events,articles}.jsonl, corpus/manifest.json
    index/{country}.index.jsonl, index/{country}.chunks.jsonl
    labels.jsonl, bins.json
    predictions.jsonl, {country}/{month}/{experiment}/{prompt,reply}.txt
    metrics.json, report.md, report.csv, figures/
    manifest.json
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path

from . import __version__
from .config import RunConfig
from .errors import (
    AuthMissing,
    ConflictCastError,
    NoScorableRecords,
    NoScriptMatch,
    ParseError,
    ProviderExhausted,
    ReplayMiss,
)
from .evaluation import MetricsReport, PredictionRecord, evaluate_all, render_report
from .forecasting import (
    SYSTEM_TEXT,
    Experiment,
    ForecastTask,
    RetrievalStore,
    build_rag_context,
    build_task_grid,
    load_template,
    parse_forecast,
    render_prompt_parametric,
    render_prompt_rag,
)
from .ingestion import (
    AcledEvent,
    Article,
    ExtractionConfig,
    GdeltEvent,
    LocalPageClient,
    fetch_articles,
    filter_events,
    parse_acled_csv,
    parse_gdelt_export,
    read_corpus,
    read_jsonl,
    write_corpus,
    write_jsonl,
)
from .labeling import (
    Granularity,
    QuantileBins,
    TrendLabel,
    add_months,
    aggregate_fatalities,
    assign_bin,
    compute_quantile_bins,
    month_end,
    trend_label,
)
from .llm import ChatClient, ChatRequest, HttpBackend, MockBackend, MockScript, RateLimiter, ReplayCache
from .retrieval import Chunk, HashingEmbedder, RemoteEmbedder, VectorIndex, chunk_articles, embed

logger = logging.getLogger(__name__)

PROVIDER_ERRORS = (ProviderExhausted, AuthMissing, ReplayMiss, NoScriptMatch)


class InputMissing(ConflictCastError):
    """A required input file or earlier-stage output does not exist."""


@dataclass
class StageResult:
    messages: list[str] = field(default_factory=list)
    partial: bool = False

    def say(self, msg: str) -> None:
        logger.info(msg)
        self.messages.append(msg)


def slug(country: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", country.lower()).strip("-")


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    tmp.replace(path)


class RunManifest:
    """``runs/{run_id}/manifest.json``: config snapshot, version, stage timings, input checksums."""

    def __init__(self, cfg: RunConfig):
        self.path = cfg.run_dir / "manifest.json"
        self.data = json.loads(self.path.read_text(encoding="utf-8")) if self.path.exists() else {}
        self.data.update({"run_id": cfg.run_id, "tool_version": __version__, "config": cfg.snapshot()})
        self.data.setdefault("stages", {})
        self.data.setdefault("input_checksums", {})

    def start(self, stage: str) -> float:
        self.data["stages"][stage] = {"started_at": _now(), "status": "running"}
        _write_json(self.path, self.data)
        return time.perf_counter()

    def finish(self, stage: str, t0: float, status: str = "ok") -> None:
        entry = self.data["stages"].setdefault(stage, {})
        entry.update({"finished_at": _now(), "seconds": round(time.perf_counter() - t0, 3), "status": status})
        _write_json(self.path, self.data)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _staged(name: str):
    def wrap(fn):
        def inner(cfg: RunConfig, *args, **kwargs) -> StageResult:
            manifest = RunManifest(cfg)
            t0 = manifest.start(name)
            try:
                result = fn(cfg, manifest, *args, **kwargs)
            except Exception:
                manifest.finish(name, t0, "failed")
                raise
            manifest.finish(name, t0, "partial" if result.partial else "ok")
            return result

        inner.__name__ = fn.__name__
        inner.__doc__ = fn.__doc__
        return inner

    return wrap


# --- ingest / fetch -------------------------------------------------------------------

def _corpus_dir(cfg: RunConfig) -> Path:
    return cfg.run_dir / "corpus"


def _gdelt_paths(cfg: RunConfig) -> list[Path]:
    paths: set[Path] = set()
    for pattern in cfg.inputs.gdelt:
        p = cfg.data_dir / pattern
        if any(ch in pattern for ch in "*?["):
            paths.update(x for x in cfg.data_dir.glob(pattern) if x.is_file())
        elif p.is_file():
            paths.add(p)
    return sorted(paths)


def _url_dates(gdelt_events) -> dict[str, list[date]]:
    out: dict[str, list[date]] = {}
    for ev in gdelt_events:
        if ev.source_url:
            out.setdefault(ev.source_url, []).append(ev.event_date)
    return out


def _page_client(cfg: RunConfig):
    if cfg.inputs.pages_dir:
        return LocalPageClient(cfg.data_dir / cfg.inputs.pages_dir)
    import requests

    return requests.Session()


def _extraction(cfg: RunConfig) -> ExtractionConfig:
    return ExtractionConfig(max_chars=cfg.fetch.max_chars, min_chars=cfg.fetch.min_chars,
                            timeout_s=cfg.fetch.timeout_s)


def _fetch_into(cfg: RunConfig, gdelt_events, existing: list[Article], result: StageResult) -> list[Article]:
    url_dates = _url_dates(gdelt_events)
    have = {a.url: a for a in existing if a.url in url_dates}
    todo = {u: d for u, d in url_dates.items() if u not in have}
    fetched, failures = fetch_articles(todo, _page_client(cfg), _extraction(cfg),
                                       cfg.fetch.concurrency, cfg.fetch.politeness_ms)
    for url, err in sorted(failures.items()):
        result.say(f"article skipped: {err}")
    for art in have.values():
        art.origin_event_dates = sorted(set(url_dates[art.url]))
    result.say(f"articles: {len(have)} already in corpus, {len(fetched)} fetched, {len(failures)} failed")
    return sorted([*have.values(), *fetched], key=lambda a: a.url)


@_staged("ingest")
def ingest(cfg: RunConfig, manifest: RunManifest, fetch: bool = False) -> StageResult:
    """Parse raw exports, filter to the configured countries and dates, write the corpus."""
    result = StageResult()
    acled_path = cfg.data_dir / cfg.inputs.acled
    if not acled_path.is_file():
        raise InputMissing(f"ACLED export not found: {acled_path}")
    gdelt_paths = _gdelt_paths(cfg)
    if not gdelt_paths:
        raise InputMissing(f"no GDELT exports match {cfg.inputs.gdelt} under {cfg.data_dir}")

    gdelt_start = add_months(cfg.first_month, -3)
    acled_start = add_months(cfg.first_month, -max(cfg.inputs.history_months, cfg.labeling.window_months))
    end = month_end(cfg.last_month)

    gdelt: list[GdeltEvent] = []
    for path in gdelt_paths:
        with open(path, "rb") as fh:
            events, rejects = parse_gdelt_export(fh, cfg.inputs.gdelt_columns or None)
        result.say(f"{path.name}: {len(events)} GDELT events, {rejects.summary()}")
        manifest.data["input_checksums"][str(path.name)] = _sha256_file(path)
        gdelt.extend(events)
    with open(acled_path, "rb") as fh:
        acled, rejects = parse_acled_csv(fh)
    result.say(f"{acled_path.name}: {len(acled)} ACLED events, {rejects.summary()}")
    manifest.data["input_checksums"][acled_path.name] = _sha256_file(acled_path)

    kept_gdelt, kept_acled = [], []
    for country in cfg.countries:
        kept_gdelt.extend(filter_events(gdelt, country, (gdelt_start, end), cfg.country_codes))
        kept_acled.extend(filter_events(acled, country, (acled_start, end), cfg.country_codes))
    # an event involving two configured countries is kept once
    kept_gdelt = list(dict.fromkeys(kept_gdelt))
    kept_gdelt.sort(key=lambda e: (e.event_date, e.source_url or "", e.avg_tone, e.goldstein))
    kept_acled.sort(key=lambda e: (e.event_date, e.country, e.fatalities))

    corpus_dir = _corpus_dir(cfg)
    existing: list[Article] = []
    if (corpus_dir / "articles.jsonl").exists():
        existing = [Article.from_dict(r) for r in read_jsonl(corpus_dir / "articles.jsonl")]
    if fetch or cfg.inputs.pages_dir:
        articles = _fetch_into(cfg, kept_gdelt, existing, result)
    else:
        urls = _url_dates(kept_gdelt)
        articles = [a for a in existing if a.url in urls]
    cm = write_corpus(corpus_dir, [*kept_gdelt, *kept_acled], articles, ",".join(cfg.countries),
                      (gdelt_start if gdelt_start < acled_start else acled_start, end))
    result.say(f"corpus: {cm.event_count} events, {cm.article_count} articles, checksum {cm.checksum[:16]}")
    manifest.data["corpus_checksum"] = cm.checksum
    return result


def _load_corpus(cfg: RunConfig) -> tuple[list[GdeltEvent], list[AcledEvent], list[Article]]:
    corpus_dir = _corpus_dir(cfg)
    if not (corpus_dir / "events.jsonl").exists():
        raise InputMissing(f"corpus not found in {corpus_dir}; run `ingest` first")
    events, articles = read_corpus(corpus_dir)
    gdelt = [e for e in events if isinstance(e, GdeltEvent)]
    acled = [e for e in events if isinstance(e, AcledEvent)]
    return gdelt, acled, articles


@_staged("fetch-articles")
def fetch_stage(cfg: RunConfig, manifest: RunManifest) -> StageResult:
    """Scrape article bodies for every URL cited by corpus events not yet fetched."""
    result = StageResult()
    gdelt, acled, existing = _load_corpus(cfg)
    articles = _fetch_into(cfg, gdelt, existing, result)
    old = json.loads((_corpus_dir(cfg) / "manifest.json").read_text(encoding="utf-8"))
    start, end = (date.fromisoformat(s) for s in old["date_range"])
    cm = write_corpus(_corpus_dir(cfg), [*gdelt, *acled], articles, old["country"], (start, end))
    manifest.data["corpus_checksum"] = cm.checksum
    return result


# --- index --------------------------------------------------------------------------

def make_embedder(cfg: RunConfig):
    r = cfg.retrieval
    if r.embedder == "remote":
        return RemoteEmbedder(r.embed_endpoint, r.embed_model, r.dims, r.embed_token_env_var)
    return HashingEmbedder(r.dims)


def _index_paths(cfg: RunConfig, country: str) -> tuple[Path, Path]:
    base = cfg.run_dir / "index"
    return base / f"{slug(country)}.index.jsonl", base / f"{slug(country)}.chunks.jsonl"


@_staged("build-index")
def build_index(cfg: RunConfig, manifest: RunManifest) -> StageResult:
    """One flat index per country over chunks of the articles its events cite."""
    result = StageResult()
    gdelt, _, articles = _load_corpus(cfg)
    embedder = make_embedder(cfg)
    by_url = {a.url: a for a in articles}
    for country in cfg.countries:
        events = filter_events(gdelt, country, (date.min, date.max), cfg.country_codes)
        urls = sorted({e.source_url for e in events if e.source_url in by_url})
        chunks = chunk_articles([by_url[u] for u in urls], cfg.retrieval.chunk_chars, cfg.retrieval.overlap_chars)
        index = VectorIndex(cfg.retrieval.dims)
        kept = []
        for ch in chunks:
            try:
                index.add(ch.id, embed(ch.text, embedder))
            except ConflictCastError as exc:
                result.say(f"chunk {ch.id} not indexed: {exc}")
                continue
            kept.append(ch)
        index_path, chunks_path = _index_paths(cfg, country)
        index.save(index_path)
        write_jsonl(chunks_path, (c.to_dict() for c in kept))
        result.say(f"{country}: {len(urls)} articles, {len(index)} chunks indexed")
    return result


def load_store(cfg: RunConfig, country: str, articles: dict[str, Article]) -> RetrievalStore:
    index_path, chunks_path = _index_paths(cfg, country)
    if not index_path.exists():
        raise InputMissing(f"index for {country} not found at {index_path}; run `build-index` first")
    index = VectorIndex.load(index_path)
    chunks = {c.id: c for c in (Chunk.from_dict(r) for r in read_jsonl(chunks_path))}
    return RetrievalStore(index, chunks, articles)


# --- labels ---------------------------------------------------------------------------

@_staged("make-labels")
def make_labels(cfg: RunConfig, manifest: RunManifest) -> StageResult:
    """Ground-truth labels per (country, target month) and per-country quantile bins."""
    result = StageResult()
    _, acled, _ = _load_corpus(cfg)
    lcfg = cfg.labeling.labeling_config()
    w = lcfg.window_months
    first_target = add_months(cfg.first_month, 1)
    hist_start = add_months(first_target, -max(cfg.inputs.history_months, 1))
    rows, bins_out = [], {}
    targets = build_task_grid(["_"], cfg.first_month, cfg.last_month, [Experiment.PARAMETRIC])
    for country in cfg.countries:
        series_start = min(hist_start, add_months(first_target, -w))
        monthly = aggregate_fatalities(acled, country, Granularity.MONTHLY, (series_start, month_end(cfg.last_month)))
        by_month = dict(monthly.buckets)
        history = [by_month[m] for m in by_month if hist_start <= m < first_target]
        bins = compute_quantile_bins(history or [0], cfg.labeling.bins_k)
        if bins.collapsed:
            result.say(f"{country}: {bins.collapsed} duplicate quantile edges collapsed ({bins.k} effective bins)")
        bins_out[country] = bins.to_dict()
        for t in targets:
            m = t.target_month
            window = [by_month[add_months(m, -i)] for i in range(w, -1, -1)]
            truth = window[-1]
            rows.append({
                "country": country,
                "target_month": t.month_key,
                "truth_label": trend_label(window, lcfg).value,
                "truth_fatalities": truth,
                "bin_index": assign_bin(truth, bins),
                "trailing": window[:-1],
            })
        result.say(f"{country}: {len(targets)} labelled target months, bins {list(bins.edges)}")
    write_jsonl(cfg.run_dir / "labels.jsonl", rows)
    _write_json(cfg.run_dir / "bins.json", bins_out)
    return result


def _load_labels(cfg: RunConfig) -> tuple[dict[tuple[str, str], dict], dict[str, QuantileBins]]:
    path = cfg.run_dir / "labels.jsonl"
    if not path.exists():
        raise InputMissing(f"labels not found at {path}; run `make-labels` first")
    labels = {(r["country"], r["target_month"]): r for r in read_jsonl(path)}
    bins = {c: QuantileBins.from_dict(d)
            for c, d in json.loads((cfg.run_dir / "bins.json").read_text(encoding="utf-8")).items()}
    return labels, bins


# --- run --------------------------------------------------------------------------------

def make_client(cfg: RunConfig, transport=None) -> ChatClient:
    p = cfg.provider
    if p.kind == "mock":
        if p.mock_script:
            script = MockScript.load(cfg.resolve(p.mock_script), seed=cfg.seed)
        else:
            script = MockScript(default={}, seed=cfg.seed)
        backend = MockBackend(script)
    else:
        pc = p.provider_config()
        backend = HttpBackend(pc, transport=transport, rate_limiter=RateLimiter(pc.requests_per_minute))
    cache = ReplayCache(cfg.resolve(cfg.cache.dir)) if cfg.cache.mode.value != "off" else None
    return ChatClient(backend, cache, cfg.cache.mode)


def _record_key(d: dict) -> tuple:
    t = d["task"]
    return (d.get("model_id", ""), t["experiment"], t["country"], t["target_month"])


def _is_provider_failure(d: dict) -> bool:
    return bool(d.get("error")) and str(d["error"]).startswith("provider:")


@_staged("run")
def run(cfg: RunConfig, manifest: RunManifest, transport=None, client: ChatClient | None = None) -> StageResult:
    """Execute every task of the grid, resuming past completed task keys."""
    result = StageResult()
    labels, _ = _load_labels(cfg)
    gdelt, acled, articles = _load_corpus(cfg)
    client = client or make_client(cfg, transport)
    model_id = cfg.provider.model_id
    tasks = build_task_grid(cfg.countries, cfg.first_month, cfg.last_month, cfg.experiments)
    templates = {Experiment.PARAMETRIC: load_template(_template_ref(cfg, cfg.templates.parametric)),
                 Experiment.RAG: load_template(_template_ref(cfg, cfg.templates.rag))}

    pred_path = cfg.run_dir / "predictions.jsonl"
    done: dict[tuple, dict] = {}
    if pred_path.exists():
        for d in read_jsonl(pred_path):
            if not _is_provider_failure(d):
                done[_record_key(d)] = d
    todo = [t for t in tasks if (model_id, *t.key()) not in done]
    result.say(f"{len(tasks)} tasks in grid, {len(tasks) - len(todo)} already done, {len(todo)} to run")

    stores: dict[str, RetrievalStore] = {}
    if any(t.experiment is Experiment.RAG for t in todo):
        by_url = {a.url: a for a in articles}
        stores = {c: load_store(cfg, c, by_url) for c in cfg.countries}
    embedder = make_embedder(cfg)
    summarizer = client if cfg.retrieval.summarize_with_llm else None

    def execute(task: ForecastTask) -> dict:
        truth = labels.get((task.country, task.month_key))
        if truth is None:
            raise InputMissing(f"no label for {task.country} {task.month_key}; re-run `make-labels`")
        empty = False
        if task.experiment is Experiment.RAG:
            ctx = build_rag_context(task, gdelt, stores[task.country], embedder, acled, summarizer,
                                    cfg.retrieval.k, cfg.retrieval.summary_chars, cfg.country_codes)
            prompt = render_prompt_rag(task, ctx, templates[Experiment.RAG])
            empty = ctx.empty_context
        else:
            ctx = None
            prompt = render_prompt_parametric(task, templates[Experiment.PARAMETRIC])
        task_dir = cfg.run_dir / slug(task.country) / task.month_key / task.experiment.value
        task_dir.mkdir(parents=True, exist_ok=True)
        (task_dir / "prompt.txt").write_text(prompt, encoding="utf-8")
        if ctx is not None:
            _write_json(task_dir / "context.json", ctx.to_dict())

        request = ChatRequest(user_text=prompt, system_text=SYSTEM_TEXT, model_id=model_id,
                              temperature=cfg.provider.temperature, max_tokens=cfg.provider.max_tokens)
        meta = {"country": task.country, "month": task.month_key, "experiment": task.experiment.value,
                "purpose": "forecast"}
        predicted, error, parse_failed = None, None, False
        try:
            reply = client.complete(request, meta)
        except PROVIDER_ERRORS as exc:
            reply, error, parse_failed = None, f"provider: {type(exc).__name__}: {exc}", True
        if reply is not None:
            (task_dir / "reply.txt").write_text(reply, encoding="utf-8")
            try:
                predicted = parse_forecast(reply)
            except ParseError as exc:
                error, parse_failed = f"parse: {type(exc).__name__}: {exc}", True
        rec = PredictionRecord(task, TrendLabel(truth["truth_label"]), int(truth["truth_fatalities"]),
                               predicted, parse_failed, model_id, error, empty)
        d = rec.to_dict()
        if reply is not None and predicted is None:
            d["raw_text"] = reply
        return d

    pred_path.parent.mkdir(parents=True, exist_ok=True)
    with open(pred_path, "a", encoding="utf-8", newline="\n") as fh, \
            ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
        for d in pool.map(execute, todo):
            fh.write(json.dumps(d, sort_keys=True, ensure_ascii=False) + "\n")
            fh.flush()
            done[_record_key(d)] = d

    # final rewrite in grid order drops superseded provider failures
    ordered = [done[(model_id, *t.key())] for t in tasks if (model_id, *t.key()) in done]
    extra = [d for k, d in done.items() if k[0] != model_id]
    write_jsonl(pred_path, [*extra, *ordered])
    n_provider = sum(1 for d in ordered if _is_provider_failure(d))
    n_parse = sum(1 for d in ordered if d["parse_failed"] and not _is_provider_failure(d))
    result.say(f"predictions: {len(ordered)} records, {n_parse} parse failures, {n_provider} provider failures")
    result.partial = n_provider > 0
    return result


def _template_ref(cfg: RunConfig, ref: str) -> str | Path:
    p = cfg.resolve(ref)
    return p if p.suffix == ".txt" and p.exists() else ref


# --- evaluate -----------------------------------------------------------------------------

def evaluate_records(records: list[PredictionRecord], labels: dict[tuple[str, str], dict],
                     bins: dict[str, QuantileBins], cfg: RunConfig) -> dict[tuple[str, str, str], MetricsReport]:
    lcfg = cfg.labeling.labeling_config()
    groups: dict[tuple[str, str, str], list[PredictionRecord]] = {}
    for rec in records:
        groups.setdefault((rec.model_id, rec.task.experiment.value, rec.task.country), []).append(rec)

    def trailing(rec: PredictionRecord):
        return labels[(rec.task.country, rec.task.month_key)]["trailing"]

    order = {c: i for i, c in enumerate(cfg.countries)}
    keys = sorted(groups, key=lambda k: (k[0], k[1], order.get(k[2], len(order)), k[2]))
    return {k: evaluate_all(groups[k], bins[k[2]], lcfg, trailing) for k in keys}


def metrics_to_json(reports: dict[tuple[str, str, str], MetricsReport]) -> list[dict]:
    return [{"model": m, "experiment": e, "country": c, "report": r.to_dict()} for (m, e, c), r in reports.items()]


def metrics_from_json(rows: list[dict]) -> dict[tuple[str, str, str], MetricsReport]:
    return {(r["model"], r["experiment"], r["country"]): MetricsReport.from_dict(r["report"]) for r in rows}


def write_reports(reports, out_dir: Path, figures: bool = True, predictions=None, labels=None) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.md").write_text(render_report(reports, "markdown"), encoding="utf-8")
    (out_dir / "report.csv").write_text(render_report(reports, "csv"), encoding="utf-8", newline="")
    paths = [out_dir / "report.md", out_dir / "report.csv"]
    if figures:
        from .plotting import render_figures

        paths.extend(render_figures(reports, out_dir / "figures", predictions, labels))
    return paths


@_staged("evaluate")
def evaluate(cfg: RunConfig, manifest: RunManifest, figures: bool = True) -> StageResult:
    """Score predictions.jsonl against labels.jsonl and write report.md / report.csv / figures."""
    result = StageResult()
    pred_path = cfg.run_dir / "predictions.jsonl"
    if not pred_path.exists():
        raise InputMissing(f"predictions not found at {pred_path}; run `run` first")
    labels, bins = _load_labels(cfg)
    records = [PredictionRecord.from_dict(d) for d in read_jsonl(pred_path)]
    if not any(r.scorable for r in records):
        raise NoScorableRecords(f"no scorable records in {pred_path}")
    reports = evaluate_records(records, labels, bins, cfg)
    _write_json(cfg.run_dir / "metrics.json", metrics_to_json(reports))
    paths = write_reports(reports, cfg.run_dir, figures, records, labels)
    for p in paths:
        result.say(f"wrote {p}")
    return result
