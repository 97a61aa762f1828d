"""Run configuration loaded from YAML."""

from __future__ import annotations

from datetime import date
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, PrivateAttr, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .forecasting import Experiment
from .labeling import LabelingConfig
from .llm import CacheMode, ProviderConfig

DEFAULT_COUNTRIES = ["Ethiopia", "Sudan", "Somalia", "Israel", "Iran"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PathsSection(_Strict):
    data_dir: str = "data"
    runs_dir: str = "runs"


class InputsSection(_Strict):
    gdelt: list[str] = Field(default_factory=lambda: ["gdelt/*.export.CSV*", "gdelt/*.tsv*"])
    acled: str = "acled.csv"
    pages_dir: Optional[str] = None
    history_months: int = Field(36, ge=0)
    gdelt_columns: dict[str, int] = Field(default_factory=dict)


class ProviderSection(_Strict):
    kind: Literal["mock", "http"] = "mock"
    model_id: str = "gpt-4"
    endpoint_url: str = "https://api.openai.com/v1/chat/completions"
    auth_token_env_var: str = "OPENAI_API_KEY"
    temperature: float = Field(0.2, ge=0.0, le=2.0)
    max_tokens: int = Field(256, gt=0)
    max_retries: int = Field(5, ge=0)
    base_backoff_ms: int = Field(1000, ge=0)
    timeout_ms: int = Field(60_000, gt=0)
    requests_per_minute: float = Field(30.0, ge=0)
    mock_script: Optional[str] = None

    def provider_config(self) -> ProviderConfig:
        return ProviderConfig(
            endpoint_url=self.endpoint_url,
            auth_token_env_var=self.auth_token_env_var,
            max_retries=self.max_retries,
            base_backoff_ms=self.base_backoff_ms,
            timeout_ms=self.timeout_ms,
            requests_per_minute=self.requests_per_minute,
        )


class CacheSection(_Strict):
    mode: CacheMode = CacheMode.OFF
    dir: str = "cache"


class LabelingSection(_Strict):
    window_months: int = Field(3, ge=2)
    slope_threshold: Optional[float] = Field(None, gt=0)
    slope_fraction: float = Field(0.10, ge=0)
    slope_floor: float = Field(10.0, gt=0)
    peace_level: int = Field(25, ge=0)
    ratio_threshold: float = Field(0.25, gt=0)
    bins_k: int = Field(4, ge=2)

    def labeling_config(self) -> LabelingConfig:
        return LabelingConfig(
            window_months=self.window_months,
            slope_threshold=self.slope_threshold,
            slope_fraction=self.slope_fraction,
            slope_floor=self.slope_floor,
            peace_level=self.peace_level,
            ratio_threshold=self.ratio_threshold,
        )


class RetrievalSection(_Strict):
    chunk_chars: int = Field(1200, gt=0)
    overlap_chars: int = Field(200, ge=0)
    k: int = Field(12, ge=1)
    embedder: Literal["hashing", "remote"] = "hashing"
    dims: int = Field(256, gt=0)
    embed_endpoint: Optional[str] = None
    embed_model: str = "text-embedding-3-small"
    embed_token_env_var: str = "OPENAI_API_KEY"
    summary_chars: int = Field(1500, gt=0)
    summarize_with_llm: bool = True

    @model_validator(mode="after")
    def _check(self):
        if self.overlap_chars >= self.chunk_chars:
            raise ValueError("overlap_chars must be smaller than chunk_chars")
        if self.embedder == "remote" and not self.embed_endpoint:
            raise ValueError("remote embedder needs embed_endpoint")
        return self


class FetchSection(_Strict):
    concurrency: int = Field(8, ge=1)
    politeness_ms: int = Field(500, ge=0)
    max_chars: int = Field(20_000, gt=0)
    min_chars: int = Field(200, ge=0)
    timeout_s: float = Field(20.0, gt=0)


class TemplatesSection(_Strict):
    parametric: str = "parametric"
    rag: str = "rag"


class RunConfig(_Strict):
    run_id: str = "default"
    countries: list[str] = Field(default_factory=lambda: list(DEFAULT_COUNTRIES), min_length=1)
    date_range: tuple[str, str] = ("2020-01", "2024-12")
    experiment: Literal["parametric", "rag", "both"] = "both"
    seed: int = 0
    parallelism: int = Field(4, ge=1)
    country_codes: dict[str, str] = Field(default_factory=dict)
    paths: PathsSection = Field(default_factory=PathsSection)
    inputs: InputsSection = Field(default_factory=InputsSection)
    provider: ProviderSection = Field(default_factory=ProviderSection)
    cache: CacheSection = Field(default_factory=CacheSection)
    labeling: LabelingSection = Field(default_factory=LabelingSection)
    retrieval: RetrievalSection = Field(default_factory=RetrievalSection)
    fetch: FetchSection = Field(default_factory=FetchSection)
    templates: TemplatesSection = Field(default_factory=TemplatesSection)

    # directory relative paths resolve against; set by load_config
    _base_dir: Path = PrivateAttr(default_factory=Path.cwd)

    @field_validator("date_range")
    @classmethod
    def _months(cls, v):
        start, end = (_parse_month(s) for s in v)
        if start > end:
            raise ValueError("date_range start after end")
        return v

    @field_validator("run_id")
    @classmethod
    def _run_id(cls, v):
        if not v or "/" in v or v.startswith("."):
            raise ValueError("run_id must be a plain directory name")
        return v

    @property
    def first_month(self) -> date:
        return _parse_month(self.date_range[0])

    @property
    def last_month(self) -> date:
        return _parse_month(self.date_range[1])

    @property
    def experiments(self) -> list[Experiment]:
        if self.experiment == "both":
            return [Experiment.PARAMETRIC, Experiment.RAG]
        return [Experiment(self.experiment)]

    def resolve(self, p: str | Path) -> Path:
        p = Path(p)
        return p if p.is_absolute() else (self._base_dir / p)

    @property
    def data_dir(self) -> Path:
        return self.resolve(self.paths.data_dir)

    @property
    def run_dir(self) -> Path:
        return self.resolve(self.paths.runs_dir) / self.run_id

    def snapshot(self) -> dict:
        return self.model_dump(mode="json")


def _parse_month(s: str) -> date:
    try:
        return date.fromisoformat(f"{s}-01") if len(s) == 7 else date.fromisoformat(s).replace(day=1)
    except ValueError:
        raise ValueError(f"expected YYYY-MM, got {s!r}") from None


def _format_errors(exc: ValidationError, source: str) -> str:
    lines = [f"invalid config {source}:"]
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"  {loc}: {err['msg']}")
    return "\n".join(lines)


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Read and validate a YAML run config; relative paths resolve against its directory."""
    data: dict = {}
    base = Path.cwd()
    source = "<defaults>"
    if path is not None:
        path = Path(path)
        source = str(path)
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a mapping at top level")
        base = path.resolve().parent
    if overrides:
        data = {**data, **overrides}
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc, source)) from None
    cfg._base_dir = base
    return cfg
