"""Fatality series aggregation and ground-truth trend labels."""

from __future__ import annotations

import enum
import math
from bisect import bisect_right
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyInput, EmptyRange, WindowTooShort


class TrendLabel(str, enum.Enum):
    ESCALATE = "Escalate"
    DEESCALATE = "De-escalate"
    PEACE = "Peace/No Conflict"
    STABLE = "Stable Conflict"

    @classmethod
    def ordered(cls) -> list["TrendLabel"]:
        return [cls.ESCALATE, cls.DEESCALATE, cls.PEACE, cls.STABLE]


class Granularity(str, enum.Enum):
    WEEKLY = "weekly"
    MONTHLY = "monthly"


@dataclass(frozen=True)
class FatalitySeries:
    country: str
    granularity: Granularity
    buckets: tuple[tuple[date, int], ...]

    @property
    def sums(self) -> list[int]:
        return [s for _, s in self.buckets]

    @property
    def periods(self) -> list[date]:
        return [p for p, _ in self.buckets]

    @property
    def total(self) -> int:
        return sum(self.sums)

    def __len__(self) -> int:
        return len(self.buckets)

    def slice(self, start: date, end: date) -> "FatalitySeries":
        """Buckets whose period start lies in ``[start, end]``."""
        kept = tuple(b for b in self.buckets if start <= b[0] <= end)
        return FatalitySeries(self.country, self.granularity, kept)


@dataclass
class LabelingConfig:
    """Thresholds for the slope classifier and the fatalities-to-label mapping.

    ``slope_threshold=None`` means relative: ``max(slope_floor, slope_fraction * window mean)``.
    """

    window_months: int = 3
    slope_threshold: float | None = None
    slope_fraction: float = 0.10
    slope_floor: float = 10.0
    peace_level: int = 25
    ratio_threshold: float = 0.25

    def __post_init__(self):
        if self.window_months < 2:
            raise ValueError("window_months must be >= 2")
        if self.slope_threshold is not None and self.slope_threshold <= 0:
            raise ValueError("slope_threshold must be positive")
        if self.slope_floor <= 0 or self.slope_fraction < 0:
            raise ValueError("slope_floor must be positive and slope_fraction non-negative")
        if self.peace_level < 0:
            raise ValueError("peace_level must be non-negative")
        if self.ratio_threshold <= 0:
            raise ValueError("ratio_threshold must be positive")

    def threshold_for(self, values: Sequence[float]) -> float:
        if self.slope_threshold is not None:
            return self.slope_threshold
        mean = math.fsum(values) / len(values)
        return max(self.slope_floor, self.slope_fraction * mean)


@dataclass(frozen=True)
class QuantileBins:
    edges: tuple[float, ...]
    requested_k: int = 4
    collapsed: int = field(default=0)

    @property
    def k(self) -> int:
        return len(self.edges) + 1

    def to_dict(self) -> dict:
        return {"edges": list(self.edges), "requested_k": self.requested_k, "collapsed": self.collapsed}

    @classmethod
    def from_dict(cls, d: dict) -> "QuantileBins":
        return cls(tuple(float(e) for e in d["edges"]), int(d.get("requested_k", 4)), int(d.get("collapsed", 0)))


# --- calendar helpers -------------------------------------------------------

def month_start(d: date) -> date:
    return d.replace(day=1)


def add_months(d: date, n: int) -> date:
    """First day of the month ``n`` months after ``d``'s month."""
    idx = d.year * 12 + (d.month - 1) + n
    return date(idx // 12, idx % 12 + 1, 1)


def month_end(d: date) -> date:
    return add_months(d, 1) - timedelta(days=1)


def week_start(d: date) -> date:
    """Monday of the ISO week containing ``d``."""
    return d - timedelta(days=d.weekday())


def months_between(start: date, end: date) -> list[date]:
    out, cur = [], month_start(start)
    while cur <= end:
        out.append(cur)
        cur = add_months(cur, 1)
    return out


# --- operations ---------------------------------------------------------------

def aggregate_fatalities(acled_events: Iterable, country: str, granularity: Granularity | str,
                         date_range: tuple[date, date]) -> FatalitySeries:
    """Sum ACLED fatalities per ISO week or calendar month, zero-filling gaps.

    Only events dated inside the closed ``date_range`` count; the series
    covers every period touching the range.
    """
    start, end = date_range
    if start > end:
        raise EmptyRange(f"range start {start} after end {end}")
    granularity = Granularity(granularity)
    if granularity is Granularity.MONTHLY:
        key, step = month_start, (lambda d: add_months(d, 1))
    else:
        key, step = week_start, (lambda d: d + timedelta(days=7))

    periods = []
    cur = key(start)
    while cur <= end:
        periods.append(cur)
        cur = step(cur)
    sums = dict.fromkeys(periods, 0)
    target = country.strip().casefold()
    for ev in acled_events:
        if ev.country.strip().casefold() == target and start <= ev.event_date <= end:
            sums[key(ev.event_date)] += ev.fatalities
    return FatalitySeries(country, granularity, tuple((p, sums[p]) for p in periods))


def ols_slope(values: Sequence[float]) -> float:
    """Least-squares slope of ``values`` against their index.

    Uses centred indices and exactly-rounded sums, so reversing the input
    negates the result exactly and constant input gives exactly 0.
    """
    n = len(values)
    if n < 2:
        raise WindowTooShort(f"need >= 2 points, got {n}")
    centre = (n - 1) / 2
    num = math.fsum((i - centre) * v for i, v in enumerate(values))
    den = math.fsum((i - centre) ** 2 for i in range(n))
    return num / den


def _values(window) -> list[float]:
    return list(window.sums) if isinstance(window, FatalitySeries) else list(window)


def trend_label(series_window, config: LabelingConfig | None = None) -> TrendLabel:
    """Classify a window of monthly sums (oldest first, target month last)."""
    cfg = config or LabelingConfig()
    values = _values(series_window)
    if len(values) < 2:
        raise WindowTooShort(f"need >= 2 buckets, got {len(values)}")
    slope = ols_slope(values)
    thr = cfg.threshold_for(values)
    if all(v < cfg.peace_level for v in values) and -thr <= slope <= thr:
        return TrendLabel.PEACE
    if slope > thr:
        return TrendLabel.ESCALATE
    if slope < -thr:
        return TrendLabel.DEESCALATE
    return TrendLabel.STABLE


def fatalities_to_label(predicted_fatalities: float, trailing_series,
                        config: LabelingConfig | None = None) -> TrendLabel:
    """Map a fatality count to a label relative to the trailing monthly mean."""
    cfg = config or LabelingConfig()
    values = _values(trailing_series)
    if len(values) < 1:
        raise WindowTooShort("trailing series is empty")
    m = math.fsum(values) / len(values)
    p = predicted_fatalities
    if p < cfg.peace_level and m < cfg.peace_level:
        return TrendLabel.PEACE
    if p >= m * (1 + cfg.ratio_threshold):
        return TrendLabel.ESCALATE
    if p <= m * (1 - cfg.ratio_threshold):
        return TrendLabel.DEESCALATE
    return TrendLabel.STABLE


def compute_quantile_bins(historical_values: Sequence[float], k: int = 4) -> QuantileBins:
    """Cut points at the i/k linear-interpolation quantiles, duplicates collapsed."""
    if k < 2:
        raise ValueError("k must be >= 2")
    values = np.asarray(list(historical_values), dtype=float)
    if values.size == 0:
        raise EmptyInput("no historical values to bin")
    raw = np.quantile(values, [i / k for i in range(1, k)], method="linear")
    edges: list[float] = []
    for e in raw.tolist():
        if not edges or e > edges[-1]:
            edges.append(float(e))
    collapsed = (k - 1) - len(edges)
    # a constant history leaves one effective bin
    if np.all(values == values[0]):
        edges, collapsed = [], k - 1
    return QuantileBins(tuple(edges), k, collapsed)


def assign_bin(value: float, bins: QuantileBins) -> int:
    """Left-closed bins: ``edges[i-1] <= value < edges[i]`` maps to ``i``."""
    return bisect_right(bins.edges, value)
