"""Cross-sectional ranking metrics over a prediction series.

Daily Pearson and Spearman correlations between scores and realized
forward returns, aggregated into IC / ICIR / RankIC / RankICIR, plus
the same metrics restricted to instrument subgroups.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import PanelDataset, PredictionSeries, _write_rows, format_float
from .errors import DataError

MIN_SUBGROUP_SIZE = 5


def pearson(a: np.ndarray, b: np.ndarray):
    """Correlation, or None when either side has zero variance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2:
        return None
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt((da * da).sum()) * np.sqrt((db * db).sum())
    if denom == 0.0:
        return None
    return float((da * db).sum() / denom)


def average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the average of their positions."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i: j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(a: np.ndarray, b: np.ndarray):
    """Pearson on average ranks; None when either side is all ties."""
    if np.asarray(a).size < 2:
        return None
    return pearson(average_ranks(a), average_ranks(b))


@dataclass
class MetricReport:
    """IC-family summary; ratios use the sample (n-1) standard deviation."""

    ic: float
    icir: float
    rank_ic: float
    rank_icir: float
    daily_ic: list[tuple[str, float]]
    daily_rank_ic: list[tuple[str, float]]
    n_days: int
    n_excluded_days: int = 0
    flags: list[str] = field(default_factory=list)

    def rows(self) -> list[tuple[str, float]]:
        return [
            ("ic", self.ic),
            ("icir", self.icir),
            ("rank_ic", self.rank_ic),
            ("rank_icir", self.rank_icir),
            ("n_days", float(self.n_days)),
            ("n_excluded_days", float(self.n_excluded_days)),
        ]


def _ratio(values: np.ndarray, name: str, flags: list[str]) -> float:
    mean = float(values.mean())
    std = float(values.std(ddof=1))
    if std == 0.0:
        flags.append(f"{name}_undefined_zero_std")
        if mean > 0:
            return float("inf")
        if mean < 0:
            return float("-inf")
        return float("nan")
    return mean / std


def summarize(preds: PredictionSeries, ds: PanelDataset) -> MetricReport:
    """Daily correlations of scores against the panel's forward returns.

    A date enters only when at least two instruments are jointly scored
    and observed and neither side is degenerate; exclusions are counted.
    """
    date_index = {d: i for i, d in enumerate(ds.dates)}
    inst_index = {s: i for i, s in enumerate(ds.instruments)}
    by_date = preds.by_date()

    daily_ic: list[tuple[str, float]] = []
    daily_rank: list[tuple[str, float]] = []
    excluded = 0
    for date in preds.dates():
        if date not in date_index:
            raise DataError(f"prediction date {date} not in the panel")
        t = date_index[date]
        scores = []
        actual = []
        for inst, score in by_date[date].items():
            if inst not in inst_index:
                raise DataError(f"prediction instrument {inst} not in the panel")
            i = inst_index[inst]
            if ds.observed_mask[t, i] and np.isfinite(ds.labels[t, i]):
                scores.append(score)
                actual.append(ds.labels[t, i])
        if len(scores) < 2:
            excluded += 1
            continue
        a = np.array(scores)
        b = np.array(actual)
        ic = pearson(a, b)
        rank = spearman(a, b)
        if ic is None or rank is None:
            excluded += 1
            continue
        daily_ic.append((date, ic))
        daily_rank.append((date, rank))

    if len(daily_ic) < 2:
        raise DataError(
            f"need at least 2 valid evaluation dates, got {len(daily_ic)}"
        )
    flags: list[str] = []
    ic_values = np.array([v for _, v in daily_ic])
    rank_values = np.array([v for _, v in daily_rank])
    return MetricReport(
        ic=float(ic_values.mean()),
        icir=_ratio(ic_values, "icir", flags),
        rank_ic=float(rank_values.mean()),
        rank_icir=_ratio(rank_values, "rank_icir", flags),
        daily_ic=daily_ic,
        daily_rank_ic=daily_rank,
        n_days=len(daily_ic),
        n_excluded_days=excluded,
        flags=flags,
    )


def subgroup_metrics(
    preds: PredictionSeries,
    ds: PanelDataset,
    grouping: dict[str, str],
) -> dict[str, MetricReport | None]:
    """Per-category reports on the restricted cross-section.

    A category averaging fewer than 5 jointly-observed stocks per
    prediction date is marked absent (None), as is one without enough
    valid dates. Instruments missing from the grouping are skipped.
    """
    categories = sorted({grouping[i] for i in grouping})
    dates = preds.dates()
    out: dict[str, MetricReport | None] = {}
    for cat in categories:
        members = {i for i, c in grouping.items() if c == cat}
        rows = [(d, i, s) for d, i, s in preds.rows if i in members]
        if not rows:
            out[cat] = None
            continue
        sub = PredictionSeries(rows)
        counts = []
        date_index = {d: i for i, d in enumerate(ds.dates)}
        inst_index = {s: i for i, s in enumerate(ds.instruments)}
        by_date = sub.by_date()
        for date in dates:
            n = 0
            for inst in by_date.get(date, {}):
                t = date_index.get(date)
                i = inst_index.get(inst)
                if t is not None and i is not None and ds.observed_mask[t, i]:
                    n += 1
            counts.append(n)
        if float(np.mean(counts)) < MIN_SUBGROUP_SIZE:
            out[cat] = None
            continue
        try:
            out[cat] = summarize(sub, ds)
        except DataError:
            out[cat] = None
    return out


def _format_metric(v: float) -> str:
    if np.isfinite(v):
        return format_float(v)
    if np.isnan(v):
        return "nan"
    return "inf" if v > 0 else "-inf"


def write_metric_report(report: MetricReport, path) -> None:
    rows = [[name, _format_metric(value)] for name, value in report.rows()]
    for flag in report.flags:
        rows.append(["flag", flag])
    _write_rows(path, ["metric", "value"], rows)


def write_daily_metrics(report: MetricReport, path) -> None:
    rank_by_date = dict(report.daily_rank_ic)
    rows = [
        [date, format_float(ic), format_float(rank_by_date[date])]
        for date, ic in report.daily_ic
    ]
    _write_rows(path, ["datetime", "ic", "rank_ic"], rows)
