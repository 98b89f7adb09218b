"""Panel data IO: feature/price/membership/factor CSVs, VWAP labels,
windowing, and a seeded synthetic market generator with planted structure.

All files are UTF-8 with LF line endings and ISO-8601 dates. Floats are
written in shortest round-trip positional notation so a load/write cycle
of canonical files is byte-identical.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date as _date, timedelta

import numpy as np

from .errors import ConfigError, DataError
from .graphs import RelationGraphs, build_relation_graphs, membership_adjacency

FEATURE_PREFIX = "f"
PRICES_HEADER = ["datetime", "instrument", "price", "volume"]
MEMBERSHIP_HEADER = ["instrument", "category"]
FACTORS_HEADER = ["datetime", "rf", "mktrf", "smb", "hml", "rmw", "cma"]
PREDICTIONS_HEADER = ["datetime", "instrument", "score"]
FACTOR_NAMES = ["mktrf", "smb", "hml", "rmw", "cma"]


def format_float(v: float) -> str:
    """Shortest decimal string that round-trips to the same fp64."""
    v = float(v)
    if v != v or v in (float("inf"), float("-inf")):
        raise DataError(f"refusing to write non-finite value {v!r}")
    return np.format_float_positional(np.float64(v), unique=True, trim="0")


def _write_rows(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _read_rows(path, expected_header):
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise DataError(f"{path}: empty file") from None
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if expected_header is not None and header != expected_header:
        raise DataError(
            f"{path}: header {header!r} does not match expected {expected_header!r}"
        )
    return header, rows


def _parse_float(raw: str, path, lineno) -> float:
    raw = raw.strip()
    if raw == "" or raw.lower() == "nan":
        return float("nan")
    try:
        return float(raw)
    except ValueError:
        raise DataError(f"{path}: line {lineno}: unparseable number {raw!r}") from None


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass
class PanelDataset:
    """Aligned panel of features, VWAP-based labels, and masks.

    labels[t, i] is the t -> t+1 return, so the final date is always
    unobserved. observed_mask marks valid labels (membership in the loss
    set); present_mask marks cells with a price at t.
    """

    dates: list[str]
    instruments: list[str]
    features: np.ndarray       # [D, N, F]
    labels: np.ndarray         # [D, N], NaN where missing
    observed_mask: np.ndarray  # [D, N] bool
    present_mask: np.ndarray   # [D, N] bool
    vwap: np.ndarray           # [D, N], NaN where missing
    volume: np.ndarray         # [D, N], NaN where missing
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if list(self.dates) != sorted(set(self.dates)):
            raise DataError("dates must be strictly increasing and unique")
        if len(set(self.instruments)) != len(self.instruments):
            raise DataError("instruments must be unique")
        d, n = len(self.dates), len(self.instruments)
        if self.features.shape[:2] != (d, n) or self.features.ndim != 3:
            raise DataError(f"features shape {self.features.shape} != [{d},{n},F]")
        for name in ("labels", "observed_mask", "present_mask", "vwap", "volume"):
            arr = getattr(self, name)
            if arr.shape != (d, n):
                raise DataError(f"{name} shape {arr.shape} != [{d},{n}]")
        if (self.observed_mask & ~np.isfinite(self.labels)).any():
            raise DataError("observed_mask marks cells without a finite label")

    @property
    def n_features(self) -> int:
        return self.features.shape[2]


@dataclass
class FactorSeries:
    """Daily factor returns and the risk-free rate."""

    dates: list[str]
    risk_free: np.ndarray           # [D]
    factors: dict[str, np.ndarray]  # name -> [D]

    def __post_init__(self):
        d = len(self.dates)
        if self.risk_free.shape != (d,):
            raise DataError("risk_free length does not match dates")
        for name in FACTOR_NAMES:
            if name not in self.factors:
                raise DataError(f"factor column {name!r} missing")
            if self.factors[name].shape != (d,):
                raise DataError(f"factor {name!r} length does not match dates")
            if not np.isfinite(self.factors[name]).all():
                raise DataError(f"factor {name!r} has missing values")
        if not np.isfinite(self.risk_free).all():
            raise DataError("risk_free has missing values")


@dataclass
class PredictionSeries:
    """Scored (date, instrument) pairs, sorted and unique."""

    rows: list[tuple[str, str, float]]

    def __post_init__(self):
        self.rows = sorted(self.rows)
        keys = [(d, i) for d, i, _ in self.rows]
        if len(set(keys)) != len(keys):
            raise DataError("duplicate (date, instrument) prediction")
        for d, i, s in self.rows:
            if not np.isfinite(s):
                raise DataError(f"non-finite score at ({d}, {i})")

    def dates(self) -> list[str]:
        return sorted({d for d, _, _ in self.rows})

    def by_date(self) -> dict[str, dict[str, float]]:
        out: dict[str, dict[str, float]] = {}
        for d, i, s in self.rows:
            out.setdefault(d, {})[i] = s
        return out

    def write_csv(self, path) -> None:
        _write_rows(
            path,
            PREDICTIONS_HEADER,
            ([d, i, format_float(s)] for d, i, s in self.rows),
        )

    @classmethod
    def read_csv(cls, path) -> "PredictionSeries":
        _, raw = _read_rows(path, PREDICTIONS_HEADER)
        rows = []
        for lineno, row in enumerate(raw, start=2):
            if len(row) != 3:
                raise DataError(f"{path}: line {lineno}: expected 3 columns")
            rows.append((row[0], row[1], _parse_float(row[2], path, lineno)))
        return cls(rows=rows)


@dataclass
class WindowSample:
    """One training/inference sample: a lookback window ending at `date`."""

    date: str
    end_index: int
    features: np.ndarray  # [T, N, F]
    labels: np.ndarray    # [N], NaN where unobserved
    mask: np.ndarray      # [N] bool, the loss set for this date


# ---------------------------------------------------------------------------
# VWAP labels
# ---------------------------------------------------------------------------


def compute_vwap(bars: list[tuple[float, float]]) -> float:
    """Volume-weighted average price of one cell's bars."""
    num = 0.0
    den = 0.0
    for price, volume in bars:
        if volume < 0:
            raise DataError(f"negative volume {volume}")
        num += price * volume
        den += volume
    if den <= 0:
        raise DataError("non-positive VWAP denominator (all-zero volume)")
    if len(bars) == 1:
        # exact: avoids the (p*v)/v rounding so canonical files round-trip
        return bars[0][0]
    return num / den


def vwap_matrix(
    bars: dict[tuple[str, str], list[tuple[float, float]]],
    dates: list[str],
    instruments: list[str],
) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell VWAP and total volume; NaN where a cell has no bars."""
    d, n = len(dates), len(instruments)
    vwap = np.full((d, n), np.nan)
    volume = np.full((d, n), np.nan)
    for ti, dt in enumerate(dates):
        for ii, inst in enumerate(instruments):
            cell = bars.get((dt, inst))
            if not cell:
                continue
            vwap[ti, ii] = compute_vwap(cell)
            volume[ti, ii] = sum(v for _, v in cell)
    return vwap, volume


def compute_vwap_returns(
    bars: dict[tuple[str, str], list[tuple[float, float]]],
    dates: list[str],
    instruments: list[str],
) -> np.ndarray:
    """labels[t, i] = (VWAP_{t+1} - VWAP_t) / VWAP_t; last date missing."""
    vwap, _ = vwap_matrix(bars, dates, instruments)
    return returns_from_prices(vwap)


def returns_from_prices(prices: np.ndarray) -> np.ndarray:
    """Forward one-step returns of a [D, N] price matrix, NaN-propagating."""
    labels = np.full_like(prices, np.nan)
    if prices.shape[0] < 2:
        return labels
    cur = prices[:-1]
    nxt = prices[1:]
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = (nxt - cur) / cur
    ok = np.isfinite(cur) & np.isfinite(nxt) & (cur != 0)
    labels[:-1][ok] = ratio[ok]
    return labels


# ---------------------------------------------------------------------------
# loaders
# ---------------------------------------------------------------------------


def load_panel(features_path, prices_path) -> PanelDataset:
    """Read feature and price CSVs into an aligned PanelDataset.

    The instrument universe is the set present on every feature date;
    entering/exiting names are dropped. Labels come from VWAP returns,
    and cells without a next-day price are simply unobserved.
    """
    header, rows = _read_rows(features_path, None)
    if len(header) < 3 or header[:2] != ["datetime", "instrument"]:
        raise DataError(f"{features_path}: header must start datetime,instrument")
    n_feat = len(header) - 2
    want = [f"{FEATURE_PREFIX}{i}" for i in range(n_feat)]
    if header[2:] != want:
        raise DataError(f"{features_path}: feature columns must be f0..f{n_feat - 1}")

    per_date: dict[str, dict[str, list[float]]] = {}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 2 + n_feat:
            raise DataError(
                f"{features_path}: line {lineno}: ragged row of {len(row)} columns"
            )
        dt, inst = row[0], row[1]
        vals = [_parse_float(v, features_path, lineno) for v in row[2:]]
        day = per_date.setdefault(dt, {})
        if inst in day:
            raise DataError(f"{features_path}: duplicate ({dt}, {inst})")
        day[inst] = vals
    if not per_date:
        raise DataError(f"{features_path}: no data rows")

    dates = sorted(per_date)
    universe = set(per_date[dates[0]])
    for dt in dates[1:]:
        universe &= set(per_date[dt])
    if not universe:
        raise DataError(f"{features_path}: no instrument present on every date")
    instruments = sorted(universe)

    features = np.empty((len(dates), len(instruments), n_feat))
    for ti, dt in enumerate(dates):
        day = per_date[dt]
        for ii, inst in enumerate(instruments):
            features[ti, ii] = day[inst]

    _, price_rows = _read_rows(prices_path, PRICES_HEADER)
    bars: dict[tuple[str, str], list[tuple[float, float]]] = {}
    inst_set = set(instruments)
    date_set = set(dates)
    for lineno, row in enumerate(price_rows, start=2):
        if len(row) != 4:
            raise DataError(f"{prices_path}: line {lineno}: expected 4 columns")
        dt, inst = row[0], row[1]
        if dt not in date_set or inst not in inst_set:
            continue
        price = _parse_float(row[2], prices_path, lineno)
        volume = _parse_float(row[3], prices_path, lineno)
        if not np.isfinite(price) or not np.isfinite(volume):
            raise DataError(f"{prices_path}: line {lineno}: missing price/volume")
        bars.setdefault((dt, inst), []).append((price, volume))

    vwap, volume = vwap_matrix(bars, dates, instruments)
    labels = returns_from_prices(vwap)
    observed = np.isfinite(labels)
    present = np.isfinite(vwap)
    return PanelDataset(
        dates=dates,
        instruments=instruments,
        features=features,
        labels=labels,
        observed_mask=observed,
        present_mask=present,
        vwap=vwap,
        volume=volume,
        meta={"price_basis": "vwap"},
    )


def write_panel(ds: PanelDataset, features_path, prices_path) -> None:
    """Write the canonical CSV pair: sorted rows, one price bar per cell."""
    feat_header = ["datetime", "instrument"] + [
        f"{FEATURE_PREFIX}{i}" for i in range(ds.n_features)
    ]

    def feature_rows():
        for ti, dt in enumerate(ds.dates):
            for ii, inst in enumerate(ds.instruments):
                yield [dt, inst] + [format_float(v) for v in ds.features[ti, ii]]

    _write_rows(features_path, feat_header, feature_rows())

    def price_rows():
        for ti, dt in enumerate(ds.dates):
            for ii, inst in enumerate(ds.instruments):
                if np.isfinite(ds.vwap[ti, ii]):
                    yield [
                        dt,
                        inst,
                        format_float(ds.vwap[ti, ii]),
                        format_float(ds.volume[ti, ii]),
                    ]

    _write_rows(prices_path, PRICES_HEADER, price_rows())


def load_membership(path) -> dict[str, str]:
    """instrument -> category map; conflicting duplicates are an error."""
    _, rows = _read_rows(path, MEMBERSHIP_HEADER)
    out: dict[str, str] = {}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != 2:
            raise DataError(f"{path}: line {lineno}: expected 2 columns")
        inst, cat = row
        if inst in out and out[inst] != cat:
            raise DataError(
                f"{path}: instrument {inst!r} mapped to both {out[inst]!r} and {cat!r}"
            )
        out[inst] = cat
    return out


def load_relation_graph(path, instruments: list[str]) -> np.ndarray:
    """Clique adjacency from a membership CSV, aligned to `instruments`."""
    return membership_adjacency(instruments, load_membership(path))


def write_membership(path, labels: dict[str, str]) -> None:
    _write_rows(path, MEMBERSHIP_HEADER, ([i, c] for i, c in sorted(labels.items())))


def load_factors(path) -> FactorSeries:
    _, rows = _read_rows(path, FACTORS_HEADER)
    dates: list[str] = []
    cols: dict[str, list[float]] = {name: [] for name in ["rf"] + FACTOR_NAMES}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(FACTORS_HEADER):
            raise DataError(f"{path}: line {lineno}: expected {len(FACTORS_HEADER)} columns")
        dates.append(row[0])
        for name, raw in zip(["rf"] + FACTOR_NAMES, row[1:]):
            val = _parse_float(raw, path, lineno)
            if not np.isfinite(val):
                raise DataError(f"{path}: line {lineno}: missing {name}")
            cols[name].append(val)
    if dates != sorted(set(dates)):
        raise DataError(f"{path}: dates must be unique and ascending")
    return FactorSeries(
        dates=dates,
        risk_free=np.array(cols["rf"]),
        factors={name: np.array(cols[name]) for name in FACTOR_NAMES},
    )


def write_factors(fs: FactorSeries, path) -> None:
    def rows():
        for ti, dt in enumerate(fs.dates):
            yield [dt, format_float(fs.risk_free[ti])] + [
                format_float(fs.factors[name][ti]) for name in FACTOR_NAMES
            ]

    _write_rows(path, FACTORS_HEADER, rows())


# ---------------------------------------------------------------------------
# transforms and windowing
# ---------------------------------------------------------------------------


def standardize_features(ds: PanelDataset) -> PanelDataset:
    """Impute daily cross-sectional medians, then z-score per day/feature.

    A zero-variance (date, feature) column is centered and left unscaled.
    Returns a new dataset; the input is untouched.
    """
    feats = ds.features.copy()
    d, n, f = feats.shape
    for ti in range(d):
        day = feats[ti]
        for fi in range(f):
            col = day[:, fi]
            bad = ~np.isfinite(col)
            if bad.all():
                col[:] = 0.0
                continue
            if bad.any():
                col[bad] = np.median(col[~bad])
            mu = col.mean()
            sd = col.std()
            col -= mu
            if sd > 0:
                col /= sd
    return PanelDataset(
        dates=list(ds.dates),
        instruments=list(ds.instruments),
        features=feats,
        labels=ds.labels.copy(),
        observed_mask=ds.observed_mask.copy(),
        present_mask=ds.present_mask.copy(),
        vwap=ds.vwap.copy(),
        volume=ds.volume.copy(),
        meta=dict(ds.meta, standardized=True),
    )


def make_windows(ds: PanelDataset, window: int) -> list[WindowSample]:
    """Sliding lookback samples: one per date index in [window-1, D-1).

    The sample at index t sees features[t-window+1 .. t] and targets the
    t -> t+1 return stored at labels[t]. The final date never yields a
    sample because its label cannot exist.
    """
    d = len(ds.dates)
    if window < 1:
        raise ConfigError(f"window must be >= 1, got {window}")
    if window > d:
        raise ConfigError(f"window {window} exceeds series length {d}")
    samples = []
    for t in range(window - 1, d - 1):
        mask = ds.observed_mask[t] & np.isfinite(ds.labels[t])
        samples.append(
            WindowSample(
                date=ds.dates[t],
                end_index=t,
                features=ds.features[t - window + 1: t + 1],
                labels=ds.labels[t],
                mask=mask,
            )
        )
    return samples


# ---------------------------------------------------------------------------
# synthetic market generator
# ---------------------------------------------------------------------------


@dataclass
class SynthConfig:
    """Planted-structure market: industry blocks share an AR(1) trend.

    Feature layout: the first min(3, F-2) columns carry linear return
    weights, column F-2 observes a region factor that never enters
    returns (a structural distractor), and column F-1 observes the
    industry trend contaminated by that same region factor.
    """

    n_instruments: int = 24
    n_features: int = 8
    days: int = 600
    tau_signal: float = 60.0
    noise: float = 0.02
    seed: int = 0
    block_size: int = 5
    n_regions: int = 4
    start_date: str = "2015-01-01"

    def __post_init__(self):
        if self.n_instruments < 4:
            raise ConfigError("need at least 4 instruments")
        if self.days < 3:
            raise ConfigError("need at least 3 days")
        if self.n_features < 3:
            raise ConfigError("need at least 3 features")
        if self.tau_signal <= 0 or self.noise < 0:
            raise ConfigError("tau_signal must be > 0 and noise >= 0")
        if self.block_size < 1 or self.n_regions < 1:
            raise ConfigError("block_size and n_regions must be >= 1")


def trading_dates(start: str, count: int) -> list[str]:
    """`count` consecutive weekdays starting at or after `start`."""
    try:
        cur = _date.fromisoformat(start)
    except ValueError as exc:
        raise ConfigError(f"bad start date {start!r}") from exc
    out = []
    while len(out) < count:
        if cur.weekday() < 5:
            out.append(cur.isoformat())
        cur += timedelta(days=1)
    return out


def _ar1_paths(rng, n_paths: int, days: int, tau: float) -> np.ndarray:
    """Unit-variance stationary AR(1) paths with decay exp(-1/tau)."""
    rho = float(np.exp(-1.0 / tau))
    innov_scale = float(np.sqrt(1.0 - rho * rho))
    paths = np.empty((n_paths, days))
    paths[:, 0] = rng.standard_normal(n_paths)
    shocks = rng.standard_normal((n_paths, days))
    for t in range(1, days):
        paths[:, t] = rho * paths[:, t - 1] + innov_scale * shocks[:, t]
    return paths


def generate_synthetic(
    cfg: SynthConfig,
) -> tuple[PanelDataset, RelationGraphs, FactorSeries]:
    """Deterministic synthetic market with recoverable planted signal.

    Returns are a fixed linear readout of the named feature columns plus
    i.i.d. noise of scale cfg.noise; prices follow the compounded VWAP
    path so reloading files reproduces the labels.
    """
    rng = np.random.default_rng(cfg.seed)
    n, f, d = cfg.n_instruments, cfg.n_features, cfg.days
    dates = trading_dates(cfg.start_date, d)
    instruments = [f"S{i:03d}" for i in range(n)]

    n_industries = (n + cfg.block_size - 1) // cfg.block_size
    industry_of = np.arange(n) // cfg.block_size
    region_of = np.arange(n) % cfg.n_regions
    industry_labels = {
        inst: f"IND{industry_of[i]:02d}" for i, inst in enumerate(instruments)
    }
    region_labels = {
        inst: f"REG{region_of[i]:d}" for i, inst in enumerate(instruments)
    }
    graphs = build_relation_graphs(instruments, industry_labels, region_labels)

    trend = _ar1_paths(rng, n_industries, d, cfg.tau_signal)      # g per industry
    region_factor = _ar1_paths(rng, cfg.n_regions, d, cfg.tau_signal)

    n_sig = min(3, f - 2)
    features = rng.standard_normal((d, n, f))
    obs_noise = 0.3
    features[:, :, f - 2] = region_factor[region_of].T + obs_noise * rng.standard_normal((d, n))
    features[:, :, f - 1] = (
        trend[industry_of].T
        + 0.5 * region_factor[region_of].T
        + obs_noise * rng.standard_normal((d, n))
    )

    # fixed linear readout; the region factor cancels out of returns
    sig_weights = np.array([0.006, 0.005, 0.004][:n_sig])
    trend_beta = 0.012
    returns = features[:, :, :n_sig] @ sig_weights
    returns += trend_beta * features[:, :, f - 1]
    returns -= 0.5 * trend_beta * features[:, :, f - 2]
    returns += cfg.noise * rng.standard_normal((d, n))
    returns = np.clip(returns, -0.5, 0.5)

    base = 40.0 + 2.0 * np.arange(n)
    vwap = np.empty((d, n))
    vwap[0] = base
    for t in range(1, d):
        vwap[t] = vwap[t - 1] * (1.0 + returns[t - 1])
    volume = rng.integers(100_000, 1_000_000, size=(d, n)).astype(np.float64)

    labels = returns_from_prices(vwap)
    observed = np.isfinite(labels)
    ds = PanelDataset(
        dates=dates,
        instruments=instruments,
        features=features,
        labels=labels,
        observed_mask=observed,
        present_mask=np.ones((d, n), dtype=bool),
        vwap=vwap,
        volume=volume,
        meta={"price_basis": "vwap", "synthetic": True},
    )

    factors = FactorSeries(
        dates=dates,
        risk_free=np.full(d, 1e-4),
        factors={
            name: 0.01 * rng.standard_normal(d) for name in FACTOR_NAMES
        },
    )
    return ds, graphs, factors
