"""Panel IO, VWAP labels, windowing, and synthetic generator tests."""

import numpy as np
import pytest

from xsrank.data import (
    PredictionSeries,
    SynthConfig,
    compute_vwap,
    compute_vwap_returns,
    format_float,
    generate_synthetic,
    load_factors,
    load_membership,
    load_panel,
    load_relation_graph,
    make_windows,
    standardize_features,
    trading_dates,
    write_factors,
    write_membership,
    write_panel,
)
from xsrank.errors import ConfigError, DataError


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


FEATURES_2x2x3 = (
    "datetime,instrument,f0,f1,f2\n"
    "2020-01-01,A,1.0,2.0,3.0\n"
    "2020-01-01,B,4.0,5.0,6.0\n"
    "2020-01-02,A,7.0,8.0,9.0\n"
    "2020-01-02,B,10.0,11.0,12.0\n"
)

PRICES_2x2 = (
    "datetime,instrument,price,volume\n"
    "2020-01-01,A,100.0,1000.0\n"
    "2020-01-01,B,50.0,1000.0\n"
    "2020-01-02,A,105.0,1000.0\n"
    "2020-01-02,B,49.0,1000.0\n"
)


def test_format_float_plain_decimal_roundtrip():
    assert format_float(0.05) == "0.05"
    assert format_float(11.0) == "11.0"
    assert format_float(-3.25) == "-3.25"
    tiny = 3.2e-07
    s = format_float(tiny)
    assert "e" not in s and "E" not in s
    assert float(s) == tiny
    assert float(format_float(0.1 + 0.2)) == 0.1 + 0.2
    with pytest.raises(DataError):
        format_float(float("nan"))


def test_load_panel_shapes_and_labels(tmp_path):
    fpath = _write(tmp_path / "features.csv", FEATURES_2x2x3)
    ppath = _write(tmp_path / "prices.csv", PRICES_2x2)
    ds = load_panel(fpath, ppath)
    assert ds.features.shape == (2, 2, 3)
    assert ds.dates == ["2020-01-01", "2020-01-02"]
    assert ds.instruments == ["A", "B"]
    assert ds.labels[0, 0] == pytest.approx(0.05)
    assert ds.labels[0, 1] == pytest.approx(-0.02)
    # final date never has a label
    assert not ds.observed_mask[1].any()
    assert np.isnan(ds.labels[1]).all()


def test_load_panel_missing_next_price_masks(tmp_path):
    fpath = _write(tmp_path / "features.csv", FEATURES_2x2x3)
    prices = (
        "datetime,instrument,price,volume\n"
        "2020-01-01,A,100.0,1000.0\n"
        "2020-01-01,B,50.0,1000.0\n"
        "2020-01-02,B,49.0,1000.0\n"
    )
    ppath = _write(tmp_path / "prices.csv", prices)
    ds = load_panel(fpath, ppath)
    assert not ds.observed_mask[0, 0]   # A has no next-day price
    assert ds.observed_mask[0, 1]
    assert not ds.present_mask[1, 0]


def test_load_panel_shuffled_rows_equal_sorted(tmp_path):
    lines = FEATURES_2x2x3.strip().split("\n")
    shuffled = "\n".join([lines[0], lines[4], lines[2], lines[1], lines[3]]) + "\n"
    f1 = _write(tmp_path / "sorted.csv", FEATURES_2x2x3)
    f2 = _write(tmp_path / "shuffled.csv", shuffled)
    p = _write(tmp_path / "prices.csv", PRICES_2x2)
    a = load_panel(f1, p)
    b = load_panel(f2, p)
    assert a.dates == b.dates and a.instruments == b.instruments
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.labels[a.observed_mask], b.labels[b.observed_mask])


def test_load_panel_universe_is_intersection(tmp_path):
    feats = (
        "datetime,instrument,f0\n"
        "2020-01-01,A,1.0\n"
        "2020-01-01,B,2.0\n"
        "2020-01-02,A,3.0\n"
    )
    fpath = _write(tmp_path / "features.csv", feats)
    ppath = _write(tmp_path / "prices.csv", PRICES_2x2)
    ds = load_panel(fpath, ppath)
    assert ds.instruments == ["A"]


def test_load_panel_errors(tmp_path):
    p = _write(tmp_path / "prices.csv", PRICES_2x2)
    ragged = "datetime,instrument,f0,f1\n2020-01-01,A,1.0\n"
    with pytest.raises(DataError):
        load_panel(_write(tmp_path / "r.csv", ragged), p)
    dup = (
        "datetime,instrument,f0\n"
        "2020-01-01,A,1.0\n"
        "2020-01-01,A,2.0\n"
    )
    with pytest.raises(DataError):
        load_panel(_write(tmp_path / "d.csv", dup), p)
    garbled = "datetime,instrument,f0\n2020-01-01,A,xyz\n"
    with pytest.raises(DataError):
        load_panel(_write(tmp_path / "g.csv", garbled), p)
    badhdr = "date,inst,f0\n2020-01-01,A,1.0\n"
    with pytest.raises(DataError):
        load_panel(_write(tmp_path / "h.csv", badhdr), p)


def test_compute_vwap_examples():
    assert compute_vwap([(10.0, 100.0), (12.0, 100.0)]) == pytest.approx(11.0)
    with pytest.raises(DataError):
        compute_vwap([(10.0, 0.0)])
    with pytest.raises(DataError):
        compute_vwap([(10.0, -5.0)])


def test_vwap_bounded_by_bar_prices():
    rng = np.random.default_rng(0)
    for trial in range(50):
        k = int(rng.integers(1, 6))
        prices = rng.uniform(10, 200, size=k)
        vols = rng.uniform(0.1, 1e6, size=k)
        v = compute_vwap(list(zip(prices, vols)))
        assert prices.min() - 1e-9 <= v <= prices.max() + 1e-9


def test_compute_vwap_returns_three_dates():
    dates = ["2020-01-01", "2020-01-02", "2020-01-03"]
    bars = {
        (dates[0], "A"): [(100.0, 1.0)],
        (dates[1], "A"): [(105.0, 1.0)],
        (dates[2], "A"): [(84.0, 1.0)],
    }
    labels = compute_vwap_returns(bars, dates, ["A"])
    assert labels[0, 0] == pytest.approx(0.05)
    assert labels[1, 0] == pytest.approx(-0.2)
    assert np.isnan(labels[2, 0])


def test_membership_loaders(tmp_path):
    path = _write(
        tmp_path / "m.csv", "instrument,category\na,X\nb,X\nc,Y\n"
    )
    adj = load_relation_graph(path, ["a", "b", "c"])
    want = np.zeros((3, 3))
    want[0, 1] = want[1, 0] = 1.0
    np.testing.assert_array_equal(adj, want)

    # all-distinct categories: empty graph
    path2 = _write(tmp_path / "m2.csv", "instrument,category\na,1\nb,2\nc,3\n")
    np.testing.assert_array_equal(load_relation_graph(path2, ["a", "b", "c"]), 0.0)

    # one shared category: complete graph
    path3 = _write(tmp_path / "m3.csv", "instrument,category\na,Z\nb,Z\nc,Z\nd,Z\n")
    adj3 = load_relation_graph(path3, ["a", "b", "c", "d"])
    assert (adj3.sum(axis=1) == 3).all()
    assert np.diag(adj3).sum() == 0

    # absent instrument is isolated
    adj4 = load_relation_graph(path, ["a", "b", "zz"])
    assert adj4[2].sum() == 0

    conflict = _write(tmp_path / "c.csv", "instrument,category\na,X\na,Y\n")
    with pytest.raises(DataError):
        load_membership(conflict)


def test_membership_roundtrip(tmp_path):
    labels = {"b": "Y", "a": "X"}
    path = tmp_path / "m.csv"
    write_membership(path, labels)
    assert load_membership(path) == labels
    assert path.read_text() == "instrument,category\na,X\nb,Y\n"


def test_factors_roundtrip(tmp_path):
    _, _, fs = generate_synthetic(SynthConfig(days=10, seed=3))
    path = tmp_path / "factors.csv"
    write_factors(fs, path)
    fs2 = load_factors(path)
    assert fs2.dates == fs.dates
    np.testing.assert_array_equal(fs2.risk_free, fs.risk_free)
    for name in fs.factors:
        np.testing.assert_array_equal(fs2.factors[name], fs.factors[name])
    write_factors(fs2, tmp_path / "factors2.csv")
    assert (tmp_path / "factors.csv").read_bytes() == (tmp_path / "factors2.csv").read_bytes()


def test_panel_roundtrip_byte_identical(tmp_path):
    ds, _, _ = generate_synthetic(SynthConfig(n_instruments=5, days=8, seed=1))
    f1, p1 = tmp_path / "f1.csv", tmp_path / "p1.csv"
    write_panel(ds, f1, p1)
    ds2 = load_panel(f1, p1)
    f2, p2 = tmp_path / "f2.csv", tmp_path / "p2.csv"
    write_panel(ds2, f2, p2)
    assert f1.read_bytes() == f2.read_bytes()
    assert p1.read_bytes() == p2.read_bytes()


def test_make_windows_counts_and_alignment():
    ds, _, _ = generate_synthetic(SynthConfig(n_instruments=4, days=42, seed=2))
    wins = make_windows(ds, 40)
    assert len(wins) == 2
    assert wins[0].date == ds.dates[39]
    assert wins[0].features.shape == (40, 4, 8)
    np.testing.assert_array_equal(wins[0].features, ds.features[0:40])
    np.testing.assert_array_equal(wins[1].features, ds.features[1:41])
    np.testing.assert_array_equal(wins[0].labels, ds.labels[39])

    ds40, _, _ = generate_synthetic(SynthConfig(n_instruments=4, days=40, seed=2))
    assert make_windows(ds40, 40) == []
    with pytest.raises(ConfigError):
        make_windows(ds40, 41)


def test_standardize_features_zscores_and_imputes():
    ds, _, _ = generate_synthetic(SynthConfig(n_instruments=8, days=6, seed=4))
    ds.features[2, 3, 1] = np.nan
    out = standardize_features(ds)
    assert np.isfinite(out.features).all()
    mu = out.features.mean(axis=1)
    sd = out.features.std(axis=1)
    np.testing.assert_allclose(mu, 0.0, atol=1e-10)
    np.testing.assert_allclose(sd, 1.0, atol=1e-10)
    # input untouched
    assert np.isnan(ds.features[2, 3, 1])

    # imputed value equals the daily median of the rest, pre-scaling
    col = np.delete(ds.features[2, :, 1], 3)
    med = np.median(col)
    filled = np.append(col, med)
    want = (med - filled.mean()) / filled.std()
    got = out.features[2, 3, 1]
    assert got == pytest.approx(want, abs=1e-10)


def test_trading_dates_weekdays_only():
    dates = trading_dates("2015-01-01", 10)
    assert dates[0] == "2015-01-01"
    assert len(dates) == len(set(dates)) == 10
    import datetime

    for d in dates:
        assert datetime.date.fromisoformat(d).weekday() < 5
    assert dates == sorted(dates)


def test_synthetic_deterministic_per_seed():
    a_ds, a_g, a_f = generate_synthetic(SynthConfig(days=30, seed=7))
    b_ds, b_g, b_f = generate_synthetic(SynthConfig(days=30, seed=7))
    assert a_ds.features.tobytes() == b_ds.features.tobytes()
    assert a_ds.vwap.tobytes() == b_ds.vwap.tobytes()
    assert a_ds.volume.tobytes() == b_ds.volume.tobytes()
    np.testing.assert_array_equal(a_g.industry, b_g.industry)
    for name in a_f.factors:
        assert a_f.factors[name].tobytes() == b_f.factors[name].tobytes()

    c_ds, _, _ = generate_synthetic(SynthConfig(days=30, seed=8))
    assert a_ds.features.tobytes() != c_ds.features.tobytes()


def test_synthetic_noise_zero_linear_r2():
    cfg = SynthConfig(n_instruments=12, n_features=6, days=120, noise=0.0, seed=5)
    ds, _, _ = generate_synthetic(cfg)
    x = ds.features[:-1].reshape(-1, cfg.n_features)
    y = ds.labels[:-1].reshape(-1)
    coef, _, _, _ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ coef
    r2 = 1.0 - resid.var() / y.var()
    assert r2 > 0.999


def test_synthetic_industry_blocks():
    ds, graphs, _ = generate_synthetic(SynthConfig(n_instruments=20, days=5, seed=6))
    adj = graphs.industry
    # 4 blocks of 5: every node has degree 4
    assert (adj.sum(axis=1) == 4).all()
    # block membership follows contiguous index ranges
    for i in range(20):
        for j in range(20):
            same = i // 5 == j // 5 and i != j
            assert adj[i, j] == (1.0 if same else 0.0)


def test_synthetic_rejects_bad_config():
    with pytest.raises(ConfigError):
        SynthConfig(n_instruments=3)
    with pytest.raises(ConfigError):
        SynthConfig(days=2)
    with pytest.raises(ConfigError):
        SynthConfig(noise=-0.1)


def test_prediction_series_roundtrip(tmp_path):
    preds = PredictionSeries(
        rows=[
            ("2020-01-02", "B", -0.25),
            ("2020-01-01", "A", 1.5),
            ("2020-01-01", "B", 0.125),
        ]
    )
    assert preds.rows[0] == ("2020-01-01", "A", 1.5)
    path = tmp_path / "preds.csv"
    preds.write_csv(path)
    again = PredictionSeries.read_csv(path)
    assert again.rows == preds.rows
    assert preds.by_date()["2020-01-01"] == {"A": 1.5, "B": 0.125}

    with pytest.raises(DataError):
        PredictionSeries(rows=[("d", "i", 0.0), ("d", "i", 1.0)])
    with pytest.raises(DataError):
        PredictionSeries(rows=[("d", "i", float("nan"))])
