import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from afmm.errors import ContractError, DataError, NumericalError
from afmm.eventstudy import (CarRow, EventSpec, FirmRecord, MarketModelFit, abnormal_log_volume, abnormal_returns,
                             build_benchmark, compute_car, cross_section_regression, event_day_zero,
                             estimation_dates, fit_market_model, group_event_table, load_events, load_firms,
                             load_price_panel, read_event_table, read_regression, run_event_study, window_dates,
                             write_event_table, write_regression)
from afmm.synthetic import make_panel

DATES = pd.bdate_range("2025-01-01", periods=80)


def series(values, name="X", dates=DATES):
    return pd.Series(np.asarray(values, float), index=dates[:len(values)], name=name)


def write(path, text):
    path.write_text(text)
    return path


# ---------------------------------------------------------------- ingestion

def test_load_two_firms_three_days(tmp_path):
    p = write(tmp_path / "p.csv", "date,ticker,adj_close,volume\n"
              "2026-01-02,AAA,10,100\n2026-01-05,AAA,11,100\n2026-01-06,AAA,12,100\n"
              "2026-01-02,BBB,20,5\n2026-01-05,BBB,19,5\n2026-01-06,BBB,21,5\n")
    panel = load_price_panel(p)
    assert sorted(panel.firms) == ["AAA", "BBB"]
    assert len(panel.returns("AAA")) == 2 and len(panel.returns("BBB")) == 2
    assert panel.returns("AAA").iloc[0] == pytest.approx(0.1)


@pytest.mark.parametrize("row, needle", [
    ("2026-01-02,AAA,10,100", "duplicate"),
    ("2026-01-05,AAA,0,100", "positive"),
    ("2026-01-05,AAA,-3,100", "positive"),
    ("2026-01-05,AAA,abc,100", "non-numeric"),
    ("2026-13-05,AAA,10,100", "date"),
    ("2026-01-05,AAA,10,-1", "volume"),
    ("2026-01-05,AAA,10", "fields"),
])
def test_malformed_rows_report_line(tmp_path, row, needle):
    p = write(tmp_path / "p.csv", f"date,ticker,adj_close,volume\n2026-01-02,AAA,10,100\n{row}\n")
    with pytest.raises(DataError, match=needle) as info:
        load_price_panel(p)
    assert ":3" in str(info.value)


def test_missing_close_dropped_and_counted(tmp_path):
    p = write(tmp_path / "p.csv", "date,ticker,adj_close,volume\n"
              "2026-01-02,AAA,10,1\n2026-01-05,AAA,,1\n2026-01-06,AAA,12,1\n")
    panel = load_price_panel(p)
    assert panel.dropped == {"AAA": 1}
    assert panel.returns("AAA").tolist() == [pytest.approx(0.2)]


def test_bad_header_and_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_price_panel(write(tmp_path / "p.csv", "day,ticker,close,volume\n"))
    with pytest.raises(DataError):
        load_price_panel(tmp_path / "absent.csv")


def test_firms_and_events_loaders(tmp_path):
    firms = load_firms(write(tmp_path / "f.csv", "ticker,group\nA,vendor\nB,control\n"), {"A": 3.0})
    assert firms == [FirmRecord("A", "vendor", 3.0), FirmRecord("B", "control", 0.0)]
    with pytest.raises(DataError):
        load_firms(write(tmp_path / "g.csv", "ticker,group\nA,bank\n"))
    events = load_events(write(tmp_path / "e.csv", "event_id,date,label\nE1,2026-01-27,x\n"))
    assert events[0].date.isoformat() == "2026-01-27"


def test_event_spec_window_ordering():
    with pytest.raises(ContractError):
        EventSpec("E", pd.Timestamp("2026-01-27").date(), estimation=(-10, 0), windows=((0, 1),))
    with pytest.raises(ContractError):
        EventSpec("E", pd.Timestamp("2026-01-27").date(), windows=((2, 1),))


# ---------------------------------------------------------------- benchmark / fit

def _panel_from(returns: dict):
    from afmm.eventstudy import FirmSeries, PricePanel
    firms = {}
    for t, r in returns.items():
        close = np.concatenate([[100.0], 100.0 * np.cumprod(1 + np.asarray(r, float))])
        firms[t] = FirmSeries(t, DATES[:len(close)], close, np.ones(len(close)))
    return PricePanel(firms)


def test_benchmark_examples():
    r = np.array([0.01, -0.02, 0.03])
    single = build_benchmark(_panel_from({"C1": r}), [FirmRecord("C1", "control")])
    assert np.allclose(single.to_numpy(), r)
    pair = build_benchmark(_panel_from({"C1": [0.02], "C2": [0.0]}),
                           [FirmRecord("C1", "control"), FirmRecord("C2", "control")])
    assert pair.iloc[0] == pytest.approx(0.01)
    sym = build_benchmark(_panel_from({"C1": r, "C2": -r}), [FirmRecord("C1", "control"), FirmRecord("C2", "control")])
    assert np.allclose(sym.to_numpy(), 0, atol=1e-16)
    with pytest.raises(ContractError):
        build_benchmark(_panel_from({"V": r}), [FirmRecord("V", "vendor")])


def test_market_model_exact_fixtures():
    rng = np.random.default_rng(1)
    m = series(rng.normal(0, 0.01, 60), "M")
    fit = fit_market_model(series(0.001 + 1.5 * m.to_numpy(), "F"), m, m.index)
    assert fit.alpha == pytest.approx(0.001, abs=1e-12) and fit.beta == pytest.approx(1.5, abs=1e-10)
    same = fit_market_model(series(m.to_numpy(), "G"), m, m.index)
    assert same.alpha == pytest.approx(0, abs=1e-14) and same.beta == pytest.approx(1, abs=1e-12)


def test_market_model_shared_hand_ols():
    m = series([0, 1, 2], "M")
    fit = fit_market_model(series([0, 1, 3], "F"), m, m.index, min_obs=3)
    assert fit.beta == pytest.approx(1.5, abs=1e-12) and fit.alpha == pytest.approx(-1 / 6, abs=1e-12)


def test_market_model_errors():
    m = series(np.linspace(-0.01, 0.01, 20), "M")
    with pytest.raises(DataError):
        fit_market_model(series(m.to_numpy(), "F"), m, m.index)
    flat = series(np.full(40, 0.001), "M")
    with pytest.raises(NumericalError):
        fit_market_model(series(np.arange(40) * 0.001, "F"), flat, flat.index)


@given(st.integers(0, 10**6), st.integers(30, 70))
def test_estimation_residual_orthogonality(seed, n):
    rng = np.random.default_rng(seed)
    m = series(rng.normal(0, 0.01, n), "M")
    f = series(rng.normal(0, 0.002) + rng.uniform(0, 2) * m.to_numpy() + rng.normal(0, 0.02, n), "F")
    fit = fit_market_model(f, m, m.index)
    ar = abnormal_returns(fit, f, m, m.index)
    assert abs(ar.mean()) < 1e-10
    assert abs(np.dot(ar - ar.mean(), m.to_numpy())) < 1e-8


# ---------------------------------------------------------------- CAR / volume

def test_car_hand_sum():
    fit = MarketModelFit("F", 0.0, 0.0, 0.0, 30)
    r = series([0.01, -0.02, 0.005], "F")
    assert compute_car(fit, r, series([0, 0, 0], "M"), r.index) == pytest.approx(-0.005, abs=1e-15)


def test_car_zero_on_fitted_line():
    m = series([0.01, -0.01, 0.02], "M")
    fit = MarketModelFit("F", 0.001, 1.2, 0.0, 30)
    r = series(0.001 + 1.2 * m.to_numpy(), "F")
    assert compute_car(fit, r, m, m.index) == pytest.approx(0, abs=1e-15)


def test_car_missing_date_named():
    m = series([0.01, -0.01, 0.02], "M")
    fit = MarketModelFit("F", 0, 1, 0, 30)
    with pytest.raises(DataError, match=str(DATES[2].date())):
        compute_car(fit, series([0.0, 0.0], "F"), m, m.index)


@given(st.integers(0, 10**6), st.integers(-5, 0), st.integers(0, 5), st.data())
def test_car_additivity(seed, a, b, data):
    rng = np.random.default_rng(seed)
    m = series(rng.normal(0, 0.01, 40), "M")
    f = series(rng.normal(0, 0.01, 40), "F")
    fit = MarketModelFit("F", 0.0003, 0.8, 0.0, 30)
    cal, d0 = m.index, 20
    c = data.draw(st.integers(a, b - 1)) if b > a else a
    if b == a:
        return
    whole = compute_car(fit, f, m, window_dates(cal, d0, (a, b)))
    left = compute_car(fit, f, m, window_dates(cal, d0, (a, c)))
    right = compute_car(fit, f, m, window_dates(cal, d0, (c + 1, b)))
    assert whole == pytest.approx(left + right, abs=1e-15)


def test_abnormal_volume_examples():
    est = DATES[:10]
    flat = series(np.full(11, 500.0), "V")
    assert abnormal_log_volume(flat, est, DATES[10:11]) == 0.0
    # log(1 + e^2 - 1) = 2 on the event day, estimation mean of log(1 + e - 1) = 1, deviation 1
    vols = series(np.r_[np.full(10, math.e - 1), math.e ** 2 - 1], "V")
    assert abnormal_log_volume(vols, est, DATES[10:11]) == pytest.approx(1.0, abs=1e-12)
    assert abnormal_log_volume(series(np.zeros(11), "V"), est, DATES[10:11]) == 0.0
    with pytest.raises(DataError):
        abnormal_log_volume(series(np.r_[np.ones(10), -1.0], "V"), est, DATES[10:11])


# ---------------------------------------------------------------- calendar

def test_weekend_event_maps_to_next_trading_day():
    cal = pd.bdate_range("2026-02-02", periods=30)
    assert cal[event_day_zero(cal, pd.Timestamp("2026-02-07"))] == pd.Timestamp("2026-02-09")
    assert cal[event_day_zero(cal, pd.Timestamp("2026-02-10"))] == pd.Timestamp("2026-02-10")
    with pytest.raises(DataError):
        event_day_zero(cal, pd.Timestamp("2027-01-01"))
    with pytest.raises(DataError):
        window_dates(cal, 1, (-3, 3))
    assert len(estimation_dates(cal, 25, (-120, -20))) == 6


# ---------------------------------------------------------------- tables / regression

FIRMS = [FirmRecord("V1", "vendor", 1.0), FirmRecord("V2", "vendor", 2.0), FirmRecord("F1", "financial", 3.0),
         FirmRecord("F2", "financial", 0.5), FirmRecord("C1", "control", 0.0), FirmRecord("C2", "control", 1.5)]


def test_group_table_examples():
    events = [EventSpec("E3", pd.Timestamp("2026-02-24").date())]
    rows = [CarRow("V1", "E3", (-1, 1), -0.0639, 0.2), CarRow("V2", "E3", (-1, 1), -0.0639, 0.4),
            CarRow("F1", "E3", (-1, 1), -0.01, 0.0), CarRow("F2", "E3", (-1, 1), -0.03, 0.0),
            CarRow("C1", "E3", (-1, 1), 0.002, 0.1), CarRow("C1", "E3", (0, 1), 9.0, 9.0)]
    table = group_event_table(rows, FIRMS, events)
    assert [(r.event_id, r.group, r.n) for r in table] == [("E3", "vendor", 2), ("E3", "financial", 2),
                                                           ("E3", "control", 1)]
    assert table[0].mean_car == pytest.approx(-0.0639)
    assert table[1].mean_car == pytest.approx(-0.02)
    assert table[2].mean_car == 0.002 and table[2].mean_abvol == 0.1
    with pytest.raises(DataError):
        group_event_table([CarRow("ZZ", "E3", (-1, 1), 0, 0)], FIRMS, events)


def test_regression_planted_exact():
    cars = {f.ticker: 0.01 - 0.05 * (f.group == "vendor") for f in FIRMS}
    fit = cross_section_regression(cars, FIRMS)
    assert fit.coef("vendor") == pytest.approx(-0.05, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0)
    assert set(fit.names) == {"intercept", "exposure", "vendor", "financial"}


def test_regression_hand_ols_cross_check():
    firms = [FirmRecord(f"X{i}", g, e) for i, (g, e) in
             enumerate([("vendor", 0), ("control", 1), ("financial", 2), ("control", 3), ("vendor", 4), ("financial", 5)])]
    cars = {f.ticker: v for f, v in zip(firms, [0.1, -0.2, 0.3, 0.05, -0.1, 0.2])}
    fit = cross_section_regression(cars, firms)
    X = np.array([[1, f.exposure, f.group == "vendor", f.group == "financial"] for f in sorted(firms, key=lambda f: f.ticker)], float)
    y = np.array([cars[f.ticker] for f in sorted(firms, key=lambda f: f.ticker)])
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    assert np.allclose(fit.coefficients, beta, atol=1e-12)


def test_regression_errors():
    with pytest.raises(NumericalError):
        cross_section_regression({f"V{i}": 0.01 * i for i in range(6)},
                                 [FirmRecord(f"V{i}", "vendor", float(i)) for i in range(6)])
    with pytest.raises(ContractError):
        cross_section_regression({"V1": 0.1, "C1": 0.0}, FIRMS)


def test_writers_round_trip(tmp_path):
    syn = make_panel(noise=0.01, seed=5)
    res = run_event_study(syn.panel, syn.firms, syn.events)
    write_event_table(res.table, tmp_path / "event_table.csv")
    assert read_event_table(tmp_path / "event_table.csv") == res.table
    write_regression(res.regression, tmp_path / "regression.csv")
    back = read_regression(tmp_path / "regression.csv")
    assert back["n"] == 30 and back["r_squared"] == res.regression.r_squared
    assert back["vendor"] == (res.regression.coef("vendor"), res.regression.t("vendor"))


# ---------------------------------------------------------------- synthetic recovery

def test_zero_noise_recovery():
    syn = make_panel(noise=0.0, seed=3)
    res = run_event_study(syn.panel, syn.firms, syn.events)
    for row in res.car_rows:
        # the one-day shock lies inside every default window
        assert abs(row.car - syn.effect[row.ticker]) < 1e-9


def test_control_benchmark_self_consistency():
    syn = make_panel(noise=0.01, seed=9)
    res = run_event_study(syn.panel, syn.firms, syn.events)
    controls = [f.ticker for f in syn.firms if f.group == "control"]
    est_means = [res.fits[("E1", t)].residuals.mean() for t in controls]
    assert abs(np.mean(est_means)) < 1e-10
    cars = np.array([r.car for r in res.car_rows if r.ticker in controls and r.window == (-1, 1)])
    assert abs(cars.mean()) < 2 * cars.std(ddof=1) / math.sqrt(len(cars)) + 1e-12


def test_short_estimation_window_warns_and_drops():
    syn = make_panel(n_days=90, event_day=60, seed=2)
    res = run_event_study(syn.panel, syn.firms, syn.events)
    assert any("short estimation window" in w for w in res.warnings)
    tiny = make_panel(n_days=60, event_day=40, seed=2)
    with pytest.raises(ContractError):
        # every firm is dropped (fewer than 30 estimation days), leaving no cross section
        run_event_study(tiny.panel, tiny.firms, tiny.events)
