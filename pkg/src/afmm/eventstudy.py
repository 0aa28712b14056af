"""Event study of capability announcements on a cross-section of firms.

Pipeline: daily simple returns from adjusted closes, an equal-weighted
benchmark of the control group, per-firm market-model fits over a pre-event
estimation window, cumulative abnormal returns and abnormal log volume over
event windows, group means, and a cross-sectional regression of the headline
CAR on exposure and business-model dummies.

Event time runs on the benchmark calendar (dates on which every control firm
has a return).  Day 0 is the first calendar date on or after the event date,
so an event falling on a weekend or holiday maps to the next trading day.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from afmm.errors import ContractError, DataError, NumericalError
from afmm.metrics import OlsResult, ols_fit

log = logging.getLogger(__name__)

GROUPS = ("vendor", "financial", "control")
DEFAULT_WINDOWS = ((0, 1), (-1, 1), (-3, 3))
DEFAULT_ESTIMATION = (-120, -20)
HEADLINE_WINDOW = (-1, 1)
MIN_ESTIMATION_OBS = 30
REGRESSION_TERMS = ("exposure", "vendor", "financial")


@dataclass
class FirmSeries:
    ticker: str
    dates: pd.DatetimeIndex
    close: np.ndarray
    volume: np.ndarray

    def returns(self) -> pd.Series:
        r = self.close[1:] / self.close[:-1] - 1.0
        return pd.Series(r, index=self.dates[1:], name=self.ticker)

    def volumes(self) -> pd.Series:
        return pd.Series(self.volume, index=self.dates, name=self.ticker)


@dataclass
class PricePanel:
    firms: dict[str, FirmSeries]
    dropped: dict[str, int] = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def _get(self, ticker: str, kind: str) -> pd.Series:
        key = (ticker, kind)
        if key not in self._cache:
            try:
                firm = self.firms[ticker]
            except KeyError:
                raise DataError(f"no prices for {ticker}") from None
            self._cache[key] = firm.returns() if kind == "r" else firm.volumes()
        return self._cache[key]

    def returns(self, ticker: str) -> pd.Series:
        return self._get(ticker, "r")

    def volumes(self, ticker: str) -> pd.Series:
        return self._get(ticker, "v")


@dataclass(frozen=True)
class FirmRecord:
    ticker: str
    group: str
    exposure: float = 0.0

    def __post_init__(self):
        if self.group not in GROUPS:
            raise DataError(f"{self.ticker}: group must be one of {GROUPS}, got {self.group!r}")
        if not self.exposure >= 0:
            raise DataError(f"{self.ticker}: exposure must be >= 0, got {self.exposure}")


@dataclass(frozen=True)
class EventSpec:
    event_id: str
    date: date
    label: str = ""
    windows: tuple[tuple[int, int], ...] = DEFAULT_WINDOWS
    estimation: tuple[int, int] = DEFAULT_ESTIMATION

    def __post_init__(self):
        a, b = self.estimation
        if a > b:
            raise ContractError(f"{self.event_id}: estimation window {self.estimation} is reversed")
        for t1, t2 in self.windows:
            if t1 > t2:
                raise ContractError(f"{self.event_id}: event window {(t1, t2)} is reversed")
            if b >= t1:
                raise ContractError(
                    f"{self.event_id}: estimation window {self.estimation} must end before event window {(t1, t2)}"
                )


@dataclass(frozen=True)
class MarketModelFit:
    ticker: str
    alpha: float
    beta: float
    resid_std: float
    n_estimation: int
    residuals: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))


@dataclass(frozen=True)
class CarRow:
    ticker: str
    event_id: str
    window: tuple[int, int]
    car: float
    abvol: float


@dataclass(frozen=True)
class EventTableRow:
    event_id: str
    group: str
    n: int
    mean_car: float
    mean_abvol: float


# ---------------------------------------------------------------- ingestion

def _parse_date(text: str, where: str) -> pd.Timestamp:
    try:
        return pd.Timestamp(date.fromisoformat(text.strip()))
    except ValueError:
        raise DataError(f"{where}: bad ISO date {text!r}") from None


def _read_rows(path, header: Sequence[str]) -> Iterable[tuple[int, list[str]]]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: file not found")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None or [h.strip() for h in first] != list(header):
            raise DataError(f"{path}:1: expected header {','.join(header)}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{reader.line_num}: expected {len(header)} fields, got {len(row)}")
            yield reader.line_num, [c.strip() for c in row]


def load_price_panel(path) -> PricePanel:
    """Read ``date,ticker,adj_close,volume`` rows into per-firm series.

    Rows with an empty close are dropped (counted per firm); duplicate
    ``(ticker, date)`` pairs, nonpositive closes, negative volumes and
    unparseable fields raise DataError with the offending line.
    """
    rows: dict[str, dict[pd.Timestamp, tuple[float, float]]] = {}
    dropped: dict[str, int] = {}
    seen: set[tuple[str, pd.Timestamp]] = set()
    for line, (d, ticker, close, volume) in _read_rows(path, ("date", "ticker", "adj_close", "volume")):
        where = f"{path}:{line}"
        if not ticker:
            raise DataError(f"{where}: empty ticker")
        when = _parse_date(d, where)
        firm = rows.setdefault(ticker, {})
        if (ticker, when) in seen:
            raise DataError(f"{where}: duplicate row for {ticker} on {when.date()}")
        seen.add((ticker, when))
        if close == "":
            dropped[ticker] = dropped.get(ticker, 0) + 1
            continue
        try:
            c = float(close)
            v = float(volume)
        except ValueError:
            raise DataError(f"{where}: non-numeric adj_close or volume") from None
        if not (math.isfinite(c) and c > 0):
            raise DataError(f"{where}: adj_close must be positive, got {close}")
        if not (math.isfinite(v) and v >= 0):
            raise DataError(f"{where}: volume must be >= 0, got {volume}")
        firm[when] = (c, v)
    if not rows:
        raise DataError(f"{path}: no price rows")
    for ticker, n in dropped.items():
        log.warning("%s: dropped %d rows with missing close", ticker, n)

    firms = {}
    for ticker in sorted(rows):
        firm = rows[ticker]
        dates = sorted(firm)
        firms[ticker] = FirmSeries(
            ticker=ticker,
            dates=pd.DatetimeIndex(dates),
            close=np.array([firm[d][0] for d in dates]),
            volume=np.array([firm[d][1] for d in dates]),
        )
    return PricePanel(firms, dropped)


def load_firms(path, exposure: Mapping[str, float] | None = None) -> list[FirmRecord]:
    exposure = exposure or {}
    out, seen = [], set()
    for line, (ticker, group) in _read_rows(path, ("ticker", "group")):
        if ticker in seen:
            raise DataError(f"{path}:{line}: duplicate ticker {ticker}")
        seen.add(ticker)
        try:
            out.append(FirmRecord(ticker, group, float(exposure.get(ticker, 0.0))))
        except DataError as exc:
            raise DataError(f"{path}:{line}: {exc}") from None
    return out


def load_events(path, windows=DEFAULT_WINDOWS, estimation=DEFAULT_ESTIMATION) -> list[EventSpec]:
    out = []
    for line, (event_id, d, label) in _read_rows(path, ("event_id", "date", "label")):
        out.append(EventSpec(event_id, _parse_date(d, f"{path}:{line}").date(), label,
                             tuple(windows), tuple(estimation)))
    if not out:
        raise DataError(f"{path}: no events")
    return out


def load_exposure(path) -> dict[str, float]:
    out = {}
    for line, (ticker, score, _mode) in _read_rows(path, ("ticker", "score", "mode")):
        try:
            out[ticker] = float(score)
        except ValueError:
            raise DataError(f"{path}:{line}: non-numeric score {score!r}") from None
    return out


# ---------------------------------------------------------------- estimation

def build_benchmark(panel: PricePanel, firms: Sequence[FirmRecord]) -> pd.Series:
    """Equal-weighted control-group return on dates where every control trades."""
    controls = [f.ticker for f in firms if f.group == "control"]
    if not controls:
        raise ContractError("benchmark needs at least one control firm")
    frame = pd.concat([panel.returns(t) for t in controls], axis=1, join="inner")
    if frame.empty:
        raise DataError("control firms share no trading dates")
    bench = frame.mean(axis=1)
    bench.name = "benchmark"
    return bench


def event_day_zero(calendar: pd.DatetimeIndex, event_date) -> int:
    pos = int(calendar.searchsorted(pd.Timestamp(event_date), side="left"))
    if pos >= len(calendar):
        raise DataError(f"event date {event_date} is after the last benchmark date")
    return pos


def window_dates(calendar: pd.DatetimeIndex, day0: int, window: tuple[int, int]) -> pd.DatetimeIndex:
    t1, t2 = window
    lo, hi = day0 + t1, day0 + t2
    if lo < 0 or hi >= len(calendar):
        raise DataError(f"window {window} around {calendar[day0].date()} runs past the available data")
    return calendar[lo:hi + 1]


def estimation_dates(calendar: pd.DatetimeIndex, day0: int, estimation: tuple[int, int]) -> pd.DatetimeIndex:
    a, b = estimation
    hi = day0 + b
    if hi < 0:
        return calendar[:0]
    return calendar[max(0, day0 + a):hi + 1]


def _aligned(series: pd.Series, dates: pd.DatetimeIndex) -> np.ndarray:
    return series.reindex(dates).to_numpy(dtype=float)


def fit_market_model(firm_returns: pd.Series, benchmark: pd.Series, estimation,
                     min_obs: int = MIN_ESTIMATION_OBS) -> MarketModelFit:
    """OLS of firm returns on an intercept and the benchmark over ``estimation`` dates."""
    dates = pd.DatetimeIndex(estimation)
    y = _aligned(firm_returns, dates)
    x = _aligned(benchmark, dates)
    keep = np.isfinite(y) & np.isfinite(x)
    y, x = y[keep], x[keep]
    n = y.size
    if n < min_obs:
        raise DataError(f"{firm_returns.name}: {n} estimation observations, need {min_obs}")
    if np.ptp(x) == 0:
        raise NumericalError(f"{firm_returns.name}: benchmark is constant over the estimation window")
    fit = ols_fit(y, x, names=("alpha", "beta"))
    resid_std = float(np.sqrt(fit.residuals @ fit.residuals / (n - 2)))
    return MarketModelFit(str(firm_returns.name), float(fit.coefficients[0]), float(fit.coefficients[1]),
                          resid_std, n, fit.residuals)


def _require(values: np.ndarray, dates: pd.DatetimeIndex, what: str) -> None:
    missing = ~np.isfinite(values)
    if missing.any():
        raise DataError(f"{what}: no value on {dates[int(np.argmax(missing))].date()}")


def abnormal_returns(fit: MarketModelFit, firm_returns: pd.Series, benchmark: pd.Series, dates) -> np.ndarray:
    dates = pd.DatetimeIndex(dates)
    r = _aligned(firm_returns, dates)
    m = _aligned(benchmark, dates)
    _require(r, dates, f"{fit.ticker} return")
    _require(m, dates, "benchmark return")
    return r - (fit.alpha + fit.beta * m)


def compute_car(fit: MarketModelFit, firm_returns: pd.Series, benchmark: pd.Series, window_dates) -> float:
    return float(abnormal_returns(fit, firm_returns, benchmark, window_dates).sum())


def abnormal_log_volume(volumes: pd.Series, estimation, event) -> float:
    """Event-window sum of ``log(1+vol)`` deviations from its estimation-window mean."""
    if (volumes.to_numpy() < 0).any():
        raise DataError(f"{volumes.name}: negative volume")
    est = _aligned(volumes, pd.DatetimeIndex(estimation))
    est = est[np.isfinite(est)]
    if est.size == 0:
        raise DataError(f"{volumes.name}: no volume in the estimation window")
    baseline = float(np.log1p(est).mean())
    event = pd.DatetimeIndex(event)
    ev = _aligned(volumes, event)
    _require(ev, event, f"{volumes.name} volume")
    return float(np.sum(np.log1p(ev) - baseline))


# ---------------------------------------------------------------- tables

def group_event_table(car_rows: Sequence[CarRow], firms: Sequence[FirmRecord], events: Sequence[EventSpec],
                      window: tuple[int, int] = HEADLINE_WINDOW) -> list[EventTableRow]:
    """Group means of CAR and abnormal volume per event, event-major, groups in fixed order."""
    group_of = {f.ticker: f.group for f in firms}
    buckets: dict[tuple[str, str], list[CarRow]] = {}
    for row in car_rows:
        if row.ticker not in group_of:
            raise DataError(f"unknown ticker {row.ticker} in CAR rows")
        if tuple(row.window) != tuple(window):
            continue
        buckets.setdefault((row.event_id, group_of[row.ticker]), []).append(row)
    out = []
    for ev in events:
        for g in GROUPS:
            rows = buckets.get((ev.event_id, g), [])
            n = len(rows)
            mean_car = float(np.mean([r.car for r in rows])) if n else float("nan")
            mean_abvol = float(np.mean([r.abvol for r in rows])) if n else float("nan")
            out.append(EventTableRow(ev.event_id, g, n, mean_car, mean_abvol))
    return out


def cross_section_regression(car_by_firm: Mapping[str, float], firms: Sequence[FirmRecord]) -> OlsResult:
    """OLS of CAR on an intercept, exposure score, and vendor/financial dummies (control omitted)."""
    by_ticker = {f.ticker: f for f in firms}
    tickers = sorted(car_by_firm)
    missing = [t for t in tickers if t not in by_ticker]
    if missing:
        raise DataError(f"no firm record for {', '.join(missing)}")
    if len(tickers) < 5:
        raise ContractError(f"cross-section needs at least 5 firms, got {len(tickers)}")
    y = np.array([car_by_firm[t] for t in tickers])
    X = np.array([
        [by_ticker[t].exposure, by_ticker[t].group == "vendor", by_ticker[t].group == "financial"]
        for t in tickers
    ], dtype=float)
    return ols_fit(y, X, names=REGRESSION_TERMS)


# ---------------------------------------------------------------- orchestration

@dataclass
class EventStudyResult:
    car_rows: list[CarRow]
    table: list[EventTableRow]
    regression: OlsResult | None
    regression_event: str | None
    day_zero: dict[str, str]
    fits: dict[tuple[str, str], MarketModelFit]
    warnings: list[str]


def run_event_study(panel: PricePanel, firms: Sequence[FirmRecord], events: Sequence[EventSpec],
                    regression_event: str | None = None,
                    headline: tuple[int, int] = HEADLINE_WINDOW) -> EventStudyResult:
    bench = build_benchmark(panel, firms)
    calendar = bench.index
    warnings: list[str] = []
    car_rows: list[CarRow] = []
    fits: dict[tuple[str, str], MarketModelFit] = {}
    day_zero: dict[str, str] = {}

    for ev in events:
        d0 = event_day_zero(calendar, ev.date)
        day_zero[ev.event_id] = str(calendar[d0].date())
        est = estimation_dates(calendar, d0, ev.estimation)
        full_len = ev.estimation[1] - ev.estimation[0] + 1
        wins = {w: window_dates(calendar, d0, w) for w in ev.windows}
        for firm in sorted(firms, key=lambda f: f.ticker):
            if firm.ticker not in panel.firms:
                warnings.append(f"{ev.event_id}/{firm.ticker}: no price data, dropped")
                continue
            rets = panel.returns(firm.ticker)
            try:
                fit = fit_market_model(rets, bench, est)
            except DataError as exc:
                warnings.append(f"{ev.event_id}/{firm.ticker}: {exc}; dropped")
                continue
            if fit.n_estimation < full_len:
                warnings.append(f"{ev.event_id}/{firm.ticker}: short estimation window ({fit.n_estimation} obs)")
            fits[(ev.event_id, firm.ticker)] = fit
            vols = panel.volumes(firm.ticker)
            for w, dates in wins.items():
                car = compute_car(fit, rets, bench, dates)
                abvol = abnormal_log_volume(vols, est, dates)
                car_rows.append(CarRow(firm.ticker, ev.event_id, w, car, abvol))

    for msg in warnings:
        log.warning(msg)
    table = group_event_table(car_rows, firms, events, headline)

    ids = [e.event_id for e in events]
    if regression_event is None:
        regression_event = "E3" if "E3" in ids else ids[0]
    elif regression_event not in ids:
        raise DataError(f"regression event {regression_event!r} not among {ids}")
    cars = {r.ticker: r.car for r in car_rows if r.event_id == regression_event and r.window == tuple(headline)}
    regression = cross_section_regression(cars, firms)
    return EventStudyResult(car_rows, table, regression, regression_event, day_zero, fits, warnings)


# ---------------------------------------------------------------- file outputs

def _num(x: float) -> str:
    return "" if isinstance(x, float) and math.isnan(x) else repr(float(x))


def write_event_table(rows: Sequence[EventTableRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["event_id", "group", "n", "mean_car", "mean_abvol"])
        for r in rows:
            w.writerow([r.event_id, r.group, r.n, _num(r.mean_car), _num(r.mean_abvol)])


def read_event_table(path) -> list[EventTableRow]:
    out = []
    for line, (event_id, group, n, car, abvol) in _read_rows(path, ("event_id", "group", "n", "mean_car", "mean_abvol")):
        try:
            out.append(EventTableRow(event_id, group, int(n),
                                     float(car) if car else float("nan"),
                                     float(abvol) if abvol else float("nan")))
        except ValueError:
            raise DataError(f"{path}:{line}: malformed event-table row") from None
    return out


def write_regression(fit: OlsResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["term", "coefficient", "t_stat"])
        for term in REGRESSION_TERMS:
            w.writerow([term, _num(fit.coef(term)), _num(fit.t(term))])
        w.writerow(["r_squared", _num(fit.r_squared), ""])
        w.writerow(["n", fit.n_obs, ""])


def read_regression(path) -> dict[str, object]:
    """Parse ``regression.csv`` into ``{term: (coef, t)}`` plus ``r_squared`` and ``n``."""
    out: dict[str, object] = {}
    for line, (term, coef, t) in _read_rows(path, ("term", "coefficient", "t_stat")):
        if term == "r_squared":
            out["r_squared"] = float(coef)
        elif term == "n":
            out["n"] = int(coef)
        else:
            out[term] = (float(coef), float(t) if t else float("nan"))
    return out


def write_car_rows(rows: Sequence[CarRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker", "event_id", "tau1", "tau2", "car", "abvol"])
        for r in rows:
            w.writerow([r.ticker, r.event_id, r.window[0], r.window[1], _num(r.car), _num(r.abvol)])
