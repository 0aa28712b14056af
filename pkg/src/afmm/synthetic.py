"""Synthetic price panels with planted market-model parameters and event effects.

Used to check that the event-study pipeline recovers what was put in, and as
a demo data source for the command line.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from afmm.eventstudy import EventSpec, FirmRecord, FirmSeries, PricePanel


@dataclass
class SyntheticPanel:
    panel: PricePanel
    firms: list[FirmRecord]
    events: list[EventSpec]
    alpha: dict[str, float]
    beta: dict[str, float]
    effect: dict[str, float]


def make_panel(n_vendor: int = 8, n_financial: int = 12, n_control: int = 10, n_days: int = 200,
               event_day: int = 160, vendor_effect: float = -0.05, financial_effect: float = 0.0,
               noise: float = 0.0, seed: int = 0, start: str = "2025-06-02") -> SyntheticPanel:
    """Business-day panel where ``R_it = a_i + b_i * M_t + e_it`` plus a one-day event shock.

    Control firms share the market factor with no event shock, so their
    equal-weighted portfolio is itself linear in ``M_t`` and every firm is
    exactly linear in the benchmark when ``noise`` is zero.
    """
    rng = np.random.default_rng(seed)
    dates = pd.bdate_range(start, periods=n_days + 1)
    market = rng.normal(0.0005, 0.01, n_days)

    groups = ["vendor"] * n_vendor + ["financial"] * n_financial + ["control"] * n_control
    firms, alpha, beta, effect, series = [], {}, {}, {}, {}
    for i, group in enumerate(groups):
        ticker = f"{group[0].upper()}{i:03d}"
        a = float(rng.normal(0.0, 0.0005))
        b = float(rng.uniform(0.6, 1.4))
        exposure = float(rng.gamma(2.0, 5.0))
        shock = {"vendor": vendor_effect, "financial": financial_effect}.get(group, 0.0)
        r = a + b * market + (rng.normal(0.0, noise, n_days) if noise > 0 else 0.0)
        r[event_day - 1] += shock
        close = 50.0 * np.concatenate([[1.0], np.cumprod(1.0 + r)])
        volume = np.round(rng.lognormal(13.0, 0.3, n_days + 1))
        series[ticker] = FirmSeries(ticker, pd.DatetimeIndex(dates), close, volume)
        firms.append(FirmRecord(ticker, group, exposure))
        alpha[ticker], beta[ticker], effect[ticker] = a, b, shock

    # returns start on dates[1], so return index k sits on dates[k + 1]
    event = EventSpec("E1", dates[event_day].date(), "synthetic")
    return SyntheticPanel(PricePanel(series), firms, [event], alpha, beta, effect)


def write_panel(syn: SyntheticPanel, directory) -> dict[str, Path]:
    """Write ``prices.csv``, ``firms.csv``, ``events.csv`` and ``exposure.csv``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {k: d / f"{k}.csv" for k in ("prices", "firms", "events", "exposure")}
    with open(paths["prices"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "ticker", "adj_close", "volume"])
        for ticker, s in syn.panel.firms.items():
            for day, c, v in zip(s.dates, s.close, s.volume):
                w.writerow([day.date().isoformat(), ticker, repr(float(c)), int(v)])
    with open(paths["firms"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker", "group"])
        for f in syn.firms:
            w.writerow([f.ticker, f.group])
    with open(paths["events"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["event_id", "date", "label"])
        for e in syn.events:
            w.writerow([e.event_id, e.date.isoformat(), e.label])
    with open(paths["exposure"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker", "score", "mode"])
        for f in syn.firms:
            w.writerow([f.ticker, repr(f.exposure), "raw"])
    return paths
