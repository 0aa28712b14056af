"""Rebuild the golden event-study outputs.

Run from the repository root: ``python tests/golden/regen.py``.  Only needed
when the output format changes on purpose.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import pandas as pd

from afmm.eventstudy import load_events, run_event_study, write_event_table, write_regression
from afmm.synthetic import make_panel

HERE = Path(__file__).resolve().parent
START = "2025-06-02"
SHOCK_DATE = "2026-02-24"


def golden_study():
    """31 firms (8 vendor, 16 financial, 7 control) over the packaged event calendar."""
    day = list(pd.bdate_range(START, periods=400)).index(pd.Timestamp(SHOCK_DATE))
    syn = make_panel(n_vendor=8, n_financial=16, n_control=7, n_days=210, event_day=day,
                     vendor_effect=-0.05, financial_effect=-0.01, noise=0.01, seed=2026, start=START)
    events = load_events(resources.files("afmm.data").joinpath("events.csv"))
    return run_event_study(syn.panel, syn.firms, events)


if __name__ == "__main__":
    result = golden_study()
    write_event_table(result.table, HERE / "event_table.csv")
    write_regression(result.regression, HERE / "regression.csv")
    print("\n".join(result.warnings) or "no warnings")
