import csv
import json

import pytest

from afmm.cli import dispatch
from afmm.eventstudy import read_event_table, read_regression
from afmm.experiments import SweepTable, read_reports_csv
from afmm.market import SERIES_COLUMNS
from afmm.synthetic import make_panel, write_panel

SMALL = {"seed": 3, "population": {"n_agents": 10},
         "simulation": {"horizon": 150, "burn_in": 20}}


@pytest.fixture
def config(tmp_path):
    def make(extra=None):
        data = json.loads(json.dumps(SMALL))
        for k, v in (extra or {}).items():
            data.setdefault(k, {}).update(v) if isinstance(v, dict) else data.__setitem__(k, v)
        path = tmp_path / f"cfg{len(list(tmp_path.glob('cfg*')))}.json"
        path.write_text(json.dumps(data))
        return path
    return make


@pytest.fixture
def panel_files(tmp_path):
    return write_panel(make_panel(noise=0.01, seed=4), tmp_path / "data")


def test_simulate_happy_path(tmp_path, config):
    out = tmp_path / "sim"
    assert dispatch(["simulate", "--config", str(config()), "--out", str(out)]) == 0
    with open(out / "series.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == SERIES_COLUMNS and len(rows) == 131
    manifest = json.loads((out / "run.json").read_text())
    assert manifest["subcommand"] == "simulate" and manifest["seed"] == 3
    assert set(manifest) >= {"version", "config_digest", "started", "finished", "outputs", "metrics"}


def test_seed_flag_overrides_config(tmp_path, config):
    cfg = config()
    dispatch(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")])
    dispatch(["simulate", "--config", str(cfg), "--seed", "4", "--out", str(tmp_path / "b")])
    assert json.loads((tmp_path / "b" / "run.json").read_text())["seed"] == 4
    assert (tmp_path / "a" / "series.csv").read_bytes() != (tmp_path / "b" / "series.csv").read_bytes()


def test_simulate_and_sweep_byte_identical(tmp_path, config):
    cfg = config({"sweep": {"params": {"C": [0.2, 0.8]}, "seeds_per_cell": 2}})
    for name in ("a", "b"):
        assert dispatch(["simulate", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
        assert dispatch(["sweep", "--config", str(cfg), "--out", str(tmp_path / f"s{name}")]) == 0
    assert (tmp_path / "a" / "series.csv").read_bytes() == (tmp_path / "b" / "series.csv").read_bytes()
    assert (tmp_path / "sa" / "sweep.csv").read_bytes() == (tmp_path / "sb" / "sweep.csv").read_bytes()
    digest = [json.loads((tmp_path / n / "run.json").read_text())["config_digest"] for n in ("a", "b")]
    assert digest[0] == digest[1]
    table = SweepTable.read_csv(tmp_path / "sa" / "sweep.csv")
    assert len(table.rows) == 4


def test_sweep_without_params_is_config_error(tmp_path, config):
    assert dispatch(["sweep", "--config", str(config()), "--out", str(tmp_path / "s")]) == 1


def test_propositions_writes_reports(tmp_path, config):
    cfg = config({"sweep": {"propositions": {"seeds_per_cell": 1, "psi_seeds": 1,
                                             "psi_C": [0.1, 0.9], "psi_H": [0.1, 0.9], "psi_skew": [0.0, 3.0]}}})
    out = tmp_path / "p"
    assert dispatch(["propositions", "--config", str(cfg), "--out", str(out)]) == 0
    reports = read_reports_csv(out / "propositions.csv")
    assert [r.proposition for r in reports] == ["P1", "P2", "P3", "PSI"]
    assert all(r.verdict in ("supported", "not_supported", "inconclusive") for r in reports)
    assert SweepTable.read_csv(out / "sweep_P3.csv").param_names == ("A", "vendor_skew", "S")


def test_score_filings(tmp_path):
    d = tmp_path / "filings"
    d.mkdir()
    (d / "AAA_10-K_2025-03-01.txt").write_text("COBOL and mainframe; core banking.")
    out = tmp_path / "exposure.csv"
    assert dispatch(["score-filings", "--filings", str(d), "--out", str(out)]) == 0
    assert out.read_text().splitlines()[1] == "AAA,3.0,raw"
    assert (tmp_path / "exposure.run.json").exists()
    assert dispatch(["score-filings", "--filings", str(d), "--out", str(out), "--per-10k"]) == 0
    assert out.read_text().splitlines()[1].endswith(",per10k")


def test_event_study_and_report(tmp_path, panel_files):
    out = tmp_path / "es"
    args = ["event-study", "--prices", str(panel_files["prices"]), "--firms", str(panel_files["firms"]),
            "--events", str(panel_files["events"]), "--exposure", str(panel_files["exposure"]), "--out", str(out)]
    assert dispatch(args) == 0
    assert len(read_event_table(out / "event_table.csv")) == 3
    assert read_regression(out / "regression.csv")["n"] == 30
    manifest = json.loads((out / "run.json").read_text())
    assert manifest["day_zero"]["E1"] and manifest["regression_event"] == "E1"
    assert dispatch(["report", "--in", str(out), "--out", str(tmp_path / "r.svg")]) == 0
    assert (tmp_path / "r.svg").read_text().count('class="car-bar"') == 3


def test_exit_codes(tmp_path, config, panel_files, capsys):
    assert dispatch(["frobnicate"]) == 1
    assert "usage" in capsys.readouterr().err
    assert dispatch([]) == 1
    bad = config({"simulation": {"horizon": 50, "burn_in": 50}})
    assert dispatch(["simulate", "--config", str(bad), "--out", str(tmp_path / "x")]) == 1
    typo = tmp_path / "typo.json"
    typo.write_text('{"simulaton": {}}')
    assert dispatch(["simulate", "--config", str(typo), "--out", str(tmp_path / "x")]) == 1
    missing = ["event-study", "--prices", str(tmp_path / "nope.csv"), "--firms", str(panel_files["firms"]),
               "--exposure", str(panel_files["exposure"]), "--out", str(tmp_path / "es")]
    assert dispatch(missing) == 2
    assert dispatch(["report", "--in", str(tmp_path / "empty"), "--out", str(tmp_path / "r.svg")]) == 2
    (tmp_path / "empty").mkdir()
    assert dispatch(["report", "--in", str(tmp_path / "empty"), "--out", str(tmp_path / "r.svg")]) == 2
    # every firm in one group: the cross section is rank deficient
    one_group = tmp_path / "firms1.csv"
    one_group.write_text("ticker,group\n" + "".join(
        f"{line.split(',')[0]},control\n" for line in panel_files["firms"].read_text().splitlines()[1:]))
    args = ["event-study", "--prices", str(panel_files["prices"]), "--firms", str(one_group),
            "--events", str(panel_files["events"]), "--exposure", str(panel_files["exposure"]),
            "--out", str(tmp_path / "es1")]
    assert dispatch(args) == 3
