"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical error.  Every successful run writes a JSON run manifest next to
its outputs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

from afmm import __version__
from afmm.config import load_config
from afmm.errors import AfmmError, ConfigError, DataError
from afmm.eventstudy import (load_events, load_exposure, load_firms, load_price_panel, run_event_study,
                             write_car_rows, write_event_table, write_regression)
from afmm.experiments import run_propositions, run_sweep, write_reports_csv
from afmm.filings import load_filings, load_keywords, score_filings, write_exposure
from afmm.market import SERIES_COLUMNS, simulate_run
from afmm.report import emit_report

log = logging.getLogger("afmm")


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunManifest:
    subcommand: str
    config_digest: str
    seed: int | None
    started: str
    finished: str = ""
    outputs: list[str] = field(default_factory=list)
    version: str = __version__
    extra: dict = field(default_factory=dict)

    def write(self, path: Path) -> None:
        self.finished = _now()
        payload = {
            "version": self.version,
            "subcommand": self.subcommand,
            "config_digest": self.config_digest,
            "seed": self.seed,
            "started": self.started,
            "finished": self.finished,
            "outputs": sorted(self.outputs),
            **self.extra,
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _outdir(path) -> Path:
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _fmt(x) -> str:
    return repr(x) if isinstance(x, float) else str(x)


def _sidecar(out: Path) -> Path:
    return out.with_name(out.stem + ".run.json")


# ---------------------------------------------------------------- subcommands

def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    m = RunManifest("simulate", cfg.digest, seed, _now())
    result = simulate_run(cfg.simulation, cfg.population, seed)
    out = _outdir(args.out)
    with open(out / "series.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_COLUMNS)
        for row in result.series_rows():
            w.writerow([_fmt(x) for x in row])
    metrics = {k: (None if v != v else v) for k, v in result.metrics.as_dict().items()}
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    m.outputs = ["series.csv", "metrics.json"]
    m.extra["run_digest"] = result.manifest["config_digest"]
    m.extra["metrics"] = metrics
    m.write(out / "run.json")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.base_seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    if not cfg.sweep_params:
        raise ConfigError("sweep.params is empty; nothing to sweep")
    spec = cfg.sweep_spec()
    m = RunManifest("sweep", cfg.digest, spec.base_seed, _now())
    table = run_sweep(spec)
    out = _outdir(args.out)
    table.write_csv(out / "sweep.csv")
    m.outputs = ["sweep.csv"]
    m.write(out / "run.json")
    return 0


def cmd_propositions(args) -> int:
    cfg = load_config(args.config)
    seed = cfg.seed if args.seed is None else args.seed
    workers = cfg.workers if args.workers is None else args.workers
    m = RunManifest("propositions", cfg.digest, seed, _now())
    reports, tables, psi = run_propositions(cfg.simulation, cfg.population, cfg.plan, cfg.thresholds,
                                            base_seed=seed, workers=workers)
    out = _outdir(args.out)
    write_reports_csv(reports, out / "propositions.csv")
    m.outputs.append("propositions.csv")
    for key, table in tables.items():
        name = f"sweep_{key}.csv"
        table.write_csv(out / name)
        m.outputs.append(name)
    m.extra["verdicts"] = {r.proposition: r.verdict for r in reports}
    m.write(out / "run.json")
    for r in reports:
        print(f"{r.proposition}: {r.verdict}")
    return 0


def cmd_score_filings(args) -> int:
    keywords = load_keywords(args.keywords)
    mode = "per10k" if args.per_10k else "raw"
    docs = load_filings(args.filings)
    m = RunManifest("score-filings", _file_digest(args.keywords), None, _now())
    scores = score_filings(docs, keywords, mode)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_exposure(scores, out, mode)
    m.outputs = [out.name]
    m.extra["n_firms"] = len(scores)
    m.write(_sidecar(out))
    return 0


def cmd_event_study(args) -> int:
    panel = load_price_panel(args.prices)
    exposure = load_exposure(args.exposure) if args.exposure else {}
    firms = load_firms(args.firms, exposure)
    events_path = args.events
    if events_path is None:
        events_path = resources.files("afmm.data").joinpath("events.csv")
    events = load_events(events_path)
    digest = _file_digest(args.prices, args.firms, events_path, args.exposure)
    m = RunManifest("event-study", digest, None, _now())
    result = run_event_study(panel, firms, events, regression_event=args.regression_event)
    out = _outdir(args.out)
    write_event_table(result.table, out / "event_table.csv")
    write_regression(result.regression, out / "regression.csv")
    write_car_rows(result.car_rows, out / "car.csv")
    m.outputs = ["event_table.csv", "regression.csv", "car.csv"]
    m.extra.update({
        "day_zero": result.day_zero,
        "regression_event": result.regression_event,
        "dropped_rows": panel.dropped,
        "warnings": result.warnings,
    })
    m.write(out / "run.json")
    return 0


def cmd_report(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    m = RunManifest("report", "", None, _now())
    used = emit_report(args.input, out)
    m.config_digest = _file_digest(*(Path(args.input) / u for u in used))
    m.outputs = [out.name]
    m.write(_sidecar(out))
    return 0


def _file_digest(*paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        if p is None:
            continue
        try:
            h.update(Path(str(p)).read_bytes())
        except OSError:
            raise DataError(f"{p}: cannot read") from None
    return h.hexdigest()


# ---------------------------------------------------------------- dispatch

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="afmm", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"afmm {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="run one market simulation")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", help="run the parameter sweep in the config")
    s.add_argument("--config")
    s.add_argument("--seed", type=int, help="override the sweep base seed")
    s.add_argument("--workers", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("propositions", help="run the proposition sweeps and the similarity regression")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_propositions)

    s = sub.add_parser("score-filings", help="keyword exposure scores from filing text")
    s.add_argument("--filings", required=True)
    s.add_argument("--keywords", help="defaults to the packaged keyword list")
    s.add_argument("--out", required=True)
    s.add_argument("--per-10k", action="store_true", help="normalise counts per 10,000 tokens")
    s.set_defaults(func=cmd_score_filings)

    s = sub.add_parser("event-study", help="CARs, group table and cross-sectional regression")
    s.add_argument("--prices", required=True)
    s.add_argument("--firms", required=True)
    s.add_argument("--events", help="defaults to the packaged event calendar")
    s.add_argument("--exposure", required=True)
    s.add_argument("--regression-event", help="event id for the cross section (default E3)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_event_study)

    s = sub.add_parser("report", help="SVG charts from sweep.csv and/or event_table.csv")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except AfmmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


def main(argv=None) -> int:
    return dispatch(argv)


if __name__ == "__main__":
    sys.exit(main())
