"""Command-line front end: design | simulate | sweep | zvs."""

from __future__ import annotations

import argparse
import io
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import analysis, config, report
from .engine import SimulationError, run_to_steady_state

log = logging.getLogger("threeport")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_CONVERGED = 3
EXIT_IO = 4
EXIT_ZVS_INFEASIBLE = 5
EXIT_SIM_FAILED = 6


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _load(args) -> config.ScenarioConfig:
    try:
        cfg = config.load(args.config)
        overrides = {}
        if getattr(args, "dt", None) is not None:
            overrides["dt"] = args.dt
            overrides["event_tol"] = args.dt / 1024
        if getattr(args, "cycles", None) is not None:
            overrides["max_cycles"] = args.cycles
        if overrides:
            cfg = cfg.with_sim(**overrides)
            cfg.sim  # validate
        return cfg
    except (config.ConfigError, ValueError) as exc:
        raise CliError(f"config error: {exc}", EXIT_CONFIG) from exc


def _steady(cfg: config.ScenarioConfig):
    try:
        return run_to_steady_state(cfg.converter, cfg.loads, cfg.sim)
    except SimulationError as exc:
        raise CliError(f"simulation failed: {exc}", EXIT_SIM_FAILED) from exc


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc}", EXIT_IO) from exc
    return out


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from exc


def cmd_design(args) -> int:
    cfg = _load(args)
    try:
        rep = report.design_report(cfg, args.i_pri_peak)
    except analysis.ZvsInfeasible as exc:
        raise CliError(str(exc), EXIT_ZVS_INFEASIBLE) from exc
    except ValueError as exc:
        raise CliError(f"design error: {exc}", EXIT_CONFIG) from exc
    text = json.dumps(rep, indent=2) + "\n" if args.format == "json" else report.design_text(rep)
    if args.out:
        _write(_out_dir(args) / ("design.json" if args.format == "json" else "design.txt"), text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load(args)
    trace, r = _steady(cfg)
    rep = report.simulate_report(cfg, trace, r)
    out = _out_dir(args)
    try:
        with open(out / "trace.csv", "w", encoding="utf-8", newline="") as fh:
            report.write_trace_csv(trace, fh)
    except OSError as exc:
        raise CliError(f"cannot write trace: {exc}", EXIT_IO) from exc
    _write(out / "report.json", json.dumps(rep, indent=2) + "\n")
    if args.format == "json":
        sys.stdout.write(json.dumps(rep, indent=2) + "\n")
    else:
        power = rep["power"]
        zvs = rep["zvs"]
        sys.stdout.write(
            f"converged={rep['converged']} residual={rep['residual']:.3g} cycles={rep['cycles']}\n"
            f"p_in={power['p_in']:.2f} W p_out1={power['p_out1']:.2f} W "
            f"p_out2={power['p_out2']:.2f} W efficiency={power['efficiency']:.4f}\n"
            f"zvs_all={zvs['all_achieved'] if zvs else None}\n"
        )
    if not trace.converged:
        log.error("steady state not reached (residual %.3g); outputs flagged", r)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_zvs(args) -> int:
    cfg = _load(args)
    trace, r = _steady(cfg)
    zvs = analysis.zvs_report(trace, cfg.converter, args.threshold)
    if args.format == "json":
        payload = {"schema_version": report.REPORT_SCHEMA_VERSION, "scenario": cfg.name,
                   "converged": bool(trace.converged), **zvs.to_dict()}
        sys.stdout.write(json.dumps(payload, indent=2) + "\n")
    else:
        rows = [
            {"switch": sw, "v_ds_at_turn_on": s.v_ds_at_turn_on, "achieved": s.achieved,
             "margin": s.margin, "required_dead_time": s.required_dead_time}
            for sw, s in zvs.switches.items()
        ]
        report.write_rows_csv(
            rows, ("switch", "v_ds_at_turn_on", "achieved", "margin", "required_dead_time"),
            sys.stdout,
        )
    return EXIT_OK if trace.converged else EXIT_NOT_CONVERGED


def _sweep_point(cfg: config.ScenarioConfig, value: float) -> dict:
    point = cfg.with_value(cfg.sweep.parameter, value)
    try:
        trace, r = run_to_steady_state(point.converter, point.loads, point.sim)
    except SimulationError as exc:
        log.error("sweep point %s=%g failed: %s", cfg.sweep.parameter, value, exc)
        row = {c: float("nan") for c in report.SWEEP_COLUMNS}
        row.update(value=value, converged=False)
        return row
    return report.sweep_row(value, trace, r, point)


def run_sweep(cfg: config.ScenarioConfig, jobs: int = 1) -> list[dict]:
    """One steady-state run per sweep value, in sweep order."""
    if cfg.sweep is None:
        raise CliError("scenario defines no sweep axis", EXIT_CONFIG)
    values = list(cfg.sweep.values)
    for v in values:
        cfg.with_value(cfg.sweep.parameter, v)  # validate before running
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_point, [cfg] * len(values), values))
    return [_sweep_point(cfg, v) for v in values]


def cmd_sweep(args) -> int:
    cfg = _load(args)
    try:
        rows = run_sweep(cfg, args.jobs)
    except config.ConfigError as exc:
        raise CliError(f"config error: {exc}", EXIT_CONFIG) from exc
    columns = ("parameter",) + report.SWEEP_COLUMNS
    for row in rows:
        row["parameter"] = cfg.sweep.parameter
    if args.format == "json":
        text = json.dumps({"schema_version": report.REPORT_SCHEMA_VERSION, "scenario": cfg.name,
                           "rows": analysis._finite_or_none(rows)}, indent=2) + "\n"
        name = "sweep.json"
    else:
        buf = io.StringIO()
        report.write_rows_csv(rows, columns, buf)
        text = buf.getvalue()
        name = "sweep.csv"
    if args.out:
        _write(_out_dir(args) / name, text)
    sys.stdout.write(text)
    if not all(row["converged"] for row in rows):
        log.error("some sweep points did not converge")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="threeport",
        description="Two-port LLC converter: design equations and event-driven simulation.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, fmt_default="csv"):
        p.add_argument("--config", required=True,
                       help="scenario YAML file, or the name of a bundled scenario")
        p.add_argument("--format", choices=("csv", "json"), default=fmt_default)

    def sim_flags(p):
        p.add_argument("--dt", type=float, help="integration step in seconds")
        p.add_argument("--cycles", type=int, help="maximum number of switching periods")

    p = sub.add_parser("design", help="closed-form tank and dead-time design values")
    common(p, "json")
    p.add_argument("--out", help="also write the report into this directory")
    p.add_argument("--i-pri-peak", type=float, default=None,
                   help="primary peak current for the capacitor stress (A)")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("simulate", help="steady-state simulation: trace.csv + report.json")
    common(p)
    sim_flags(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="steady-state metrics along the scenario's sweep axis")
    common(p)
    sim_flags(p)
    p.add_argument("--out", help="also write the table into this directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("zvs", help="per-switch ZVS verdict at steady state")
    common(p)
    sim_flags(p)
    p.add_argument("--threshold", type=float, default=None,
                   help="v_ds threshold for ZVS in volts (default 1%% of v_in)")
    p.set_defaults(func=cmd_zvs)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
