"""Serialization of traces and reports (CSV / JSON)."""

from __future__ import annotations

import csv
import io
import math
from collections import Counter

import numpy as np

from . import analysis
from .config import ScenarioConfig
from .engine import Trace
from .model import STATE_FIELDS

REPORT_SCHEMA_VERSION = 1

TRACE_COLUMNS = (
    ("t",)
    + STATE_FIELDS
    + ("v_ds_s1", "v_ds_s2", "v_ds_s3", "v_ds_s4")
    + tuple(f"i_d{i}" for i in range(1, 9))
    + ("p_in", "p_o1", "p_o2", "mode_tag")
)

SWEEP_COLUMNS = (
    "value", "p_out1", "p_out2", "efficiency",
    "zvs_s1", "zvs_s2", "zvs_s3", "zvs_s4",
    "residual", "converged",
)


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, str):
        return value
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.12g}"


def trace_columns(trace: Trace) -> dict[str, np.ndarray]:
    d = trace.derived
    cols: dict[str, np.ndarray] = {"t": trace.t}
    for name in STATE_FIELDS:
        cols[name] = trace.state(name)
    for name in TRACE_COLUMNS[1 + len(STATE_FIELDS):-1]:
        cols[name] = d[name]
    return cols


def write_trace_csv(trace: Trace, stream) -> None:
    cols = trace_columns(trace)
    tags = trace.mode_tags
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    numeric = [cols[name] for name in TRACE_COLUMNS[:-1]]
    for i in range(len(trace)):
        writer.writerow([fmt(c[i]) for c in numeric] + [tags[i]])


def trace_csv_text(trace: Trace) -> str:
    buf = io.StringIO()
    write_trace_csv(trace, buf)
    return buf.getvalue()


def read_trace_csv(stream) -> dict[str, np.ndarray | list]:
    """Parse a trace CSV back into columns (mode_tag stays a list of strings)."""
    reader = csv.reader(stream)
    header = next(reader)
    rows = list(reader)
    out: dict = {}
    for j, name in enumerate(header):
        if name == "mode_tag":
            out[name] = [r[j] for r in rows]
        else:
            out[name] = np.array([float(r[j]) for r in rows])
    return out


def _event_dict(e, t0: float) -> dict:
    return {"t": e.time - t0, "kind": e.kind, "detail": analysis._finite_or_none(e.detail)}


def simulate_report(cfg: ScenarioConfig, trace: Trace, residual: float) -> dict:
    params, loads = cfg.converter, cfg.loads
    try:
        zvs = analysis.zvs_report(trace, params).to_dict()
    except ValueError:
        zvs = None
    power = analysis.power_report(trace, params, loads).to_dict()
    t0 = float(trace.t[0])
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": "simulate",
        "scenario": cfg.name,
        "converged": bool(trace.converged),
        "residual": float(residual),
        "cycles": int(trace.cycles),
        "t_start": t0,
        "period": params.period,
        "zvs": zvs,
        "power": power,
        "events": {
            "counts": dict(sorted(Counter(e.kind for e in trace.events).items())),
            "log": [_event_dict(e, t0) for e in trace.events],
        },
    }


def design_report(cfg: ScenarioConfig, i_pri_peak: float | None = None) -> dict:
    summary = analysis.design_summary(cfg.converter, cfg.loads, i_pri_peak)
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "kind": "design",
        "scenario": cfg.name,
        **summary,
    }


def design_text(report: dict) -> str:
    lines = [f"scenario: {report['scenario']}"]
    for name, tank in report["tanks"].items():
        lines.append(f"{name}:")
        lines.append(f"  f_r        = {tank['f_r'] / 1e3:.2f} kHz")
        lines.append(f"  f_sr       = {tank['f_sr'] / 1e3:.2f} kHz")
        lines.append(f"  i_lm_peak  = {tank['i_lm_peak']:.4g} A")
        lines.append(f"  i_pri_peak = {tank['i_pri_peak']:.4g} A ({tank['i_pri_peak_source']})")
        lines.append(f"  vcr_max    = {tank['vcr_max']:.4g} V")
    lines.append(f"required_dead_time = {report['required_dead_time'] * 1e9:.1f} ns")
    lines.append(f"t_dead             = {report['t_dead'] * 1e9:.1f} ns")
    lines.append(f"dead_time_ok       = {report['dead_time_ok']}")
    return "\n".join(lines) + "\n"


def sweep_row(value: float, trace: Trace, residual: float, cfg: ScenarioConfig) -> dict:
    power = analysis.power_report(trace, cfg.converter, cfg.loads)
    zvs = analysis.zvs_report(trace, cfg.converter)
    row = {
        "value": value,
        "p_out1": power.p_out1,
        "p_out2": power.p_out2,
        "efficiency": power.efficiency,
        "residual": residual,
        "converged": bool(trace.converged),
    }
    for sw, res in zvs.switches.items():
        row[f"zvs_{sw}"] = bool(res.achieved)
    return row


def write_rows_csv(rows: list[dict], columns, stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt(row[c]) for c in columns])
