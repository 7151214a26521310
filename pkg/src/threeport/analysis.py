"""Closed-form design relations, ZVS checks and power accounting."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .engine import Trace
from .model import IDX, Bridge, ConverterParams, LoadSpec, Rect, stored_energy

# Capacitance charged by the per-capacitor current I_coss = (I_lm1 + I_lm2)/2:
# one C_oss. Set to 2.0 to size against the whole node (2*C_oss) instead.
DEAD_TIME_CAP_FACTOR = 1.0

ZVS_THRESHOLD_FRACTION = 0.01

SWITCHES = ("s1", "s2", "s3", "s4")
_PAIR_OF = {"s1": "P", "s4": "P", "s2": "N", "s3": "N"}


class ZvsInfeasible(ValueError):
    """No magnetizing current is available to swing the bridge nodes."""


def _positive(**values):
    for name, value in values.items():
        if not (math.isfinite(value) and value > 0):
            raise ValueError(f"{name} must be finite and > 0, got {value!r}")


def resonant_frequency(l_r: float, c_r: float) -> float:
    _positive(l_r=l_r, c_r=c_r)
    return 1.0 / (2.0 * math.pi * math.sqrt(l_r * c_r))


def secondary_resonant_frequency(l_r: float, l_m: float, c_r: float) -> float:
    """Resonance of the tank with l_m in series (rectifier blocking)."""
    _positive(l_r=l_r, c_r=c_r)
    if not (math.isfinite(l_m) and l_m >= 0):
        raise ValueError(f"l_m must be finite and >= 0, got {l_m!r}")
    return 1.0 / (2.0 * math.pi * math.sqrt((l_r + l_m) * c_r))


def magnetizing_peak_current(v_out: float, l_m: float, f_s: float) -> float:
    """Peak of the triangular magnetizing current under a +/-v_out clamp.

    ``v_out`` is the primary-referred clamp voltage, i.e. n * v_o.
    """
    _positive(v_out=v_out, l_m=l_m, f_s=f_s)
    return v_out / (4.0 * l_m * f_s)


def required_dead_time(
    params: ConverterParams,
    i_lm1_pk: float,
    i_lm2_pk: float,
    cap_factor: float = DEAD_TIME_CAP_FACTOR,
) -> float:
    """Time for the magnetizing current to swing a leg node across the full rail."""
    i_coss = 0.5 * (abs(i_lm1_pk) + abs(i_lm2_pk))
    if not i_coss > 0:
        raise ZvsInfeasible("ZVS infeasible: zero magnetizing current gives unbounded charge time")
    return cap_factor * params.c_oss * params.v_in / i_coss


def vcr_max(i_pri_pk: float, l_r: float, c_r: float) -> float:
    _positive(l_r=l_r, c_r=c_r)
    if i_pri_pk < 0:
        raise ValueError(f"i_pri_pk must be >= 0, got {i_pri_pk!r}")
    return i_pri_pk * math.sqrt(l_r / c_r)


def primary_peak_estimate(params: ConverterParams, loads: LoadSpec, k: int) -> float:
    """Rough primary peak current of tank ``k`` at resonance (half-sine load current
    in quadrature with the magnetizing peak)."""
    n, _, l_m, _ = params.tank(k)
    v_o = params.v_in / n
    i_load = math.pi / 2.0 * v_o * loads.conductance(k) / n
    i_m = magnetizing_peak_current(params.v_in, l_m, params.f_s) if params.v_in > 0 else 0.0
    return math.hypot(i_load, i_m)


@dataclass
class SwitchZvs:
    v_ds_at_turn_on: float
    required_dead_time: float
    achieved: bool
    margin: float


@dataclass
class ZvsReport:
    switches: dict[str, SwitchZvs]
    zvs_threshold: float
    required_dead_time: float
    i_lm1_peak: float
    i_lm2_peak: float

    @property
    def all_achieved(self) -> bool:
        return all(s.achieved for s in self.switches.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["all_achieved"] = self.all_achieved
        return _finite_or_none(d)


def _finite_or_none(obj):
    if isinstance(obj, dict):
        return {k: _finite_or_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite_or_none(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def zvs_report(trace: Trace, params: ConverterParams, zvs_threshold: float | None = None) -> ZvsReport:
    """Per-switch drain-source voltage at gate-on and dead-time margin.

    The margin is the time between the node clamp and the gate-on edge. When
    the node never reached the rail it is negative: minus the time the node,
    at its slope just before gate-on, would still have needed.
    """
    if zvs_threshold is None:
        zvs_threshold = ZVS_THRESHOLD_FRACTION * params.v_in
    ons = [e for e in trace.events if e.kind == "GATE_EDGE" and e.detail.get("edge") == "on"]
    if not ons:
        raise ValueError("trace contains no gate-on edges")

    i1 = float(np.max(np.abs(trace.state("i_lm1"))))
    i2 = float(np.max(np.abs(trace.state("i_lm2"))))
    try:
        t_req = required_dead_time(params, i1, i2)
    except ZvsInfeasible:
        t_req = math.inf

    switches = {}
    for sw in SWITCHES:
        pair = _PAIR_OF[sw]
        mine = [e for e in ons if e.detail["pair"] == pair]
        if not mine:
            raise ValueError(f"no gate-on edge for {sw} in trace")
        worst_v, worst_margin = -math.inf, math.inf
        for e in mine:
            v = float(e.detail["v_ds"][sw])
            worst_v = max(worst_v, v)
            worst_margin = min(worst_margin, _margin(trace, e, params))
        switches[sw] = SwitchZvs(
            v_ds_at_turn_on=worst_v,
            required_dead_time=t_req,
            achieved=bool(worst_v < zvs_threshold),
            margin=worst_margin,
        )
    return ZvsReport(switches, zvs_threshold, t_req, i1, i2)


def _margin(trace: Trace, on_event, params: ConverterParams) -> float:
    t_on = on_event.time
    target = "CLAMP_P" if on_event.detail["pair"] == "P" else "CLAMP_N"
    if on_event.detail.get("from") == target:
        clamps = [
            e.time for e in trace.events
            if e.kind == "NODE_CLAMP" and e.detail.get("to") == target and e.time <= t_on
        ]
        if clamps:
            return t_on - clamps[-1]
        return params.t_dead
    # not clamped: extrapolate the remaining swing at the last sampled node slope
    remaining = float(on_event.detail["v_ds"]["s1" if target == "CLAMP_P" else "s2"])
    before = np.flatnonzero(trace.t < t_on)
    if before.size >= 2:
        i0, i1 = before[-2], before[-1]
        slope = (trace.x[i1, IDX["v_a"]] - trace.x[i0, IDX["v_a"]]) / (trace.t[i1] - trace.t[i0])
        slope = slope if target == "CLAMP_P" else -slope
        if slope > 0 and trace.cond[i1].bridge is Bridge.DEAD:
            return -remaining / slope
    return -math.inf


@dataclass
class PowerReport:
    p_in: float
    p_out1: float
    p_out2: float
    p_loss_conduction: float
    efficiency: float
    balance_residual: float
    p_loss_hard_switching: float = 0.0
    stored_energy_drift: float = 0.0
    reliable: bool = True

    def to_dict(self) -> dict:
        return _finite_or_none(asdict(self))


def _mean(t: np.ndarray, y: np.ndarray) -> float:
    span = t[-1] - t[0]
    if span <= 0:
        raise ValueError("trace spans zero time")
    return float(np.trapezoid(y, t) / span)


def power_report(trace: Trace, params: ConverterParams, loads: LoadSpec) -> PowerReport:
    """Mean powers over the trace (expected to be exactly one converged period).

    The balance residual charges the net change of stored energy over the
    trace to the output side, so a not-quite-settled period still balances.
    """
    d = trace.derived
    t = trace.t
    p_in = _mean(t, d["p_in"])
    p1 = _mean(t, d["p_o1"])
    p2 = _mean(t, d["p_o2"])
    p_cond = _mean(t, d["p_loss_switch"] + d["p_loss_diode"])
    span = t[-1] - t[0]
    e_hard = sum(e.detail["energy"] for e in trace.events if e.kind == "HARD_SWITCH")
    drift = float(stored_energy(trace.x[-1], params) - stored_energy(trace.x[0], params)) / span
    if p_in > 0:
        # input power net of what went into storage during the period
        net = p_in - drift
        eff = min(max((p1 + p2) / net, 0.0), 1.0) if net > 0 else 0.0
        resid = abs(p_in - p1 - p2 - p_cond - drift) / p_in
    else:
        eff, resid = 0.0, 0.0
    return PowerReport(
        p_in=p_in,
        p_out1=p1,
        p_out2=p2,
        p_loss_conduction=p_cond,
        efficiency=eff,
        balance_residual=resid,
        p_loss_hard_switching=float(e_hard) / span,
        stored_energy_drift=drift,
        reliable=bool(trace.converged),
    )


MODE_LABELS = ("I", "II", "III", "IV", "V")


def operation_modes(trace: Trace, start_edge: int = 0) -> list[tuple[str, float]]:
    """Label the half period that begins at the ``start_edge``-th gate-on edge.

    I   bridge driving, every loaded rectifier conducting in the driven polarity
    II  bridge driving, at least one loaded rectifier blocked
    III all gates off, nodes swinging
    IV  body diodes of the incoming pair conducting
    V   the incoming pair gated on
    A state matching none of these is labelled "?".
    Returns [(label, start_time), ...] with consecutive repeats merged.
    """
    ons = [e for e in trace.events if e.kind == "GATE_EDGE" and e.detail.get("edge") == "on"]
    if start_edge >= len(ons):
        raise ValueError("not enough gate-on edges in trace")
    t_start = ons[start_edge].time
    first_pair = ons[start_edge].detail["pair"]
    loaded = [k for k in (1, 2) if not trace.loads.is_open(k)]
    labels: list[tuple[str, float]] = []
    gated_off = False
    for t, cond in zip(trace.t, trace.cond):
        if t < t_start:
            continue
        b = cond.bridge
        if b in (Bridge.P, Bridge.N):
            if b.value != first_pair:
                label = "V"
            elif gated_off:
                label = "?"
            else:
                want = Rect.POS if b is Bridge.P else Rect.NEG
                rects = [cond.rect(k) for k in loaded]
                if all(r is want for r in rects):
                    label = "I"
                elif any(r is Rect.OFF for r in rects) and all(r in (want, Rect.OFF) for r in rects):
                    label = "II"
                else:
                    label = "?"
        else:
            gated_off = True
            label = "III" if b is Bridge.DEAD else "IV"
        if not labels or labels[-1][0] != label:
            labels.append((label, float(t)))
        if label == "V":
            break
    return labels


def half_wave_symmetry(trace: Trace, npts: int = 2048) -> dict[str, float]:
    """Worst deviation from x(t+T/2) = -x(t) for tank states and x(t+T/2) = x(t)
    for output voltages, each relative to that signal's peak magnitude."""
    period = trace.params.period
    t0 = trace.t[0]
    grid = t0 + np.linspace(0.0, 0.5 * period, npts, endpoint=False)
    out = {}
    for name in ("i_lr1", "i_lr2", "i_lm1", "i_lm2", "v_cr1", "v_cr2", "v_o1", "v_o2"):
        y = trace.state(name)
        peak = float(np.max(np.abs(y)))
        if peak == 0:
            out[name] = 0.0
            continue
        first = np.interp(grid, trace.t, y)
        second = np.interp(grid + 0.5 * period, trace.t, y)
        if name.startswith("v_o"):
            dev = np.max(np.abs(second - first))
        else:
            dev = np.max(np.abs(second + first))
        out[name] = float(dev / peak)
    return out


def node_swing_times(trace: Trace) -> list[float]:
    """Durations from each gate-off edge to the following node clamp."""
    out = []
    offs = [e for e in trace.events if e.kind == "GATE_EDGE" and e.detail.get("edge") == "off"]
    clamps = [e for e in trace.events if e.kind == "NODE_CLAMP"]
    for off in offs:
        later = [c.time for c in clamps if c.time >= off.time]
        ons = [e.time for e in trace.events
               if e.kind == "GATE_EDGE" and e.detail.get("edge") == "on" and e.time > off.time]
        if later and (not ons or later[0] <= ons[0]):
            out.append(later[0] - off.time)
    return out


def design_summary(params: ConverterParams, loads: LoadSpec, i_pri_peak: float | None = None) -> dict:
    """Closed-form design quantities for both tanks."""
    report: dict = {"tanks": {}}
    i_lm = {}
    for k in (1, 2):
        n, l_r, l_m, c_r = params.tank(k)
        i_lm[k] = (
            magnetizing_peak_current(params.v_in, l_m, params.f_s) if params.v_in > 0 else 0.0
        )
        if i_pri_peak is None:
            i_pk, source = primary_peak_estimate(params, loads, k), "estimated"
        else:
            i_pk, source = i_pri_peak, "supplied"
        report["tanks"][f"tank{k}"] = {
            "f_r": resonant_frequency(l_r, c_r),
            "f_sr": secondary_resonant_frequency(l_r, l_m, c_r),
            "i_lm_peak": i_lm[k],
            "i_pri_peak": i_pk,
            "i_pri_peak_source": source,
            "vcr_max": vcr_max(i_pk, l_r, c_r),
        }
    report["required_dead_time"] = required_dead_time(params, i_lm[1], i_lm[2])
    report["t_dead"] = params.t_dead
    report["dead_time_ok"] = params.t_dead >= report["required_dead_time"]
    return report
