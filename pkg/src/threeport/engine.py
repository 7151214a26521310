"""Event-driven fixed-step integration of the piecewise-affine converter model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .model import (
    IDX,
    NSTATE,
    STATE_FIELDS,
    AffineSystem,
    Bridge,
    ConductionState,
    ConverterParams,
    LoadSpec,
    NODE_CAP_FACTOR,
    Rect,
    StateVector,
    assemble_system,
    bridge_transition,
    event_forms,
    gate_command,
    project,
    rectifier_transition,
    secondary_current,
    tank_current_total,
)

MAX_EVENTS_PER_STEP = 50
BLOCK = 64
RESIDUAL_EPS = 1e-9

DIODE_PAIRS = {
    (1, Rect.POS): "D1D4", (1, Rect.NEG): "D2D3",
    (2, Rect.POS): "D5D8", (2, Rect.NEG): "D6D7",
}


class SimulationError(RuntimeError):
    """Integration failure: non-finite state, event chattering or bad arguments."""


@dataclass(frozen=True)
class SimSettings:
    dt: float
    t_end: float
    event_tol: float
    ss_tol: float = 1e-3
    max_cycles: int = 500

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be > 0, got {self.dt!r}")
        if not (0 < self.event_tol < self.dt):
            raise ValueError("event_tol must satisfy 0 < event_tol < dt")
        if not self.ss_tol > 0:
            raise ValueError("ss_tol must be > 0")
        if self.t_end < 0:
            raise ValueError("t_end must be >= 0")
        if int(self.max_cycles) < 1:
            raise ValueError("max_cycles must be >= 1")

    @classmethod
    def for_params(cls, params: ConverterParams, **overrides) -> "SimSettings":
        """Defaults: dt = T_s/4096, event_tol = dt/1024, 500 cycles."""
        dt = overrides.pop("dt", None)
        if dt is None:
            dt = params.period / 4096
        values = dict(
            dt=dt,
            t_end=params.period,
            event_tol=dt / 1024,
            ss_tol=1e-3,
            max_cycles=500,
        )
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass(frozen=True)
class Event:
    time: float
    kind: str
    detail: dict = field(default_factory=dict)


@dataclass
class Trace:
    t: np.ndarray
    x: np.ndarray
    cond: list
    events: list
    params: ConverterParams
    loads: LoadSpec
    converged: bool = True
    residual: float = 0.0
    cycles: int = 0
    _derived: dict | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.t)

    def state(self, name: str) -> np.ndarray:
        return self.x[:, IDX[name]]

    def states(self) -> list[StateVector]:
        return [StateVector.from_array(row) for row in self.x]

    @property
    def mode_tags(self) -> list[str]:
        return [c.tag for c in self.cond]

    @property
    def derived(self) -> dict[str, np.ndarray]:
        if self._derived is None:
            self._derived = derive_signals(self.x, self.cond, self.params, self.loads)
        return self._derived

    def events_of(self, kind: str) -> list[Event]:
        return [e for e in self.events if e.kind == kind]


def derive_signals(x, conds, params: ConverterParams, loads: LoadSpec) -> dict[str, np.ndarray]:
    """Diode currents, switch voltages, gate signals and instantaneous powers."""
    x = np.asarray(x)
    npts = len(x)
    out: dict[str, np.ndarray] = {}
    bridge = np.array([c.bridge.value for c in conds])
    i_tot = x[:, IDX["i_lr1"]] + x[:, IDX["i_lr2"]]
    v_a, v_b = x[:, IDX["v_a"]], x[:, IDX["v_b"]]
    out["v_ds_s1"] = params.v_in - v_a
    out["v_ds_s2"] = v_a.copy()
    out["v_ds_s3"] = params.v_in - v_b
    out["v_ds_s4"] = v_b.copy()

    p_side = np.isin(bridge, ("P", "CLAMP_P"))
    n_side = np.isin(bridge, ("N", "CLAMP_N"))
    i_in = np.where(p_side, i_tot, np.where(n_side, -i_tot, 0.0))
    out["i_in"] = i_in
    out["p_in"] = params.v_in * i_in
    conducting = p_side | n_side
    out["p_loss_switch"] = np.where(conducting, 2.0 * params.r_ds_on * i_tot**2, 0.0)

    gate_p = bridge == "P"
    gate_n = bridge == "N"
    out["g1"] = gate_p.astype(float)
    out["g4"] = gate_p.astype(float)
    out["g2"] = gate_n.astype(float)
    out["g3"] = gate_n.astype(float)

    p_diode = np.zeros(npts)
    for k, base in ((1, 1), (2, 5)):
        n = params.tank(k)[0]
        i_s = n * (x[:, IDX[f"i_lr{k}"]] - x[:, IDX[f"i_lm{k}"]])
        rect = np.array([c.rect(k).value for c in conds])
        pos = np.where(rect == "POS", i_s, 0.0)
        neg = np.where(rect == "NEG", -i_s, 0.0)
        # POS: D1,D4 (D5,D8); NEG: D2,D3 (D6,D7)
        out[f"i_d{base}"] = pos
        out[f"i_d{base + 3}"] = pos.copy()
        out[f"i_d{base + 1}"] = neg
        out[f"i_d{base + 2}"] = neg.copy()
        p_diode += 2.0 * params.v_f * (pos + neg)
        v_o = x[:, IDX[f"v_o{k}"]]
        out[f"p_o{k}"] = v_o**2 * loads.conductance(k)
    out["p_loss_diode"] = p_diode
    return out


def integrate_step(sys: AffineSystem, x, dt: float) -> np.ndarray:
    """One classical RK4 step of dx/dt = A x + b."""
    if not dt > 0:
        raise SimulationError(f"dt must be > 0, got {dt!r}")
    x = np.asarray(x, dtype=float)
    a, b = sys.a, sys.b
    with np.errstate(all="ignore"):
        k1 = a @ x + b
        k2 = a @ (x + 0.5 * dt * k1) + b
        k3 = a @ (x + 0.5 * dt * k2) + b
        k4 = a @ (x + dt * k3) + b
        out = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise SimulationError("non-finite state after RK4 step")
    return out


def rk4_propagator(a: np.ndarray, b: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """(M, m) with RK4(x, h) == M x + m for the affine field A x + b."""
    d = a.shape[0]
    ha = h * a
    ha2 = ha @ ha
    ha3 = ha2 @ ha
    eye = np.eye(d)
    mat = eye + ha + ha2 / 2.0 + ha3 / 6.0 + ha3 @ ha / 24.0
    vec = h * (eye + ha / 2.0 + ha2 / 6.0 + ha3 / 24.0) @ b
    return mat, vec


def exact_step(sys: AffineSystem, x, dt: float) -> np.ndarray:
    """Matrix-exponential solution of the affine ODE over ``dt`` (oracle path)."""
    d = sys.dim
    aug = np.zeros((d + 1, d + 1))
    aug[:d, :d] = sys.a
    aug[:d, d] = sys.b
    phi = scipy.linalg.expm(aug * dt)
    return phi[:d, :d] @ np.asarray(x, dtype=float) + phi[:d, d]


def locate_event(f, t0: float, t1: float, event_tol: float) -> float:
    """Bisect a strict sign change of ``f`` on [t0, t1] down to ``event_tol``.

    Returns the right end of the final bracket, i.e. the earliest bracketed
    time at which ``f`` has already changed sign.
    """
    f0, f1 = f(t0), f(t1)
    if f0 >= 0 > f1:
        past = lambda v: v < 0
    elif f0 <= 0 < f1:
        past = lambda v: v > 0
    else:
        raise ValueError(f"no strict sign change on [{t0}, {t1}]: f={f0!r}, {f1!r}")
    lo, hi = t0, t1
    while hi - lo > event_tol:
        mid = 0.5 * (lo + hi)
        if past(f(mid)):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass
class _Mode:
    cond: ConductionState
    sys: AffineSystem
    step_mat: np.ndarray
    step_vec: np.ndarray
    guard_mat: np.ndarray
    guard_vec: np.ndarray
    guard_names: list
    pow_mats: np.ndarray | None = None
    pow_vecs: np.ndarray | None = None


class _Recorder:
    def __init__(self):
        self.t: list[float] = []
        self.x: list[np.ndarray] = []
        self.cond: list[ConductionState] = []
        self.events: list[Event] = []

    def sample(self, t, x, cond):
        if self.t and t <= self.t[-1]:
            # same instant as previous sample: keep the post-transition values
            self.x[-1] = x
            self.cond[-1] = cond
            return
        self.t.append(t)
        self.x.append(x)
        self.cond.append(cond)


class _Runner:
    def __init__(self, params: ConverterParams, loads: LoadSpec, settings: SimSettings):
        self.params = params
        self.loads = loads
        self.settings = settings
        self._modes: dict[ConductionState, _Mode] = {}

    def mode(self, cond: ConductionState) -> _Mode:
        mode = self._modes.get(cond)
        if mode is None:
            sys = assemble_system(self.params, cond, self.loads)
            mat, vec = rk4_propagator(sys.a, sys.b, self.settings.dt)
            guards = event_forms(cond, self.params, self.loads)
            if guards:
                forms = np.array([g for _, g in guards])
                guard_mat = forms[:, :-1] @ sys.expand_matrix
                guard_vec = forms[:, :-1] @ sys.expand_offset + forms[:, -1]
            else:
                guard_mat = np.zeros((0, sys.dim))
                guard_vec = np.zeros(0)
            mode = _Mode(cond, sys, mat, vec, guard_mat, guard_vec, [n for n, _ in guards])
            self._modes[cond] = mode
        return mode

    def initial(self, x0) -> tuple[np.ndarray, ConductionState]:
        gate = gate_command(0.0, self.params) or Bridge.DEAD
        cond = ConductionState(gate, Rect.OFF, Rect.OFF)
        x = project(x0, cond, self.params)
        cond, x = self.settle(0.0, x, cond, None)
        return x, cond

    def settle(self, t, x, cond, rec: _Recorder | None):
        """Apply bridge and rectifier transitions until the state is self-consistent."""
        params = self.params
        for _ in range(MAX_EVENTS_PER_STEP):
            new = bridge_transition(t, x, params, cond)
            new = rectifier_transition(x, new, params, self.loads)
            if new == cond:
                break
            if rec is not None:
                self._log(t, x, cond, new, rec)
            x = project(x, new, params)
            cond = new
        else:
            raise SimulationError(f"conduction state does not settle at t={t!r}")
        if cond.bridge is Bridge.DEAD:
            x = x.copy()
            x[IDX["v_a"]] = min(max(x[IDX["v_a"]], 0.0), params.v_in)
            x[IDX["v_b"]] = min(max(x[IDX["v_b"]], 0.0), params.v_in)
        return cond, x

    def _log(self, t, x, old: ConductionState, new: ConductionState, rec: _Recorder):
        params = self.params
        ob, nb = old.bridge, new.bridge
        if ob is not nb:
            if nb in (Bridge.P, Bridge.N):
                if nb is Bridge.P:
                    v_ds = {"s1": params.v_in - x[IDX["v_a"]], "s4": x[IDX["v_b"]]}
                    zvs_from = Bridge.CLAMP_P
                else:
                    v_ds = {"s2": x[IDX["v_a"]], "s3": params.v_in - x[IDX["v_b"]]}
                    zvs_from = Bridge.CLAMP_N
                v_ds = {k: float(v) for k, v in v_ds.items()}
                rec.events.append(Event(t, "GATE_EDGE", {
                    "edge": "on", "pair": nb.value, "from": ob.value, "v_ds": v_ds,
                }))
                if ob is not zvs_from:
                    c_node = NODE_CAP_FACTOR * params.c_oss
                    energy = sum(0.5 * c_node * v**2 for v in v_ds.values())
                    rec.events.append(Event(t, "HARD_SWITCH", {
                        "pair": nb.value, "v_ds": v_ds, "energy": float(energy),
                    }))
            elif ob in (Bridge.P, Bridge.N):
                rec.events.append(Event(t, "GATE_EDGE", {"edge": "off", "pair": ob.value}))
                if nb is not Bridge.DEAD:
                    rec.events.append(Event(t, "NODE_CLAMP", {"to": nb.value}))
            elif nb in (Bridge.CLAMP_P, Bridge.CLAMP_N):
                rec.events.append(Event(t, "NODE_CLAMP", {"to": nb.value}))
            else:
                rec.events.append(Event(t, "CLAMP_RELEASE", {"from": ob.value}))
        for k in (1, 2):
            ro, rn = old.rect(k), new.rect(k)
            if ro is rn:
                continue
            if ro is not Rect.OFF:
                rec.events.append(Event(t, "DIODE_OFF", {"port": k, "pair": DIODE_PAIRS[(k, ro)]}))
            if rn is not Rect.OFF:
                rec.events.append(Event(t, "DIODE_ON", {"port": k, "pair": DIODE_PAIRS[(k, rn)]}))

    def _block(self, mode: _Mode):
        if mode.pow_mats is None:
            d = mode.sys.dim
            mats = np.empty((BLOCK, d, d))
            vecs = np.empty((BLOCK, d))
            mat, vec = np.eye(d), np.zeros(d)
            for i in range(BLOCK):
                mat = mode.step_mat @ mat
                vec = mode.step_mat @ vec + mode.step_vec
                mats[i], vecs[i] = mat, vec
            mode.pow_mats, mode.pow_vecs = mats, vecs
        return mode.pow_mats, mode.pow_vecs

    def _record_rows(self, rec, t_first, zs, mode):
        xs = zs @ mode.sys.expand_matrix.T + mode.sys.expand_offset
        dt = self.settings.dt
        for i, xi in enumerate(xs):
            rec.sample(t_first + i * dt, xi, mode.cond)

    def advance(self, t0, t1, x, cond, rec: _Recorder | None):
        """Integrate over [t0, t1], a span with no gate edge strictly inside."""
        dt = self.settings.dt
        span = t1 - t0
        if span <= 0:
            return x, cond
        nsteps = max(1, int(math.ceil(span / dt - 1e-9)))
        mode = self.mode(cond)
        z = mode.sys.reduce(x)
        j = 0
        while j < nsteps:
            # fast path: batches of full grid steps with no guard crossing
            nfull = nsteps - 1 - j
            if nfull > 0:
                mats, vecs = self._block(mode)
                kb = min(BLOCK, nfull)
                zs = mats[:kb] @ z + vecs[:kb]
                if not np.all(np.isfinite(zs)):
                    raise SimulationError(f"non-finite state near t={t0 + j * dt!r} in {cond.tag}")
                accept = kb
                if mode.guard_vec.size:
                    low = (zs @ mode.guard_mat.T + mode.guard_vec).min(axis=1)
                    bad = np.flatnonzero(low < 0)
                    if bad.size:
                        accept = int(bad[0])
                if accept:
                    if rec is not None:
                        self._record_rows(rec, t0 + (j + 1) * dt, zs[:accept], mode)
                    z = zs[accept - 1]
                    j += accept
                    if accept == kb:
                        continue
            t_next = t1 if j + 1 == nsteps else t0 + (j + 1) * dt
            z, mode = self._event_step(t0 + j * dt, t_next, z, mode, rec)
            cond = mode.cond
            j += 1
            if rec is not None:
                rec.sample(t_next, mode.sys.expand(z), cond)
        return mode.sys.expand(z), cond

    def _event_step(self, t, t_next, z, mode: _Mode, rec):
        """Single step to ``t_next`` resolving every guard crossing on the way."""
        dt = self.settings.dt
        tol = self.settings.event_tol
        n_events = 0
        while t < t_next:
            h = t_next - t
            if abs(h - dt) <= 1e-12 * dt:
                z_new = mode.step_mat @ z + mode.step_vec
            else:
                mat, vec = rk4_propagator(mode.sys.a, mode.sys.b, h)
                z_new = mat @ z + vec
            if not np.all(np.isfinite(z_new)):
                raise SimulationError(f"non-finite state at t={t_next!r} in {mode.cond.tag}")
            if not (mode.guard_vec.size and np.min(mode.guard_mat @ z_new + mode.guard_vec) < 0):
                return z_new, mode

            z_start, t_start, m = z, t, mode

            def guard(tau):
                if tau == t_start:
                    zz = z_start
                else:
                    mat_, vec_ = rk4_propagator(m.sys.a, m.sys.b, tau - t_start)
                    zz = mat_ @ z_start + vec_
                return float(np.min(m.guard_mat @ zz + m.guard_vec))

            if guard(t_start) < 0:
                t_ev, z_ev = t_start, z_start
            else:
                t_ev = locate_event(guard, t_start, t_next, tol)
                mat, vec = rk4_propagator(m.sys.a, m.sys.b, t_ev - t_start)
                z_ev = mat @ z_start + vec
            n_events += 1
            if n_events > MAX_EVENTS_PER_STEP:
                raise SimulationError(f"event chattering near t={t_ev!r} ({mode.cond.tag})")
            new_cond, x_ev = self.settle(t_ev, m.sys.expand(z_ev), m.cond, rec)
            if new_cond == m.cond and t_ev == t_start:
                # guard already violated with no strict transition: take the plain step
                return z_new, mode
            mode = self.mode(new_cond)
            z = mode.sys.reduce(x_ev)
            t = t_ev
            if rec is not None:
                rec.sample(t, x_ev, new_cond)
        return z, mode

    def run_period_span(self, t_a, t_b, x, cond, rec):
        """Run [t_a, t_b] splitting at gate edges and settling at each edge."""
        params = self.params
        period = params.period
        half = 0.5 * period
        k0 = math.floor(t_a / period + 1e-9)
        edges = []
        k = k0
        while True:
            base = k * period
            for off in (0.0, half - params.t_dead, half, period - params.t_dead):
                te = base + off
                if t_a + 1e-12 * period < te < t_b - 1e-12 * period:
                    edges.append(te)
            if base > t_b:
                break
            k += 1
        edges = sorted(set(edges)) + [t_b]
        t = t_a
        for te in edges:
            x, cond = self.advance(t, te, x, cond, rec)
            t = te
            cond, x = self.settle(t, x, cond, rec)
            if rec is not None:
                rec.sample(t, x, cond)
        return x, cond


def _as_array(x0) -> np.ndarray:
    if x0 is None:
        return np.zeros(NSTATE)
    if isinstance(x0, StateVector):
        return x0.to_array()
    x = np.asarray(x0, dtype=float)
    if x.shape != (NSTATE,):
        raise ValueError(f"x0 must have length {NSTATE}")
    return x


def _trace(rec: _Recorder, params, loads, **kw) -> Trace:
    return Trace(
        t=np.array(rec.t),
        x=np.array(rec.x).reshape(-1, NSTATE),
        cond=list(rec.cond),
        events=list(rec.events),
        params=params,
        loads=loads,
        **kw,
    )


def simulate(
    params: ConverterParams, loads: LoadSpec, settings: SimSettings, x0=None
) -> Trace:
    """Simulate from t = 0 to ``settings.t_end`` recording every step and event."""
    runner = _Runner(params, loads, settings)
    x, cond = runner.initial(_as_array(x0))
    rec = _Recorder()
    rec.sample(0.0, x, cond)
    runner.run_period_span(0.0, settings.t_end, x, cond, rec)
    return _trace(rec, params, loads)


def residual(x_prev: np.ndarray, x_next: np.ndarray) -> float:
    return float(np.linalg.norm(x_next - x_prev) / (np.linalg.norm(x_prev) + RESIDUAL_EPS))


def run_to_steady_state(
    params: ConverterParams, loads: LoadSpec, settings: SimSettings, x0=None
) -> tuple[Trace, float]:
    """March whole switching periods until the period-to-period residual is below ss_tol.

    Returns the trace of the final period (one period, both ends included) and
    its residual. A trace that hit ``max_cycles`` is returned with
    ``converged=False``.
    """
    runner = _Runner(params, loads, settings)
    period = params.period
    x, cond = runner.initial(_as_array(x0))
    r = math.inf
    cycles = 0
    for cycles in range(1, int(settings.max_cycles) + 1):
        t_a = (cycles - 1) * period
        x_start, cond_start = x, cond
        x, cond = runner.run_period_span(t_a, t_a + period, x, cond, None)
        r = residual(x_start, x)
        if r < settings.ss_tol:
            break
    converged = r < settings.ss_tol
    rec = _Recorder()
    t_a = (cycles - 1) * period
    rec.sample(t_a, x_start, cond_start)
    runner.run_period_span(t_a, t_a + period, x_start, cond_start, rec)
    trace = _trace(rec, params, loads, converged=converged, residual=r, cycles=cycles)
    return trace, r
