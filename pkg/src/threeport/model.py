"""Power-stage description of the two-tank, two-port LLC converter.

A full bridge (S1..S4) drives two series-resonant tanks connected in parallel
across its mid-points A and B. Each tank feeds an ideal two-winding
transformer whose magnetizing inductance sits on the primary; the secondary
feeds a full-bridge diode rectifier (D1..D4 for port 1, D5..D8 for port 2)
into an output capacitor and a resistive load.

Within a fixed conduction state the circuit is linear, so every state maps to
an affine ODE ``dz/dt = A z + b`` over the states that are free in that
topology. Pinned states (bridge nodes tied to a rail) and tied states
(magnetizing current equal to tank current while a rectifier blocks) are
reconstructed through ``x = P z + p``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

STATE_FIELDS = (
    "i_lr1", "i_lr2", "i_lm1", "i_lm2",
    "v_cr1", "v_cr2", "v_o1", "v_o2",
    "v_a", "v_b",
)
IDX = {name: i for i, name in enumerate(STATE_FIELDS)}
NSTATE = len(STATE_FIELDS)

# Two C_oss per leg node: one to each rail.
NODE_CAP_FACTOR = 2.0


class ModelError(ValueError):
    """Invalid parameters or an inconsistent conduction state."""


class Bridge(enum.Enum):
    P = "P"          # S1, S4 gated and conducting: v_ab = +v_in
    N = "N"          # S2, S3 gated and conducting: v_ab = -v_in
    DEAD = "DEAD"    # all gates off, node voltages free
    CLAMP_P = "CLAMP_P"  # body diodes of S1, S4 conduct
    CLAMP_N = "CLAMP_N"  # body diodes of S2, S3 conduct


class Rect(enum.Enum):
    POS = "POS"  # D1,D4 (port 1) / D5,D8 (port 2)
    NEG = "NEG"  # D2,D3 (port 1) / D6,D7 (port 2)
    OFF = "OFF"


@dataclass(frozen=True)
class ConverterParams:
    v_in: float
    n1: float
    n2: float
    l_r1: float
    l_r2: float
    l_m1: float
    l_m2: float
    c_r1: float
    c_r2: float
    c_oss: float
    c_o1: float
    c_o2: float
    f_s: float
    t_dead: float
    r_ds_on: float = 0.0
    v_f: float = 0.0

    def __post_init__(self):
        for name in ("n1", "n2", "l_r1", "l_r2", "l_m1", "l_m2", "c_r1", "c_r2",
                     "c_oss", "c_o1", "c_o2", "f_s"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ModelError(f"{name} must be finite and > 0, got {value!r}")
        # v_in = 0 is allowed: it is the trivial all-zero operating point.
        for name in ("v_in", "r_ds_on", "v_f", "t_dead"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ModelError(f"{name} must be finite and >= 0, got {value!r}")
        if self.t_dead >= 0.5 / self.f_s:
            raise ModelError(
                f"t_dead={self.t_dead!r} must be shorter than half a switching period"
            )

    @property
    def period(self) -> float:
        return 1.0 / self.f_s

    def tank(self, k: int) -> tuple[float, float, float, float]:
        """(n, l_r, l_m, c_r) of tank ``k`` (1 or 2)."""
        if k == 1:
            return self.n1, self.l_r1, self.l_m1, self.c_r1
        if k == 2:
            return self.n2, self.l_r2, self.l_m2, self.c_r2
        raise ValueError(f"tank index must be 1 or 2, got {k}")

    def c_o(self, k: int) -> float:
        return self.c_o1 if k == 1 else self.c_o2

    def with_(self, **changes) -> "ConverterParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class LoadSpec:
    """Resistive port loads; ``math.inf`` marks an open (deactivated) port."""

    r_load1: float = math.inf
    r_load2: float = math.inf

    def __post_init__(self):
        for name in ("r_load1", "r_load2"):
            value = getattr(self, name)
            if math.isnan(value) or value <= 0:
                raise ModelError(f"{name} must be > 0 or inf (open), got {value!r}")

    def r(self, k: int) -> float:
        return self.r_load1 if k == 1 else self.r_load2

    def is_open(self, k: int) -> bool:
        return math.isinf(self.r(k))

    def conductance(self, k: int) -> float:
        return 0.0 if self.is_open(k) else 1.0 / self.r(k)


@dataclass(frozen=True)
class ConductionState:
    bridge: Bridge
    rect1: Rect = Rect.OFF
    rect2: Rect = Rect.OFF

    def rect(self, k: int) -> Rect:
        return self.rect1 if k == 1 else self.rect2

    def with_rect(self, k: int, value: Rect) -> "ConductionState":
        return replace(self, **{f"rect{k}": value})

    @property
    def tag(self) -> str:
        return f"{self.bridge.value}|{self.rect1.value}|{self.rect2.value}"


@dataclass
class StateVector:
    i_lr1: float = 0.0
    i_lr2: float = 0.0
    i_lm1: float = 0.0
    i_lm2: float = 0.0
    v_cr1: float = 0.0
    v_cr2: float = 0.0
    v_o1: float = 0.0
    v_o2: float = 0.0
    v_a: float = 0.0
    v_b: float = 0.0

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=float)

    @classmethod
    def from_array(cls, x) -> "StateVector":
        x = np.asarray(x, dtype=float)
        if x.shape != (NSTATE,):
            raise ValueError(f"expected a length-{NSTATE} state, got shape {x.shape}")
        return cls(*(float(v) for v in x))


@dataclass(frozen=True)
class AffineSystem:
    """Mode ODE over the free states, plus the map back to the full state."""

    a: np.ndarray
    b: np.ndarray
    free: tuple[str, ...]
    expand_matrix: np.ndarray = field(repr=False)
    expand_offset: np.ndarray = field(repr=False)

    @property
    def state_index_map(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.free)}

    @property
    def dim(self) -> int:
        return len(self.free)

    def reduce(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float)[[IDX[n] for n in self.free]]

    def expand(self, z: np.ndarray) -> np.ndarray:
        return self.expand_matrix @ z + self.expand_offset

    def derivative(self, z: np.ndarray) -> np.ndarray:
        return self.a @ z + self.b

    def block(self, names) -> np.ndarray:
        """Sub-matrix of ``a`` restricted to the given free states."""
        rows = [self.state_index_map[n] for n in names]
        return self.a[np.ix_(rows, rows)]


# Linear forms over the full state: a length NSTATE+1 array, last entry constant.

def _form(**coefs) -> np.ndarray:
    out = np.zeros(NSTATE + 1)
    for name, value in coefs.items():
        if name == "const":
            out[-1] += value
        else:
            out[IDX[name]] += value
    return out


def _pinned_nodes(bridge: Bridge, v_in: float) -> tuple[float, float] | None:
    if bridge in (Bridge.P, Bridge.CLAMP_P):
        return v_in, 0.0
    if bridge in (Bridge.N, Bridge.CLAMP_N):
        return 0.0, v_in
    return None


def bridge_voltage_form(bridge: Bridge, params: ConverterParams) -> np.ndarray:
    """v_ab as a linear form; conducting devices drop r_ds_on each (two in series)."""
    if bridge is Bridge.DEAD:
        return _form(v_a=1.0, v_b=-1.0)
    sign = 1.0 if bridge in (Bridge.P, Bridge.CLAMP_P) else -1.0
    r = 2.0 * params.r_ds_on
    return _form(const=sign * params.v_in, i_lr1=-r, i_lr2=-r)


def magnetizing_voltage_off_form(k: int, bridge: Bridge, params: ConverterParams) -> np.ndarray:
    """Voltage across l_m of tank ``k`` while its rectifier blocks (divider of l_r, l_m)."""
    _, l_r, l_m, _ = params.tank(k)
    form = bridge_voltage_form(bridge, params) - _form(**{f"v_cr{k}": 1.0})
    return form * (l_m / (l_r + l_m))


def clamp_voltage(k: int, x: np.ndarray, params: ConverterParams) -> float:
    """Reflected voltage a conducting rectifier imposes on l_m (magnitude)."""
    n = params.tank(k)[0]
    return n * (x[IDX[f"v_o{k}"]] + 2.0 * params.v_f)


def eval_form(form: np.ndarray, x: np.ndarray) -> float:
    return float(form[:-1] @ x + form[-1])


def _check_consistent(cond: ConductionState, loads: LoadSpec) -> None:
    if not isinstance(cond.bridge, Bridge):
        raise ModelError(f"unknown bridge state {cond.bridge!r}")
    for k in (1, 2):
        rect = cond.rect(k)
        if not isinstance(rect, Rect):
            raise ModelError(f"unknown rectifier state {rect!r} on port {k}")
        if loads.is_open(k) and rect is not Rect.OFF:
            raise ModelError(
                f"port {k} is open (deactivated) but its rectifier is {rect.value}"
            )


def free_states(cond: ConductionState) -> tuple[str, ...]:
    names = []
    for name in STATE_FIELDS:
        k = name[-1]
        if name.startswith("i_lm") and cond.rect(int(k)) is Rect.OFF:
            continue
        if name in ("v_a", "v_b") and cond.bridge is not Bridge.DEAD:
            continue
        names.append(name)
    return tuple(names)


def assemble_system(
    params: ConverterParams, cond: ConductionState, loads: LoadSpec
) -> AffineSystem:
    """Affine ODE of the converter under conduction topology ``cond``."""
    _check_consistent(cond, loads)
    v_ab = bridge_voltage_form(cond.bridge, params)
    rows = np.zeros((NSTATE, NSTATE + 1))

    for k in (1, 2):
        n, l_r, l_m, c_r = params.tank(k)
        c_o = params.c_o(k)
        g = loads.conductance(k)
        i_lr, i_lm, v_cr, v_o = f"i_lr{k}", f"i_lm{k}", f"v_cr{k}", f"v_o{k}"
        rect = cond.rect(k)

        rows[IDX[v_cr]] = _form(**{i_lr: 1.0 / c_r})
        if rect is Rect.OFF:
            di = (v_ab - _form(**{v_cr: 1.0})) / (l_r + l_m)
            rows[IDX[i_lr]] = di
            rows[IDX[i_lm]] = di
            rows[IDX[v_o]] = _form(**{v_o: -g / c_o})
        else:
            sigma = 1.0 if rect is Rect.POS else -1.0
            v_lm = sigma * n * _form(**{v_o: 1.0}, const=2.0 * params.v_f)
            rows[IDX[i_lr]] = (v_ab - _form(**{v_cr: 1.0}) - v_lm) / l_r
            rows[IDX[i_lm]] = v_lm / l_m
            rows[IDX[v_o]] = (
                _form(**{i_lr: sigma * n, i_lm: -sigma * n}) + _form(**{v_o: -g})
            ) / c_o

    if cond.bridge is Bridge.DEAD:
        c_node = NODE_CAP_FACTOR * params.c_oss
        rows[IDX["v_a"]] = _form(i_lr1=-1.0 / c_node, i_lr2=-1.0 / c_node)
        rows[IDX["v_b"]] = _form(i_lr1=1.0 / c_node, i_lr2=1.0 / c_node)

    free = free_states(cond)
    d = len(free)
    expand = np.zeros((NSTATE, d))
    offset = np.zeros(NSTATE)
    col = {name: j for j, name in enumerate(free)}
    for name in free:
        expand[IDX[name], col[name]] = 1.0
    for k in (1, 2):
        if cond.rect(k) is Rect.OFF:
            expand[IDX[f"i_lm{k}"], col[f"i_lr{k}"]] = 1.0
    pinned = _pinned_nodes(cond.bridge, params.v_in)
    if pinned is not None:
        offset[IDX["v_a"]], offset[IDX["v_b"]] = pinned

    sel = [IDX[name] for name in free]
    f_mat, f_const = rows[sel, :-1], rows[sel, -1]
    a = f_mat @ expand
    b = f_mat @ offset + f_const
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ModelError(f"non-finite system matrices for state {cond.tag}")
    return AffineSystem(a=a, b=b, free=free, expand_matrix=expand, expand_offset=offset)


def project(x: np.ndarray, cond: ConductionState, params: ConverterParams) -> np.ndarray:
    """Force the algebraic constraints of ``cond`` onto a full state vector."""
    x = np.array(x, dtype=float)
    for k in (1, 2):
        if cond.rect(k) is Rect.OFF:
            x[IDX[f"i_lm{k}"]] = x[IDX[f"i_lr{k}"]]
    pinned = _pinned_nodes(cond.bridge, params.v_in)
    if pinned is not None:
        x[IDX["v_a"]], x[IDX["v_b"]] = pinned
    return x


def secondary_current(k: int, x: np.ndarray, params: ConverterParams) -> float:
    """Reflected secondary current n*(i_lr - i_lm) of port ``k``."""
    n = params.tank(k)[0]
    return n * (x[IDX[f"i_lr{k}"]] - x[IDX[f"i_lm{k}"]])


def tank_current_total(x: np.ndarray) -> float:
    return float(x[IDX["i_lr1"]] + x[IDX["i_lr2"]])


def rectifier_transition(
    x, cond: ConductionState, params: ConverterParams, loads: LoadSpec | None = None
) -> ConductionState:
    """Next rectifier states given the present state vector.

    Conducting pairs drop out once the secondary current reverses strictly;
    blocked pairs start conducting once the magnetizing-branch voltage strictly
    exceeds the reflected output clamp. Exact ties keep the present state.
    """
    x = x.to_array() if isinstance(x, StateVector) else np.asarray(x, dtype=float)
    new = cond
    for k in (1, 2):
        rect = cond.rect(k)
        if loads is not None and loads.is_open(k):
            new = new.with_rect(k, Rect.OFF)
            continue
        if rect is Rect.POS:
            if secondary_current(k, x, params) < 0.0:
                new = new.with_rect(k, Rect.OFF)
        elif rect is Rect.NEG:
            if secondary_current(k, x, params) > 0.0:
                new = new.with_rect(k, Rect.OFF)
        else:
            v_lm = eval_form(magnetizing_voltage_off_form(k, cond.bridge, params), x)
            v_clamp = clamp_voltage(k, x, params)
            if v_lm > v_clamp:
                new = new.with_rect(k, Rect.POS)
            elif v_lm < -v_clamp:
                new = new.with_rect(k, Rect.NEG)
    return new


def gate_command(t: float, params: ConverterParams) -> Bridge | None:
    """Gated pair at time ``t``: P on [0, T/2 - t_dead), N on [T/2, T - t_dead)."""
    period = params.period
    half = 0.5 * period
    eps = 1e-9 * period
    k = math.floor((t + eps) / period)
    tau = t - k * period
    if tau < -eps:
        tau += period
    if tau < half - params.t_dead - eps:
        return Bridge.P
    if tau < half - eps:
        return None
    if tau < period - params.t_dead - eps:
        return Bridge.N
    return None


def bridge_transition(
    t: float, x, params: ConverterParams, cond: ConductionState
) -> ConductionState:
    """Next bridge state from the gate schedule and the node/body-diode conditions."""
    x = x.to_array() if isinstance(x, StateVector) else np.asarray(x, dtype=float)
    gate = gate_command(t, params)
    bridge = cond.bridge
    i_tot = tank_current_total(x)
    if gate is not None:
        return replace(cond, bridge=gate)
    if bridge in (Bridge.P, Bridge.N):
        bridge = Bridge.DEAD
    if bridge is Bridge.DEAD:
        v_a = x[IDX["v_a"]] if cond.bridge is Bridge.DEAD else _pinned_nodes(cond.bridge, params.v_in)[0]
        if v_a >= params.v_in and i_tot < 0.0:
            bridge = Bridge.CLAMP_P
        elif v_a <= 0.0 and i_tot > 0.0:
            bridge = Bridge.CLAMP_N
    elif bridge is Bridge.CLAMP_P and i_tot > 0.0:
        bridge = Bridge.DEAD
    elif bridge is Bridge.CLAMP_N and i_tot < 0.0:
        bridge = Bridge.DEAD
    return replace(cond, bridge=bridge)


def event_forms(
    cond: ConductionState, params: ConverterParams, loads: LoadSpec
) -> list[tuple[str, np.ndarray]]:
    """Guard functions of ``cond`` as linear forms; the state stays valid while all are >= 0."""
    out = []
    if cond.bridge is Bridge.DEAD:
        out.append(("NODE_CLAMP_P", _form(v_a=-1.0, const=params.v_in)))
        out.append(("NODE_CLAMP_N", _form(v_a=1.0)))
    elif cond.bridge is Bridge.CLAMP_P:
        out.append(("CLAMP_RELEASE", _form(i_lr1=-1.0, i_lr2=-1.0)))
    elif cond.bridge is Bridge.CLAMP_N:
        out.append(("CLAMP_RELEASE", _form(i_lr1=1.0, i_lr2=1.0)))
    for k in (1, 2):
        if loads.is_open(k):
            continue
        n = params.tank(k)[0]
        rect = cond.rect(k)
        if rect is Rect.POS:
            out.append((f"DIODE_OFF{k}", _form(**{f"i_lr{k}": n, f"i_lm{k}": -n})))
        elif rect is Rect.NEG:
            out.append((f"DIODE_OFF{k}", _form(**{f"i_lr{k}": -n, f"i_lm{k}": n})))
        else:
            v_lm = magnetizing_voltage_off_form(k, cond.bridge, params)
            clamp = n * _form(**{f"v_o{k}": 1.0}, const=2.0 * params.v_f)
            out.append((f"DIODE_ON{k}", clamp - v_lm))
            out.append((f"DIODE_ON{k}", clamp + v_lm))
    return out


def stored_energy(x: np.ndarray, params: ConverterParams) -> float:
    """Energy held in all reactive elements, including the four C_oss."""
    x = np.asarray(x, dtype=float)
    e = 0.0
    for k in (1, 2):
        _, l_r, l_m, c_r = params.tank(k)
        e += 0.5 * l_r * x[IDX[f"i_lr{k}"]] ** 2
        e += 0.5 * l_m * x[IDX[f"i_lm{k}"]] ** 2
        e += 0.5 * c_r * x[IDX[f"v_cr{k}"]] ** 2
        e += 0.5 * params.c_o(k) * x[IDX[f"v_o{k}"]] ** 2
    for node in ("v_a", "v_b"):
        v = x[IDX[node]]
        e += 0.5 * params.c_oss * (v ** 2 + (params.v_in - v) ** 2)
    return e
