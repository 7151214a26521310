import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import CASE1, F_R, make_params, steady
from threeport import analysis
from threeport.analysis import (
    ZvsInfeasible,
    design_summary,
    half_wave_symmetry,
    magnetizing_peak_current,
    node_swing_times,
    operation_modes,
    power_report,
    required_dead_time,
    resonant_frequency,
    secondary_resonant_frequency,
    vcr_max,
    zvs_report,
)
from threeport.engine import SimSettings, simulate
from threeport.model import LoadSpec

pos = st.floats(min_value=1e-9, max_value=1e3, allow_nan=False)


class TestResonantFrequency:
    def test_reference_tank(self):
        assert resonant_frequency(31e-6, 60e-9) == pytest.approx(116.7e3, rel=1e-3)
        assert resonant_frequency(31e-6, 60e-9) == pytest.approx(116e3, rel=0.01)

    def test_unit_case(self):
        assert resonant_frequency(1.0, 1.0) == pytest.approx(1 / (2 * math.pi), rel=1e-15)

    def test_square_root_law(self):
        assert resonant_frequency(4 * 31e-6, 60e-9) == pytest.approx(
            resonant_frequency(31e-6, 60e-9) / 2, rel=1e-14)

    @pytest.mark.parametrize("l,c", [(0.0, 1e-9), (1e-6, -1e-9), (math.inf, 1e-9)])
    def test_rejects_non_positive(self, l, c):
        with pytest.raises(ValueError):
            resonant_frequency(l, c)


class TestSecondaryResonance:
    def test_reference_tank(self):
        assert secondary_resonant_frequency(31e-6, 240e-6, 60e-9) == pytest.approx(39.5e3, rel=2e-3)

    def test_zero_l_m_reduces(self):
        assert secondary_resonant_frequency(31e-6, 0.0, 60e-9) == resonant_frequency(31e-6, 60e-9)

    @given(l_r=pos, l_m=pos, c_r=pos)
    def test_always_below_f_r(self, l_r, l_m, c_r):
        assert secondary_resonant_frequency(l_r, l_m, c_r) < resonant_frequency(l_r, c_r)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            secondary_resonant_frequency(31e-6, -1e-6, 60e-9)


class TestMagnetizingPeak:
    def test_reference_value(self):
        assert magnetizing_peak_current(137.0, 240e-6, 116e3) == pytest.approx(1.23, abs=0.005)

    def test_inverse_in_frequency(self):
        a = magnetizing_peak_current(137.0, 240e-6, 100e3)
        assert magnetizing_peak_current(137.0, 240e-6, 200e3) == pytest.approx(a / 2, rel=1e-15)

    def test_rejects_zero(self):
        with pytest.raises(ValueError):
            magnetizing_peak_current(0.0, 240e-6, 100e3)


class TestRequiredDeadTime:
    def test_node_capacitance_convention(self, ref_params):
        # (2*c_oss) * v_in / I_coss, the whole-node sizing
        assert required_dead_time(ref_params, 1.23, 1.23, cap_factor=2.0) == pytest.approx(
            244e-9, rel=2e-3)

    def test_default_convention(self, ref_params):
        assert analysis.DEAD_TIME_CAP_FACTOR == 1.0
        assert required_dead_time(ref_params, 1.23, 1.23) == pytest.approx(1e-9 * 150 / 1.23)

    def test_zero_current_infeasible(self, ref_params):
        with pytest.raises(ZvsInfeasible, match="ZVS infeasible"):
            required_dead_time(ref_params, 0.0, 0.0)

    def test_linear_in_c_oss(self, ref_params):
        full = required_dead_time(ref_params, 1.0, 1.5)
        half = required_dead_time(ref_params.with_(c_oss=0.5e-9), 1.0, 1.5)
        assert half == pytest.approx(full / 2, rel=1e-15)

    @settings(max_examples=50)
    @given(i1=st.floats(0.01, 10), i2=st.floats(0.01, 10), di=st.floats(0.01, 5),
           v=st.floats(1, 1000), c=st.floats(1e-12, 1e-8))
    def test_monotonicity(self, i1, i2, di, v, c):
        p = make_params(v_in=v, c_oss=c)
        base = required_dead_time(p, i1, i2)
        assert required_dead_time(p, i1 + di, i2) < base
        assert required_dead_time(p.with_(c_oss=2 * c), i1, i2) > base
        assert required_dead_time(p.with_(v_in=2 * v), i1, i2) > base


class TestVcrMax:
    def test_zero_current(self):
        assert vcr_max(0.0, 31e-6, 60e-9) == 0.0

    def test_reference_value(self):
        assert vcr_max(5.0, 31e-6, 60e-9) == pytest.approx(113.7, abs=0.05)

    @pytest.mark.parametrize("args", [(1.0, 0.0, 60e-9), (1.0, 31e-6, 0.0), (-1.0, 31e-6, 60e-9)])
    def test_rejects(self, args):
        with pytest.raises(ValueError):
            vcr_max(*args)


class TestAgainstSimulation:
    def test_magnetizing_peak(self, reference):
        trace, _ = steady(reference.converter, reference.loads)
        p = reference.converter
        want = magnetizing_peak_current(p.n1 * 137.0, p.l_m1, p.f_s)
        for k in (1, 2):
            got = np.abs(trace.state(f"i_lm{k}")).max()
            assert got == pytest.approx(want, rel=0.05)

    def test_capacitor_stress(self, reference):
        trace, _ = steady(reference.converter, reference.loads)
        v = trace.state("v_cr1")
        i_pk = np.abs(trace.state("i_lr1")).max()
        got = np.abs(v - v.mean()).max()
        assert got == pytest.approx(vcr_max(i_pk, 31e-6, 60e-9), rel=0.15)

    def test_node_swing_matches_dead_time_formula(self, reference):
        trace, _ = steady(reference.converter, reference.loads)
        swings = node_swing_times(trace)
        assert len(swings) == 2
        req = zvs_report(trace, reference.converter).required_dead_time
        for s in swings:
            assert s == pytest.approx(req, rel=0.10)


def _zvs_at(reference, t_dead):
    p = reference.converter.with_(t_dead=t_dead)
    trace, _ = steady(p, reference.loads)
    return zvs_report(trace, p)


@pytest.fixture(scope="module")
def required(reference):
    trace, _ = steady(reference.converter, reference.loads)
    return zvs_report(trace, reference.converter).required_dead_time


class TestZvs:
    def test_twice_required_dead_time(self, reference, required):
        rep = _zvs_at(reference, 2 * required)
        assert rep.all_achieved
        for s in rep.switches.values():
            assert s.v_ds_at_turn_on < 1.5
            assert s.margin > 0

    def test_no_dead_time(self, reference):
        rep = _zvs_at(reference, 0.0)
        for s in rep.switches.values():
            assert not s.achieved
            assert s.v_ds_at_turn_on == pytest.approx(150.0, rel=1e-9)
            assert s.margin < 0

    def test_half_required_is_partial(self, reference, required):
        rep = _zvs_at(reference, 0.5 * required)
        for s in rep.switches.values():
            assert not s.achieved
            assert 0.0 < s.v_ds_at_turn_on < 150.0
            assert s.margin < 0

    def test_monotone_in_dead_time(self, reference, required):
        grid = [f * required for f in (0.0, 0.3, 0.6, 0.9, 1.1, 1.5, 2.0)]
        flags = [_zvs_at(reference, t).all_achieved for t in grid]
        assert flags == sorted(flags)
        assert flags[0] is False and flags[-1] is True

    def test_threshold_override(self, reference, required):
        rep = _zvs_at(reference, 0.5 * required)
        loose = zvs_report(steady(reference.converter.with_(t_dead=0.5 * required),
                                  reference.loads)[0],
                           reference.converter.with_(t_dead=0.5 * required), zvs_threshold=200.0)
        assert not rep.all_achieved and loose.all_achieved

    def test_trace_without_gate_edges_rejected(self, ref_params):
        s = SimSettings.for_params(ref_params, t_end=ref_params.period / 8)
        with pytest.raises(ValueError):
            zvs_report(simulate(ref_params, CASE1, s), ref_params)

    def test_report_serializes_infinities(self, reference):
        d = _zvs_at(reference, 0.0).to_dict()
        assert d["switches"]["s1"]["margin"] is None
        assert d["all_achieved"] is False


class TestPower:
    def test_lossless_balance(self, case1_steady, ref_params):
        trace, _ = case1_steady
        rep = power_report(trace, ref_params, CASE1)
        assert rep.balance_residual < 0.005
        assert rep.efficiency == pytest.approx(1.0, abs=0.005)
        assert rep.p_loss_conduction == 0.0
        assert rep.reliable

    def test_port_split_follows_load_ratio(self, case1_steady, ref_params):
        trace, _ = case1_steady
        rep = power_report(trace, ref_params, CASE1)
        assert rep.p_out1 / rep.p_out2 == pytest.approx(CASE1.r_load2 / CASE1.r_load1, rel=0.02)
        assert rep.p_out1 == pytest.approx(460.0, rel=0.05)
        assert rep.p_out2 == pytest.approx(80.0, rel=0.05)

    def test_port_power_self_consistent(self, case1_steady):
        trace, _ = case1_steady
        rep = power_report(trace, trace.params, CASE1)
        for k, p in ((1, rep.p_out1), (2, rep.p_out2)):
            v = trace.state(f"v_o{k}")
            i_o = v / CASE1.r(k)
            assert v.mean() * i_o.mean() == pytest.approx(p, rel=0.01)

    def test_conduction_loss_accounting(self):
        p = make_params(r_ds_on=0.05, v_f=0.7)
        trace, _ = steady(p, CASE1)
        rep = power_report(trace, p, CASE1)
        assert rep.p_loss_conduction > 0
        assert 0.9 < rep.efficiency < 1.0
        lost = rep.p_in - rep.p_out1 - rep.p_out2
        assert abs(lost - rep.p_loss_conduction) / rep.p_in < 0.01
        assert rep.balance_residual < 0.01

    def test_unconverged_trace_flagged(self, ref_params):
        trace, r = steady(ref_params, CASE1, max_cycles=3)
        assert not trace.converged and r > 1e-3
        assert not power_report(trace, ref_params, CASE1).reliable

    def test_hard_switching_energy_reported(self, reference):
        p = reference.converter.with_(t_dead=0.0)
        trace, _ = steady(p, reference.loads)
        rep = power_report(trace, p, reference.loads)
        # two pairs per period, two nodes each swinging the full rail into 2*C_oss
        want = 2 * 2 * 0.5 * 2e-9 * 150.0 ** 2 * p.f_s
        assert rep.p_loss_hard_switching == pytest.approx(want, rel=1e-6)


class TestWaveformStructure:
    def test_detuned_half_period_visits_five_modes(self):
        p = make_params(f_s=0.95 * F_R)
        trace, _ = steady(p, CASE1)
        labels = [m for m, _ in operation_modes(trace)]
        assert labels == ["I", "II", "III", "IV", "V"]

    def test_resonance_skips_mode_two(self, case1_steady):
        trace, _ = case1_steady
        labels = [m for m, _ in operation_modes(trace)]
        assert "II" not in labels and labels[-1] == "V"

    def test_half_wave_symmetry(self, case1_steady):
        trace, _ = case1_steady
        sym = half_wave_symmetry(trace)
        for name, dev in sym.items():
            assert dev < 0.01, name

    def test_not_enough_edges(self, case1_steady):
        with pytest.raises(ValueError):
            operation_modes(case1_steady[0], start_edge=10)


def test_design_summary(reference):
    d = design_summary(reference.converter, reference.loads)
    t1 = d["tanks"]["tank1"]
    assert t1["f_r"] == pytest.approx(116.7e3, rel=1e-3)
    assert t1["f_sr"] == pytest.approx(39.5e3, rel=2e-3)
    assert t1["i_pri_peak_source"] == "estimated"
    assert d["dead_time_ok"] is True
    d = design_summary(reference.converter, reference.loads, i_pri_peak=5.0)
    assert d["tanks"]["tank2"]["vcr_max"] == pytest.approx(113.7, abs=0.05)


def test_design_summary_zero_input_infeasible(reference):
    with pytest.raises(ZvsInfeasible):
        design_summary(reference.converter.with_(v_in=0.0), LoadSpec())
