import csv
import json
import math
import subprocess
import sys

import jsonschema
import numpy as np
import pytest
import yaml

from threeport import cli, config, report

GOLDEN_HEADER = (
    "t,i_lr1,i_lr2,i_lm1,i_lm2,v_cr1,v_cr2,v_o1,v_o2,v_a,v_b,"
    "v_ds_s1,v_ds_s2,v_ds_s3,v_ds_s4,"
    "i_d1,i_d2,i_d3,i_d4,i_d5,i_d6,i_d7,i_d8,p_in,p_o1,p_o2,mode_tag"
)


def write_scenario(tmp_path, name="scenario", **changes):
    raw = yaml.safe_load(config.dumps(config.load("table2_reference")))
    for section, values in changes.items():
        if isinstance(values, dict):
            raw.setdefault(section, {}).update(values)
        else:
            raw[section] = values
    path = tmp_path / f"{name}.yaml"
    path.write_text(yaml.safe_dump(raw))
    return str(path)


@pytest.fixture(scope="module")
def ref_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("ref")
    code = cli.main(["simulate", "--config", "table2_reference", "--out", str(out)])
    return code, out


def test_trace_header_is_stable():
    assert ",".join(report.TRACE_COLUMNS) == GOLDEN_HEADER


class TestDesign:
    def test_reference(self, capsys):
        assert cli.main(["design", "--config", "table2_reference"]) == cli.EXIT_OK
        rep = json.loads(capsys.readouterr().out)
        jsonschema.validate(rep, config.load_schema("design_report.schema.json"))
        assert rep["tanks"]["tank1"]["f_r"] == pytest.approx(116.7e3, rel=1e-3)
        assert rep["tanks"]["tank2"]["f_sr"] == pytest.approx(39.5e3, rel=2e-3)

    def test_text_and_supplied_peak(self, capsys, tmp_path):
        code = cli.main(["design", "--config", "table2_reference", "--format", "csv",
                         "--i-pri-peak", "5", "--out", str(tmp_path)])
        assert code == cli.EXIT_OK
        text = capsys.readouterr().out
        assert "f_r        = 116.70 kHz" in text and "113.7 V" in text
        assert (tmp_path / "design.txt").read_text() == text

    def test_zero_input_is_zvs_infeasible(self, capsys, tmp_path):
        path = write_scenario(tmp_path, converter={"v_in": 0, "n1": 1.0, "n2": 1.0})
        assert cli.main(["design", "--config", path]) == cli.EXIT_ZVS_INFEASIBLE
        assert "ZVS infeasible" in capsys.readouterr().err

    def test_infinite_magnetizing_inductance_rejected(self, capsys, tmp_path):
        path = write_scenario(tmp_path, converter={"l_m1": "inf"})
        assert cli.main(["design", "--config", path]) == cli.EXIT_CONFIG
        assert "config error" in capsys.readouterr().err

    def test_missing_file(self, capsys, tmp_path):
        assert cli.main(["design", "--config", str(tmp_path / "nope.yaml")]) == cli.EXIT_CONFIG
        assert capsys.readouterr().err


class TestSimulate:
    def test_outputs(self, ref_run):
        code, out = ref_run
        assert code == cli.EXIT_OK
        lines = (out / "trace.csv").read_text().splitlines()
        assert lines[0] == GOLDEN_HEADER
        assert len(lines) > 4000
        rep = json.loads((out / "report.json").read_text())
        jsonschema.validate(rep, config.load_schema("simulate_report.schema.json"))
        assert rep["converged"] and rep["residual"] < 1e-3
        assert rep["zvs"]["all_achieved"] is True
        assert rep["events"]["counts"]["GATE_EDGE"] == 4

    def test_csv_reingest_matches_report(self, ref_run):
        _, out = ref_run
        with open(out / "trace.csv") as fh:
            cols = report.read_trace_csv(fh)
        rep = json.loads((out / "report.json").read_text())["power"]
        t = cols["t"]
        span = t[-1] - t[0]
        p_in = np.trapezoid(cols["p_in"], t) / span
        assert p_in == pytest.approx(rep["p_in"], rel=1e-3)
        for k in (1, 2):
            # recomputed from the voltages alone, not from the written power column
            p_o = np.trapezoid(cols[f"v_o{k}"] ** 2 / 69.5, t) / span
            assert p_o == pytest.approx(rep[f"p_out{k}"], rel=1e-3)
        assert set(cols["mode_tag"]) >= {"P|POS|POS", "N|NEG|NEG"}

    def test_byte_identical_reruns(self, ref_run, tmp_path):
        _, out = ref_run
        assert cli.main(["simulate", "--config", "table2_reference", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "trace.csv").read_bytes() == (out / "trace.csv").read_bytes()
        assert (tmp_path / "report.json").read_bytes() == (out / "report.json").read_bytes()

    def test_not_converged_still_writes(self, tmp_path, caplog):
        code = cli.main(["simulate", "--config", "table2_reference", "--cycles", "2",
                         "--out", str(tmp_path)])
        assert code == cli.EXIT_NOT_CONVERGED
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["converged"] is False and rep["power"]["reliable"] is False
        assert (tmp_path / "trace.csv").exists()
        assert "steady state not reached" in caplog.text

    def test_io_failure(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        code = cli.main(["simulate", "--config", "table2_reference", "--cycles", "1",
                         "--out", str(blocker / "sub")])
        assert code == cli.EXIT_IO
        assert len({cli.EXIT_OK, cli.EXIT_CONFIG, cli.EXIT_NOT_CONVERGED, cli.EXIT_IO}) == 4

    def test_zero_input_trace_is_zero(self, tmp_path):
        path = write_scenario(tmp_path, converter={"v_in": 0, "n1": 1.0, "n2": 1.0})
        assert cli.main(["simulate", "--config", path, "--out", str(tmp_path)]) == cli.EXIT_OK
        with open(tmp_path / "trace.csv") as fh:
            cols = report.read_trace_csv(fh)
        for name in report.TRACE_COLUMNS[1:-1]:
            assert np.all(cols[name] == 0.0), name
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["zvs"]["required_dead_time"] is None

    def test_dt_override_and_json(self, tmp_path, capsys):
        code = cli.main(["simulate", "--config", "table2_reference", "--dt", "2e-9",
                         "--format", "json", "--out", str(tmp_path)])
        assert code == cli.EXIT_OK
        rep = json.loads(capsys.readouterr().out)
        assert rep["kind"] == "simulate"
        t = report.read_trace_csv(open(tmp_path / "trace.csv"))["t"]
        assert np.median(np.diff(t)) == pytest.approx(2e-9, rel=1e-6)

    def test_bad_dt(self, tmp_path):
        assert cli.main(["simulate", "--config", "table2_reference", "--dt", "-1",
                         "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def _sweep(args, capsys):
    code = cli.main(["sweep"] + args)
    rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    return code, rows


class TestSweep:
    def test_single_point_equals_simulate(self, ref_run, tmp_path, capsys):
        path = write_scenario(tmp_path, sweep={"parameter": "t_dead", "values": ["250 ns"]})
        code, rows = _sweep(["--config", path], capsys)
        assert code == cli.EXIT_OK and len(rows) == 1
        rep = json.loads((ref_run[1] / "report.json").read_text())
        row = rows[0]
        for key in ("p_out1", "p_out2", "efficiency"):
            assert float(row[key]) == pytest.approx(rep["power"][key], rel=1e-9)
        assert float(row["residual"]) == pytest.approx(rep["residual"], rel=1e-9)
        assert row["zvs_s1"] == "1" and row["converged"] == "1"

    def test_dead_time_sweep_flips_once(self, capsys, tmp_path):
        code, rows = _sweep(["--config", "deadtime_sweep", "--out", str(tmp_path)], capsys)
        assert code == cli.EXIT_OK
        flags = [all(r[f"zvs_s{i}"] == "1" for i in range(1, 5)) for r in rows]
        flips = sum(a != b for a, b in zip(flags, flags[1:]))
        assert flips == 1 and flags[0] is False and flags[-1] is True
        assert (tmp_path / "sweep.csv").exists()

    def test_scaled_load_sweep_monotone(self, capsys):
        code, rows = _sweep(["--config", "scaled_power_sweep", "--jobs", "2"], capsys)
        assert code == cli.EXIT_OK
        g = [1 / float(r["value"]) for r in rows]
        p = [float(r["p_out1"]) for r in rows]
        order = np.argsort(g)
        assert np.all(np.diff(np.array(p)[order]) > 0)
        assert all(float(r["p_out2"]) == 0.0 for r in rows)

    def test_json_format(self, capsys, tmp_path):
        path = write_scenario(tmp_path, sweep={"parameter": "t_dead", "values": [0]})
        assert cli.main(["sweep", "--config", path, "--format", "json"]) == cli.EXIT_OK
        rep = json.loads(capsys.readouterr().out)
        assert rep["rows"][0]["zvs_s1"] is False

    def test_requires_axis(self, capsys):
        assert cli.main(["sweep", "--config", "table2_reference"]) == cli.EXIT_CONFIG

    def test_invalid_point_rejected_before_running(self, capsys, tmp_path):
        path = write_scenario(tmp_path, sweep={"parameter": "t_dead", "values": ["1 ms"]})
        assert cli.main(["sweep", "--config", path]) == cli.EXIT_CONFIG


def test_zvs_command(capsys):
    assert cli.main(["zvs", "--config", "table2_reference"]) == cli.EXIT_OK
    rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    assert [r["switch"] for r in rows] == ["s1", "s2", "s3", "s4"]
    assert all(r["achieved"] == "1" for r in rows)
    assert cli.main(["zvs", "--config", "table2_reference", "--format", "json",
                     "--threshold", "0.5"]) == cli.EXIT_OK
    assert json.loads(capsys.readouterr().out)["zvs_threshold"] == 0.5


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "threeport", "--help"],
                         capture_output=True, text=True, check=True).stdout
    for cmd in ("design", "simulate", "sweep", "zvs"):
        assert cmd in out


def test_unknown_command_exits_nonzero():
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code != 0
