import json
import math

import numpy as np
import pytest

from multirotor_ftc import data
from multirotor_ftc.sim import load_scenario, run_scenario, scenario_from_dict, thrust_axis_trace, write_outputs


def short(name, **changes):
    spec = {**data.scenario_dict(name), **changes}
    return scenario_from_dict(spec)


def test_same_seed_gives_identical_logs():
    a = run_scenario(short("nominal_hover", duration=0.5))
    b = run_scenario(short("nominal_hover", duration=0.5))
    assert a.csv_text() == b.csv_text()
    c = run_scenario(short("nominal_hover", duration=0.5, seed=99))
    assert c.csv_text() != a.csv_text()


def test_nominal_tilt_converges_within_two_seconds():
    res = run_scenario(short("nominal_hover", duration=3.0))
    t = res.column("time")
    assert res.column("tilt_deg")[0] == pytest.approx(10.0, abs=0.1)
    late = t >= 2.0
    assert res.column("tilt_error_deg")[late].max() < 1.0
    assert res.column("tilt_deg")[late].max() < 1.0


def test_detection_delay_leaves_model_stale():
    fail = [{"time": 0.2, "rotor": 3, "detection_delay": 0.05}]
    res = run_scenario(short("indoor_hover_failure", duration=0.5, failures=fail))
    j_dead, j_model = res.columns.index("dead_rotors"), res.columns.index("model_failed")
    stale = [row for row in res.rows if row[j_dead] != row[j_model]]
    assert 20 <= len(stale) <= 30  # 50 ms at 500 Hz
    assert all(row[j_dead] == "3" and row[j_model] == "" for row in stale)
    assert res.rows[-1][j_model] == "3"


def test_log_rate_thins_the_rows():
    res = run_scenario(short("nominal_hover", duration=1.0, log_rate_hz=50))
    assert len(res.rows) == 50
    assert np.diff(res.column("time")).min() > 0.019


def test_ground_spin_log_columns():
    res = run_scenario(short("ground_spin", duration=2.0))
    assert res.columns == ["time", "gyro_x", "gyro_y", "gyro_z", "accel_x", "accel_y", "accel_z"]
    assert res.summary["planted_lever_arm"] == [0.03, -0.02, 0.0]


@pytest.mark.parametrize("change, message", [
    ({"colour": "red"}, "unknown"),
    ({"duration": -1}, "duration"),
    ({"failures": [{"time": 1.0, "rotor": 7}]}, "rotor"),
    ({"failures": [{"time": 99.0, "rotor": 1}]}, "failure time"),
])
def test_bad_scenarios_rejected(change, message):
    with pytest.raises(ValueError, match=message):
        short("nominal_hover", **change)


def test_scenario_needs_vehicle_and_duration():
    with pytest.raises(ValueError, match="needs"):
        scenario_from_dict({"vehicle": "quad_si"})


def test_unknown_kind_and_rate_ratio_rejected():
    with pytest.raises(ValueError, match="kind"):
        run_scenario(short("nominal_hover", kind="swim"))
    with pytest.raises(ValueError, match="multiple"):
        run_scenario(short("nominal_hover", control_rate_hz=300.0, duration=0.1))


def test_scenario_file_resolves_vehicle_next_to_it(tmp_path):
    (tmp_path / "v.json").write_text(json.dumps(data.vehicle("quad_si").to_dict()))
    (tmp_path / "s.json").write_text(json.dumps({"vehicle": "v.json", "duration": 0.1}))
    spec = load_scenario(tmp_path / "s.json")
    assert spec.vehicle.mass == 0.5
    (tmp_path / "bad.json").write_text(json.dumps({"vehicle": "missing.json", "duration": 0.1}))
    with pytest.raises(FileNotFoundError):
        load_scenario(tmp_path / "bad.json")


def test_circle_fit_of_offset_loop():
    ang = np.linspace(0, 2 * math.pi, 100, endpoint=False)
    fit = thrust_axis_trace(0.1 + 0.05 * np.cos(ang), -0.2 + 0.05 * np.sin(ang))
    np.testing.assert_allclose(fit["center"], [0.1, -0.2], atol=1e-12)
    assert fit["radius_ratio"] == pytest.approx(1.0)
    squashed = thrust_axis_trace(0.05 * np.cos(ang), 0.025 * np.sin(ang))
    assert squashed["radius_ratio"] > 1.5


def test_outputs_written(tmp_path):
    res = run_scenario(short("nominal_hover", duration=0.2))
    log, summary = write_outputs(res, tmp_path / "out")
    assert log.read_text().splitlines()[0].startswith("time,x,y,z")
    payload = json.loads(summary.read_text())
    assert payload["diverged"] is False and payload["samples"] == 100
