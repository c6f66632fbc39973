import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from multirotor_ftc import data
from multirotor_ftc.vehicle import (RankDeficiencyError, VehicleConfig, apply_failure, build_effectiveness,
                                    effectiveness_matrix, load_vehicle, parse_spin_pattern)

from conftest import unit_vehicle


def test_quad_columns_at_right_angles():
    cfg = unit_vehicle(4, "PNPN", kappa=1.0, tau=1.0)
    G = effectiveness_matrix(cfg)
    expected = np.array([[1, 0, 1, 1], [0, 1, -1, 1], [-1, 0, 1, 1], [0, -1, -1, 1]], dtype=float).T
    np.testing.assert_allclose(G, expected, atol=1e-15)


def test_hexa_yaw_row_alternates():
    G = effectiveness_matrix(unit_vehicle(6, "PNPNPN", kappa=1.0, tau=1.0))
    np.testing.assert_array_equal(G[2], [1, -1, 1, -1, 1, -1])


def test_ppnnpn_pattern_parses():
    np.testing.assert_array_equal(parse_spin_pattern("ppnnpn"), [1, 1, -1, -1, 1, -1])
    with pytest.raises(ValueError):
        parse_spin_pattern("PXN")


def test_scaled_matrix_divides_by_inertia_and_mass(quad_si):
    m = build_effectiveness(quad_si)
    scale = np.concatenate([1 / quad_si.inertia, [1 / quad_si.mass]])
    np.testing.assert_allclose(m.scaled_G, scale[:, None] * m.G)


def test_failed_column_is_zero(hexa_pnpnpn):
    m = apply_failure(hexa_pnpnpn, 2)
    assert not np.any(m.G[:, 2])
    others = [i for i in range(6) if i != 2]
    assert np.all(np.any(m.G[:, others] != 0, axis=0))
    assert m.failed == frozenset({2})


def test_quad_failure_keeps_roll_pitch_thrust(quad):
    m = apply_failure(quad, 3)
    assert not np.any(m.pinv_scaled_G[3])
    rows = [0, 1, 3]
    prod = (m.scaled_G @ m.pinv_scaled_G)[np.ix_(rows, rows)]
    np.testing.assert_allclose(prod, np.eye(3), atol=1e-9)


def test_hexa_failure_keeps_full_rank(hexa_ppnnpn):
    m = apply_failure(hexa_ppnnpn, 0)
    np.testing.assert_allclose(m.scaled_G @ m.pinv_scaled_G, np.eye(4), atol=1e-9)


def test_double_failure_of_same_rotor_rejected(quad):
    m = apply_failure(quad, 1)
    with pytest.raises(ValueError):
        apply_failure(m, 1)
    with pytest.raises(IndexError):
        apply_failure(quad, 4)


def test_quad_cannot_lose_two_rotors(quad):
    with pytest.raises(RankDeficiencyError):
        apply_failure(apply_failure(quad, 0), 1)


@pytest.mark.parametrize("bad", [
    {"n": 2, "spin_sign": "PN"},
    {"kappa": -1.0},
    {"tau": 0.0},
    {"omega_min": -1.0},
    {"omega_max": 0.0},
    {"mass": float("nan")},
    {"inertia": [1.0, 1.0]},
])
def test_invalid_configs_rejected(bad):
    with pytest.raises(ValueError):
        unit_vehicle(**bad)


def test_from_dict_rejects_unknown_and_missing_keys():
    good = unit_vehicle().to_dict()
    with pytest.raises(ValueError, match="unknown"):
        VehicleConfig.from_dict({**good, "colour": "red"})
    del good["mass"]
    with pytest.raises(ValueError, match="missing"):
        VehicleConfig.from_dict(good)


def test_json_round_trip(tmp_path, quad_si):
    path = tmp_path / "v.json"
    path.write_text(json.dumps(quad_si.to_dict()))
    back = load_vehicle(path)
    np.testing.assert_array_equal(effectiveness_matrix(back), effectiveness_matrix(quad_si))
    assert back.hover_thrust == pytest.approx(0.5 * 9.81)


def test_bundled_normalized_vehicles_have_unit_max_thrust():
    for name in ("quad_normalized", "hexa_pnpnpn", "hexa_ppnnpn"):
        assert data.vehicle(name).max_total_thrust == pytest.approx(1.0)


configs = st.builds(
    lambda n, ups, kap, seed: (n, ups, kap, seed),
    st.integers(3, 8), st.floats(0, 2 * math.pi), st.floats(0.1, 3.0), st.integers(0, 10_000))


def _config(n, ups, kap, seed):
    rng = np.random.default_rng(seed)
    return VehicleConfig(n=n, arm_length_m=rng.uniform(0.1, 1.0, n), kappa=kap * rng.uniform(0.5, 1.5, n),
                         tau=rng.uniform(0.01, 0.1, n), spin_sign=rng.choice([-1, 1], n), upsilon=ups,
                         omega_min=0.0, omega_max=rng.uniform(1, 2, n), inertia=rng.uniform(0.5, 2, 3),
                         rotor_inertia_zz=0.0, mass=rng.uniform(0.5, 2))


@settings(max_examples=60, deadline=None)
@given(configs)
def test_columns_and_total_thrust(params):
    cfg = _config(*params)
    G = effectiveness_matrix(cfg)
    for i in range(cfg.n):
        e = np.zeros(cfg.n)
        e[i] = 1.0
        np.testing.assert_array_equal(G @ e, G[:, i])
    assert (G @ cfg.u_max)[3] == pytest.approx(np.sum(cfg.kappa * cfg.omega_max**2))


@settings(max_examples=60, deadline=None)
@given(configs, st.lists(st.floats(-1, 1), min_size=4, max_size=4))
def test_pseudo_inverse_reproduces_row_space(params, d):
    cfg = _config(*params)
    m = build_effectiveness(cfg)
    d = np.array(d)
    rank = np.linalg.matrix_rank(m.scaled_G, tol=1e-10 * np.linalg.norm(m.scaled_G, 2))
    rows = [0, 1, 2, 3] if rank == 4 else [0, 1, 3]
    target = np.zeros(4)
    target[rows] = d[rows]
    out = m.scaled_G @ (m.pinv_scaled_G @ target)
    np.testing.assert_allclose(out[rows], target[rows], atol=1e-9 * max(1.0, np.abs(m.scaled_G).max()))


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 8), st.floats(0, 2 * math.pi))
def test_rotating_frame_by_one_slot_permutes_columns(n, ups):
    a = unit_vehicle(n, "P" * n, upsilon=ups)
    b = unit_vehicle(n, "P" * n, upsilon=ups + 2 * math.pi / n)
    Ga = effectiveness_matrix(a)
    Gb = effectiveness_matrix(b)
    np.testing.assert_allclose(np.roll(Ga, -1, axis=1), Gb, atol=1e-12)
