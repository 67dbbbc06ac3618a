"""Kinematics tests against an independent scalar oracle."""
from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gridpilot.core import (ControlCommand, InvalidStateError, VehicleParams,
                            VehicleState, rollout, rollout_array, step_dynamics,
                            wrap_angle)

PARAMS = VehicleParams()


def _oracle_step(x, y, v, phi, a, delta, dt, wheelbase):
    """Same equations, written out independently with the math module."""
    nx = x + v * math.cos(phi) * dt
    ny = y + v * math.sin(phi) * dt
    nv = max(0.0, v + a * dt)
    nphi = _oracle_wrap(phi + v / wheelbase * math.tan(delta) * dt)
    return nx, ny, nv, nphi


def _oracle_wrap(phi):
    w = math.fmod(phi, 2.0 * math.pi)
    if w > math.pi:
        w -= 2.0 * math.pi
    elif w <= -math.pi:
        w += 2.0 * math.pi
    return w


def test_step_matches_scalar_oracle_bitwise():
    rng = np.random.default_rng(7)
    for _ in range(500):
        x, y = rng.uniform(-100, 100, 2)
        v = rng.uniform(0, 12)
        phi = rng.uniform(-3.1, 3.1)
        a = rng.uniform(-4, 2.5)
        delta = rng.uniform(-0.52, 0.52)
        z = step_dynamics(VehicleState(x, y, v, phi), ControlCommand(a, delta),
                          0.1, PARAMS)
        ox, oy, ov, ophi = _oracle_step(x, y, v, phi, a, delta, 0.1, PARAMS.wheelbase)
        assert z.x == ox and z.y == oy and z.v == ov and z.phi == ophi


def test_straight_line_step():
    z = step_dynamics(VehicleState(0, 0, 5.0, 0.0), ControlCommand(0, 0), 0.1, PARAMS)
    assert z.x == pytest.approx(0.5)
    assert z.y == 0.0
    assert z.v == 5.0
    assert z.phi == 0.0


def test_speed_clamps_at_zero():
    z = step_dynamics(VehicleState(0, 0, 1.0, 0.0), ControlCommand(-20.0, 0), 0.1, PARAMS)
    assert z.v == 0.0


def test_non_finite_state_rejected():
    with pytest.raises(InvalidStateError):
        step_dynamics(VehicleState(float("nan"), 0, 1, 0), ControlCommand(), 0.1, PARAMS)
    with pytest.raises(InvalidStateError):
        step_dynamics(VehicleState(0, 0, 1, 0), ControlCommand(a=float("inf")), 0.1, PARAMS)


def test_wrap_angle_known_values():
    assert wrap_angle(-3.5 * math.pi) == pytest.approx(0.5 * math.pi, abs=1e-12)
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(0.0) == 0.0


@given(st.floats(min_value=-50.0, max_value=50.0, allow_nan=False))
@settings(deadline=None)
def test_wrap_angle_matches_modular_oracle(phi):
    w = wrap_angle(phi)
    assert -math.pi < w <= math.pi + 1e-15
    assert abs(w - _oracle_wrap(phi)) < 1e-9 or abs(abs(w) - math.pi) < 1e-9


@given(
    st.floats(min_value=0.0, max_value=12.0),
    st.floats(min_value=-3.1, max_value=3.1),
    st.floats(min_value=-4.0, max_value=2.5),
    st.floats(min_value=-0.52, max_value=0.52),
)
@settings(deadline=None)
def test_step_invariants(v, phi, a, delta):
    z = step_dynamics(VehicleState(1.0, -2.0, v, phi), ControlCommand(a, delta),
                      0.1, PARAMS)
    assert z.v >= 0.0
    assert -math.pi < z.phi <= math.pi
    # position update uses the entry speed, so displacement is exactly v*dt
    disp = math.hypot(z.x - 1.0, z.y + 2.0)
    assert disp <= v * 0.1 + 1e-12


def test_turning_curvature_exact():
    # yaw increment per step over arc length equals tan(delta)/L for any delta
    for delta in np.linspace(-0.5, 0.5, 9):
        if abs(delta) < 1e-6:
            continue
        z0 = VehicleState(0, 0, 4.0, 0.3)
        z1 = step_dynamics(z0, ControlCommand(0.0, float(delta)), 0.05, PARAMS)
        kappa = (z1.phi - z0.phi) / (z0.v * 0.05)
        assert kappa == pytest.approx(math.tan(delta) / PARAMS.wheelbase, rel=1e-12)


def test_full_circle_returns_near_start():
    delta = 0.3
    radius = PARAMS.wheelbase / math.tan(delta)
    v, dt = 2.0, 0.01
    n = int(round(2 * math.pi * radius / (v * dt)))
    z = VehicleState(0, 0, v, 0.0)
    for _ in range(n):
        z = step_dynamics(z, ControlCommand(0.0, delta), dt, PARAMS)
    assert math.hypot(z.x, z.y) < 0.15 * radius


def test_rollout_chaining_exact():
    rng = np.random.default_rng(3)
    cmds = [ControlCommand(float(a), float(d))
            for a, d in zip(rng.uniform(-2, 2, 10), rng.uniform(-0.3, 0.3, 10))]
    z0 = VehicleState(1, 2, 5.0, 0.4)
    whole = rollout(z0, cmds, 0.1, PARAMS)
    first = rollout(z0, cmds[:4], 0.1, PARAMS)
    second = rollout(first[-1], cmds[4:], 0.1, PARAMS)
    assert len(whole) == 11
    for za, zb in zip(whole.states[4:], second.states):
        assert za.x == zb.x and za.y == zb.y and za.v == zb.v and za.phi == zb.phi


def test_rollout_empty_rejected():
    with pytest.raises(ValueError):
        rollout(VehicleState(), [], 0.1, PARAMS)


def test_rollout_array_matches_scalar_path():
    rng = np.random.default_rng(11)
    z0 = np.stack([rng.uniform(-10, 10, 5), rng.uniform(-10, 10, 5),
                   rng.uniform(0, 10, 5), rng.uniform(-3, 3, 5)], axis=1)
    controls = np.stack([rng.uniform(-3, 2, 5), rng.uniform(-0.5, 0.5, 5)], axis=1)
    arr = rollout_array(z0, controls, 0.1, PARAMS, 15)
    for b in range(5):
        z = VehicleState(*z0[b])
        u = ControlCommand(*controls[b])
        for k in range(15):
            z = step_dynamics(z, u, 0.1, PARAMS)
            np.testing.assert_allclose(arr[b, k + 1], [z.x, z.y, z.v, z.phi],
                                       rtol=0, atol=1e-12)


def test_dt_frame_must_be_multiple_of_dt_control():
    with pytest.raises(ValueError):
        VehicleParams(dt_control=0.1, dt_frame=0.55)
    assert VehicleParams(dt_control=0.1, dt_frame=1.0).ticks_per_frame == 10
