"""Tracking-error definitions and NMPC behavior, checked against closed forms."""
from __future__ import annotations

import math

import numpy as np
import pytest

from gridpilot.core import (ControlCommand, StateTrajectory, VehicleParams,
                            VehicleState, step_dynamics, wrap_angle)
from gridpilot.controller import (NmpcConfig, _Problem, cross_track_error,
                                  nmpc_solve, orientation_error, rate_errors)

PARAMS = VehicleParams()


def _straight_ref(v=8.0, n=80, y=0.0, t0=0.0, x0=0.0):
    states = [VehicleState(x=x0 + v * 0.1 * i, y=y, v=v, phi=0.0, t=t0 + 0.1 * i)
              for i in range(n)]
    return StateTrajectory(states=states, dt=0.1)


def _circle_ref(radius=40.0, v=6.0, n=150):
    omega = v / radius
    states = []
    for i in range(n):
        th = omega * 0.1 * i
        states.append(VehicleState(x=radius * math.sin(th),
                                   y=radius * (1 - math.cos(th)),
                                   v=v, phi=wrap_angle(th), t=0.1 * i))
    return StateTrajectory(states=states, dt=0.1)


def test_cross_track_straight_line_sign():
    ref = _straight_ref()
    e = cross_track_error(VehicleState(x=4.0, y=-0.5, v=8.0, phi=0.0), ref)
    assert e == pytest.approx(0.5, abs=1e-9)
    e = cross_track_error(VehicleState(x=4.0, y=0.5, v=8.0, phi=0.0), ref)
    assert e == pytest.approx(-0.5, abs=1e-9)


def test_cross_track_circle_matches_radial_offset():
    ref = _circle_ref()
    # place the vehicle radially 0.3 m outside the circle, tangent heading
    th = 0.6
    cx, cy = 0.0, 40.0  # circle center
    px = 40.0 * math.sin(th)
    py = 40.0 * (1 - math.cos(th))
    out = np.array([px - cx, py - cy])
    out = out / np.linalg.norm(out)
    state = VehicleState(x=px + 0.3 * out[0], y=py + 0.3 * out[1], v=6.0,
                         phi=wrap_angle(th))
    e = cross_track_error(state, ref)
    # path curves left; standing outside the circle puts it on the left
    assert e == pytest.approx(0.3, abs=0.02)


def test_cross_track_degenerate_window_falls_back():
    # single repeated reference point: no cubic fit possible
    states = [VehicleState(x=1.0, y=2.0, v=0.0, phi=0.0, t=0.1 * i) for i in range(10)]
    ref = StateTrajectory(states=states, dt=0.1)
    e = cross_track_error(VehicleState(x=1.0, y=1.0, v=1.0, phi=0.0), ref)
    assert e == pytest.approx(1.0, abs=1e-9)


def test_orientation_error_substitution():
    st = VehicleState(v=6.0, phi=0.2)
    e = orientation_error(st, phi_d=0.05, delta=0.1, params=PARAMS)
    assert e == pytest.approx(0.2 - 0.05 + 6.0 / PARAMS.wheelbase * 0.1, abs=1e-12)


def test_orientation_error_wraps():
    st = VehicleState(v=0.0, phi=3.0)
    e = orientation_error(st, phi_d=-3.0, delta=0.0, params=PARAMS)
    assert e == pytest.approx(6.0 - 2 * math.pi, abs=1e-12)


def test_rate_errors_are_differences():
    e_a, e_d = rate_errors(ControlCommand(a=0.8, delta=0.12),
                           ControlCommand(a=1.0, delta=0.10))
    assert e_a == pytest.approx(-0.2)
    assert e_d == pytest.approx(0.02)


def test_equilibrium_returns_near_zero_command():
    # reference sample j is the desired pose at tick j+1 from the state
    ref = _straight_ref(v=8.0, x0=2.8)
    state = VehicleState(x=2.0, y=0.0, v=8.0, phi=0.0)
    cmd, info, _ = nmpc_solve(state, ref, ControlCommand(), PARAMS)
    assert abs(cmd.a) < 1e-3
    assert abs(cmd.delta) < 1e-3


def test_speed_tracking_matches_analytic_two_step_solution():
    # horizon 2, straight path, pure speed error: the cost is a 2x2 convex
    # quadratic in (a0, a1) solved here by hand; station tracking is off so
    # the quadratic stays in the speed channel only
    cfg = NmpcConfig(horizon=2, max_iter=200, tol=1e-14, w_lon=0.0)
    v0, vd, dt = 7.8, 8.0, 0.1
    ref = _straight_ref(v=vd, n=10, t0=0.1)
    state = VehicleState(x=0.0, y=0.0, v=v0, phi=0.0)
    cmd, info, useq = nmpc_solve(state, ref, ControlCommand(), PARAMS, cfg)
    wv, wa = cfg.w_v, cfg.w_a_rate
    # dJ/da0 = 0, dJ/da1 = 0 for J = wv[(v0+a0 dt-vd)^2 + (v0+(a0+a1)dt-vd)^2]
    #                              + wa[a0^2 + (a1-a0)^2]
    err = v0 - vd
    A = np.array([[2 * wv * dt * dt * 2 + 4 * wa, 2 * wv * dt * dt - 2 * wa],
                  [2 * wv * dt * dt - 2 * wa, 2 * wv * dt * dt + 2 * wa]])
    b = -np.array([2 * wv * err * dt * 2, 2 * wv * err * dt])
    a_star = np.linalg.solve(A, b)
    assert cmd.a == pytest.approx(a_star[0], abs=1e-3)
    assert useq[1, 0] == pytest.approx(a_star[1], abs=1e-3)
    assert abs(cmd.delta) < 1e-6


def test_adjoint_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    ref = _circle_ref()
    cfg = NmpcConfig(horizon=12)
    # the low-speed case drives v through the standstill clamp, exercising
    # the clamp-penalty terms of the adjoint as well
    for v0, a_range in ((5.0, (-2, 2)), (0.3, (-3, 1))):
        state = VehicleState(x=1.0, y=-0.5, v=v0, phi=0.1)
        prob = _Problem(state, ref, np.array([0.3, 0.02]), PARAMS, cfg)
        for _ in range(5):
            u = np.stack([rng.uniform(*a_range, cfg.horizon),
                          rng.uniform(-0.3, 0.3, cfg.horizon)], axis=1)
            _, grad = prob.gradient(u)
            eps = 1e-6
            for j in (0, cfg.horizon // 2, cfg.horizon - 1):
                for axis in (0, 1):
                    up = u.copy()
                    um = u.copy()
                    up[j, axis] += eps
                    um[j, axis] -= eps
                    fd = (prob.cost(up) - prob.cost(um)) / (2 * eps)
                    assert grad[j, axis] == pytest.approx(fd, rel=1e-5, abs=1e-7)


def _run_closed_loop(ref, state, n_ticks, cfg=NmpcConfig()):
    cmd_prev = ControlCommand()
    warm = None
    states = [state]
    commands = []
    for _ in range(n_ticks):
        cmd, info, warm = nmpc_solve(state, _ahead(ref, state), cmd_prev, PARAMS, cfg,
                                     warm_start=warm)
        # hard bounds must hold on every executed command
        assert PARAMS.a_min - 1e-9 <= cmd.a <= PARAMS.a_max + 1e-9
        assert abs(cmd.delta) <= PARAMS.delta_max + 1e-9
        assert abs(cmd.a - cmd_prev.a) <= cfg.da_max + 1e-9
        assert abs(cmd.delta - cmd_prev.delta) <= cfg.ddelta_max + 1e-9
        state = step_dynamics(state, cmd, PARAMS.dt_control, PARAMS)
        states.append(state)
        commands.append(cmd)
        cmd_prev = cmd
    return states, commands


def _ahead(ref, state):
    """Reference slice starting just past the nearest reference state."""
    arr = ref.as_array()
    d2 = (arr[:, 0] - state.x) ** 2 + (arr[:, 1] - state.y) ** 2
    idx = min(int(np.argmin(d2)) + 1, len(ref) - 1)
    return StateTrajectory(states=ref.states[idx:], dt=ref.dt)


def test_step_offset_recovers_within_four_seconds():
    ref = _straight_ref(v=8.0, n=600)
    state = VehicleState(x=0.0, y=-1.0, v=8.0, phi=0.0)
    states, _ = _run_closed_loop(ref, state, 40)
    final = states[-1]
    assert abs(cross_track_error(final, ref)) < 0.05


def test_sinusoid_tracking_mean_error():
    amp, lam, v = 1.0, 50.0, 8.0
    n = 260
    xs = np.arange(n) * v * 0.1
    states = []
    for i, x in enumerate(xs):
        y = amp * math.sin(2 * math.pi * x / lam)
        slope = amp * 2 * math.pi / lam * math.cos(2 * math.pi * x / lam)
        states.append(VehicleState(x=float(x), y=float(y), v=v,
                                   phi=math.atan(slope), t=0.1 * i))
    ref = StateTrajectory(states=states, dt=0.1)
    state = VehicleState(x=0.0, y=0.0, v=8.0, phi=states[0].phi)
    traj, _ = _run_closed_loop(ref, state, 200)
    errs = [abs(cross_track_error(s, ref)) for s in traj[20:]]
    assert float(np.mean(errs)) < 0.15


def test_cost_trace_monotone_nonincreasing():
    ref = _circle_ref()
    state = VehicleState(x=2.0, y=-1.0, v=4.0, phi=0.3)
    _, info, _ = nmpc_solve(state, ref, ControlCommand(), PARAMS)
    trace = np.array(info.cost_trace)
    assert np.all(np.diff(trace) <= 1e-12)


def test_warm_start_reduces_iterations_on_static_problem():
    ref = _circle_ref()
    state = VehicleState(x=2.0, y=-1.0, v=4.0, phi=0.3)
    _, info_cold, useq = nmpc_solve(state, ref, ControlCommand(), PARAMS)
    _, info_warm, _ = nmpc_solve(state, ref, ControlCommand(), PARAMS,
                                 warm_start=useq)
    assert info_warm.iterations <= info_cold.iterations
