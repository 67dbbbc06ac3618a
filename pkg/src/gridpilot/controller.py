"""NMPC tracking controller.

Tracks a desired trajectory with a shooting formulation over an H-tick
command sequence, minimized by projected gradient descent with a
backtracking line search. Gradients come from a hand-derived adjoint pass
over the rollout, so a solve costs one forward and one backward sweep per
iteration. Box and rate bounds are enforced by hard projection; the
returned command always satisfies them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (ControlCommand, StateTrajectory, VehicleParams, VehicleState,
                   wrap_angle)


@dataclass(frozen=True)
class NmpcConfig:
    horizon: int = 20            # ticks
    w_ct: float = 2.0            # cross-track
    w_phi: float = 1.0           # orientation
    w_v: float = 0.5             # speed tracking
    # station (along-path position) tracking; with only lateral and speed
    # terms, standstill is a near-flat optimum whenever the reference
    # creeps away slowly, and each receding-horizon resolve defers the
    # pull-away another tick
    w_lon: float = 0.5
    w_a_rate: float = 0.1        # accel smoothness
    w_delta_rate: float = 0.1    # steering smoothness
    # penalty on commanding deceleration past standstill; the speed clamp
    # makes the cost flat in a there, and a flat basin traps the descent in
    # an all-braking sequence that can never pull away from a stop
    w_clamp: float = 1.0
    da_max: float = 0.5          # m/s^2 per tick
    ddelta_max: float = 0.05     # rad per tick
    max_iter: int = 40
    tol: float = 1e-8            # stop when the cost decrease falls below this
    fit_window: float = 2.0      # s of reference arc used for the path fit


@dataclass
class NmpcInfo:
    cost_trace: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    @property
    def cost(self) -> float:
        return self.cost_trace[-1] if self.cost_trace else float("nan")


def rate_errors(command: ControlCommand, previous: ControlCommand) -> tuple[float, float]:
    """Consecutive command differences (e_a, e_delta)."""
    return command.a - previous.a, command.delta - previous.delta


def orientation_error(state: VehicleState, phi_d: float, delta: float,
                      params: VehicleParams) -> float:
    """Heading error with the kinematic steering correction term."""
    return wrap_angle(state.phi - phi_d + state.v / params.wheelbase * delta)


def _reference_window(state: VehicleState, reference: StateTrajectory,
                      window_s: float) -> np.ndarray:
    """Reference states within window_s of arc around the nearest point, (K, 4)."""
    ref = reference.as_array()
    d2 = (ref[:, 0] - state.x) ** 2 + (ref[:, 1] - state.y) ** 2
    i_near = int(np.argmin(d2))
    half = max(1, int(round(0.5 * window_s / reference.dt)))
    lo = max(0, i_near - half)
    hi = min(ref.shape[0], i_near + half + 1)
    return ref[lo:hi]


def fit_path_poly(state: VehicleState, reference: StateTrajectory,
                  window_s: float = 2.0) -> np.ndarray | None:
    """Cubic y = g(x) over the nearby reference, in the frame of `state`.

    Returns polynomial coefficients (highest power first) or None when the
    window holds fewer than four distinct x stations, in which case the
    caller falls back to nearest-point geometry.
    """
    win = _reference_window(state, reference, window_s)
    c, s = math.cos(state.phi), math.sin(state.phi)
    dx = win[:, 0] - state.x
    dy = win[:, 1] - state.y
    x_loc = dx * c + dy * s
    y_loc = -dx * s + dy * c
    distinct = np.unique(np.round(x_loc, 6))
    if distinct.size < 4:
        return None
    return np.polyfit(x_loc, y_loc, 3)


def cross_track_error(state: VehicleState, reference: StateTrajectory,
                      window_s: float = 2.0) -> float:
    """Signed lateral offset e_ct = g(x) - y in the vehicle frame.

    With the reference straight ahead along +x and the vehicle displaced
    half a meter to its right, the error is +0.5.
    """
    coeffs = fit_path_poly(state, reference, window_s)
    if coeffs is not None:
        return float(np.polyval(coeffs, 0.0))
    # degenerate window: signed offset of the nearest reference point
    win = _reference_window(state, reference, window_s)
    d2 = (win[:, 0] - state.x) ** 2 + (win[:, 1] - state.y) ** 2
    near = win[int(np.argmin(d2))]
    c, s = math.cos(state.phi), math.sin(state.phi)
    return float(-(near[0] - state.x) * s + (near[1] - state.y) * c)


def _project(u: np.ndarray, u_prev: np.ndarray, params: VehicleParams,
             cfg: NmpcConfig) -> np.ndarray:
    """Clip to box bounds, then chain rate bounds forward from u_prev."""
    out = u.copy()
    prev_a, prev_d = u_prev[0], u_prev[1]
    for j in range(out.shape[0]):
        lo_a = max(params.a_min, prev_a - cfg.da_max)
        hi_a = min(params.a_max, prev_a + cfg.da_max)
        lo_d = max(-params.delta_max, prev_d - cfg.ddelta_max)
        hi_d = min(params.delta_max, prev_d + cfg.ddelta_max)
        out[j, 0] = min(max(out[j, 0], lo_a), hi_a)
        out[j, 1] = min(max(out[j, 1], lo_d), hi_d)
        prev_a, prev_d = out[j, 0], out[j, 1]
    return out


class _Problem:
    """Frozen per-solve data: start state, reference samples, path fit."""

    def __init__(self, state: VehicleState, reference: StateTrajectory,
                 u_prev: np.ndarray, params: VehicleParams, cfg: NmpcConfig):
        self.z0 = state.as_array()
        self.u_prev = u_prev
        self.params = params
        self.cfg = cfg
        self.dt = params.dt_control
        H = cfg.horizon
        ref = reference.as_array()
        if ref.shape[0] < H:  # pad a short reference by holding its last state
            pad = np.repeat(ref[-1:], H - ref.shape[0], axis=0)
            ref = np.concatenate([ref, pad], axis=0)
        self.phi_d = ref[:H, 3]
        self.v_d = ref[:H, 2]
        coeffs = fit_path_poly(state, reference, cfg.fit_window)
        if coeffs is None:
            # fall back to the straight line through the nearest reference pose
            win = _reference_window(state, reference, cfg.fit_window)
            d2 = (win[:, 0] - state.x) ** 2 + (win[:, 1] - state.y) ** 2
            near = win[int(np.argmin(d2))]
            c, s = math.cos(state.phi), math.sin(state.phi)
            x0 = (near[0] - state.x) * c + (near[1] - state.y) * s
            y0 = -(near[0] - state.x) * s + (near[1] - state.y) * c
            slope = math.tan(wrap_angle(near[3] - state.phi))
            coeffs = np.array([0.0, 0.0, slope, y0 - slope * x0])
        self.coeffs = coeffs
        self.dcoeffs = np.polyder(coeffs)
        self.anchor = (state.x, state.y, math.cos(state.phi), math.sin(state.phi))
        ax, ay, c0, s0 = self.anchor
        self.x_ref_loc = (ref[:H, 0] - ax) * c0 + (ref[:H, 1] - ay) * s0

    def rollout(self, u: np.ndarray) -> np.ndarray:
        """(H+1, 4) states from chaining the dynamics under u."""
        H = u.shape[0]
        z = np.empty((H + 1, 4))
        z[0] = self.z0
        L = self.params.wheelbase
        dt = self.dt
        for j in range(H):
            x, y, v, phi = z[j]
            z[j + 1, 0] = x + v * math.cos(phi) * dt
            z[j + 1, 1] = y + v * math.sin(phi) * dt
            z[j + 1, 2] = max(0.0, v + u[j, 0] * dt)
            z[j + 1, 3] = wrap_angle(phi + v / L * math.tan(u[j, 1]) * dt)
        return z

    def _errors(self, z: np.ndarray, u: np.ndarray):
        ax, ay, c0, s0 = self.anchor
        x_loc = (z[1:, 0] - ax) * c0 + (z[1:, 1] - ay) * s0
        y_loc = -(z[1:, 0] - ax) * s0 + (z[1:, 1] - ay) * c0
        e_ct = np.polyval(self.coeffs, x_loc) - y_loc
        L = self.params.wheelbase
        e_phi = np.array([
            wrap_angle(z[j + 1, 3] - self.phi_d[j] + z[j + 1, 2] / L * u[j, 1])
            for j in range(u.shape[0])
        ])
        e_v = z[1:, 2] - self.v_d
        e_lon = x_loc - self.x_ref_loc
        u_full = np.concatenate([self.u_prev[None, :], u], axis=0)
        du = np.diff(u_full, axis=0)
        pen = np.minimum(0.0, z[:-1, 2] + u[:, 0] * self.dt)
        return x_loc, e_ct, e_phi, e_v, e_lon, du, pen

    def cost(self, u: np.ndarray) -> float:
        z = self.rollout(u)
        _, e_ct, e_phi, e_v, e_lon, du, pen = self._errors(z, u)
        cfg = self.cfg
        return float(cfg.w_ct * np.sum(e_ct ** 2) + cfg.w_phi * np.sum(e_phi ** 2)
                     + cfg.w_v * np.sum(e_v ** 2)
                     + cfg.w_lon * np.sum(e_lon ** 2)
                     + cfg.w_a_rate * np.sum(du[:, 0] ** 2)
                     + cfg.w_delta_rate * np.sum(du[:, 1] ** 2)
                     + cfg.w_clamp * np.sum(pen ** 2))

    def gradient(self, u: np.ndarray) -> tuple[float, np.ndarray]:
        """Cost and dJ/du via one adjoint sweep over the rollout."""
        cfg = self.cfg
        params = self.params
        L = params.wheelbase
        dt = self.dt
        H = u.shape[0]
        z = self.rollout(u)
        x_loc, e_ct, e_phi, e_v, e_lon, du, pen = self._errors(z, u)
        cost = float(cfg.w_ct * np.sum(e_ct ** 2) + cfg.w_phi * np.sum(e_phi ** 2)
                     + cfg.w_v * np.sum(e_v ** 2)
                     + cfg.w_lon * np.sum(e_lon ** 2)
                     + cfg.w_a_rate * np.sum(du[:, 0] ** 2)
                     + cfg.w_delta_rate * np.sum(du[:, 1] ** 2)
                     + cfg.w_clamp * np.sum(pen ** 2))
        ax, ay, c0, s0 = self.anchor
        gp = np.polyval(self.dcoeffs, x_loc)
        # stage-cost partials w.r.t. z_{j+1}
        dldz = np.zeros((H, 4))
        dldz[:, 0] = 2.0 * cfg.w_ct * e_ct * (gp * c0 + s0) + 2.0 * cfg.w_lon * e_lon * c0
        dldz[:, 1] = 2.0 * cfg.w_ct * e_ct * (gp * s0 - c0) + 2.0 * cfg.w_lon * e_lon * s0
        dldz[:, 2] = 2.0 * cfg.w_phi * e_phi * (u[:, 1] / L) + 2.0 * cfg.w_v * e_v
        dldz[:, 3] = 2.0 * cfg.w_phi * e_phi
        grad = np.zeros_like(u)
        # rate couplings: du[j] pairs (u_j - u_{j-1})
        grad[:, 0] += 2.0 * cfg.w_a_rate * du[:, 0]
        grad[:, 1] += 2.0 * cfg.w_delta_rate * du[:, 1]
        grad[:-1, 0] -= 2.0 * cfg.w_a_rate * du[1:, 0]
        grad[:-1, 1] -= 2.0 * cfg.w_delta_rate * du[1:, 1]
        grad[:, 1] += 2.0 * cfg.w_phi * e_phi * z[1:, 2] / L
        lam = np.zeros(4)
        for j in range(H - 1, -1, -1):
            lam = lam + dldz[j]
            x, y, v, phi = z[j]
            # B = dF/du at (z_j, u_j); the clamp penalty depends on (v_j, a_j)
            # directly, restoring a gradient where the clamp removes it
            clamped = v + u[j, 0] * dt < 0.0
            grad[j, 0] += lam[2] * (0.0 if clamped else dt)
            grad[j, 0] += 2.0 * cfg.w_clamp * pen[j] * dt
            sec2 = 1.0 + math.tan(u[j, 1]) ** 2
            grad[j, 1] += lam[3] * v / L * sec2 * dt
            # A^T lam for the next-older stage
            c, s = math.cos(phi), math.sin(phi)
            lam = np.array([
                lam[0],
                lam[1],
                lam[0] * c * dt + lam[1] * s * dt
                + (0.0 if clamped else lam[2])
                + lam[3] * math.tan(u[j, 1]) / L * dt
                + 2.0 * cfg.w_clamp * pen[j],
                -lam[0] * v * s * dt + lam[1] * v * c * dt + lam[3],
            ])
        return cost, grad


def _descend(prob: _Problem, u0: np.ndarray, u_prev: np.ndarray,
             params: VehicleParams, cfg: NmpcConfig
             ) -> tuple[np.ndarray, list[float], bool]:
    """Projected block-coordinate gradient descent from u0.

    The accel and steering channels take separate backtracking line
    searches: the cost is orders of magnitude stiffer in steering (lateral
    errors integrate twice over the horizon), and a shared step small
    enough for steering would freeze the accel channel. Returns (u,
    accepted cost trace, converged); converged is False only when the
    iteration budget ran out while the cost was still falling.
    """
    u = u0
    cost, grad = prob.gradient(u)
    trace = [cost]
    steps = [0.5, 0.02]
    converged = False
    for _ in range(cfg.max_iter):
        before = cost
        for ch in (0, 1):
            alpha = steps[ch]
            for _ in range(12):
                u_try = u.copy()
                u_try[:, ch] -= alpha * grad[:, ch]
                u_try = _project(u_try, u_prev, params, cfg)
                c_try = prob.cost(u_try)
                if c_try < cost - 1e-15:
                    steps[ch] = min(alpha * 2.0, 1.0)
                    u = u_try
                    cost = c_try
                    break
                alpha *= 0.5
        if cost >= before - 1e-15:
            converged = True
            break
        trace.append(cost)
        if before - cost < cfg.tol:
            converged = True
            break
        _, grad = prob.gradient(u)
    return u, trace, converged


def nmpc_solve(state: VehicleState, reference: StateTrajectory,
               previous: ControlCommand, params: VehicleParams,
               cfg: NmpcConfig = NmpcConfig(),
               warm_start: np.ndarray | None = None
               ) -> tuple[ControlCommand, NmpcInfo, np.ndarray]:
    """Solve for the next command tracking `reference` from `state`.

    Returns (command, info, command_sequence); feed the sequence back as
    warm_start on the next tick. The line search only ever accepts strict
    cost decreases, so info.cost_trace is non-increasing. When the warm
    start makes no relative progress on a non-trivial cost the solver
    retries from a projected zero sequence: at standstill the speed clamp
    flattens the accel gradient along an all-braking sequence, and only a
    restart can command motion again.
    """
    u_prev = previous.as_array()
    prob = _Problem(state, reference, u_prev, params, cfg)
    H = cfg.horizon
    if warm_start is not None and warm_start.shape == (H, 2):
        u = np.concatenate([warm_start[1:], warm_start[-1:]], axis=0)
    else:
        u = np.zeros((H, 2))
    u0 = _project(u, u_prev, params, cfg)
    u, trace, converged = _descend(prob, u0, u_prev, params, cfg)
    # a warm start pinned just under the standstill clamp has a severed
    # speed gradient and only a vanishing penalty slope, so the descent
    # accepts cosmetic decreases and freezes; when the solve makes no
    # relative progress on a non-trivial cost, retry from exact zeros
    # (where the clamp is inactive and the full gradient flows) and keep
    # the better answer
    stuck = trace[0] - trace[-1] < 1e-6 * max(1.0, trace[0])
    if trace[-1] > 1e-4 and stuck:
        u0_cold = _project(np.zeros((H, 2)), u_prev, params, cfg)
        if not np.array_equal(u0_cold, u0):
            u_cold, trace_cold, conv_cold = _descend(prob, u0_cold, u_prev,
                                                     params, cfg)
            if trace_cold[-1] < trace[-1]:
                u = u_cold
                trace = [trace[0]] + [c for c in trace_cold if c < trace[0]]
                converged = conv_cold
    info = NmpcInfo()
    info.cost_trace = trace
    info.iterations = len(trace) - 1
    info.converged = converged
    command = ControlCommand(a=float(u[0, 0]), delta=float(u[0, 1]))
    return command, info, u


__all__ = [
    "NmpcConfig",
    "NmpcInfo",
    "nmpc_solve",
    "cross_track_error",
    "orientation_error",
    "rate_errors",
    "fit_path_poly",
]
