"""Extended Kalman filter over the Ackermann state (x, y, v, phi).

Used to smooth the planner's frame-by-frame state chain; the measurement
model is the identity with an angle-wrapped innovation on phi.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ControlCommand, VehicleParams, VehicleState, step_dynamics, wrap_angle

# process / measurement noise, tuned for meter-scale planning chains
Q_DEFAULT = np.diag([0.05 ** 2, 0.05 ** 2, 0.1 ** 2, 0.02 ** 2])
R_DEFAULT = np.diag([0.1 ** 2, 0.1 ** 2, 0.2 ** 2, 0.05 ** 2])
JITTER = 1e-9


@dataclass
class EkfState:
    mean: VehicleState
    cov: np.ndarray = field(default_factory=lambda: np.eye(4) * 0.01)
    jitter_count: int = 0  # how often SPD repair had to add diagonal jitter


def jacobian_f(state: VehicleState, command: ControlCommand, dt: float,
               params: VehicleParams) -> np.ndarray:
    """d(step_dynamics)/d(state) at the given point.

    The speed row clamps at zero exactly like the dynamics do, so the
    Jacobian stays consistent with the nonlinear model even at standstill.
    """
    c = math.cos(state.phi)
    s = math.sin(state.phi)
    dv = 0.0 if state.v + command.a * dt < 0.0 else 1.0
    F = np.array(
        [
            [1.0, 0.0, c * dt, -state.v * s * dt],
            [0.0, 1.0, s * dt, state.v * c * dt],
            [0.0, 0.0, dv, 0.0],
            [0.0, 0.0, math.tan(command.delta) / params.wheelbase * dt, 1.0],
        ]
    )
    return F


def _repair_spd(P: np.ndarray, ekf: EkfState) -> np.ndarray:
    P = 0.5 * (P + P.T)
    # eigenvalue check is cheap at 4x4 and catches drift before it propagates
    if np.linalg.eigvalsh(P)[0] <= 0.0:
        P = P + JITTER * np.eye(4)
        ekf.jitter_count += 1
    return P


def ekf_predict(ekf: EkfState, command: ControlCommand, dt: float,
                params: VehicleParams, Q: np.ndarray = Q_DEFAULT) -> EkfState:
    """Propagate mean through the dynamics and covariance through its Jacobian."""
    F = jacobian_f(ekf.mean, command, dt, params)
    mean = step_dynamics(ekf.mean, command, dt, params)
    P = F @ ekf.cov @ F.T + Q
    out = EkfState(mean=mean, cov=ekf.cov, jitter_count=ekf.jitter_count)
    out.cov = _repair_spd(P, out)
    return out


def ekf_update(ekf: EkfState, measurement: VehicleState,
               R: np.ndarray = R_DEFAULT) -> EkfState:
    """Identity-measurement update with the phi innovation wrapped."""
    z = measurement.as_array()
    x = ekf.mean.as_array()
    innov = z - x
    innov[3] = wrap_angle(innov[3])
    S = ekf.cov + R
    K = ekf.cov @ np.linalg.inv(S)
    x_new = x + K @ innov
    P = (np.eye(4) - K) @ ekf.cov
    mean = VehicleState(x=float(x_new[0]), y=float(x_new[1]),
                        v=float(max(0.0, x_new[2])), phi=wrap_angle(float(x_new[3])),
                        t=ekf.mean.t)
    out = EkfState(mean=mean, cov=ekf.cov, jitter_count=ekf.jitter_count)
    out.cov = _repair_spd(P, out)
    return out


__all__ = ["EkfState", "jacobian_f", "ekf_predict", "ekf_update", "Q_DEFAULT", "R_DEFAULT"]
