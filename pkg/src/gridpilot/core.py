"""Vehicle state, Ackermann kinematics and trajectory containers.

State is z = (x, y, v, phi): planar position, forward speed and heading.
One integration step over dt with command u = (a, delta):

    x'   = x + v * cos(phi) * dt
    y'   = y + v * sin(phi) * dt
    v'   = max(0, v + a * dt)          # no reverse gear
    phi' = wrap(phi + v / L * tan(delta) * dt)

The position update uses the speed at the start of the step, so per-step
displacement is bounded by v * dt regardless of the commanded acceleration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

TWO_PI = 2.0 * math.pi


class InvalidStateError(ValueError):
    """A state or command carries non-finite fields."""


@dataclass(frozen=True)
class VehicleParams:
    """Geometry, actuation limits and loop timing shared across the stack."""

    wheelbase: float = 2.7       # m
    length: float = 4.5          # m, footprint
    width: float = 2.0           # m, footprint
    height: float = 1.8          # m, also the upper bound of the height filter
    v_max: float = 12.0          # m/s
    a_min: float = -4.0          # m/s^2, braking
    a_max: float = 2.5           # m/s^2
    delta_max: float = 0.52      # rad, steering lock
    dt_control: float = 0.1     # s, control tick
    dt_frame: float = 1.0       # s, observation frame period

    def __post_init__(self) -> None:
        ratio = self.dt_frame / self.dt_control
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(
                f"dt_frame={self.dt_frame} must be an integer multiple of dt_control={self.dt_control}"
            )

    @property
    def ticks_per_frame(self) -> int:
        return int(round(self.dt_frame / self.dt_control))


@dataclass
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    v: float = 0.0       # m/s, >= 0
    phi: float = 0.0     # rad, wrapped to (-pi, pi]
    t: float = 0.0       # s, sim time

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.v, self.phi], dtype=np.float64)


@dataclass(frozen=True)
class ControlCommand:
    a: float = 0.0       # m/s^2
    delta: float = 0.0   # rad

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.delta], dtype=np.float64)


@dataclass
class StateTrajectory:
    """States sampled on a uniform dt grid."""

    states: list[VehicleState] = field(default_factory=list)
    dt: float = 0.1

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, idx):
        return self.states[idx]

    def as_array(self) -> np.ndarray:
        """(N, 4) array of x, y, v, phi rows."""
        return np.array([[s.x, s.y, s.v, s.phi] for s in self.states], dtype=np.float64)

    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states], dtype=np.float64)


def wrap_angle(phi: float) -> float:
    """Wrap to (-pi, pi]; -pi maps to +pi."""
    return phi - TWO_PI * math.ceil((phi - math.pi) / TWO_PI)


def clamp(value: float, lo: float, hi: float) -> float:
    return max(lo, min(hi, value))


def step_dynamics(state: VehicleState, command: ControlCommand, dt: float,
                  params: VehicleParams) -> VehicleState:
    """One Ackermann step. Raises InvalidStateError on non-finite input."""
    fields = (state.x, state.y, state.v, state.phi, command.a, command.delta)
    if not all(math.isfinite(f) for f in fields):
        raise InvalidStateError(f"non-finite state or command: {fields}")
    x = state.x + state.v * math.cos(state.phi) * dt
    y = state.y + state.v * math.sin(state.phi) * dt
    v = max(0.0, state.v + command.a * dt)
    phi = wrap_angle(state.phi + state.v / params.wheelbase * math.tan(command.delta) * dt)
    return VehicleState(x=x, y=y, v=v, phi=phi, t=state.t + dt)


def rollout(state: VehicleState, commands: list[ControlCommand], dt: float,
            params: VehicleParams) -> StateTrajectory:
    """Chain step_dynamics over a command sequence; includes the start state."""
    if not commands:
        raise ValueError("rollout needs at least one command")
    states = [state]
    for u in commands:
        states.append(step_dynamics(states[-1], u, dt, params))
    return StateTrajectory(states=states, dt=dt)


def rollout_array(z0: np.ndarray, controls: np.ndarray, dt: float,
                  params: VehicleParams, n_steps: int) -> np.ndarray:
    """Vectorized constant-command rollout for candidate batches.

    z0: (B, 4) start states, controls: (B, 2) held (a, delta) per row.
    Returns (B, n_steps + 1, 4) including the start state.  Same update
    equations as step_dynamics, vectorized; angle wrap uses the same
    (-pi, pi] convention.
    """
    batch = z0.shape[0]
    out = np.empty((batch, n_steps + 1, 4), dtype=np.float64)
    out[:, 0] = z0
    a = controls[:, 0]
    tan_delta = np.tan(controls[:, 1])
    z = z0.copy()
    for k in range(n_steps):
        cos_phi = np.cos(z[:, 3])
        sin_phi = np.sin(z[:, 3])
        z = np.stack(
            [
                z[:, 0] + z[:, 2] * cos_phi * dt,
                z[:, 1] + z[:, 2] * sin_phi * dt,
                np.maximum(0.0, z[:, 2] + a * dt),
                wrap_angle_array(z[:, 3] + z[:, 2] / params.wheelbase * tan_delta * dt),
            ],
            axis=1,
        )
        out[:, k + 1] = z
    return out


def wrap_angle_array(phi: np.ndarray) -> np.ndarray:
    return phi - TWO_PI * np.ceil((phi - math.pi) / TWO_PI)


def trajectory_from_array(arr: np.ndarray, t0: float, dt: float) -> StateTrajectory:
    states = [
        VehicleState(x=float(r[0]), y=float(r[1]), v=float(r[2]), phi=float(r[3]),
                     t=t0 + i * dt)
        for i, r in enumerate(arr)
    ]
    return StateTrajectory(states=states, dt=dt)


__all__ = [
    "VehicleParams",
    "VehicleState",
    "ControlCommand",
    "StateTrajectory",
    "InvalidStateError",
    "wrap_angle",
    "wrap_angle_array",
    "clamp",
    "step_dynamics",
    "rollout",
    "rollout_array",
    "trajectory_from_array",
    "replace",
]
