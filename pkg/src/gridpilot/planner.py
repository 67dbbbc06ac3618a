"""Temporal planning: per-frame dynamic window search fused across past and
predicted occupancy frames, smoothed by the EKF, interpolated to control rate.

Every planning call works in the world frame. Grids carry their own capture
pose, so candidates are checked against past frames and predicted frames
through the same geometry.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import ekf as ekf_mod
from .core import (ControlCommand, StateTrajectory, VehicleParams, VehicleState,
                   rollout_array, trajectory_from_array, wrap_angle)
from .pointcloud import OccupancyGrid


class NoFeasibleTrajectory(RuntimeError):
    """Every candidate arc sweeps through occupied space."""


# ranks a feasible stop below every feasible moving arc (scores are O(1))
STOP_SCORE_BASE = -1.0e9


@dataclass(frozen=True)
class DwaConfig:
    n_v: int = 7                     # speed samples across the window
    n_delta: int = 11                # steering samples across the lock range
    window_time: float = 1.0         # s, accel-bounded reach for the speed window
    rollout_time: float = 2.0        # s, candidate arc length
    clearance: float = 0.3           # m, footprint inflation
    speed_margin: float = 0.05       # s, extra inflation per unit arc speed
    # predicted frames are less trustworthy the deeper they sit in the
    # horizon; growing the feasibility margin with depth keeps the chain
    # from committing to passes that only work if the prediction is exact
    depth_margin: float = 0.1        # m per predicted frame of depth
    # slowest allowed moving candidate: sub-walking-speed arcs rotate for
    # clearance while barely advancing, and a chain of them digs the pose
    # into corners that a clean stop-and-wait never enters
    v_move_min: float = 1.0          # m/s
    # normalization ceiling for the score term; beyond this margin more
    # clearance buys nothing, so off-lane obstacles cannot outbid progress
    clearance_cap: float = 1.2       # m
    # clearance chasing can ratchet the pose off the road one locally
    # sensible swerve at a time, and a pose parked in the verge pointing at
    # a barrier can be unrecoverable even with no obstacle nearby; the
    # penalty grows quadratically with the endpoint's lateral offset and
    # past the bound moving candidates are culled outright
    w_crosstrack: float = 2.0
    crosstrack_scale: float = 6.0    # m, offset where the penalty reaches w
    lateral_bound: float = 6.0       # m, hard corridor half-width
    occupied_threshold: float = 0.5
    collision_stride: int = 2        # check every n-th arc pose
    w_heading: float = 1.0
    w_clearance: float = 1.0
    w_velocity: float = 0.5
    goal_lookahead: float = 10.0     # m along the route


@dataclass
class CandidateTrajectory:
    v: float
    delta: float
    v_index: int
    delta_index: int
    score: float
    states: np.ndarray       # (n, 4) world-frame arc at dt_control
    feasible: bool = True


@dataclass
class PredictionBundle:
    """Predicted occupancy frames for t+1 .. t+tau_o, oldest first."""

    grids: list[OccupancyGrid]
    source: str = "oracle"   # oracle | learned | persistence

    @property
    def tau_o(self) -> int:
        return len(self.grids)


@dataclass
class PlanResult:
    trajectory: StateTrajectory              # desired states over (t, t + tau_o]
    future_nodes: list[VehicleState]
    past_nodes: list[VehicleState]
    selections: list[CandidateTrajectory | None]
    degraded: bool = False                   # emergency-stop tail in use
    jitter_count: int = 0


@dataclass
class Route:
    """Reference polyline with a target speed."""

    points: np.ndarray      # (M, 2)
    v_ref: float = 8.0

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=np.float64)
        seg = np.diff(self.points, axis=0)
        self._seg_len = np.linalg.norm(seg, axis=1)
        self._cum = np.concatenate([[0.0], np.cumsum(self._seg_len)])

    @property
    def length(self) -> float:
        return float(self._cum[-1])

    def project(self, x: float, y: float) -> float:
        """Arc length of the closest point on the polyline."""
        p = np.array([x, y])
        a = self.points[:-1]
        d = np.diff(self.points, axis=0)
        len2 = np.maximum(self._seg_len ** 2, 1e-12)
        t = np.clip(np.einsum("ij,ij->i", p - a, d) / len2, 0.0, 1.0)
        closest = a + t[:, None] * d
        d2 = np.einsum("ij,ij->i", closest - p, closest - p)
        i = int(np.argmin(d2))
        return float(self._cum[i] + t[i] * self._seg_len[i])

    def lateral_offset(self, x, y):
        """Distance to the polyline with the first and last segments extended
        to infinity, so positions past either end measure cross-track offset
        only. Accepts scalars or arrays."""
        p = np.stack([np.atleast_1d(np.asarray(x, dtype=np.float64)),
                      np.atleast_1d(np.asarray(y, dtype=np.float64))], axis=1)
        a = self.points[:-1]
        d = np.diff(self.points, axis=0)
        len2 = np.maximum(self._seg_len ** 2, 1e-12)
        t = ((p[:, None, :] - a[None]) * d[None]).sum(-1) / len2
        lo = np.zeros(len(len2))
        hi = np.ones(len(len2))
        lo[0] = -np.inf
        hi[-1] = np.inf
        t = np.clip(t, lo[None], hi[None])
        closest = a[None] + t[..., None] * d[None]
        d2 = ((closest - p[:, None, :]) ** 2).sum(-1)
        out = np.sqrt(d2.min(axis=1))
        return out if np.ndim(x) else float(out[0])

    def point_at(self, s: float) -> np.ndarray:
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self._cum, s, side="right") - 1)
        i = min(i, len(self._seg_len) - 1)
        frac = (s - self._cum[i]) / max(self._seg_len[i], 1e-12)
        return self.points[i] + frac * (self.points[i + 1] - self.points[i])

    def heading_at(self, s: float) -> float:
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self._cum, s, side="right") - 1)
        i = min(max(i, 0), len(self._seg_len) - 1)
        d = self.points[i + 1] - self.points[i]
        return math.atan2(d[1], d[0])

    def completion(self, x: float, y: float) -> float:
        """Percent of the route arc length reached by (x, y)."""
        return 100.0 * self.project(x, y) / max(self.length, 1e-12)


def _occupied_tree(grid: OccupancyGrid, threshold: float):
    """KD-tree over occupied cell centers in world coordinates, cached on the grid."""
    cache = grid._world_cache
    if cache is not None and cache[0] == threshold:
        return cache[1]
    pts = grid.cell_centers_world(threshold)
    tree = cKDTree(pts) if pts.shape[0] else None
    grid._world_cache = (threshold, tree)
    return tree


def footprint_disc_offsets(params: VehicleParams) -> np.ndarray:
    """Axial offsets of the three discs covering the footprint rectangle."""
    half = 0.5 * (params.length - params.width)
    return np.array([-half, 0.0, half])


def dwa_step(grids: OccupancyGrid | list[OccupancyGrid], state: VehicleState,
             goal: np.ndarray, params: VehicleParams,
             cfg: DwaConfig = DwaConfig(),
             v_cap: float | None = None,
             extra_clearance: float = 0.0,
             route: Route | None = None) -> CandidateTrajectory:
    """Pick the best (v, delta) candidate from `state` against the given
    grid (or every grid in a list, for arcs spanning two frames).

    Each candidate ramps from the current speed to its target v over the
    window, then holds v; the swept path covers the real transition, so a
    "slow down" candidate accounts for the glide it takes to shed speed
    instead of pretending the speed change is instant. Stop candidates
    brake at the accel floor until standstill. An arc is infeasible when
    its swept footprint (three discs of radius
    width/2 + clearance + speed_margin * v) touches a cell with occupancy
    above the threshold in any grid; `extra_clearance` widens that radius
    (callers planning against deep predicted frames pass their depth
    margin). Score:

        w_heading * alignment(goal) + w_clearance * clearance/cap +
        w_velocity * v / v_cap

    Speed sample 0 is always a full stop and the moving samples never drop
    below v_move_min; stop candidates only win when every moving arc
    collides, so a blocked planner holds position instead of creeping. The
    stop brakes with centered steering only: a stop that steers for
    clearance trades heading for centimeters, and a pose parked pointing
    off-route next to an obstacle can be impossible to recover. Ties
    resolve to the lowest (v index, delta index). Raises
    NoFeasibleTrajectory when every arc, including the stop, collides.
    """
    if isinstance(grids, OccupancyGrid):
        grids = [grids]
    v_cap = params.v_max if v_cap is None else min(v_cap, params.v_max)
    v_lo = max(0.0, state.v + params.a_min * cfg.window_time)
    v_hi = max(v_lo, min(v_cap, state.v + params.a_max * cfg.window_time))
    # index 0 is always the full stop; moving samples start at the creep
    # floor so every non-stop candidate actually travels
    v_lo = max(v_lo, cfg.v_move_min)
    if v_hi >= v_lo:
        v_samples = np.concatenate([[0.0],
                                    np.linspace(v_lo, v_hi, cfg.n_v - 1)])
    else:
        v_samples = np.array([0.0])
    d_samples = np.linspace(-params.delta_max, params.delta_max, cfg.n_delta)
    n_steps = int(round(cfg.rollout_time / params.dt_control))
    ramp_steps = min(n_steps, max(1, int(round(cfg.window_time / params.dt_control))))

    vv, dd = np.meshgrid(v_samples, d_samples, indexing="ij")
    flat_v = vv.ravel()
    flat_d = dd.ravel()
    n_cand = flat_v.shape[0]
    stop = flat_v == 0.0
    z0 = np.tile(np.array([state.x, state.y, state.v, state.phi]), (n_cand, 1))
    # stops brake at the accel floor from the first tick; other candidates
    # ramp linearly to their target over the window, floored at a_min
    a_ramp = np.where(
        stop, params.a_min,
        np.maximum((flat_v - state.v) / (ramp_steps * params.dt_control),
                   params.a_min))
    ramp = rollout_array(z0, np.stack([a_ramp, flat_d], axis=1),
                         params.dt_control, params, ramp_steps)
    z1 = ramp[:, -1].copy()
    z1[~stop, 2] = flat_v[~stop]
    a_hold = np.where(stop, params.a_min, 0.0)
    hold = rollout_array(z1, np.stack([a_hold, flat_d], axis=1),
                         params.dt_control, params, n_steps - ramp_steps)
    arcs = np.concatenate([ramp, hold[:, 1:]], axis=1)

    check = arcs[:, ::cfg.collision_stride]
    if check.shape[1] == 0 or (arcs.shape[1] - 1) % cfg.collision_stride != 0:
        check = np.concatenate([check, arcs[:, -1:]], axis=1)
    offsets = footprint_disc_offsets(params)
    r_disc = 0.5 * params.width + cfg.clearance
    cos_p = np.cos(check[:, :, 3])
    sin_p = np.sin(check[:, :, 3])
    disc_x = check[:, :, None, 0] + offsets[None, None, :] * cos_p[:, :, None]
    disc_y = check[:, :, None, 1] + offsets[None, None, :] * sin_p[:, :, None]
    q = np.stack([disc_x.ravel(), disc_y.ravel()], axis=1)
    min_dist = np.full(n_cand, np.inf)
    seen: list[OccupancyGrid] = []
    for g in grids:
        if any(g is s for s in seen):
            continue
        seen.append(g)
        tree = _occupied_tree(g, cfg.occupied_threshold)
        if tree is None:
            continue
        dist, _ = tree.query(q)
        np.minimum(min_dist, dist.reshape(n_cand, -1).min(axis=1), out=min_dist)
    # faster arcs need more margin: position uncertainty and reaction
    # distance both grow with speed, so the footprint inflates per candidate.
    # the margin is a hard feasibility floor only; scoring clearance from the
    # static radius keeps slightly-slower arcs from outbidding a steady
    # cruise whenever an off-lane obstacle grazes the inflated radius
    # stops are exempt from the extra margin: a standstill is the least
    # committal candidate, and inflating it away would leave no fallback
    # precisely where one is needed
    r_cand = (r_disc + cfg.speed_margin * flat_v
              + np.where(stop, 0.0, extra_clearance))
    feasible = min_dist >= r_cand
    feasible &= ~(stop & (np.arange(n_cand) % cfg.n_delta != cfg.n_delta // 2))
    if not np.any(feasible):
        raise NoFeasibleTrajectory(
            f"all {n_cand} candidate arcs collide at t={state.t:.2f}")

    clearance = np.clip(min_dist - r_disc, 0.0, cfg.clearance_cap) / cfg.clearance_cap
    end = arcs[:, -1]
    bearing = np.arctan2(goal[1] - end[:, 1], goal[0] - end[:, 0])
    align = 1.0 - np.abs(wrap_angle_vec(bearing - end[:, 3])) / math.pi
    score = (cfg.w_heading * align + cfg.w_clearance * clearance
             + cfg.w_velocity * flat_v / max(v_cap, 1e-9))
    # a stop is a fallback, not a peer: it stays put, so its clearance reads
    # high even when the road ahead is blocked
    score[stop] = STOP_SCORE_BASE + clearance[stop]
    score[~feasible] = -np.inf
    best = int(np.argmax(score))  # argmax takes the first max: lowest (v, delta) index
    return CandidateTrajectory(
        v=float(flat_v[best]), delta=float(flat_d[best]),
        v_index=best // cfg.n_delta, delta_index=best % cfg.n_delta,
        score=float(score[best]), states=arcs[best],
    )


def wrap_angle_vec(phi: np.ndarray) -> np.ndarray:
    return phi - 2.0 * math.pi * np.ceil((phi - math.pi) / (2.0 * math.pi))


def _frame_goal(route: Route, s_now: float, k: int, params: VehicleParams,
                cfg: DwaConfig, v_ref: float) -> np.ndarray:
    # keep the goal ahead of the longest arc so alignment never rewards
    # doubling back on an overshot goal; past the end of the route the goal
    # continues along the final heading so the vehicle drives through the
    # finish instead of decelerating onto the last waypoint
    lookahead = max(cfg.goal_lookahead, v_ref * cfg.rollout_time + 5.0)
    s = s_now + lookahead + k * v_ref * params.dt_frame
    if s <= route.length:
        return route.point_at(s)
    th = route.heading_at(route.length)
    overshoot = s - route.length
    return route.point_at(route.length) + overshoot * np.array(
        [math.cos(th), math.sin(th)])


def _standstill_clear(state: VehicleState, grids: list[OccupancyGrid],
                      params: VehicleParams, cfg: DwaConfig) -> bool:
    """Whether the stopped footprint keeps static clearance in every frame."""
    offsets = footprint_disc_offsets(params)
    r_disc = 0.5 * params.width + cfg.clearance
    q = np.stack([state.x + offsets * math.cos(state.phi),
                  state.y + offsets * math.sin(state.phi)], axis=1)
    for g in grids:
        tree = _occupied_tree(g, cfg.occupied_threshold)
        if tree is None:
            continue
        d, _ = tree.query(q)
        if float(np.min(d)) < r_disc:
            return False
    return True


def _braking_profile(state: VehicleState, t_end: float, params: VehicleParams
                     ) -> list[VehicleState]:
    """Straight max-braking tail used when no candidate survives."""
    out = []
    z = state
    while z.t < t_end - 1e-9:
        z = _step_hold(z, params.a_min, params)
        out.append(z)
    return out


def _step_hold(z: VehicleState, a: float, params: VehicleParams) -> VehicleState:
    dt = params.dt_control
    v = max(0.0, z.v + a * dt)
    return VehicleState(x=z.x + z.v * math.cos(z.phi) * dt,
                        y=z.y + z.v * math.sin(z.phi) * dt,
                        v=v, phi=z.phi, t=z.t + dt)


def plan_and_simulate(state: VehicleState, bundle: PredictionBundle, route: Route,
                      params: VehicleParams, cfg: DwaConfig = DwaConfig(),
                      use_ekf: bool = True,
                      latest: OccupancyGrid | None = None,
                      ) -> tuple[list[VehicleState], list[CandidateTrajectory | None], bool, int]:
    """Alternate predicted-frame DWA and a dynamics step through the horizon.

    Returns (nodes, selections, degraded, jitter_count): one node per
    predicted frame. Each step picks an arc checked against the frame's grid,
    the previous frame's (an arc spans the interval between them, and an
    agent sweeping through mid-interval shows up in at least one endpoint),
    and the next frame's, because the rollout extends a frame past the node
    it commits: without that the arc's tail threads through space an agent
    is about to occupy. Deeper frames carry more prediction error, so the
    feasibility margin widens by depth_margin per frame of depth. The step
    advances one frame along the arc and
    smooths the result with the EKF (predict with the implied command,
    identity update with the arc state). `latest` is the measured grid
    bracketing the first interval. With use_ekf=False the nodes are the raw
    arc states.

    When a later node has no feasible arc, the whole chain is replanned
    with tighter speed caps on the nodes before it: braking scheduled deep
    in the horizon must pull the early reference speeds down, or the
    controller never sees it coming. Only after the caps bottom out does
    the plan degrade to the straight emergency-stop tail. A degraded plan
    whose standstill would rest inside predicted occupancy is discarded
    for an immediate max-braking plan from the start state: better to stop
    short than to crawl into a closing gap.
    """
    ticks = params.ticks_per_frame
    s_now = route.project(state.x, state.y)
    nodes: list[VehicleState] = []
    selections: list[CandidateTrajectory | None] = []
    est = ekf_mod.EkfState(mean=state, cov=np.eye(4) * 1e-4)
    current = state
    degraded = False
    caps = [route.v_ref] * (bundle.tau_o + 1)
    retries = 0
    k = 1
    while k <= bundle.tau_o:
        grid = bundle.grids[k - 1]
        goal = _frame_goal(route, s_now, k, params, cfg, route.v_ref)
        prev_grid = bundle.grids[k - 2] if k >= 2 else latest
        check = [grid] if prev_grid is None else [prev_grid, grid]
        if k < bundle.tau_o:
            check.append(bundle.grids[k])
        try:
            cand = dwa_step(check, current, goal, params, cfg, v_cap=caps[k],
                            extra_clearance=cfg.depth_margin * k)
        except NoFeasibleTrajectory:
            if k > 1 and retries < 3:
                retries += 1
                for j in range(1, k):
                    caps[j] = max(cfg.v_move_min, caps[j] - 2.0)
                nodes.clear()
                selections.clear()
                est = ekf_mod.EkfState(mean=state, cov=np.eye(4) * 1e-4)
                current = state
                k = 1
                continue
            degraded = True
            tail = _braking_profile(current, current.t + (bundle.tau_o - k + 1) * params.dt_frame,
                                    params)
            frame_tail = tail[ticks - 1::ticks]
            nodes.extend(frame_tail)
            selections.extend([None] * (bundle.tau_o - k + 1))
            break
        raw = cand.states[ticks]
        raw_state = VehicleState(x=float(raw[0]), y=float(raw[1]), v=float(raw[2]),
                                 phi=float(raw[3]), t=current.t + params.dt_frame)
        if use_ekf:
            a_impl = (cand.v - current.v) / params.dt_frame
            u = ControlCommand(a=a_impl, delta=cand.delta)
            # substep the predict: one Euler step per frame overshoots the
            # braking advance by v*dt and biases stop nodes forward
            for _ in range(ticks):
                est = ekf_mod.ekf_predict(est, u, params.dt_control, params)
            est = ekf_mod.ekf_update(est, raw_state)
            node = VehicleState(x=est.mean.x, y=est.mean.y, v=est.mean.v,
                                phi=est.mean.phi, t=raw_state.t)
            est.mean = node
        else:
            node = raw_state
            est.mean = node
        nodes.append(node)
        selections.append(cand)
        current = node
        k += 1
    if degraded and nodes and not _standstill_clear(nodes[-1], bundle.grids,
                                                    params, cfg):
        tail = _braking_profile(state, state.t + bundle.tau_o * params.dt_frame,
                                params)
        nodes = tail[ticks - 1::ticks]
        selections = [None] * bundle.tau_o
    return nodes, selections, degraded, est.jitter_count


def _interpolate_nodes(anchor: VehicleState, nodes: list[VehicleState],
                       params: VehicleParams, tau_o: int) -> StateTrajectory:
    """Linear x, y, v and shortest-arc phi between frame nodes, at dt_control.

    Covers exactly (t, t + tau_o * dt_frame] in tau_o * ticks_per_frame
    samples.
    """
    knots = [anchor] + nodes
    kt = np.array([s.t for s in knots])
    kx = np.array([s.x for s in knots])
    ky = np.array([s.y for s in knots])
    kv = np.array([s.v for s in knots])
    kphi = np.array([s.phi for s in knots])
    dphi = np.concatenate([[0.0], np.cumsum(wrap_angle_vec(np.diff(kphi)))])
    n = tau_o * params.ticks_per_frame
    times = anchor.t + params.dt_control * np.arange(1, n + 1)
    times = np.minimum(times, kt[-1])
    x = np.interp(times, kt, kx)
    y = np.interp(times, kt, ky)
    v = np.interp(times, kt, kv)
    phi_unwrapped = np.interp(times, kt, kphi[0] + dphi)
    states = [
        VehicleState(x=float(x[i]), y=float(y[i]), v=float(v[i]),
                     phi=wrap_angle(float(phi_unwrapped[i])),
                     t=anchor.t + params.dt_control * (i + 1))
        for i in range(n)
    ]
    return StateTrajectory(states=states, dt=params.dt_control)


def plan_temporal(history: list[tuple[OccupancyGrid, VehicleState]],
                  measured: VehicleState, bundle: PredictionBundle, route: Route,
                  params: VehicleParams, cfg: DwaConfig = DwaConfig(),
                  use_ekf: bool = True,
                  past_cache: dict | None = None) -> PlanResult:
    """Full temporal plan from past frames plus a prediction bundle.

    Past frames each contribute a DWA selection (anchoring the fused
    sequence to what was actually driven), the predicted frames contribute
    the Plan & Simulate chain, and the concatenated nodes are interpolated
    to the control tick. The desired trajectory spans (t, t + tau_o].
    """
    past_nodes: list[VehicleState] = []
    for prev, cur in zip(history[:-1], history[1:]):
        grid_cur, _ = cur
        _, state_prev = prev
        key = grid_cur.frame_index
        if past_cache is not None and key in past_cache:
            past_nodes.append(past_cache[key])
            continue
        goal = _frame_goal(route, route.project(state_prev.x, state_prev.y), 1,
                           params, cfg, route.v_ref)
        try:
            cand = dwa_step(grid_cur, state_prev, goal, params, cfg,
                            v_cap=route.v_ref)
            raw = cand.states[params.ticks_per_frame]
            node = VehicleState(x=float(raw[0]), y=float(raw[1]), v=float(raw[2]),
                                phi=float(raw[3]), t=state_prev.t + params.dt_frame)
        except NoFeasibleTrajectory:
            node = cur[1]
        past_nodes.append(node)
        if past_cache is not None:
            past_cache[key] = node
    latest = history[-1][0] if history else None
    future_nodes, selections, degraded, jitter = plan_and_simulate(
        measured, bundle, route, params, cfg, use_ekf=use_ekf, latest=latest)
    if not future_nodes:
        tail = _braking_profile(measured, measured.t + bundle.tau_o * params.dt_frame, params)
        ticks = params.ticks_per_frame
        future_nodes = tail[ticks - 1::ticks]
        degraded = True
    trajectory = _interpolate_nodes(measured, future_nodes, params, bundle.tau_o)
    return PlanResult(trajectory=trajectory, future_nodes=future_nodes,
                      past_nodes=past_nodes, selections=selections,
                      degraded=degraded, jitter_count=jitter)


def persistence_bundle(latest: OccupancyGrid, tau_o: int) -> PredictionBundle:
    """Future frames that just repeat the latest capture: the no-prediction
    baseline's world model."""
    return PredictionBundle(grids=[latest] * tau_o, source="persistence")


__all__ = [
    "DwaConfig",
    "CandidateTrajectory",
    "PredictionBundle",
    "PlanResult",
    "Route",
    "NoFeasibleTrajectory",
    "dwa_step",
    "plan_and_simulate",
    "plan_temporal",
    "persistence_bundle",
    "footprint_disc_offsets",
]
