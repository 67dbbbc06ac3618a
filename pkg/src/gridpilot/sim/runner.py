"""Closed-loop execution: lidar capture at frame cadence, prediction,
temporal planning and tracking control at tick cadence, plus the scripted
drive recorder that produces training datasets.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..controller import NmpcConfig, nmpc_solve, rate_errors
from ..core import ControlCommand, VehicleParams, VehicleState, clamp, wrap_angle
from ..dataset import DatasetFile, FrameRecord, downsample_grid, raster_route, \
    stabilize_grid, write_dataset, yaw_rates
from ..planner import DwaConfig, PlanResult, PredictionBundle, Route, \
    persistence_bundle, plan_temporal
from ..pointcloud import FilterConfig, GridConfig, OccupancyGrid, preprocess
from ..predictor.oracle import oracle_predict
from ..util import json_line, rng_for
from .lidar import lidar_scan
from .scenarios import ScenarioSpec, build_world
from .world import World, step_world

PIPELINES = ("dwa_only", "observenet_learned", "observenet_oracle")

# warm-started closed-loop tracking converges in a few iterations, so the
# runner trims the solver budget; bounds come from projection, not iteration
RUN_NMPC = NmpcConfig(max_iter=12, tol=1e-7)


@dataclass
class RunConfig:
    pipeline: str = "observenet_oracle"
    tau_i: int = 4
    tau_o: int = 5
    kalman_on: bool = True
    next_state_only: bool = False
    model_path: str | Path | None = None

    def __post_init__(self) -> None:
        if self.pipeline not in PIPELINES:
            raise ValueError(f"unknown pipeline {self.pipeline!r}")

    @property
    def effective_tau_o(self) -> int:
        return 1 if self.next_state_only else self.tau_o

    @property
    def use_ekf(self) -> bool:
        return self.kalman_on and not self.next_state_only


@dataclass
class RunMetrics:
    scenario: str
    seed: int
    pipeline: str
    n_collisions: int
    completion: float
    mean_e_ct: float
    std_e_ct: float
    mean_e_phi: float
    std_e_phi: float
    mean_e_a: float
    std_e_a: float
    mean_e_delta: float
    std_e_delta: float
    n_ticks: int
    degraded_ticks: int
    terminated: str
    log_lines: list[str] = field(default_factory=list, repr=False)
    series: dict = field(default_factory=dict, repr=False)

    CSV_FIELDS = ("scenario", "seed", "pipeline", "n_collisions", "completion",
                  "mean_e_ct", "std_e_ct", "mean_e_phi", "std_e_phi",
                  "mean_e_a", "std_e_a", "mean_e_delta", "std_e_delta",
                  "n_ticks", "degraded_ticks", "terminated")

    def csv_row(self) -> dict:
        out = {}
        for k in self.CSV_FIELDS:
            v = getattr(self, k)
            out[k] = f"{v:.6f}" if isinstance(v, float) else str(v)
        return out


def signed_offset(route: Route, x: float, y: float) -> float:
    """Lateral offset from the route, positive to the left of travel."""
    s = route.project(x, y)
    c = route.point_at(s)
    theta = route.heading_at(s)
    return float(-(x - c[0]) * math.sin(theta) + (y - c[1]) * math.cos(theta))


def _learned_bundle(model, history: list[OccupancyGrid],
                    states: list[VehicleState], route: Route, tau_o: int,
                    params: VehicleParams) -> PredictionBundle:
    cfg = model.cfg
    if tau_o > cfg.tau_o:
        raise ValueError(f"model horizon {cfg.tau_o} < requested tau_o {tau_o}")
    anchor = history[-1]
    pose = anchor.ego_pose
    grids = list(history[-cfg.tau_i:])
    sts = list(states[-cfg.tau_i:])
    while len(grids) < cfg.tau_i:
        grids.insert(0, grids[0])
        sts.insert(0, sts[0])
    factor = int(round(cfg.resolution / anchor.resolution))
    hist = np.stack([
        stabilize_grid(
            downsample_grid((g.data > 0.5).astype(np.uint8), factor).astype(np.float32),
            g.ego_pose, pose, cfg.resolution)
        for g in grids])
    v = np.array([s.v for s in sts])
    rates = yaw_rates(sts, params.dt_frame)
    raster = raster_route(route.points, pose, hist.shape[1:], cfg.resolution)
    from ..predictor.model import build_frames, forward
    pred = forward(model, build_frames(hist, v, rates, raster))
    out = []
    for k in range(tau_o):
        out.append(OccupancyGrid(
            data=pred[k], resolution=cfg.resolution, ego_pose=pose,
            frame_index=anchor.frame_index + k + 1,
            t=anchor.t + (k + 1) * params.dt_frame))
    return PredictionBundle(grids=out, source="learned")


def make_bundle(config: RunConfig, model, history: list[OccupancyGrid],
                states: list[VehicleState], route: Route,
                params: VehicleParams) -> PredictionBundle:
    tau_o = config.effective_tau_o
    if config.pipeline == "dwa_only":
        return persistence_bundle(history[-1], tau_o)
    if config.pipeline == "observenet_oracle":
        return oracle_predict(history[-2:], states[-1], tau_o, params)
    return _learned_bundle(model, history, states, route, tau_o, params)


def run_scenario(spec: ScenarioSpec, config: RunConfig,
                 params: VehicleParams | None = None,
                 dwa_cfg: DwaConfig | None = None,
                 nmpc_cfg: NmpcConfig | None = None) -> RunMetrics:
    """Drive the scenario to completion, timeout, or map exit."""
    params = params or VehicleParams()
    dwa_cfg = dwa_cfg or DwaConfig()
    nmpc_cfg = nmpc_cfg or RUN_NMPC
    model = None
    if config.pipeline == "observenet_learned":
        if config.model_path is None:
            raise ValueError("observenet_learned needs model_path")
        from ..predictor.io import load_model
        model = load_model(config.model_path)
    world = build_world(spec, params)
    route = world.route
    filter_cfg = FilterConfig()
    grid_cfg = GridConfig()
    tpf = params.ticks_per_frame
    keep = max(config.tau_i, 2) + 1
    history: list[OccupancyGrid] = []
    hist_states: list[VehicleState] = []
    past_cache: dict = {}
    bundle: PredictionBundle | None = None
    prev_cmd = ControlCommand(0.0, 0.0)
    warm = None
    n_ticks = int(round(spec.duration / params.dt_control))
    log_lines: list[str] = []
    series = {k: [] for k in ("e_ct", "e_phi", "e_a", "e_delta")}
    degraded_ticks = 0
    s_max = route.project(world.ego.x, world.ego.y)
    terminated = "duration"
    for k in range(n_ticks):
        state = world.ego
        if k % tpf == 0:
            pose = (state.x, state.y, state.phi)
            cloud = lidar_scan(world)
            grid = preprocess(cloud, filter_cfg, grid_cfg, ego_pose=pose,
                              frame_index=k // tpf, t=state.t)
            history.append(grid)
            hist_states.append(state)
            if len(history) > keep:
                history = history[-keep:]
                hist_states = hist_states[-keep:]
            bundle = make_bundle(config, model, history, hist_states, route, params)
        pairs = list(zip(history, hist_states))[-config.tau_i:]
        plan = plan_temporal(pairs, state, bundle, route, params, dwa_cfg,
                             use_ekf=config.use_ekf, past_cache=past_cache)
        cmd, info, useq = nmpc_solve(state, plan.trajectory, prev_cmd, params,
                                     nmpc_cfg, warm_start=warm)
        warm = useq
        events = step_world(world, cmd, params.dt_control)
        ego = world.ego
        e_ct = signed_offset(route, ego.x, ego.y)
        s_here = route.project(ego.x, ego.y)
        e_phi = wrap_angle(ego.phi - route.heading_at(s_here))
        e_a, e_delta = rate_errors(prev_cmd, cmd)
        series["e_ct"].append(abs(e_ct))
        series["e_phi"].append(abs(e_phi))
        series["e_a"].append(abs(e_a))
        series["e_delta"].append(abs(e_delta))
        if plan.degraded:
            degraded_ticks += 1
        s_max = max(s_max, s_here)
        log_lines.append(json_line({
            "t": round(state.t, 4), "x": round(ego.x, 6), "y": round(ego.y, 6),
            "v": round(ego.v, 6), "phi": round(ego.phi, 6),
            "a": round(cmd.a, 6), "delta": round(cmd.delta, 6),
            "e_ct": round(e_ct, 6), "e_phi": round(e_phi, 6),
            "frame": history[-1].frame_index,
            "degraded": plan.degraded,
            "colliding": sorted(events["colliding"]),
        }))
        prev_cmd = cmd
        if not world.ego_in_bounds():
            terminated = "out_of_bounds"
            break
        if s_here >= route.length - 1e-9:
            terminated = "complete"
            break
    def _ms(name):
        arr = np.array(series[name]) if series[name] else np.zeros(1)
        return float(arr.mean()), float(arr.std())
    m_ct, s_ct = _ms("e_ct")
    m_phi, s_phi = _ms("e_phi")
    m_a, s_a = _ms("e_a")
    m_d, s_d = _ms("e_delta")
    return RunMetrics(
        scenario=spec.name, seed=spec.seed, pipeline=config.pipeline,
        n_collisions=world.collision_episodes,
        completion=100.0 * s_max / max(route.length, 1e-12),
        mean_e_ct=m_ct, std_e_ct=s_ct, mean_e_phi=m_phi, std_e_phi=s_phi,
        mean_e_a=m_a, std_e_a=s_a, mean_e_delta=m_d, std_e_delta=s_d,
        n_ticks=len(series["e_ct"]), degraded_ticks=degraded_ticks,
        terminated=terminated, log_lines=log_lines, series=series)


def first_evasive_tick(metrics: RunMetrics, ct_threshold: float = 0.35,
                       brake_threshold: float = -1.0) -> int | None:
    """Index of the first tick that deviates laterally or brakes hard."""
    import json
    for i, line in enumerate(metrics.log_lines):
        row = json.loads(line)
        if abs(row["e_ct"]) > ct_threshold or row["a"] < brake_threshold:
            return i
    return None


# scripted recorder

RECORD_ROLL_FRAMES_NOTE = "records tau_i + tau_o extra frames past duration"


def _profile(rng: np.random.Generator, duration: float, spacing: float,
             lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    n = int(math.ceil(duration / spacing)) + 2
    knots_t = np.arange(n) * spacing
    knots_v = rng.uniform(lo, hi, size=n)
    return knots_t, knots_v


def _lead_distance(world: World, half_width: float = 1.6,
                   ahead: float = 16.0) -> float:
    """Distance to the nearest agent inside the forward corridor."""
    ego = world.ego
    c, s = math.cos(ego.phi), math.sin(ego.phi)
    best = math.inf
    for agent in world.agents:
        dx = agent.position[0] - ego.x
        dy = agent.position[1] - ego.y
        fwd = dx * c + dy * s
        lat = -dx * s + dy * c
        if 0.0 < fwd < ahead and abs(lat) < half_width:
            best = min(best, fwd)
    return best


def record_drive(spec: ScenarioSpec, seed: int, out_path: str | Path,
                 params: VehicleParams | None = None, tau_i: int = 4,
                 tau_o: int = 5, model_resolution: float = 1.0) -> DatasetFile:
    """Drive the scenario with a jittered pure-pursuit script, capturing one
    frame per dt_frame. Records tau_i + tau_o frames beyond the scenario
    duration so every recorded second supports a full training window.
    """
    params = params or VehicleParams()
    rng = rng_for(seed, "record", spec.name)
    world = build_world(spec, params)
    route = world.route
    filter_cfg = FilterConfig()
    grid_cfg = GridConfig()
    factor = int(round(model_resolution / grid_cfg.resolution))
    if spec.name == "opposite":
        off_lo, off_hi = -2.2, -0.8
    else:
        off_lo, off_hi = -1.5, 1.5
    off_t, off_v = _profile(rng, spec.duration + 20.0, 4.0, off_lo, off_hi)
    spd_t, spd_v = _profile(rng, spec.duration + 20.0, 5.0, 0.6, 1.0)
    total = spec.duration + (tau_i + tau_o) * params.dt_frame
    n_ticks = int(round(total / params.dt_control))
    tpf = params.ticks_per_frame
    records: list[FrameRecord] = []
    delta_prev = 0.0
    for k in range(n_ticks + 1):
        state = world.ego
        if k % tpf == 0:
            pose = (state.x, state.y, state.phi)
            cloud = lidar_scan(world)
            grid = preprocess(cloud, filter_cfg, grid_cfg, ego_pose=pose,
                              frame_index=k // tpf, t=state.t)
            small = downsample_grid((grid.data > 0.5).astype(np.uint8), factor)
            records.append(FrameRecord(state=state, route_points=route.points,
                                       grid=small))
        if k == n_ticks:
            break
        offset = float(np.interp(state.t, off_t, off_v))
        v_target = route.v_ref * float(np.interp(state.t, spd_t, spd_v))
        lead = _lead_distance(world)
        if lead < math.inf:
            v_target = min(v_target, max(0.0, (lead - 6.0) * 0.8))
        lookahead = max(5.0, 1.0 * state.v)
        s_here = route.project(state.x, state.y)
        target = route.point_at(s_here + lookahead)
        theta = route.heading_at(s_here + lookahead)
        target = target + offset * np.array([-math.sin(theta), math.cos(theta)])
        alpha = wrap_angle(math.atan2(target[1] - state.y, target[0] - state.x)
                           - state.phi)
        delta = math.atan2(2.0 * params.wheelbase * math.sin(alpha), lookahead)
        delta = clamp(delta, -params.delta_max, params.delta_max)
        delta = clamp(delta, delta_prev - 0.08, delta_prev + 0.08)
        delta_prev = delta
        a = clamp((v_target - state.v) / 1.0, params.a_min, params.a_max)
        step_world(world, ControlCommand(a=a, delta=delta), params.dt_control)
    ds = DatasetFile(resolution=model_resolution, dt_frame=params.dt_frame,
                     tau_i=tau_i, tau_o=tau_o, records=records)
    write_dataset(out_path, ds)
    return ds
