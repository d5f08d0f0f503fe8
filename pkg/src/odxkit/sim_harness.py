"""Deterministic 2D kinematic scenario simulator.

Fixed-step forward Euler at 20 Hz.  Background agents ride on lane-center
rails and follow open-loop scripts (cruise, hard_brake, cut_in), optionally
with a front-distance keeper.  The ego is stepped last with a kinematic
bicycle model.  Collisions use an oriented-bounding-box separating-axis test.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .expert_policy import ControlCommand, HazardKind
from .map_model import RoadNetwork, eval_lane_center, wrap_angle
from .opendrive_parser import load_opendrive
from .route import Route, RouteSegment
from .sensor_pipeline import (FRONT, RADAR_HALF_FOV, RADAR_MAX_RANGE, RADAR_MOUNT_HEIGHT, REAR,
                              RadarPoint)
from .world import AgentState, LaneRef, WorldSnapshot

log = logging.getLogger(__name__)

INFRACTION_KINDS = ("collision_vehicle", "collision_static", "route_deviation", "blocked")
ROUTE_DEVIATION_M = 3.5
BLOCKED_SPEED = 0.1
BLOCKED_TIME = 30.0
GOAL_TOLERANCE = 5.0


@dataclass(frozen=True)
class VehicleParams:
    wheelbase: float = 2.9
    half_length: float = 2.45
    half_width: float = 1.06
    a_max: float = 3.0
    b_max: float = 8.0
    max_steer: float = math.radians(35.0)
    drag: float = 0.05  # 1/s, linear in speed
    max_speed: float = 40.0


@dataclass(frozen=True)
class InfractionEvent:
    time: float
    kind: str
    agents: Tuple[str, ...]
    diagnostic: bool = False  # True for bookkeeping events such as "aborted"
    detail: str = ""

    def to_dict(self) -> dict:
        d = {"time": self.time, "kind": self.kind, "agents": list(self.agents)}
        if self.diagnostic:
            d["diagnostic"] = True
        if self.detail:
            d["detail"] = self.detail
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InfractionEvent":
        return cls(d["time"], d["kind"], tuple(d["agents"]), d.get("diagnostic", False), d.get("detail", ""))


# -- dynamics --------------------------------------------------------------------


def step_dynamics(state: AgentState, cmd: ControlCommand, dt: float,
                  params: VehicleParams = VehicleParams()) -> AgentState:
    """Kinematic bicycle step.  Negative steer turns left (heading increases)."""
    if not 0.0 < dt <= 0.1:
        raise ValueError("dt must be in (0, 0.1]")
    accel = cmd.throttle * params.a_max - cmd.brake * params.b_max - params.drag * state.speed
    speed = min(max(state.speed + accel * dt, 0.0), params.max_speed)
    if speed == 0.0 and state.speed == 0.0:
        return state
    yaw_rate = (state.speed / params.wheelbase) * math.tan(cmd.steer * params.max_steer)
    heading = wrap_angle(state.heading - yaw_rate * dt)
    return state.with_(x=state.x + speed * math.cos(heading) * dt,
                       y=state.y + speed * math.sin(heading) * dt,
                       heading=heading, speed=speed)


# -- collision geometry -------------------------------------------------------------


def obb_corners(a: AgentState) -> np.ndarray:
    c, s = math.cos(a.heading), math.sin(a.heading)
    ex, ey = np.array([c, s]) * a.half_length, np.array([-s, c]) * a.half_width
    p = a.position
    return np.array([p + ex + ey, p - ex + ey, p - ex - ey, p + ex - ey])


def obb_overlap(a: AgentState, b: AgentState) -> bool:
    """Strict interior overlap via separating axes; touching boxes do not collide."""
    d = b.position - a.position
    axes = []
    for h in (a.heading, b.heading):
        axes.append(np.array([math.cos(h), math.sin(h)]))
        axes.append(np.array([-math.sin(h), math.cos(h)]))
    for axis in axes:
        ra = _radius(a, axis)
        rb = _radius(b, axis)
        if abs(float(d @ axis)) >= ra + rb - 1e-12:
            return False
    return True


def _radius(box: AgentState, axis: np.ndarray) -> float:
    c, s = math.cos(box.heading), math.sin(box.heading)
    return (box.half_length * abs(c * axis[0] + s * axis[1])
            + box.half_width * abs(-s * axis[0] + c * axis[1]))


# -- lane localisation ----------------------------------------------------------------


class LaneLocator:
    """Nearest driving-lane center sample whose travel direction agrees with the heading."""

    def __init__(self, network: RoadNetwork, ds: float = 0.5):
        rows, refs = [], []
        for road in network.roads:
            for idx, sec in enumerate(road.lane_sections):
                start, end = road.section_bounds(idx)
                n = max(1, int(math.ceil((end - start) / ds)))
                for lane in sec.lanes:
                    if lane.id == 0 or not lane.is_driving:
                        continue
                    for k in range(n + 1):
                        s = min(start + k * ds, end)
                        p = eval_lane_center(road, idx, lane.id, s)
                        if p.lane_width <= 0.5:
                            continue
                        travel = p.heading if lane.id < 0 else p.heading + math.pi
                        rows.append((p.x, p.y, math.cos(travel), math.sin(travel), p.lane_width))
                        refs.append((road.id, lane.id, s))
        self._data = np.array(rows, dtype=float).reshape(-1, 5)
        self._refs = refs

    def locate(self, x: float, y: float, heading: float) -> Optional[LaneRef]:
        if not len(self._data):
            return None
        d = self._data
        dist2 = (d[:, 0] - x) ** 2 + (d[:, 1] - y) ** 2
        aligned = d[:, 2] * math.cos(heading) + d[:, 3] * math.sin(heading) > 0.0
        inside = dist2 <= (d[:, 4] / 2 + 0.5) ** 2
        cand = np.flatnonzero(aligned & inside)
        if not len(cand):
            return None
        i = int(cand[np.argmin(dist2[cand])])
        road_id, lane_id, s = self._refs[i]
        return LaneRef(road_id, lane_id, s)


# -- scenarios ----------------------------------------------------------------------


@dataclass
class AgentSpec:
    id: str
    road: str
    lane: int
    s: float
    speed: float = 0.0
    kind: str = "vehicle"
    script: dict = field(default_factory=lambda: {"type": "cruise"})
    keep_distance: Optional[float] = None
    half_length: float = 2.45
    half_width: float = 1.06


@dataclass
class Scenario:
    id: str
    map: str
    route: List[RouteSegment]
    duration: float
    seed: int = 0
    ego_speed: float = 0.0
    target_speed: Optional[float] = None
    agents: List[AgentSpec] = field(default_factory=list)
    jitter: float = 0.0
    category: str = ""
    base_dir: Optional[str] = None

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("scenario duration must be > 0")
        if not self.route:
            raise ValueError("scenario needs a route")

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "Scenario":
        agents = [AgentSpec(a["id"], str(a["road"]), int(a["lane"]), float(a["s"]),
                            float(a.get("speed", 0.0)), a.get("kind", "vehicle"),
                            dict(a.get("script", {"type": "cruise"})), a.get("keep_distance"),
                            float(a.get("half_length", 2.45)), float(a.get("half_width", 1.06)))
                  for a in d.get("agents", [])]
        route = [RouteSegment(str(r["road"]), int(r["lane"]), float(r["s0"]), float(r["s1"]))
                 for r in d["route"]]
        ego = d.get("ego", {})
        return cls(d["id"], d["map"], route, float(d["duration"]), int(d.get("seed", 0)),
                   float(ego.get("speed", 0.0)), d.get("target_speed"), agents,
                   float(d.get("jitter", 0.0)), d.get("category", ""),
                   str(base_dir) if base_dir is not None else None)

    def map_path(self) -> Path:
        p = Path(self.map)
        if self.base_dir and not p.is_absolute() and (Path(self.base_dir) / p).exists():
            return Path(self.base_dir) / p
        if p.exists():
            return p
        packaged = resources.files("odxkit") / "data" / "maps" / p.name
        if packaged.is_file():
            return Path(str(packaged))
        raise FileNotFoundError(f"map {self.map!r} not found")


def scenario_schema() -> dict:
    return json.loads((resources.files("odxkit") / "data" / "scenario.schema.json").read_text())


def load_scenario(path) -> Scenario:
    import jsonschema

    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    jsonschema.validate(data, scenario_schema())
    return Scenario.from_dict(data, base_dir=path.parent)


def packaged_scenarios() -> List[Path]:
    root = resources.files("odxkit") / "data" / "scenarios"
    return sorted(Path(str(p)) for p in root.iterdir() if p.name.endswith(".json"))


# -- background agents ----------------------------------------------------------------


def _lane_route(network: RoadNetwork, road_id: str, lane_id: int, s0: float) -> Route:
    road = network.road(road_id)
    s1 = road.length if lane_id < 0 else 0.0
    return Route.from_segments(network, [RouteSegment(road_id, lane_id, s0, s1)], ds=1.0)


class _Background:
    def __init__(self, spec: AgentSpec, network: RoadNetwork, s0: float):
        self.spec = spec
        self.speed = spec.speed
        self.u = 0.0
        self.sign = 1.0 if spec.lane < 0 else -1.0
        self.s0 = s0
        self.path = _lane_route(network, spec.road, spec.lane, s0)
        script = spec.script
        self.kind = script.get("type", "cruise")
        self.target = None
        if self.kind == "cut_in":
            self.target = _lane_route(network, spec.road, int(script["to_lane"]), s0)

    def blend(self, t: float) -> float:
        if self.kind != "cut_in":
            return 0.0
        t0, dur = float(self.spec.script["t"]), float(self.spec.script.get("duration", 2.0))
        tau = min(max((t - t0) / dur, 0.0), 1.0)
        return 0.5 - 0.5 * math.cos(math.pi * tau)

    def pose(self, t: float) -> Tuple[float, float, float, int]:
        x, y, h = self.path.pose_at(self.u)
        lane = self.spec.lane
        w = self.blend(t)
        if w > 0.0:
            bx, by, bh = self.target.pose_at(self.u)
            x, y = (1 - w) * x + w * bx, (1 - w) * y + w * by
            # heading of the blended curve: direction plus lateral rate
            t0, dur = float(self.spec.script["t"]), float(self.spec.script.get("duration", 2.0))
            if t0 <= t <= t0 + dur and self.speed > 0.1:
                dw = 0.5 * math.pi / dur * math.sin(math.pi * (t - t0) / dur)
                lat = np.array([bx - self.path.pose_at(self.u)[0], by - self.path.pose_at(self.u)[1]])
                v = self.speed * np.array([math.cos(h), math.sin(h)]) + dw * lat
                h = math.atan2(v[1], v[0])
            if w >= 0.5:
                lane = int(self.spec.script["to_lane"])
        return x, y, h, lane

    def state(self, t: float) -> AgentState:
        x, y, h, lane = self.pose(t)
        ref = LaneRef(self.spec.road, lane, self.s0 + self.sign * self.u)
        return AgentState(self.spec.id, x, y, h, self.speed if self.spec.kind != "static" else 0.0,
                          ref, self.spec.half_length, self.spec.half_width, self.spec.kind)

    def advance(self, t: float, dt: float, world: WorldSnapshot) -> AgentState:
        if self.spec.kind == "static":
            return self.state(t + dt)
        script = self.spec.script
        cruise = float(script.get("speed", self.spec.speed))
        braking = self.kind == "hard_brake" and t >= float(script["t"])
        desired = 0.0 if braking else cruise
        decel = float(script.get("decel", 8.0)) if braking else 4.0
        if self.spec.keep_distance is not None and self._leader_gap(world) < float(self.spec.keep_distance):
            desired, decel = 0.0, max(decel, 4.0)
        if self.speed > desired:
            self.speed = max(desired, self.speed - decel * dt)
        else:
            self.speed = min(desired, self.speed + 2.0 * dt)
        self.u = min(self.u + self.speed * dt, self.path.length)
        return self.state(t + dt)

    def _leader_gap(self, world: WorldSnapshot) -> float:
        me = next(a for a in world.agents if a.id == self.spec.id)
        c, s = math.cos(me.heading), math.sin(me.heading)
        gap = math.inf
        for other in world.agents:
            if other.id == me.id:
                continue
            dx, dy = other.x - me.x, other.y - me.y
            fwd, lat = c * dx + s * dy, -s * dx + c * dy
            if fwd > 0 and abs(lat) < 1.75:
                gap = min(gap, fwd - me.half_length - other.half_length)
        return gap


# -- infractions ----------------------------------------------------------------------


class InfractionMonitor:
    """Stateful infraction detector fed consecutive snapshots."""

    def __init__(self, route: Optional[Route] = None, deviation: float = ROUTE_DEVIATION_M,
                 blocked_time: float = BLOCKED_TIME):
        self.route = route
        self.deviation = deviation
        self.blocked_time = blocked_time
        self.progress = 0.0
        self.deviating = False
        self.stopped_since: Optional[float] = None
        self.blocked_reported = False

    def update(self, prev: Optional[WorldSnapshot], curr: WorldSnapshot) -> List[InfractionEvent]:
        events = collision_events(prev, curr)
        ego = curr.ego
        if self.route is not None:
            s, lat = self.route.project(ego.x, ego.y, max(self.progress - 5.0, 0.0), self.progress + 25.0)
            self.progress = max(self.progress, s)
            off = abs(lat)
            if off > self.deviation and not self.deviating:
                events.append(InfractionEvent(curr.time, "route_deviation", (ego.id,)))
            self.deviating = off > self.deviation
        if ego.speed < BLOCKED_SPEED:
            if self.stopped_since is None:
                self.stopped_since = curr.time
            elif curr.time - self.stopped_since > self.blocked_time and not self.blocked_reported:
                events.append(InfractionEvent(curr.time, "blocked", (ego.id,)))
                self.blocked_reported = True
        else:
            self.stopped_since = None
        return events


def collision_events(prev: Optional[WorldSnapshot], curr: WorldSnapshot) -> List[InfractionEvent]:
    """Ego collisions that begin at ``curr`` (overlapping now, not in ``prev``)."""
    ego = curr.ego
    before = {a.id: a for a in prev.agents} if prev is not None else {}
    ego_before = before.get(ego.id)
    out = []
    for other in sorted(curr.others, key=lambda a: a.id):
        if not obb_overlap(ego, other):
            continue
        if ego_before is not None and other.id in before and obb_overlap(ego_before, before[other.id]):
            continue
        kind = "collision_static" if other.kind == "static" else "collision_vehicle"
        out.append(InfractionEvent(curr.time, kind, tuple(sorted((ego.id, other.id)))))
    return out


def detect_infractions(prev: Optional[WorldSnapshot], curr: WorldSnapshot,
                       route: Optional[Route] = None,
                       monitor: Optional[InfractionMonitor] = None) -> List[InfractionEvent]:
    monitor = monitor or InfractionMonitor(route)
    return monitor.update(prev, curr)


# -- synthetic sensors -----------------------------------------------------------------


def synthesize_radar(world: WorldSnapshot, rng: Optional[np.random.Generator] = None,
                     noise: float = 0.0) -> List[RadarPoint]:
    """Front and rear radar returns from the other agents' box centers and corners."""
    ego = world.ego
    out: List[RadarPoint] = []
    for label, yaw in ((FRONT, 0.0), (REAR, math.pi)):
        h = ego.heading + yaw
        mount = ego.position + ego.half_length * np.array([math.cos(h), math.sin(h)])
        ux, uy = math.cos(h), math.sin(h)
        for other in sorted(world.others, key=lambda a: a.id):
            for p in np.vstack([other.position, obb_corners(other)]):
                dx, dy = (float(v) for v in p - mount)
                depth = math.hypot(dx, dy)
                az = math.atan2(-uy * dx + ux * dy, ux * dx + uy * dy)
                if depth <= 1e-6 or depth > RADAR_MAX_RANGE or abs(az) > RADAR_HALF_FOV:
                    continue
                dv = other.velocity - ego.velocity
                radial = -(dx * dv[0] + dy * dv[1]) / depth
                if rng is not None and noise > 0:
                    depth = min(max(depth + rng.normal(0, noise), 0.0), RADAR_MAX_RANGE)
                alt = math.atan2(0.75 - RADAR_MOUNT_HEIGHT, depth)
                out.append(RadarPoint(float(radial), float(depth), float(az), float(alt), label))
    return out


def synthesize_lidar(world: WorldSnapshot, spacing: float = 0.25) -> np.ndarray:
    """Ego-frame XYZ points on the other agents' box sides (three scan heights)."""
    ego = world.ego
    c, s = math.cos(ego.heading), math.sin(ego.heading)
    pts = []
    for other in sorted(world.others, key=lambda a: a.id):
        corners = obb_corners(other)
        heights = (0.4, 1.2, 2.4) if other.kind == "static" else (0.4, 1.0, 1.5)
        for i in range(4):
            a, b = corners[i], corners[(i + 1) % 4]
            n = max(2, int(math.ceil(np.hypot(*(b - a)) / spacing)))
            for t in np.linspace(0, 1, n, endpoint=False):
                q = a + t * (b - a) - ego.position
                for z in heights:
                    pts.append((c * q[0] + s * q[1], -s * q[0] + c * q[1], z))
    return np.asarray(pts, dtype=float).reshape(-1, 3)


# -- run loop --------------------------------------------------------------------------


@dataclass
class RunResult:
    scenario_id: str
    policy: str
    seed: int
    trace: List[WorldSnapshot]
    events: List[InfractionEvent]
    route: Route
    commands: List[ControlCommand] = field(default_factory=list)
    verdicts: List[str] = field(default_factory=list)
    outcome: str = "timeout"  # goal, timeout, collision, blocked, aborted

    @property
    def driven_km(self) -> float:
        return driven_distance(self.trace) / 1000.0

    def summary(self) -> dict:
        counts = {k: 0 for k in INFRACTION_KINDS}
        for e in self.events:
            if not e.diagnostic:
                counts[e.kind] += 1
        return {
            "scenario": self.scenario_id, "policy": self.policy, "seed": self.seed,
            "outcome": self.outcome, "steps": len(self.trace) - 1,
            "duration": self.trace[-1].time, "driven_km": self.driven_km,
            "route_length_m": self.route.length, "infractions": counts,
        }


def driven_distance(trace: Sequence[WorldSnapshot]) -> float:
    if len(trace) < 2:
        return 0.0
    xy = np.array([(s.ego.x, s.ego.y) for s in trace])
    return float(np.hypot(*np.diff(xy, axis=0).T).sum())


_network_cache: Dict[str, Tuple[RoadNetwork, LaneLocator]] = {}


def _load_map(path: Path) -> Tuple[RoadNetwork, LaneLocator]:
    key = str(Path(path).resolve())
    if key not in _network_cache:
        network, _ = load_opendrive(path)
        _network_cache[key] = (network, LaneLocator(network))
    return _network_cache[key]


def run_scenario(scenario: Scenario, ego_policy, dt: float = 0.05,
                 vehicle: VehicleParams = VehicleParams(),
                 sensor_hook: Optional[Callable] = None) -> RunResult:
    """Simulate ``scenario`` until the goal, a terminating infraction or the
    time limit.  ``ego_policy`` is an expert instance (``.step(world, route)``)
    or a policy name.  ``sensor_hook(world, radar, lidar)`` is called each step
    with synthesized sensor data when given."""
    from .expert_policy import ExpertConfig, make_policy

    network, locator = _load_map(scenario.map_path())
    if isinstance(ego_policy, str):
        cfg = ExpertConfig(dt=dt)
        if scenario.target_speed is not None:
            cfg.target_speed = float(scenario.target_speed)
        ego_policy = make_policy(ego_policy, network, cfg)
    policy_name = getattr(ego_policy, "name", type(ego_policy).__name__)
    route = Route.from_segments(network, scenario.route)
    rng = np.random.default_rng(scenario.seed)

    background = []
    for spec in scenario.agents:
        road = network.road(spec.road)
        s0 = spec.s + (rng.uniform(-scenario.jitter, scenario.jitter) if scenario.jitter > 0 else 0.0)
        s0 = min(max(s0, 0.0), road.length)
        if not road.lane_sections[road.section_index_at(s0)].has_lane(spec.lane):
            raise ValueError(f"agent {spec.id} spawns on missing lane {spec.road}/{spec.lane}")
        background.append(_Background(spec, network, s0))

    x, y, h = route.pose_at(0.0)
    ego = AgentState("ego", x, y, h, scenario.ego_speed, locator.locate(x, y, h),
                     vehicle.half_length, vehicle.half_width)
    world = WorldSnapshot(0.0, tuple([b.state(0.0) for b in background] + [ego]), "ego")
    monitor = InfractionMonitor(route)
    trace, events = [world], list(monitor.update(None, world))
    result = RunResult(scenario.id, policy_name, scenario.seed, trace, events, route)

    steps = int(round(scenario.duration / dt))
    for k in range(steps):
        t = k * dt
        if sensor_hook is not None:
            sensor_hook(world, synthesize_radar(world, rng, 0.05), synthesize_lidar(world))
        try:
            cmd, verdict, _ = ego_policy.step(world, route)
        except Exception as exc:  # policy failure aborts the run
            log.warning("policy aborted %s at t=%.2f: %s", scenario.id, t, exc)
            events.append(InfractionEvent(t, "aborted", ("ego",), True, f"{type(exc).__name__}: {exc}"))
            result.outcome = "aborted"
            break
        result.commands.append(cmd)
        result.verdicts.append(verdict.kind.value if isinstance(verdict.kind, HazardKind) else str(verdict.kind))
        others = [b.advance(t, dt, world) for b in background]
        ego = step_dynamics(world.ego, cmd, dt, vehicle)
        ego = ego.with_(lane=locator.locate(ego.x, ego.y, ego.heading) or world.ego.lane)
        new = WorldSnapshot(round((k + 1) * dt, 10), tuple(others + [ego]), "ego")
        fresh = monitor.update(world, new)
        events.extend(fresh)
        trace.append(new)
        world = new
        if any(e.kind.startswith("collision") for e in fresh):
            result.outcome = "collision"
            break
        if any(e.kind == "blocked" for e in fresh):
            result.outcome = "blocked"
            break
        if monitor.progress >= route.length - GOAL_TOLERANCE:
            result.outcome = "goal"
            break
    return result


# -- output files ----------------------------------------------------------------------


def trace_lines(result: RunResult) -> List[str]:
    lines = []
    for i, snap in enumerate(result.trace):
        rec = snap.to_dict()
        if i > 0:
            c = result.commands[i - 1]
            rec["ego_cmd"] = {"steer": c.steer, "throttle": c.throttle, "brake": c.brake}
            rec["verdict"] = result.verdicts[i - 1]
        lines.append(json.dumps(rec, sort_keys=True))
    return lines


def write_run(out_dir, result: RunResult) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "trace.jsonl").write_text("\n".join(trace_lines(result)) + "\n", encoding="utf-8")
    (out / "events.json").write_text(json.dumps([e.to_dict() for e in result.events], indent=2) + "\n")
    (out / "route.json").write_text(json.dumps(result.route.to_dict()) + "\n")
    (out / "summary.json").write_text(json.dumps(result.summary(), indent=2, sort_keys=True) + "\n")
    return out


def read_trace(path) -> List[WorldSnapshot]:
    snaps = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            snaps.append(WorldSnapshot.from_dict(json.loads(line)))
    return snaps


def read_events(path) -> List[InfractionEvent]:
    return [InfractionEvent.from_dict(d) for d in json.loads(Path(path).read_text(encoding="utf-8"))]


def read_run(run_dir) -> Tuple[List[WorldSnapshot], List[InfractionEvent], Route, dict]:
    run_dir = Path(run_dir)
    route = Route.from_dict(json.loads((run_dir / "route.json").read_text()))
    summary_path = run_dir / "summary.json"
    summary = json.loads(summary_path.read_text()) if summary_path.exists() else {}
    return read_trace(run_dir / "trace.jsonl"), read_events(run_dir / "events.json"), route, summary
