"""Rule-based driving experts with privileged access to ground-truth agent states.

``MMFNExpert`` extends a distance-only stopping rule with three checks:
time to collision along the relative-position axis, a bearing test that
ignores obstacles outside the ego lane corridor, and lane-change clearance.
``BaselineAutoExpert`` keeps the distance rule alone.

Steering sign: negative steer turns left (counter-clockwise).
"""

from __future__ import annotations

import enum
import json
import math
from collections import deque
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

import numpy as np

from . import ContractError
from .map_model import RoadNetwork, lateral_offset
from .route import Route
from .world import AgentState, LaneRef, WorldSnapshot

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = [
    "AgentState", "ControlCommand", "HazardVerdict", "Clearance", "ExpertConfig",
    "project_velocity", "time_to_collision", "bearing_angle", "bearing_check",
    "lane_change_clearance", "PIDController", "WaypointController", "pid_control",
    "MMFNExpert", "BaselineAutoExpert", "make_policy", "load_config",
]


class DegenerateGeometryError(ContractError):
    pass


class HazardKind(str, enum.Enum):
    NONE = "none"
    TTC_FRONT = "ttc_front"
    BLOCKED_BEARING = "blocked_bearing"
    LANE_CHANGE_CONFLICT = "lane_change_conflict"


class Clearance(str, enum.Enum):
    CLEAR = "clear"
    WAIT = "wait"


@dataclass(frozen=True)
class HazardVerdict:
    kind: HazardKind = HazardKind.NONE
    ttc: float = math.inf
    offender: Optional[str] = None

    def __post_init__(self):
        if self.kind == HazardKind.NONE and (self.ttc != math.inf or self.offender is not None):
            raise ValueError("a 'none' verdict carries no ttc and no offender")


NO_HAZARD = HazardVerdict()


@dataclass(frozen=True)
class ControlCommand:
    steer: float = 0.0
    throttle: float = 0.0
    brake: float = 0.0

    def __post_init__(self):
        if not (-1.0 <= self.steer <= 1.0 and 0.0 <= self.throttle <= 1.0 and 0.0 <= self.brake <= 1.0):
            raise ValueError(f"control out of range: {self}")
        if self.throttle * self.brake != 0.0:
            raise ValueError("throttle and brake cannot both be active")


@dataclass
class ExpertConfig:
    target_speed: float = 10.0
    ttc_threshold: float = 3.0
    stop_distance: float = 6.0
    lane_change_distance: float = 10.0
    lane_change_hold: float = 2.0
    lane_change_lookahead: float = 10.0
    lane_width: float = 3.5  # used when the ego lane width cannot be looked up
    lane_width_margin: float = 0.05
    baseline_cone_deg: float = 30.0
    hazard_range: float = 50.0
    dt: float = 0.05
    waypoint_dt: float = 0.5
    num_waypoints: int = 4
    lateral_gains: Tuple[float, float, float] = (1.25, 0.75, 0.3)
    longitudinal_gains: Tuple[float, float, float] = (5.0, 0.5, 1.0)
    pid_window: int = 20
    max_throttle: float = 0.75
    brake_speed: float = 0.4
    brake_ratio: float = 1.1
    brake_gain: float = 0.5

    @classmethod
    def from_dict(cls, d: dict) -> "ExpertConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown expert config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("lateral_gains", "longitudinal_gains"):
            if key in d:
                d[key] = tuple(float(v) for v in d[key])
                if len(d[key]) != 3:
                    raise ValueError(f"{key} needs three gains (kp, ki, kd)")
        return cls(**d)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["lateral_gains"] = list(self.lateral_gains)
        out["longitudinal_gains"] = list(self.longitudinal_gains)
        return out


def load_config(path) -> dict:
    """Read a flat key/value config from JSON (``.json``) or TOML (other suffixes)."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".json":
        return json.loads(text)
    return tomllib.loads(text)


# -- geometric rules ---------------------------------------------------------------


def _vec(v) -> np.ndarray:
    return np.asarray(v, dtype=float).reshape(2)


def project_velocity(dp, dv) -> Tuple[np.ndarray, np.ndarray]:
    """Relative velocity projected onto the relative-position axis, and the
    part of ``dp`` perpendicular to ``dv`` (the miss distance vector)."""
    dp, dv = _vec(dp), _vec(dv)
    pp = float(dp @ dp)
    if pp <= 1e-12:
        raise DegenerateGeometryError("relative position is zero")
    p_v2p = dp * (float(dp @ dv) / pp)
    vv = float(dv @ dv)
    residual = dp - dv * (float(dp @ dv) / vv) if vv > 0 else dp.copy()
    return p_v2p, residual


def time_to_collision(dp, dv, lane_width: float) -> Tuple[float, bool]:
    dp, dv = _vec(dp), _vec(dv)
    _, residual = project_velocity(dp, dv)
    dist = float(np.hypot(*dp))
    closing = -float(dp @ dv) / dist
    ttc = dist / closing if closing > 0 else math.inf
    return ttc, bool(np.hypot(*residual) <= lane_width)


def bearing_angle(orientation, dp) -> float:
    o, dp = _vec(orientation), _vec(dp)
    c = float(o @ dp) / (np.hypot(*o) * np.hypot(*dp))
    return math.acos(min(1.0, max(-1.0, c)))


def bearing_check(ego: AgentState, dp, lane_width: float) -> bool:
    """True when the obstacle at ``dp`` falls inside the ego lane corridor."""
    dp = _vec(dp)
    dist = float(np.hypot(*dp))
    if dist <= lane_width:
        return True
    return bearing_angle(ego.orientation, dp) <= math.asin(lane_width / dist)


def lane_change_clearance(ego: AgentState, others: Iterable[AgentState], target_lane: LaneRef,
                          dist_threshold: float, network: Optional[RoadNetwork] = None
                          ) -> Tuple[Clearance, Optional[str]]:
    """``wait`` if another agent occupies ``target_lane`` closer than
    ``dist_threshold``.  Returns the verdict and the nearest blocking agent."""
    if ego.lane is None:
        raise ContractError("ego has no lane reference")
    adjacent = (ego.lane.road_id == target_lane.road_id
                and abs(ego.lane.lane_id - target_lane.lane_id) == 1
                and ego.lane.lane_id * target_lane.lane_id > 0)
    if adjacent and network is not None:
        road = network.road(target_lane.road_id)
        adjacent = road.lane_sections[road.section_index_at(ego.lane.s)].has_lane(target_lane.lane_id)
    if not adjacent:
        raise ContractError(f"lane {target_lane.road_id}/{target_lane.lane_id} is not adjacent "
                            f"to {ego.lane.road_id}/{ego.lane.lane_id}")
    best, best_d = None, math.inf
    for other in others:
        if not target_lane.same_lane(other.lane):
            continue
        d = math.hypot(other.x - ego.x, other.y - ego.y)
        if d < dist_threshold and d < best_d:
            best, best_d = other.id, d
    return (Clearance.WAIT, best) if best is not None else (Clearance.CLEAR, None)


# -- PID tracking ------------------------------------------------------------------


class PIDController:
    """PID with a windowed-mean integral and a per-step difference derivative."""

    def __init__(self, kp: float, ki: float, kd: float, window: int = 20):
        self.kp, self.ki, self.kd = kp, ki, kd
        self._window = deque([0.0] * window, maxlen=window)

    def step(self, error: float) -> float:
        self._window.append(error)
        integral = float(np.mean(self._window))
        derivative = self._window[-1] - self._window[-2] if len(self._window) >= 2 else 0.0
        return self.kp * error + self.ki * integral + self.kd * derivative

    def reset(self) -> None:
        self._window.extend([0.0] * self._window.maxlen)


class WaypointController:
    """Lateral and longitudinal PIDs driven by ego-frame waypoints."""

    def __init__(self, config: ExpertConfig | None = None):
        self.config = config or ExpertConfig()
        c = self.config
        self.lateral = PIDController(*c.lateral_gains, window=c.pid_window)
        self.longitudinal = PIDController(*c.longitudinal_gains, window=c.pid_window)

    def desired_speed(self, waypoints: np.ndarray) -> float:
        if len(waypoints) < 2:
            return 0.0
        return float(np.hypot(*(waypoints[1] - waypoints[0]))) / self.config.waypoint_dt

    def control(self, waypoints, speed: float) -> ControlCommand:
        c = self.config
        wp = np.asarray(waypoints, dtype=float).reshape(-1, 2)
        if len(wp) == 0:
            raise ContractError("pid_control needs at least one waypoint")
        nearest = wp[np.argsort(np.hypot(wp[:, 0], wp[:, 1]), kind="stable")[:2]]
        aim = nearest.mean(axis=0)
        # heading error normalised so a target 90 degrees off reads 1
        angle = math.atan2(aim[1], aim[0]) / (math.pi / 2) if np.hypot(*aim) > 1e-6 else 0.0
        steer = float(np.clip(-self.lateral.step(angle), -1.0, 1.0))

        desired = self.desired_speed(wp)
        if desired < c.brake_speed or speed > c.brake_ratio * desired:
            self.longitudinal.step(0.0)
            brake = float(np.clip(c.brake_gain * (speed - desired), 0.0, 1.0))
            return ControlCommand(steer, 0.0, brake)
        delta = float(np.clip(desired - speed, 0.0, 0.25))
        throttle = float(np.clip(self.longitudinal.step(delta), 0.0, c.max_throttle))
        return ControlCommand(steer, throttle, 0.0)


def pid_control(waypoints, state: AgentState, gains: ExpertConfig | None = None,
                controller: WaypointController | None = None) -> ControlCommand:
    """One control step.  Pass ``controller`` to carry integrator state across steps."""
    controller = controller or WaypointController(gains)
    return controller.control(waypoints, state.speed)


# -- experts -----------------------------------------------------------------------


def _to_ego(points: np.ndarray, ego: AgentState) -> np.ndarray:
    c, s = math.cos(ego.heading), math.sin(ego.heading)
    d = points - np.array([ego.x, ego.y])
    return np.stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1]], axis=1)


class _RouteFollower:
    name = "base"

    def __init__(self, network: Optional[RoadNetwork] = None, config: ExpertConfig | None = None):
        self.network = network
        self.config = config or ExpertConfig()
        self.controller = WaypointController(self.config)
        self.progress: Optional[float] = None

    def reset(self) -> None:
        self.controller = WaypointController(self.config)
        self.progress: Optional[float] = None

    def _localize(self, ego: AgentState, route: Route) -> float:
        if self.progress is None:  # first fix: search the whole route
            s, _ = route.project(ego.x, ego.y)
            self.progress = s
        s, _ = route.project(ego.x, ego.y, max(self.progress - 5.0, 0.0), self.progress + 25.0)
        self.progress = max(self.progress, s)
        return self.progress

    def waypoints(self, ego: AgentState, route: Route, s_ego: float) -> np.ndarray:
        c = self.config
        spacing = c.target_speed * c.waypoint_dt
        pts = np.array([route.pose_at(s_ego + k * spacing)[:2] for k in range(1, c.num_waypoints + 1)])
        return _to_ego(pts, ego)

    def hazard(self, world: WorldSnapshot, route: Route, s_ego: float) -> HazardVerdict:
        raise NotImplementedError

    def step(self, world: WorldSnapshot, route: Route) -> Tuple[ControlCommand, HazardVerdict, np.ndarray]:
        ego = world.ego
        s_ego = self._localize(ego, route)
        wps = self.waypoints(ego, route, s_ego)
        verdict = self.hazard(world, route, s_ego)
        if s_ego >= route.length - 0.5:
            cmd = self.controller.control(np.zeros((2, 2)), ego.speed)  # route exhausted
            return ControlCommand(cmd.steer, 0.0, 1.0 if ego.speed > 0 else cmd.brake), verdict, wps
        cmd = self.controller.control(wps, ego.speed)
        if verdict.kind != HazardKind.NONE:
            cmd = ControlCommand(cmd.steer, 0.0, 1.0)
        return cmd, verdict, wps

    def lane_width(self, ego: AgentState) -> float:
        if self.network is None or ego.lane is None or not self.network.has_road(ego.lane.road_id):
            return self.config.lane_width
        road = self.network.road(ego.lane.road_id)
        idx = road.section_index_at(ego.lane.s)
        if not road.lane_sections[idx].has_lane(ego.lane.lane_id):
            return self.config.lane_width
        w = lateral_offset(road.lane_sections[idx], ego.lane.lane_id, ego.lane.s - road.lane_sections[idx].s)[1]
        return w if w > 0.5 else self.config.lane_width

    def _nearby(self, world: WorldSnapshot) -> List[Tuple[AgentState, np.ndarray]]:
        ego = world.ego
        out = []
        for other in world.others:
            dp = other.position - ego.position
            if float(np.hypot(*dp)) <= self.config.hazard_range:
                out.append((other, dp))
        out.sort(key=lambda od: (float(np.hypot(*od[1])), od[0].id))
        return out


class BaselineAutoExpert(_RouteFollower):
    """Distance-only stop rule over a forward cone."""

    name = "baseline_auto"

    def hazard(self, world, route, s_ego):
        ego = world.ego
        cone = math.radians(self.config.baseline_cone_deg)
        for other, dp in self._nearby(world):
            dist = float(np.hypot(*dp))
            if dist < self.config.stop_distance and (dist < 1e-6 or bearing_angle(ego.orientation, dp) <= cone):
                return HazardVerdict(HazardKind.BLOCKED_BEARING, math.inf, other.id)
        return NO_HAZARD


class MMFNExpert(_RouteFollower):
    """Lane-change clearance, then TTC in the lane corridor, then the distance rule."""

    name = "mmfn"

    def __init__(self, network=None, config=None):
        super().__init__(network, config)
        self.hold_until = -math.inf
        self.hold_offender: Optional[str] = None

    def reset(self) -> None:
        super().reset()
        self.hold_until = -math.inf
        self.hold_offender = None

    def commanded_lane_change(self, ego: AgentState, route: Route, s_ego: float) -> Optional[LaneRef]:
        if ego.lane is None:
            return None
        road_id, lane_id = route.lane_at(s_ego + self.config.lane_change_lookahead)
        if road_id != ego.lane.road_id or lane_id is None or lane_id == ego.lane.lane_id:
            return None
        if abs(lane_id - ego.lane.lane_id) != 1 or lane_id * ego.lane.lane_id < 0:
            return None
        return LaneRef(road_id, lane_id, ego.lane.s)

    def hazard(self, world, route, s_ego):
        c = self.config
        ego = world.ego
        d = self.lane_width(ego) - c.lane_width_margin
        if world.time < self.hold_until:
            return HazardVerdict(HazardKind.LANE_CHANGE_CONFLICT, math.inf, self.hold_offender)
        target = self.commanded_lane_change(ego, route, s_ego)
        if target is not None:
            try:
                verdict, offender = lane_change_clearance(ego, world.others, target,
                                                          c.lane_change_distance, self.network)
            except ContractError:
                verdict, offender = Clearance.CLEAR, None
            if verdict == Clearance.WAIT:
                self.hold_until = world.time + c.lane_change_hold
                self.hold_offender = offender
                return HazardVerdict(HazardKind.LANE_CHANGE_CONFLICT, math.inf, offender)
        nearby = self._nearby(world)
        for other, dp in nearby:
            if float(np.hypot(*dp)) <= 1e-6:
                return HazardVerdict(HazardKind.BLOCKED_BEARING, math.inf, other.id)
            ttc, reachable = time_to_collision(dp, other.velocity - ego.velocity, d)
            if ttc < c.ttc_threshold and reachable and bearing_check(ego, dp, d):
                return HazardVerdict(HazardKind.TTC_FRONT, ttc, other.id)
        for other, dp in nearby:
            if float(np.hypot(*dp)) < c.stop_distance and bearing_check(ego, dp, d):
                return HazardVerdict(HazardKind.BLOCKED_BEARING, math.inf, other.id)
        return NO_HAZARD


POLICIES = {"mmfn": MMFNExpert, "baseline_auto": BaselineAutoExpert}


def make_policy(name: str, network: Optional[RoadNetwork] = None,
                config: ExpertConfig | None = None) -> _RouteFollower:
    try:
        cls = POLICIES[name]
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}") from None
    return cls(network, config)


def expert_step(world: WorldSnapshot, route: Route, config: ExpertConfig | None = None,
                network: Optional[RoadNetwork] = None, policy: Optional[MMFNExpert] = None):
    """Single MMFN step; a fresh policy is created unless one is supplied."""
    policy = policy or MMFNExpert(network, config)
    return policy.step(world, route)
