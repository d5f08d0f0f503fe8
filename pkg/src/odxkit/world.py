"""Agent and world-state records shared by the expert and the simulator."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class LaneRef:
    road_id: str
    lane_id: int
    s: float = 0.0

    def same_lane(self, other: Optional["LaneRef"]) -> bool:
        return other is not None and self.road_id == other.road_id and self.lane_id == other.lane_id


@dataclass(frozen=True)
class AgentState:
    """Kinematic vehicle state; the velocity vector always points along heading."""

    id: str
    x: float
    y: float
    heading: float
    speed: float = 0.0
    lane: Optional[LaneRef] = None
    half_length: float = 2.45
    half_width: float = 1.06
    kind: str = "vehicle"  # "vehicle" or "static"

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def velocity(self) -> np.ndarray:
        return self.speed * np.array([math.cos(self.heading), math.sin(self.heading)])

    @property
    def orientation(self) -> np.ndarray:
        return np.array([math.cos(self.heading), math.sin(self.heading)])

    def with_(self, **changes) -> "AgentState":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = {"id": self.id, "x": self.x, "y": self.y, "heading": self.heading, "speed": self.speed,
             "half_length": self.half_length, "half_width": self.half_width, "kind": self.kind,
             "lane": None}
        if self.lane is not None:
            d["lane"] = {"road_id": self.lane.road_id, "lane_id": self.lane.lane_id, "s": self.lane.s}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AgentState":
        lane = d.get("lane")
        return cls(d["id"], d["x"], d["y"], d["heading"], d["speed"],
                   LaneRef(lane["road_id"], lane["lane_id"], lane["s"]) if lane else None,
                   d["half_length"], d["half_width"], d.get("kind", "vehicle"))


@dataclass(frozen=True)
class WorldSnapshot:
    time: float
    agents: Tuple[AgentState, ...]
    ego_id: str = "ego"

    def __post_init__(self):
        ids = [a.id for a in self.agents]
        if len(ids) != len(set(ids)):
            raise ValueError("agent ids must be unique")

    @property
    def ego(self) -> AgentState:
        for a in self.agents:
            if a.id == self.ego_id:
                return a
        raise KeyError(f"ego {self.ego_id!r} not in snapshot")

    @property
    def others(self) -> Tuple[AgentState, ...]:
        return tuple(a for a in self.agents if a.id != self.ego_id)

    def to_dict(self) -> dict:
        return {"time": self.time, "ego_id": self.ego_id, "agents": [a.to_dict() for a in self.agents]}

    @classmethod
    def from_dict(cls, d: dict) -> "WorldSnapshot":
        return cls(d["time"], tuple(AgentState.from_dict(a) for a in d["agents"]), d["ego_id"])
