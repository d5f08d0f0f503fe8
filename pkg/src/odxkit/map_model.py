"""Road network domain types and analytic evaluation of reference lines and lanes.

Coordinates follow OpenDRIVE: right-handed world frame, heading measured
counterclockwise from +x, positive lane ids to the left of the reference line
when looking along increasing s and negative ids to the right.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Iterator, List, Optional, Tuple

S_TOL = 1e-6
SPIRAL_CHORD = 0.1

LANE_CHANGE_VALUES = ("none", "left", "right", "both")


class OutOfRangeError(ValueError):
    pass


class LaneLookupError(KeyError):
    pass


class NegativeWidthError(ValueError):
    pass


def wrap_angle(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(angle + math.pi, 2.0 * math.pi)
    if a <= 0.0:
        a += 2.0 * math.pi
    return a - math.pi


@dataclass(frozen=True)
class GeometrySegment:
    """One plan-view primitive.

    ``kind`` is ``line``, ``arc``, ``spiral`` or ``param_poly3``.  Arcs use
    ``curvature``; spirals interpolate linearly from ``curvature`` to
    ``curvature_end``; poly3 coefficients are ``(aU, bU, cU, dU, aV, bV, cV, dV)``.
    """

    s0: float
    x0: float
    y0: float
    hdg0: float
    length: float
    kind: str = "line"
    curvature: float = 0.0
    curvature_end: float = 0.0
    poly: Tuple[float, ...] = (0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    normalized: bool = True

    @property
    def s1(self) -> float:
        return self.s0 + self.length

    @cached_property
    def _spiral_chords(self) -> List[Tuple[float, float, float, float, float]]:
        # (ds_start, x, y, hdg, curvature) per chord, integrated exactly as arcs
        n = max(1, math.ceil(self.length / SPIRAL_CHORD))
        step = self.length / n
        rate = (self.curvature_end - self.curvature) / self.length
        chords = []
        x, y, h = self.x0, self.y0, self.hdg0
        for i in range(n):
            k = self.curvature + rate * (i + 0.5) * step
            chords.append((i * step, x, y, h, k))
            x, y, h = _arc_pose(x, y, h, k, step)
        return chords

    def pose_at(self, ds: float) -> Tuple[float, float, float]:
        """Pose at local arclength ``ds`` in [0, length]; heading not wrapped."""
        if self.kind == "line":
            return (self.x0 + ds * math.cos(self.hdg0),
                    self.y0 + ds * math.sin(self.hdg0), self.hdg0)
        if self.kind == "arc":
            return _arc_pose(self.x0, self.y0, self.hdg0, self.curvature, ds)
        if self.kind == "spiral":
            chords = self._spiral_chords
            starts = [c[0] for c in chords]
            i = max(0, bisect_right(starts, ds) - 1)
            c0, x, y, h, k = chords[i]
            return _arc_pose(x, y, h, k, ds - c0)
        if self.kind == "param_poly3":
            au, bu, cu, du, av, bv, cv, dv = self.poly
            p = ds / self.length if self.normalized else ds
            u = au + bu * p + cu * p * p + du * p ** 3
            v = av + bv * p + cv * p * p + dv * p ** 3
            du_dp = bu + 2 * cu * p + 3 * du * p * p
            dv_dp = bv + 2 * cv * p + 3 * dv * p * p
            ch, sh = math.cos(self.hdg0), math.sin(self.hdg0)
            return (self.x0 + u * ch - v * sh, self.y0 + u * sh + v * ch,
                    self.hdg0 + math.atan2(dv_dp, du_dp))
        raise ValueError(f"unsupported geometry kind {self.kind!r}")


def _arc_pose(x: float, y: float, h: float, k: float, ds: float) -> Tuple[float, float, float]:
    if abs(k) < 1e-12:
        return x + ds * math.cos(h), y + ds * math.sin(h), h
    h1 = h + k * ds
    return (x + (math.sin(h1) - math.sin(h)) / k,
            y - (math.cos(h1) - math.cos(h)) / k, h1)


@dataclass(frozen=True)
class WidthRecord:
    s_offset: float
    a: float
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0

    def __call__(self, ds: float) -> float:
        return self.a + ds * (self.b + ds * (self.c + ds * self.d))


@dataclass(frozen=True)
class LaneLinkRef:
    predecessor: Optional[int] = None
    successor: Optional[int] = None


@dataclass(frozen=True)
class Lane:
    id: int
    type: str = "driving"
    width_polys: Tuple[WidthRecord, ...] = ()
    lane_change_permission: str = "none"
    junction_member: bool = False
    link: LaneLinkRef = LaneLinkRef()

    @property
    def is_driving(self) -> bool:
        return self.type == "driving"

    @property
    def left_change_ok(self) -> bool:
        return self.lane_change_permission in ("left", "both")

    @property
    def right_change_ok(self) -> bool:
        return self.lane_change_permission in ("right", "both")

    @property
    def labels(self) -> Tuple[int, int, int]:
        return (int(self.junction_member), int(self.left_change_ok), int(self.right_change_ok))


@dataclass(frozen=True)
class LaneSection:
    s: float
    lanes: Tuple[Lane, ...] = ()

    @cached_property
    def _by_id(self) -> Dict[int, Lane]:
        return {lane.id: lane for lane in self.lanes}

    def lane(self, lane_id: int) -> Lane:
        try:
            return self._by_id[lane_id]
        except KeyError:
            raise LaneLookupError(f"lane {lane_id} not in section at s={self.s}") from None

    def has_lane(self, lane_id: int) -> bool:
        return lane_id in self._by_id


@dataclass(frozen=True)
class RoadLink:
    element_type: str  # "road" or "junction"
    element_id: str
    contact_point: Optional[str] = None  # "start" / "end"


@dataclass(frozen=True)
class Road:
    id: str
    length: float
    plan_view: Tuple[GeometrySegment, ...]
    lane_sections: Tuple[LaneSection, ...]
    junction_id: Optional[str] = None
    predecessor: Optional[RoadLink] = None
    successor: Optional[RoadLink] = None
    name: str = ""

    def section_index_at(self, s: float) -> int:
        starts = [sec.s for sec in self.lane_sections]
        return max(0, bisect_right(starts, s + 1e-12) - 1)

    def section_bounds(self, index: int) -> Tuple[float, float]:
        start = self.lane_sections[index].s
        if index + 1 < len(self.lane_sections):
            return start, self.lane_sections[index + 1].s
        return start, self.length


@dataclass(frozen=True)
class Junction:
    id: str
    connecting_roads: Tuple[str, ...] = ()
    incoming_roads: Tuple[str, ...] = ()


@dataclass(frozen=True)
class RoadNetwork:
    roads: Tuple[Road, ...] = ()
    junctions: Tuple[Junction, ...] = ()

    def __post_init__(self):
        ids = [r.id for r in self.roads]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate road ids")

    @cached_property
    def _roads(self) -> Dict[str, Road]:
        return {r.id: r for r in self.roads}

    def road(self, road_id) -> Road:
        try:
            return self._roads[str(road_id)]
        except KeyError:
            raise LaneLookupError(f"road {road_id} not in network") from None

    def has_road(self, road_id) -> bool:
        return str(road_id) in self._roads

    def junction(self, junction_id) -> Junction:
        for j in self.junctions:
            if j.id == str(junction_id):
                return j
        raise LaneLookupError(f"junction {junction_id} not in network")

    def iter_lanes(self) -> Iterator[Tuple[Road, int, Lane]]:
        for road in self.roads:
            for idx, sec in enumerate(road.lane_sections):
                for lane in sec.lanes:
                    yield road, idx, lane


@dataclass(frozen=True)
class LanePoint:
    x: float
    y: float
    heading: float
    s: float
    lane_width: float
    labels: Tuple[int, int, int] = (0, 0, 0)
    road_id: Optional[str] = None
    lane_id: Optional[int] = None


def eval_reference_line(road: Road, s: float) -> Tuple[float, float, float]:
    """World pose ``(x, y, heading)`` of the reference line at road arclength s."""
    if not (-S_TOL <= s <= road.length + S_TOL) or not road.plan_view:
        raise OutOfRangeError(f"s={s} outside road {road.id} [0, {road.length}]")
    starts = [g.s0 for g in road.plan_view]
    i = max(0, bisect_right(starts, s) - 1)
    seg = road.plan_view[i]
    ds = min(max(s - seg.s0, 0.0), seg.length)
    x, y, h = seg.pose_at(ds)
    return x, y, wrap_angle(h)


def lane_width_at(lane: Lane, s_local: float) -> float:
    """Width of ``lane`` at section-local ``s_local`` from its active cubic record."""
    if not lane.width_polys:
        return 0.0
    starts = [w.s_offset for w in lane.width_polys]
    i = max(0, bisect_right(starts, s_local) - 1)
    rec = lane.width_polys[i]
    w = rec(s_local - rec.s_offset)
    if w < -1e-9:
        raise NegativeWidthError(f"lane {lane.id} width {w:.6g} < 0 at s_local={s_local}")
    return max(w, 0.0)


def lateral_offset(section: LaneSection, lane_id: int, s_local: float) -> Tuple[float, float]:
    """Signed lateral offset of the lane center from the reference line, and lane width."""
    if lane_id == 0:
        return 0.0, 0.0
    sign = 1 if lane_id > 0 else -1
    inner = 0.0
    for lid in range(sign, lane_id, sign):
        inner += lane_width_at(section.lane(lid), s_local)
    width = lane_width_at(section.lane(lane_id), s_local)
    return sign * (inner + 0.5 * width), width


def eval_lane_center(road: Road, section_index: int, lane_id: int, s: float) -> LanePoint:
    """Lane center point at road arclength s.  Heading is that of the reference line."""
    if not 0 <= section_index < len(road.lane_sections):
        raise LaneLookupError(f"road {road.id} has no section {section_index}")
    section = road.lane_sections[section_index]
    if lane_id != 0 and not section.has_lane(lane_id):
        raise LaneLookupError(f"lane {lane_id} not in road {road.id} section {section_index}")
    x, y, h = eval_reference_line(road, s)
    offset, width = lateral_offset(section, lane_id, s - section.s)
    labels = section.lane(lane_id).labels if section.has_lane(lane_id) else (0, 0, 0)
    return LanePoint(
        x=x - offset * math.sin(h), y=y + offset * math.cos(h), heading=h, s=s,
        lane_width=width, labels=labels, road_id=road.id, lane_id=lane_id,
    )
