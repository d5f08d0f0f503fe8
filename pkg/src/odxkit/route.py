"""Routes: ordered lane-center polylines with arclength bookkeeping."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .map_model import LanePoint, RoadNetwork, eval_lane_center, wrap_angle


@dataclass(frozen=True)
class RouteSegment:
    road_id: str
    lane_id: int
    s0: float
    s1: float  # s1 < s0 drives against the reference line


class Route:
    def __init__(self, points: Sequence[LanePoint]):
        pts: List[LanePoint] = []
        for p in points:
            if pts and math.hypot(p.x - pts[-1].x, p.y - pts[-1].y) < 1e-6:
                continue
            pts.append(p)
        if not pts:
            raise ValueError("route needs at least one point")
        self.points = tuple(pts)
        self.xy = np.array([(p.x, p.y) for p in pts], dtype=float)
        seg = np.diff(self.xy, axis=0)
        self._seg_len = np.hypot(seg[:, 0], seg[:, 1])
        self.s = np.concatenate([[0.0], np.cumsum(self._seg_len)])

    @property
    def length(self) -> float:
        return float(self.s[-1])

    @classmethod
    def from_segments(cls, network: RoadNetwork, segments: Sequence[RouteSegment],
                      ds: float = 1.0) -> "Route":
        pts: List[LanePoint] = []
        for seg in segments:
            road = network.road(seg.road_id)
            n = max(1, int(math.ceil(abs(seg.s1 - seg.s0) / ds)))
            reverse = seg.s1 < seg.s0
            for k in range(n + 1):
                s = seg.s0 + (seg.s1 - seg.s0) * k / n
                p = eval_lane_center(road, road.section_index_at(s), seg.lane_id, s)
                if reverse:
                    p = LanePoint(p.x, p.y, wrap_angle(p.heading + math.pi), p.s, p.lane_width,
                                  p.labels, p.road_id, p.lane_id)
                pts.append(p)
        return cls(pts)

    def pose_at(self, s: float) -> Tuple[float, float, float]:
        if len(self.points) == 1:
            p = self.points[0]
            return p.x, p.y, p.heading
        s = min(max(s, 0.0), self.length)
        i = int(np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self._seg_len) - 1))
        t = (s - self.s[i]) / self._seg_len[i]
        a, b = self.xy[i], self.xy[i + 1]
        x, y = a + t * (b - a)
        return float(x), float(y), math.atan2(b[1] - a[1], b[0] - a[0])

    def lane_at(self, s: float) -> Tuple[Optional[str], Optional[int]]:
        """Lane of the first route point at or beyond arclength ``s``."""
        i = int(np.searchsorted(self.s, s - 1e-9, side="left"))
        p = self.points[min(i, len(self.points) - 1)]
        return p.road_id, p.lane_id

    def project(self, x: float, y: float, s_min: float = 0.0,
                s_max: float = math.inf) -> Tuple[float, float]:
        """Closest point on the polyline restricted to arclength [s_min, s_max].

        Returns ``(s, signed lateral offset)``, left positive.
        """
        if len(self.points) == 1:
            p = self.points[0]
            return 0.0, math.hypot(x - p.x, y - p.y)
        lo = max(int(np.searchsorted(self.s, s_min, side="right")) - 1, 0)
        hi = min(int(np.searchsorted(self.s, s_max, side="left")), len(self._seg_len) - 1)
        a = self.xy[lo:hi + 1]
        d = self.xy[lo + 1:hi + 2] - a
        rel = np.array([x, y]) - a
        t = np.clip(np.einsum("ij,ij->i", rel, d) / np.maximum(self._seg_len[lo:hi + 1] ** 2, 1e-18), 0, 1)
        foot = a + t[:, None] * d
        dist = np.hypot(*(np.array([x, y]) - foot).T)
        k = int(np.argmin(dist))
        s = float(self.s[lo + k] + t[k] * self._seg_len[lo + k])
        s = min(max(s, s_min), s_max)
        cross = d[k, 0] * rel[k, 1] - d[k, 1] * rel[k, 0]
        return s, float(math.copysign(dist[k], cross) if dist[k] > 0 else 0.0)

    def to_dict(self) -> dict:
        return {"points": [[p.x, p.y, p.heading, p.road_id, p.lane_id, p.lane_width] for p in self.points]}

    @classmethod
    def from_dict(cls, d: dict) -> "Route":
        return cls([LanePoint(x, y, h, 0.0, w, (0, 0, 0), r, lane) for x, y, h, r, lane, w in d["points"]])
