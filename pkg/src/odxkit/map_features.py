"""Lane discretization into rough lanes, ego windowing, lane vectors and BEV rasters.

Raster convention: ego frame (x forward, y left); image columns run along +x
and rows run from +y (row 0) to -y, so a lane straight ahead of the ego is a
horizontal run of pixels.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .map_model import LanePoint, RoadNetwork, eval_lane_center, wrap_angle

ROUGH_LANE_POINTS = 10
WINDOW_HALF = 14.0


@dataclass(frozen=True)
class RoughLane:
    points: Tuple[LanePoint, ...]
    road_id: str
    lane_id: int
    section_index: int = 0

    def __len__(self) -> int:
        return len(self.points)

    def xy(self) -> np.ndarray:
        return np.array([(p.x, p.y) for p in self.points], dtype=float).reshape(-1, 2)


@dataclass(frozen=True)
class LaneVector:
    d_prev: Tuple[float, float]
    d_curr: Tuple[float, float]
    a: Tuple[int, int, int]

    def record(self) -> List[float]:
        return [*self.d_prev, *self.d_curr, *map(float, self.a)]


@dataclass(frozen=True)
class GridSpec:
    """Metric window ``[x_min, x_max] x [y_min, y_max]`` split into square pixels."""

    width_px: int
    height_px: int
    meters_per_pixel: float
    x_min: float
    y_max: float

    @property
    def x_max(self) -> float:
        return self.x_min + self.width_px * self.meters_per_pixel

    @property
    def y_min(self) -> float:
        return self.y_max - self.height_px * self.meters_per_pixel

    @classmethod
    def centered(cls, size_px: int = 256, window: float = 2 * WINDOW_HALF) -> "GridSpec":
        return cls(size_px, size_px, window / size_px, -window / 2, window / 2)


@dataclass
class BevGrid:
    data: np.ndarray  # (channels, height, width), float32, non-negative
    spec: GridSpec

    def __post_init__(self):
        c, h, w = self.data.shape
        if (h, w) != (self.spec.height_px, self.spec.width_px):
            raise ValueError("grid data does not match its spec")

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def width_px(self) -> int:
        return self.spec.width_px

    @property
    def height_px(self) -> int:
        return self.spec.height_px

    @property
    def meters_per_pixel(self) -> float:
        return self.spec.meters_per_pixel


# -- Algorithm: lane discretization -------------------------------------------


def sample_count(max_s: float, ds: float) -> int:
    return int(math.floor(max_s / ds + 1e-9)) + 1


def discretize_lanes(network: RoadNetwork, ds: float = 1.0, driving_only: bool = True,
                     chunk: int = ROUGH_LANE_POINTS) -> List[RoughLane]:
    """Sample each lane center every ``ds`` metres over its section and cut
    the node list into rough lanes of ``chunk`` points; the remainder is
    flushed as a shorter final rough lane.  Chunks do not share points."""
    if ds <= 0:
        raise ValueError("ds must be > 0")
    out: List[RoughLane] = []
    for road in network.roads:
        for idx, sec in enumerate(road.lane_sections):
            start, end = road.section_bounds(idx)
            max_s = max(end - start, 0.0)
            for lane in sec.lanes:
                if lane.id == 0 or (driving_only and not lane.is_driving):
                    continue
                nodes: List[LanePoint] = []
                for k in range(sample_count(max_s, ds)):
                    s = min(start + k * ds, road.length)
                    nodes.append(eval_lane_center(road, idx, lane.id, s))
                    if len(nodes) >= chunk:
                        out.append(RoughLane(tuple(nodes), road.id, lane.id, idx))
                        nodes = []
                if nodes:
                    out.append(RoughLane(tuple(nodes), road.id, lane.id, idx))
    return out


def to_ego_frame(point: LanePoint, ego_pose: Tuple[float, float, float]) -> LanePoint:
    ex, ey, eh = ego_pose
    c, s = math.cos(eh), math.sin(eh)
    dx, dy = point.x - ex, point.y - ey
    return LanePoint(c * dx + s * dy, -s * dx + c * dy, wrap_angle(point.heading - eh), point.s,
                     point.lane_width, point.labels, point.road_id, point.lane_id)


def select_window(rough_lanes: Iterable[RoughLane], ego_pose: Tuple[float, float, float],
                  half_extent: float = WINDOW_HALF) -> List[RoughLane]:
    """Rough lanes with at least one point inside the ego-aligned square
    ``|x|, |y| <= half_extent``, returned unclipped in the ego frame."""
    if not all(math.isfinite(v) for v in ego_pose):
        raise ValueError("ego pose must be finite")
    kept = []
    for lane in rough_lanes:
        local = tuple(to_ego_frame(p, ego_pose) for p in lane.points)
        if any(abs(p.x) <= half_extent and abs(p.y) <= half_extent for p in local):
            kept.append(RoughLane(local, lane.road_id, lane.lane_id, lane.section_index))
    return kept


def vectorize(rough_lane: RoughLane) -> List[LaneVector]:
    pts = rough_lane.points
    if len(pts) < 2:
        warnings.warn(f"rough lane {rough_lane.road_id}/{rough_lane.lane_id} has a single point; "
                      "no vectors", stacklevel=2)
        return []
    return [LaneVector((pts[i - 1].x, pts[i - 1].y), (pts[i].x, pts[i].y), tuple(pts[i].labels))
            for i in range(1, len(pts))]


# -- line JSON export ----------------------------------------------------------


def rough_lane_record(lane: RoughLane) -> dict:
    return {
        "road_id": lane.road_id,
        "lane_id": lane.lane_id,
        "points": [[p.x, p.y] for p in lane.points],
        "labels": [list(p.labels) for p in lane.points],
    }


def write_rough_lanes(path, lanes: Sequence[RoughLane]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for lane in lanes:
            fh.write(json.dumps(rough_lane_record(lane)) + "\n")


def read_rough_lanes(path) -> List[RoughLane]:
    lanes = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        pts = tuple(
            LanePoint(x, y, 0.0, float(i), 0.0, tuple(lab), rec["road_id"], rec["lane_id"])
            for i, ((x, y), lab) in enumerate(zip(rec["points"], rec["labels"]))
        )
        lanes.append(RoughLane(pts, rec["road_id"], rec["lane_id"]))
    return lanes


# -- rasterization ---------------------------------------------------------------


def stroke_radius_px(stroke_width: float, mpp: float) -> int:
    """Square dilation radius giving the odd pixel width closest to the stroke."""
    return max(0, int(round((stroke_width / mpp - 1.0) / 2.0)))


def _segment_cells(u0, v0, u1, v1, width, height) -> Tuple[np.ndarray, np.ndarray]:
    # cells [c, c+1] x [r, r+1] in pixel units whose closed square touches the segment
    c_lo = max(int(math.floor(min(u0, u1))) - 1, 0)
    c_hi = min(int(math.floor(max(u0, u1))) + 1, width - 1)
    r_lo = max(int(math.floor(min(v0, v1))) - 1, 0)
    r_hi = min(int(math.floor(max(v0, v1))) + 1, height - 1)
    if c_lo > c_hi or r_lo > r_hi:
        return np.empty(0, int), np.empty(0, int)
    cols, rows = np.meshgrid(np.arange(c_lo, c_hi + 1), np.arange(r_lo, r_hi + 1))
    cols, rows = cols.ravel(), rows.ravel()
    hit = ((cols <= max(u0, u1)) & (cols + 1 >= min(u0, u1))
           & (rows <= max(v0, v1)) & (rows + 1 >= min(v0, v1)))
    du, dv = u1 - u0, v1 - v0
    side = []
    for oc, orow in ((0, 0), (1, 0), (0, 1), (1, 1)):
        side.append(du * (rows + orow - v0) - dv * (cols + oc - u0))
    side = np.stack(side)
    straddle = ~((side > 0).all(axis=0) | (side < 0).all(axis=0))
    hit &= straddle
    return rows[hit], cols[hit]


def rasterize_polylines(polylines: Iterable[np.ndarray], spec: GridSpec,
                        stroke_width: float = 0.3) -> BevGrid:
    """Draw ego-frame polylines (each an ``(n, 2)`` array) as binary strokes."""
    mask = np.zeros((spec.height_px, spec.width_px), dtype=bool)
    mpp = spec.meters_per_pixel
    for line in polylines:
        pts = np.asarray(line, dtype=float).reshape(-1, 2)
        u = (pts[:, 0] - spec.x_min) / mpp
        v = (spec.y_max - pts[:, 1]) / mpp
        if len(pts) == 1:
            u, v = np.repeat(u, 2), np.repeat(v, 2)
        for i in range(len(u) - 1):
            rows, cols = _segment_cells(u[i], v[i], u[i + 1], v[i + 1], spec.width_px, spec.height_px)
            mask[rows, cols] = True
    radius = stroke_radius_px(stroke_width, mpp)
    if radius and mask.any():
        grown = mask.copy()
        for dr in range(-radius, radius + 1):
            for dc in range(-radius, radius + 1):
                grown |= _shift(mask, dr, dc)
        mask = grown
    return BevGrid(mask.astype(np.float32)[None], spec)


def _shift(mask: np.ndarray, dr: int, dc: int) -> np.ndarray:
    out = np.zeros_like(mask)
    h, w = mask.shape
    out[max(dr, 0):h + min(dr, 0), max(dc, 0):w + min(dc, 0)] = \
        mask[max(-dr, 0):h + min(-dr, 0), max(-dc, 0):w + min(-dc, 0)]
    return out


def rasterize_bev(lanes: Sequence[RoughLane], spec: Optional[GridSpec] = None,
                  stroke_width: float = 0.3) -> BevGrid:
    """Rasterize windowed (ego-frame) rough lanes.  Consecutive rough lanes
    cut from the same lane are joined so strokes stay continuous."""
    spec = spec or GridSpec.centered()
    return rasterize_polylines(_join_chunks(lanes), spec, stroke_width)


def _join_chunks(lanes: Sequence[RoughLane]) -> List[np.ndarray]:
    lines: List[List[Tuple[float, float]]] = []
    prev = None
    for lane in lanes:
        key = (lane.road_id, lane.section_index, lane.lane_id)
        pts = [(p.x, p.y) for p in lane.points]
        if prev is not None and prev[0] == key and prev[1] < lane.points[0].s:
            lines[-1].extend(pts)
        else:
            lines.append(pts)
        prev = (key, lane.points[-1].s)
    return [np.array(line) for line in lines]


def rasterize_network(network: RoadNetwork, ego_pose: Tuple[float, float, float],
                      spec: Optional[GridSpec] = None, stroke_width: float = 0.3,
                      ds: float = 1.0) -> BevGrid:
    spec = spec or GridSpec.centered()
    half = max(spec.width_px, spec.height_px) * spec.meters_per_pixel
    # a generous window so strokes entering from outside are not cut short
    lanes = select_window(discretize_lanes(network, ds), ego_pose, half + ds)
    return rasterize_bev(lanes, spec, stroke_width)
