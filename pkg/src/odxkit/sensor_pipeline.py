"""LiDAR and radar preprocessing into fixed-size network inputs."""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

import numpy as np

from . import ContractError
from .map_features import BevGrid, GridSpec

RADAR_TOP_N = 81
RADAR_FEATURES = 5
RADAR_MAX_RANGE = 100.0
RADAR_HALF_FOV = math.radians(17.5)
LIDAR_SPLIT_HEIGHT = 2.0
LIDAR_MAGIC = b"LPC00001"

# Mounting defaults used when synthesizing returns: two sensors, front and rear.
RADAR_MOUNT_HEIGHT = 1.0
RADAR_MOUNT_PITCH = math.radians(5.0)

RADAR_COLUMNS = ("velocity", "depth", "azimuth", "altitude", "label")
FRONT, REAR = 0, 1


def lidar_grid_spec(size_px: int = 256) -> GridSpec:
    """32 x 32 m: 26 m ahead, 6 m behind, 16 m to each side."""
    return GridSpec(size_px, size_px, 32.0 / size_px, -6.0, 16.0)


@dataclass(frozen=True)
class RadarPoint:
    velocity: float  # radial, positive when approaching
    depth: float
    azimuth: float
    altitude: float
    label: int = FRONT

    def __post_init__(self):
        if not 0.0 <= self.depth <= RADAR_MAX_RANGE:
            raise ValueError(f"radar depth {self.depth} outside [0, {RADAR_MAX_RANGE}]")
        if abs(self.azimuth) > RADAR_HALF_FOV + 1e-12:
            raise ValueError(f"radar azimuth {self.azimuth} outside the 35 degree field of view")
        if self.label not in (FRONT, REAR):
            raise ValueError("radar label must be 0 (front) or 1 (rear)")

    @property
    def time_to_reach(self) -> float:
        return self.depth / self.velocity if self.velocity > 0 else math.inf

    def row(self) -> List[float]:
        return [self.velocity, self.depth, self.azimuth, self.altitude, float(self.label)]


@dataclass
class RadarFeatureMatrix:
    rows: np.ndarray  # (N, 5)
    valid_count: int

    @property
    def n(self) -> int:
        return self.rows.shape[0]


def lidar_to_bev(points, spec: GridSpec | None = None,
                 split_height: float = LIDAR_SPLIT_HEIGHT) -> BevGrid:
    """Two-channel point-count histogram: channel 0 for z below ``split_height``,
    channel 1 for the rest.  Points outside the window are dropped."""
    spec = spec or lidar_grid_spec()
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    grid = np.zeros((2, spec.height_px, spec.width_px), dtype=np.float32)
    if len(pts) == 0:
        return BevGrid(grid, spec)
    if not np.isfinite(pts).all():
        raise ContractError("LiDAR points must be finite")
    mpp = spec.meters_per_pixel
    col = np.floor((pts[:, 0] - spec.x_min) / mpp).astype(np.int64)
    row = np.floor((spec.y_max - pts[:, 1]) / mpp).astype(np.int64)
    inside = (col >= 0) & (col < spec.width_px) & (row >= 0) & (row < spec.height_px)
    channel = (pts[:, 2] >= split_height).astype(np.int64)
    flat = (channel * spec.height_px + row) * spec.width_px + col
    counts = np.bincount(flat[inside], minlength=grid.size)
    return BevGrid(counts.reshape(grid.shape).astype(np.float32), spec)


def radar_select(points: Sequence[RadarPoint], n: int = RADAR_TOP_N) -> RadarFeatureMatrix:
    """Keep the ``n`` returns with the smallest time-to-reach (depth / velocity,
    infinite when not approaching); ties go to smaller depth, then input order.
    Unused rows are zero."""
    order = sorted(range(len(points)),
                   key=lambda i: (points[i].time_to_reach, points[i].depth, i))[:n]
    rows = np.zeros((n, RADAR_FEATURES))
    for r, i in enumerate(order):
        rows[r] = points[i].row()
    return RadarFeatureMatrix(rows, len(order))


def radar_affinity(matrix: RadarFeatureMatrix) -> np.ndarray:
    """Symmetric exp(-|azimuth_i - azimuth_j|) over valid rows, zero elsewhere."""
    k = matrix.valid_count
    out = np.zeros((matrix.n, matrix.n))
    az = matrix.rows[:k, 2]
    out[:k, :k] = np.exp(-np.abs(az[:, None] - az[None, :]))
    return out


def radar_graph_weights(matrix: RadarFeatureMatrix) -> np.ndarray:
    """Row-normalized azimuth affinity; padded rows carry only a unit diagonal."""
    w = radar_affinity(matrix)
    k = matrix.valid_count
    if k:
        w[:k, :k] /= w[:k, :k].sum(axis=1, keepdims=True)
    idx = np.arange(k, matrix.n)
    w[idx, idx] = 1.0
    return w


def radar_features(matrix: RadarFeatureMatrix, weights: np.ndarray) -> np.ndarray:
    p = matrix.rows if isinstance(matrix, RadarFeatureMatrix) else np.asarray(matrix, dtype=float)
    w = np.asarray(weights, dtype=float)
    if w.ndim != 2 or p.ndim != 2 or w.shape[1] != p.shape[0]:
        raise ContractError(f"cannot multiply weights {w.shape} with features {p.shape}")
    return w @ p


# -- file formats --------------------------------------------------------------


def write_lidar_bin(path, points) -> None:
    pts = np.ascontiguousarray(np.asarray(points, dtype="<f4").reshape(-1, 3))
    Path(path).write_bytes(LIDAR_MAGIC + struct.pack("<I", len(pts)) + pts.tobytes())


def read_lidar(path) -> np.ndarray:
    """XYZ from the ``LPC00001`` binary dump, or whitespace/comma separated text."""
    blob = Path(path).read_bytes()
    if blob[:8] == LIDAR_MAGIC:
        (count,) = struct.unpack_from("<I", blob, 8)
        if 12 + 12 * count != len(blob):
            raise ValueError("LiDAR dump size does not match header")
        return np.frombuffer(blob, dtype="<f4", offset=12).reshape(count, 3).astype(float)
    rows = []
    for line in blob.decode("utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.replace(",", " ").split()
        try:
            rows.append([float(v) for v in fields[:3]])
        except ValueError:
            if rows:
                raise
            continue  # header line
    return np.asarray(rows, dtype=float).reshape(-1, 3)


def write_radar_csv(path, points: Sequence[RadarPoint]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(RADAR_COLUMNS)
        for p in points:
            writer.writerow([repr(float(v)) for v in (p.velocity, p.depth, p.azimuth, p.altitude)] + [int(p.label)])


def read_radar_csv(path) -> List[RadarPoint]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RADAR_COLUMNS:
            raise ValueError(f"radar CSV header must be {','.join(RADAR_COLUMNS)}")
        return [RadarPoint(float(r["velocity"]), float(r["depth"]), float(r["azimuth"]),
                           float(r["altitude"]), int(float(r["label"]))) for r in reader]
