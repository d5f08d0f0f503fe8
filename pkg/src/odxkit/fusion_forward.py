"""Training-free forward passes of the fusion network blocks, in float64 numpy.

Blocks: a polyline encoder (shared MLP plus max-pool), single-head scaled
dot-product attention over concatenated sensor tokens, and a GRU waypoint
decoder that emits waypoint deltas.  Weights are drawn uniformly from
[-1/sqrt(fan_in), 1/sqrt(fan_in)] with ``numpy.random.default_rng(seed)``.
GRU gates follow the PyTorch layout (reset, update, new).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence, Union

import numpy as np

from . import ContractError
from .map_features import LaneVector

NUM_WAYPOINTS = 4
FUSION_STAGES = 4


def _finite(x: np.ndarray, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ContractError(f"{what} contains non-finite values")
    return x


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class Linear:
    weight: np.ndarray  # (in, out)
    bias: np.ndarray  # (out,)

    @classmethod
    def init(cls, rng, d_in: int, d_out: int) -> "Linear":
        return cls(uniform_init(rng, d_in, (d_in, d_out)), uniform_init(rng, d_in, (d_out,)))

    def __call__(self, x):
        return np.asarray(x, dtype=np.float64) @ self.weight + self.bias


@dataclass
class MLP:
    layers: List[Linear]

    @classmethod
    def init(cls, rng, sizes: Sequence[int]) -> "MLP":
        return cls([Linear.init(rng, a, b) for a, b in zip(sizes[:-1], sizes[1:])])

    @property
    def d_out(self) -> int:
        return self.layers[-1].weight.shape[1]

    def __call__(self, x):
        h = np.asarray(x, dtype=np.float64)
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = np.maximum(h, 0.0)
        return h


Polyline = Union[Sequence[LaneVector], np.ndarray]


def _records(polyline: Polyline) -> np.ndarray:
    if isinstance(polyline, np.ndarray):
        return polyline.reshape(-1, polyline.shape[-1]) if polyline.size else np.empty((0, 7))
    return np.array([v.record() for v in polyline], dtype=np.float64).reshape(-1, 7)


def polyline_encode(polylines: Sequence[Polyline], mlp: MLP) -> np.ndarray:
    """One row per non-empty polyline: the shared MLP applied to every vector
    record, max-pooled over the vectors."""
    if len(polylines) == 0:
        raise ContractError("polyline_encode needs at least one polyline")
    rows = []
    for i, poly in enumerate(polylines):
        rec = _records(poly)
        if len(rec) == 0:
            warnings.warn(f"polyline {i} has no vectors; skipped", stacklevel=2)
            continue
        rows.append(mlp(_finite(rec, "lane vectors")).max(axis=0))
    return np.array(rows).reshape(len(rows), mlp.d_out)


# -- attention ---------------------------------------------------------------------


@dataclass
class FusionWeights:
    m_q: np.ndarray  # (D_f, D_q)
    m_k: np.ndarray  # (D_f, D_k)
    m_v: np.ndarray  # (D_f, D_v)

    def __post_init__(self):
        if self.m_q.shape[1] != self.m_k.shape[1]:
            raise ContractError("query and key widths must match")
        if not (self.m_q.shape[0] == self.m_k.shape[0] == self.m_v.shape[0]):
            raise ContractError("projection matrices must share the input width")

    @property
    def d_f(self) -> int:
        return self.m_q.shape[0]

    @classmethod
    def init(cls, rng, d_f: int = 64, d_qk: int = 64, d_v: int = 64) -> "FusionWeights":
        return cls(uniform_init(rng, d_f, (d_f, d_qk)), uniform_init(rng, d_f, (d_f, d_qk)),
                   uniform_init(rng, d_f, (d_f, d_v)))


def softmax(x, axis: int = -1) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def attention_weights(f_in, weights: FusionWeights) -> np.ndarray:
    f = _finite(f_in, "fusion input")
    if f.ndim != 2 or f.shape[1] != weights.d_f:
        raise ContractError(f"fusion input width {f.shape} does not match D_f={weights.d_f}")
    q, k = f @ weights.m_q, f @ weights.m_k
    return softmax(q @ k.T / np.sqrt(k.shape[1]), axis=1)


def attention_fuse(f_in, weights: FusionWeights) -> np.ndarray:
    """softmax(Q K^T / sqrt(D_k)) V with Q, K, V linear projections of ``f_in``."""
    a = attention_weights(f_in, weights)
    return a @ (np.asarray(f_in, dtype=np.float64) @ weights.m_v)


SensorFeatures = Union[Mapping[str, np.ndarray], Sequence[np.ndarray]]


def fusion_block(features: SensorFeatures, weights: FusionWeights):
    """Concatenate all sensors' tokens, attend jointly, and hand each sensor
    back its own rows.  Returns the same container type (dict or list)."""
    named = isinstance(features, Mapping)
    names = list(features) if named else list(range(len(features)))
    mats = [np.asarray(features[n], dtype=np.float64) for n in names]
    if not mats:
        raise ContractError("fusion_block needs at least one sensor")
    widths = {m.shape[1] if m.ndim == 2 else None for m in mats}
    if len(widths) != 1 or None in widths:
        raise ContractError(f"sensor feature widths differ: {sorted(map(str, widths))}")
    ranges, start = [], 0
    for m in mats:
        ranges.append((start, start + m.shape[0]))
        start += m.shape[0]
    fused = attention_fuse(np.vstack(mats), weights)
    parts = [fused[a:b] for a, b in ranges]
    return dict(zip(names, parts)) if named else parts


def fusion_stages(features: SensorFeatures, stages: Sequence[FusionWeights]):
    for w in stages:
        features = fusion_block(features, w)
    return features


# -- GRU decoder -----------------------------------------------------------------------


@dataclass
class GRUWeights:
    w_ih: np.ndarray  # (3H, I) rows ordered reset, update, new
    w_hh: np.ndarray  # (3H, H)
    b_ih: np.ndarray  # (3H,)
    b_hh: np.ndarray  # (3H,)

    @property
    def hidden(self) -> int:
        return self.w_hh.shape[1]

    @classmethod
    def init(cls, rng, d_in: int, hidden: int) -> "GRUWeights":
        return cls(uniform_init(rng, hidden, (3 * hidden, d_in)), uniform_init(rng, hidden, (3 * hidden, hidden)),
                   uniform_init(rng, hidden, (3 * hidden,)), uniform_init(rng, hidden, (3 * hidden,)))

    @classmethod
    def zeros(cls, d_in: int, hidden: int) -> "GRUWeights":
        return cls(np.zeros((3 * hidden, d_in)), np.zeros((3 * hidden, hidden)),
                   np.zeros(3 * hidden), np.zeros(3 * hidden))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_cell(x, h, w: GRUWeights) -> np.ndarray:
    x, h = np.asarray(x, dtype=np.float64), np.asarray(h, dtype=np.float64)
    gi = w.w_ih @ x + w.b_ih
    gh = w.w_hh @ h + w.b_hh
    H = w.hidden
    r = _sigmoid(gi[:H] + gh[:H])
    z = _sigmoid(gi[H:2 * H] + gh[H:2 * H])
    n = np.tanh(gi[2 * H:] + r * gh[2 * H:])
    return (1.0 - z) * n + z * h


@dataclass
class DecoderWeights:
    gru: GRUWeights  # input is (previous waypoint, goal): 4 values
    head: Linear  # hidden -> 2

    @classmethod
    def init(cls, rng, hidden: int = 64) -> "DecoderWeights":
        return cls(GRUWeights.init(rng, 4, hidden), Linear.init(rng, hidden, 2))

    @classmethod
    def zeros(cls, hidden: int = 64) -> "DecoderWeights":
        return cls(GRUWeights.zeros(4, hidden), Linear(np.zeros((hidden, 2)), np.zeros(2)))


def gru_decode_waypoints(fused, goal, weights: DecoderWeights, steps: int = NUM_WAYPOINTS,
                         return_deltas: bool = False):
    """Cascaded GRU steps from the fused feature; each step emits a delta and
    waypoint t is the running sum of the deltas."""
    goal = _finite(np.asarray(goal, dtype=np.float64).reshape(2), "goal")
    h = _finite(np.asarray(fused, dtype=np.float64).reshape(-1), "fused feature")
    if h.shape[0] != weights.gru.hidden:
        raise ContractError(f"fused feature width {h.shape[0]} != GRU hidden {weights.gru.hidden}")
    wp = np.zeros(2)
    waypoints, deltas = [], []
    for _ in range(steps):
        h = gru_cell(np.concatenate([wp, goal]), h, weights.gru)
        delta = weights.head(h)
        wp = wp + delta
        deltas.append(delta)
        waypoints.append(wp)
    out = np.array(waypoints)
    return (out, np.array(deltas)) if return_deltas else out


def l1_waypoint_loss(pred, gt) -> float:
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ContractError(f"waypoint shapes differ: {pred.shape} vs {gt.shape}")
    return float(np.abs(pred - gt).sum())


# -- end-to-end toy model ---------------------------------------------------------------


def pool_grid(grid: np.ndarray, cells: int = 8) -> np.ndarray:
    """Average-pool a (C, H, W) grid to (cells*cells, C) tokens, row-major."""
    g = np.asarray(grid, dtype=np.float64)
    c, h, w = g.shape
    if h % cells or w % cells:
        raise ContractError(f"grid {h}x{w} not divisible into {cells}x{cells} cells")
    pooled = g.reshape(c, cells, h // cells, cells, w // cells).mean(axis=(2, 4))
    return pooled.reshape(c, -1).T


class ToyFusionModel:
    """Map, LiDAR and radar branches embedded to D_f, fused over four stages,
    mean-pooled and decoded to four waypoints."""

    def __init__(self, seed: int = 0, d_f: int = 64, d_qk: int = 64, hidden: int = 64,
                 stages: int = FUSION_STAGES, grid_cells: int = 8):
        rng = np.random.default_rng(seed)
        self.grid_cells = grid_cells
        self.map_mlp = MLP.init(rng, [7, d_f, d_f])
        self.lidar_embed = Linear.init(rng, 2, d_f)
        self.radar_embed = Linear.init(rng, 5, d_f)
        self.stages = [FusionWeights.init(rng, d_f, d_qk, d_f) for _ in range(stages)]
        self.to_hidden = Linear.init(rng, d_f, hidden)
        self.decoder = DecoderWeights.init(rng, hidden)

    def tokens(self, polylines, lidar_grid, radar_rows, radar_valid: int) -> Dict[str, np.ndarray]:
        return {
            "map": polyline_encode(polylines, self.map_mlp) if len(polylines) else np.empty((0, self.map_mlp.d_out)),
            "lidar": self.lidar_embed(pool_grid(lidar_grid, self.grid_cells)),
            "radar": self.radar_embed(np.asarray(radar_rows, dtype=np.float64)[:radar_valid]),
        }

    def forward(self, polylines, lidar_grid, radar_rows, radar_valid: int, goal) -> np.ndarray:
        feats = self.tokens(polylines, lidar_grid, radar_rows, radar_valid)
        feats = {k: v for k, v in feats.items() if len(v)}
        fused = fusion_stages(feats, self.stages)
        pooled = np.vstack(list(fused.values())).mean(axis=0)
        return gru_decode_waypoints(np.tanh(self.to_hidden(pooled)), goal, self.decoder)

    def tensors(self) -> Dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.map_mlp.layers):
            out[f"map_mlp.{i}.weight"], out[f"map_mlp.{i}.bias"] = layer.weight, layer.bias
        for name in ("lidar_embed", "radar_embed", "to_hidden"):
            layer = getattr(self, name)
            out[f"{name}.weight"], out[f"{name}.bias"] = layer.weight, layer.bias
        for i, w in enumerate(self.stages):
            out[f"fusion.{i}.m_q"], out[f"fusion.{i}.m_k"], out[f"fusion.{i}.m_v"] = w.m_q, w.m_k, w.m_v
        g = self.decoder.gru
        out.update({"gru.w_ih": g.w_ih, "gru.w_hh": g.w_hh, "gru.b_ih": g.b_ih, "gru.b_hh": g.b_hh,
                    "head.weight": self.decoder.head.weight, "head.bias": self.decoder.head.bias})
        return out
