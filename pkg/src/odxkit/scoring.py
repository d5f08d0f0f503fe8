"""Leaderboard-style metrics: route completion, penalty, driving score, infractions/km.

Penalties multiply: each infraction scales the coefficient P (starting at 1)
by its kind's factor.  Blocking and route deviation carry no factor; they
truncate route completion at the moment they happen instead.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from .route import Route
from .sim_harness import GOAL_TOLERANCE, INFRACTION_KINDS, InfractionEvent, read_run
from .world import WorldSnapshot

DEFAULT_COEFFICIENTS = {"collision_vehicle": 0.60, "collision_static": 0.65}
TRUNCATING_KINDS = ("blocked", "route_deviation")
REPORT_COLUMNS = ("route", "DS", "RC", "infra_per_km")


class UndefinedRateError(ValueError):
    pass


@dataclass
class RouteResult:
    route_id: str
    rc: float
    penalty: float
    ds: float
    counts: Dict[str, int] = field(default_factory=dict)
    km: float = 0.0
    policy: str = ""

    def __post_init__(self):
        if not (0.0 <= self.rc <= 100.0 and 0.0 <= self.penalty <= 1.0):
            raise ValueError("RC must be in [0, 100] and P in [0, 1]")

    @property
    def events(self) -> int:
        return sum(self.counts.values())

    @property
    def infra_per_km(self) -> float:
        return self.events / self.km if self.km > 0 else math.nan


def _counted(events: Iterable[InfractionEvent]) -> List[InfractionEvent]:
    return [e for e in events if not e.diagnostic]


def progress_profile(trace: Sequence[WorldSnapshot], route: Route,
                     back: float = 5.0, ahead: float = 25.0) -> np.ndarray:
    """Furthest progress along the route after each snapshot.

    Each position is projected only onto the route window around the
    progress so far, so a loop back or a nearby parallel stretch of the
    route cannot make progress jump; the running maximum is returned.
    """
    out = np.zeros(len(trace))
    best = 0.0
    for i, snap in enumerate(trace):
        ego = snap.ego
        s, _ = route.project(ego.x, ego.y, max(best - back, 0.0), best + ahead)
        best = max(best, s)
        out[i] = best
    return out


def route_completion(trace: Sequence[WorldSnapshot], route: Route,
                     events: Iterable[InfractionEvent] = (),
                     goal_tolerance: float = GOAL_TOLERANCE) -> float:
    if route.length <= 0:
        raise ValueError("route must have positive length")
    if not trace:
        return 0.0
    cut = min((e.time for e in _counted(events) if e.kind in TRUNCATING_KINDS), default=math.inf)
    kept = [s for s in trace if s.time <= cut] or list(trace[:1])
    progress = float(progress_profile(kept, route)[-1])
    if progress >= route.length - goal_tolerance:
        return 100.0
    return float(np.clip(100.0 * progress / route.length, 0.0, 100.0))


def infraction_penalty(events: Iterable[InfractionEvent],
                       coefficients: Optional[Mapping[str, float]] = None) -> float:
    coeffs = dict(DEFAULT_COEFFICIENTS if coefficients is None else coefficients)
    for kind, c in coeffs.items():
        if not 0.0 < c <= 1.0:
            raise ValueError(f"penalty coefficient for {kind} must be in (0, 1]")
    p = 1.0
    for e in _counted(events):
        p *= coeffs.get(e.kind, 1.0)
    return p


def driving_score(rc: float, penalty: float) -> float:
    if not 0.0 <= rc <= 100.0:
        raise ValueError("RC must be in [0, 100]")
    if not 0.0 <= penalty <= 1.0:
        raise ValueError("P must be in [0, 1]")
    return rc * penalty


def infractions_per_km(events: Iterable[InfractionEvent], km: float) -> float:
    if not km > 0:
        raise UndefinedRateError("infractions per km undefined for zero driven distance")
    return len(_counted(events)) / km


def score_run(trace, events, route: Route, route_id: str, policy: str = "",
              coefficients: Optional[Mapping[str, float]] = None,
              km: Optional[float] = None) -> RouteResult:
    from .sim_harness import driven_distance

    events = list(events)
    rc = route_completion(trace, route, events)
    p = infraction_penalty(events, coefficients)
    counts = {k: 0 for k in INFRACTION_KINDS}
    for e in _counted(events):
        counts[e.kind] = counts.get(e.kind, 0) + 1
    km = driven_distance(trace) / 1000.0 if km is None else km
    return RouteResult(route_id, rc, p, driving_score(rc, p), counts, km, policy)


def aggregate(results: Sequence[RouteResult]) -> dict:
    """Suite metrics: mean of per-route DS/RC/P; infractions over total distance."""
    if not results:
        raise ValueError("no routes to aggregate")
    total_km = sum(r.km for r in results)
    total_events = sum(r.events for r in results)
    return {
        "routes": len(results),
        "DS": float(np.mean([r.ds for r in results])),
        "RC": float(np.mean([r.rc for r in results])),
        "P": float(np.mean([r.penalty for r in results])),
        "km": total_km,
        "infractions": total_events,
        "collisions": sum(r.counts.get("collision_vehicle", 0) + r.counts.get("collision_static", 0)
                          for r in results),
        "infra_per_km": total_events / total_km if total_km > 0 else math.nan,
    }


# -- run directories and reports -------------------------------------------------------


def find_runs(root) -> List[Path]:
    return sorted(p.parent for p in Path(root).rglob("trace.jsonl") if (p.parent / "events.json").exists())


def score_directory(root, coefficients=None) -> Dict[str, List[RouteResult]]:
    """Score every run under ``root``; results grouped by policy, ordered by route id."""
    by_policy: Dict[str, List[RouteResult]] = {}
    for run_dir in find_runs(root):
        trace, events, route, summary = read_run(run_dir)
        route_id = summary.get("scenario", run_dir.name)
        policy = summary.get("policy", "")
        km = summary.get("driven_km")
        by_policy.setdefault(policy, []).append(
            score_run(trace, events, route, route_id, policy, coefficients, km))
    for results in by_policy.values():
        results.sort(key=lambda r: r.route_id)
    return dict(sorted(by_policy.items()))


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.4f}"


def report_rows(by_policy: Mapping[str, Sequence[RouteResult]]) -> List[List[str]]:
    multi = len(by_policy) > 1
    rows = []
    for policy, results in by_policy.items():
        prefix = f"{policy}/" if multi else ""
        for r in results:
            rows.append([prefix + r.route_id, _fmt(r.ds), _fmt(r.rc), _fmt(r.infra_per_km)])
        agg = aggregate(results)
        rows.append([prefix + "aggregate", _fmt(agg["DS"]), _fmt(agg["RC"]), _fmt(agg["infra_per_km"])])
    return rows


def report_csv(by_policy) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    writer.writerows(report_rows(by_policy))
    return buf.getvalue()


def report_json(by_policy) -> dict:
    out = {}
    for policy, results in by_policy.items():
        routes = []
        for r in results:
            d = asdict(r)
            d["infra_per_km"] = None if math.isnan(r.infra_per_km) else r.infra_per_km
            routes.append(d)
        agg = aggregate(results)
        agg["infra_per_km"] = None if math.isnan(agg["infra_per_km"]) else agg["infra_per_km"]
        out[policy or "default"] = {"aggregate": agg, "routes": routes}
    return {"columns": list(REPORT_COLUMNS), "policies": out}


def plot_report(by_policy, path) -> None:
    """Grouped bars of aggregate DS, RC and infractions/km per policy (SVG, reproducible)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "odxkit"
    names = list(by_policy)
    aggs = [aggregate(by_policy[n]) for n in names]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8, 3.5))
    x = np.arange(len(names))
    ax1.bar(x - 0.2, [a["DS"] for a in aggs], 0.4, label="DS")
    ax1.bar(x + 0.2, [a["RC"] for a in aggs], 0.4, label="RC")
    ax1.set_xticks(x, names)
    ax1.set_ylim(0, 105)
    ax1.legend()
    ax1.set_title("score (%)")
    ax2.bar(x, [0.0 if math.isnan(a["infra_per_km"]) else a["infra_per_km"] for a in aggs], 0.5, color="C3")
    ax2.set_xticks(x, names)
    ax2.set_title("infractions / km")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def write_reports(by_policy, csv_path=None, json_path=None, plot_path=None) -> None:
    if csv_path:
        Path(csv_path).write_text(report_csv(by_policy), encoding="utf-8")
    if json_path:
        Path(json_path).write_text(json.dumps(report_json(by_policy), indent=2, sort_keys=True) + "\n")
    if plot_path:
        plot_report(by_policy, plot_path)
