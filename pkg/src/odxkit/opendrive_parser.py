"""ASAM OpenDRIVE (1.4 to 1.6) parsing into :class:`RoadNetwork`."""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

from .map_model import (
    GeometrySegment,
    Junction,
    Lane,
    LaneLinkRef,
    LaneSection,
    Road,
    RoadLink,
    RoadNetwork,
    WidthRecord,
)

# Records the parser reads; anything else is reported as a warning.
_IGNORED = {
    "road": {"type", "elevationProfile", "lateralProfile", "objects", "signals", "surface", "railroad"},
    "lane": {"speed", "material", "access", "height", "rule", "visibility", "border", "userData"},
    "lanes": {"laneOffset"},
    "OpenDRIVE": {"controller", "station", "userData"},
    "junction": {"controller", "priority", "surface", "userData"},
}

_ATTR_SYNONYMS = {
    "hdg": ("hdg", "heading"),
    "sOffset": ("sOffset", "s"),
    "elementId": ("elementId", "elementID", "id"),
    "contactPoint": ("contactPoint", "contact"),
    "connectingRoad": ("connectingRoad", "connectingroad"),
    "incomingRoad": ("incomingRoad", "incomingroad"),
    "laneChange": ("laneChange", "lanechange"),
}


class OpenDriveSyntaxError(ValueError):
    """Input is not well-formed XML or not an OpenDRIVE document."""


class NetworkRejected(ValueError):
    """Strict-mode parse produced error-severity issues."""

    def __init__(self, issues):
        self.issues = list(issues)
        errors = [i for i in self.issues if i.severity == "error"]
        super().__init__(f"{len(errors)} error issue(s); first: {errors[0].message if errors else '?'}")


@dataclass(frozen=True)
class ParseIssue:
    severity: str  # "error" or "warning"
    locator: str
    message: str

    def to_dict(self) -> dict:
        return {"severity": self.severity, "locator": self.locator, "message": self.message}


class _MissingAttribute(Exception):
    pass


class _Parser:
    def __init__(self, strict: bool):
        self.strict = strict
        self.issues: List[ParseIssue] = []

    def error(self, loc: str, msg: str) -> None:
        self.issues.append(ParseIssue("error", loc, msg))

    def warn(self, loc: str, msg: str) -> None:
        self.issues.append(ParseIssue("warning", loc, msg))

    def unsupported(self, loc: str, msg: str) -> None:
        (self.error if self.strict else self.warn)(loc, msg)

    def attr(self, el, name: str, loc: str, default=None, required=False) -> Optional[str]:
        for key in _ATTR_SYNONYMS.get(name, (name,)):
            if key in el.attrib:
                return el.attrib[key]
        if required:
            self.error(loc, f"missing mandatory attribute '{name}'")
            raise _MissingAttribute(name)
        return default

    def num(self, el, name: str, loc: str, default=None, required=False) -> Optional[float]:
        raw = self.attr(el, name, loc, None, required)
        if raw is None:
            return default
        try:
            value = float(raw)
        except ValueError:
            self.error(loc, f"attribute '{name}'={raw!r} is not a number")
            raise _MissingAttribute(name) from None
        if not math.isfinite(value):
            self.error(loc, f"attribute '{name}' is not finite")
            raise _MissingAttribute(name)
        return value

    def report_unknown(self, el, kind: str, known: set, loc: str) -> None:
        for child in el:
            if child.tag in known:
                continue
            if child.tag in _IGNORED.get(kind, set()):
                self.warn(f"{loc}/{child.tag}", f"<{child.tag}> is not modelled; ignored")
            else:
                self.warn(f"{loc}/{child.tag}", f"unknown element <{child.tag}> ignored")

    # -- document ---------------------------------------------------------

    def parse(self, root) -> RoadNetwork:
        loc = "/OpenDRIVE"
        self.report_unknown(root, "OpenDRIVE", {"header", "road", "junction"}, loc)
        roads: List[Road] = []
        seen = set()
        for i, el in enumerate(root.findall("road")):
            road = self.road(el, f"{loc}/road[{i}]")
            if road is None:
                continue
            if road.id in seen:
                self.error(f"{loc}/road[@id='{road.id}']", f"duplicate road id {road.id!r}")
                continue
            seen.add(road.id)
            roads.append(road)
        junctions = []
        for i, el in enumerate(root.findall("junction")):
            j = self.junction(el, f"{loc}/junction[{i}]")
            if j is not None:
                junctions.append(j)
        return RoadNetwork(roads=tuple(roads), junctions=tuple(junctions))

    def road(self, el, loc: str) -> Optional[Road]:
        try:
            rid = self.attr(el, "id", loc, required=True)
            loc = f"/OpenDRIVE/road[@id='{rid}']"
            length = self.num(el, "length", loc, required=True)
        except _MissingAttribute:
            return None
        if length < 0:
            self.error(loc, f"negative road length {length}")
            return None
        junction = self.attr(el, "junction", loc, "-1")
        junction_id = None if junction in (None, "", "-1") else junction
        self.report_unknown(el, "road", {"link", "planView", "lanes"}, loc)

        predecessor = successor = None
        link = el.find("link")
        if link is not None:
            predecessor = self.road_link(link.find("predecessor"), f"{loc}/link/predecessor")
            successor = self.road_link(link.find("successor"), f"{loc}/link/successor")
            self.report_unknown(link, "link", {"predecessor", "successor", "neighbor"}, f"{loc}/link")

        plan_view = el.find("planView")
        geoms: List[GeometrySegment] = []
        if plan_view is None:
            self.error(loc, "road has no <planView>")
        else:
            self.report_unknown(plan_view, "planView", {"geometry"}, f"{loc}/planView")
            for gi, g in enumerate(plan_view.findall("geometry")):
                seg = self.geometry(g, f"{loc}/planView/geometry[{gi}]")
                if seg is not None:
                    geoms.append(seg)
        geoms.sort(key=lambda g: g.s0)
        if geoms:
            covered = geoms[-1].s1 - geoms[0].s0
            if abs(covered - length) > 1e-3:
                self.warn(f"{loc}/planView", f"plan view covers {covered:.6f} m but road length is {length}")

        sections: List[LaneSection] = []
        lanes = el.find("lanes")
        if lanes is None:
            self.error(loc, "road has no <lanes>")
        else:
            self.report_unknown(lanes, "lanes", {"laneSection"}, f"{loc}/lanes")
            for si, sec in enumerate(lanes.findall("laneSection")):
                parsed = self.lane_section(sec, f"{loc}/lanes/laneSection[{si}]", junction_id is not None)
                if parsed is not None:
                    sections.append(parsed)
        sections.sort(key=lambda s: s.s)
        return Road(
            id=rid, length=length, plan_view=tuple(geoms), lane_sections=tuple(sections),
            junction_id=junction_id, predecessor=predecessor, successor=successor,
            name=el.attrib.get("name", ""),
        )

    def road_link(self, el, loc: str) -> Optional[RoadLink]:
        if el is None:
            return None
        try:
            etype = self.attr(el, "elementType", loc, required=True)
            eid = self.attr(el, "elementId", loc, required=True)
        except _MissingAttribute:
            return None
        if etype not in ("road", "junction"):
            self.warn(loc, f"unsupported link elementType {etype!r}")
            return None
        return RoadLink(etype, eid, self.attr(el, "contactPoint", loc))

    def geometry(self, el, loc: str) -> Optional[GeometrySegment]:
        try:
            s0 = self.num(el, "s", loc, required=True)
            x0 = self.num(el, "x", loc, required=True)
            y0 = self.num(el, "y", loc, required=True)
            hdg = self.num(el, "hdg", loc, required=True)
            length = self.num(el, "length", loc, required=True)
        except _MissingAttribute:
            return None
        if length <= 0:
            self.error(loc, f"geometry length {length} must be > 0")
            return None
        kinds = [c for c in el]
        if len(kinds) != 1:
            self.error(loc, f"geometry must contain exactly one primitive, found {len(kinds)}")
            return None
        prim = kinds[0]
        ploc = f"{loc}/{prim.tag}"
        base = dict(s0=s0, x0=x0, y0=y0, hdg0=hdg, length=length)
        try:
            if prim.tag == "line":
                return GeometrySegment(kind="line", **base)
            if prim.tag == "arc":
                k = self.num(prim, "curvature", ploc, required=True)
                if k == 0.0:
                    self.warn(ploc, "arc with zero curvature treated as line")
                    return GeometrySegment(kind="line", **base)
                return GeometrySegment(kind="arc", curvature=k, **base)
            if prim.tag == "spiral":
                self.unsupported(ploc, "spiral approximated by constant-curvature chords of 0.1 m")
                k0 = self.num(prim, "curvStart", ploc, required=True)
                k1 = self.num(prim, "curvEnd", ploc, required=True)
                return GeometrySegment(kind="spiral", curvature=k0, curvature_end=k1, **base)
            if prim.tag == "paramPoly3":
                coeffs = tuple(self.num(prim, n, ploc, 0.0) for n in
                               ("aU", "bU", "cU", "dU", "aV", "bV", "cV", "dV"))
                prange = self.attr(prim, "pRange", ploc, "normalized")
                if prange not in ("normalized", "arcLength"):
                    self.error(ploc, f"unknown pRange {prange!r}")
                    return None
                return GeometrySegment(kind="param_poly3", poly=coeffs,
                                       normalized=prange == "normalized", **base)
            if prim.tag == "poly3":
                self.unsupported(ploc, "deprecated poly3 evaluated with u as arclength")
                a, b, c, d = (self.num(prim, n, ploc, 0.0) for n in "abcd")
                return GeometrySegment(kind="param_poly3", poly=(0.0, 1.0, 0.0, 0.0, a, b, c, d),
                                       normalized=False, **base)
        except _MissingAttribute:
            return None
        self.unsupported(ploc, f"unsupported geometry <{prim.tag}>")
        return None

    def lane_section(self, el, loc: str, in_junction: bool) -> Optional[LaneSection]:
        try:
            s = self.num(el, "s", loc, required=True)
        except _MissingAttribute:
            return None
        self.report_unknown(el, "laneSection", {"left", "center", "right"}, loc)
        lanes: List[Lane] = []
        for side in ("left", "center", "right"):
            group = el.find(side)
            if group is None:
                continue
            self.report_unknown(group, side, {"lane"}, f"{loc}/{side}")
            for li, lane_el in enumerate(group.findall("lane")):
                lane = self.lane(lane_el, f"{loc}/{side}/lane[{li}]", side, in_junction)
                if lane is not None:
                    lanes.append(lane)
        ids = [lane.id for lane in lanes]
        if len(ids) != len(set(ids)):
            self.error(loc, "duplicate lane ids in section")
        lanes.sort(key=lambda lane: lane.id)
        return LaneSection(s=s, lanes=tuple(lanes))

    def lane(self, el, loc: str, side: str, in_junction: bool) -> Optional[Lane]:
        try:
            lid = int(float(self.attr(el, "id", loc, required=True)))
        except _MissingAttribute:
            return None
        except ValueError:
            self.error(loc, "lane id is not an integer")
            return None
        loc = f"{loc}[@id='{lid}']"
        expected = {"left": lid > 0, "center": lid == 0, "right": lid < 0}[side]
        if not expected:
            self.error(loc, f"lane id {lid} inconsistent with <{side}> group")
        ltype = (self.attr(el, "type", loc, "none") or "none")
        self.report_unknown(el, "lane", {"link", "width", "roadMark"}, loc)

        widths: List[WidthRecord] = []
        for wi, w in enumerate(el.findall("width")):
            wloc = f"{loc}/width[{wi}]"
            try:
                widths.append(WidthRecord(
                    self.num(w, "sOffset", wloc, required=True),
                    self.num(w, "a", wloc, required=True),
                    self.num(w, "b", wloc, 0.0), self.num(w, "c", wloc, 0.0), self.num(w, "d", wloc, 0.0),
                ))
            except _MissingAttribute:
                continue
        widths.sort(key=lambda w: w.s_offset)
        if lid != 0 and not widths:
            self.warn(loc, "lane has no <width> records; width is zero")

        permission = "none"
        marks = el.findall("roadMark")
        if marks:
            first = min(marks, key=lambda m: float(m.attrib.get("sOffset", 0.0) or 0.0))
            raw = self.attr(first, "laneChange", f"{loc}/roadMark", "none")
            permission = _lane_change(raw, lid)
            if permission is None:
                self.warn(f"{loc}/roadMark", f"unknown laneChange value {raw!r}; using none")
                permission = "none"

        pred = succ = None
        link = el.find("link")
        if link is not None:
            for tag in ("predecessor", "successor"):
                node = link.find(tag)
                if node is None:
                    continue
                try:
                    value = int(float(self.attr(node, "id", f"{loc}/link/{tag}", required=True)))
                except (_MissingAttribute, ValueError):
                    continue
                if tag == "predecessor":
                    pred = value
                else:
                    succ = value
        return Lane(
            id=lid, type=ltype, width_polys=tuple(widths), lane_change_permission=permission,
            junction_member=in_junction, link=LaneLinkRef(pred, succ),
        )

    def junction(self, el, loc: str) -> Optional[Junction]:
        try:
            jid = self.attr(el, "id", loc, required=True)
        except _MissingAttribute:
            return None
        loc = f"/OpenDRIVE/junction[@id='{jid}']"
        self.report_unknown(el, "junction", {"connection"}, loc)
        connecting, incoming = [], []
        for ci, c in enumerate(el.findall("connection")):
            cloc = f"{loc}/connection[{ci}]"
            try:
                conn = self.attr(c, "connectingRoad", cloc, required=True)
            except _MissingAttribute:
                continue
            inc = self.attr(c, "incomingRoad", cloc)
            if conn not in connecting:
                connecting.append(conn)
            if inc is not None and inc not in incoming:
                incoming.append(inc)
        return Junction(jid, tuple(connecting), tuple(incoming))


def _lane_change(raw: Optional[str], lane_id: int) -> Optional[str]:
    raw = (raw or "none").strip()
    if raw in ("none", "both", "left", "right"):
        return raw
    # increase/decrease refer to the lane id direction; right lanes drive along +s.
    if raw == "increase":
        return "left" if lane_id < 0 else "right"
    if raw == "decrease":
        return "right" if lane_id < 0 else "left"
    return None


def _strip_namespaces(root) -> None:
    for el in root.iter():
        if isinstance(el.tag, str) and "}" in el.tag:
            el.tag = el.tag.split("}", 1)[1]


def parse_opendrive(xml_text, strict: bool = False) -> Tuple[RoadNetwork, List[ParseIssue]]:
    """Parse OpenDRIVE XML text.

    Returns the network and the issues found while mapping.  Elements that are
    not modelled are reported as warnings.  With ``strict=True`` approximated
    or unsupported geometry becomes an error, and any error raises
    :class:`NetworkRejected`.
    """
    if isinstance(xml_text, bytes):
        xml_text = xml_text.decode("utf-8")
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise OpenDriveSyntaxError(f"malformed XML: {exc}") from exc
    _strip_namespaces(root)
    if root.tag != "OpenDRIVE":
        raise OpenDriveSyntaxError(f"root element is <{root.tag}>, expected <OpenDRIVE>")
    parser = _Parser(strict)
    network = parser.parse(root)
    if strict and any(i.severity == "error" for i in parser.issues):
        raise NetworkRejected(parser.issues)
    return network, parser.issues


def load_opendrive(path, strict: bool = False) -> Tuple[RoadNetwork, List[ParseIssue]]:
    return parse_opendrive(Path(path).read_text(encoding="utf-8"), strict=strict)


# -- validation -------------------------------------------------------------


def _cubic_min(rec: WidthRecord, t0: float, t1: float) -> Tuple[float, float]:
    """Minimum of the width cubic over local [t0, t1]; returns (value, t)."""
    cands = [t0, t1]
    a, b, c = 3 * rec.d, 2 * rec.c, rec.b
    if abs(a) > 1e-15:
        disc = b * b - 4 * a * c
        if disc >= 0:
            r = math.sqrt(disc)
            cands += [(-b - r) / (2 * a), (-b + r) / (2 * a)]
    elif abs(b) > 1e-15:
        cands.append(-c / b)
    cands = [t for t in cands if t0 <= t <= t1]
    return min((rec(t), t) for t in cands)


def _link_section(network: RoadNetwork, link: RoadLink) -> Optional[LaneSection]:
    if link is None or link.element_type != "road" or not network.has_road(link.element_id):
        return None
    road = network.road(link.element_id)
    if not road.lane_sections:
        return None
    return road.lane_sections[-1] if link.contact_point == "end" else road.lane_sections[0]


def validate_network(network: RoadNetwork) -> List[ParseIssue]:
    """Diagnostics for dangling links, degenerate geometry, negative widths and
    overlapping lane sections.  Never raises."""
    issues: List[ParseIssue] = []
    junction_ids = {j.id for j in network.junctions}

    def err(loc, msg):
        issues.append(ParseIssue("error", loc, msg))

    for road in network.roads:
        loc = f"/OpenDRIVE/road[@id='{road.id}']"
        for name, link in (("predecessor", road.predecessor), ("successor", road.successor)):
            if link is None:
                continue
            known = network.has_road(link.element_id) if link.element_type == "road" \
                else link.element_id in junction_ids
            if not known:
                err(f"{loc}/link/{name}",
                    f"road {road.id} {name} references missing {link.element_type} {link.element_id}")
        if road.junction_id is not None and road.junction_id not in junction_ids:
            err(loc, f"road {road.id} belongs to missing junction {road.junction_id}")

        prev = None
        for gi, seg in enumerate(road.plan_view):
            gloc = f"{loc}/planView/geometry[{gi}]"
            if seg.length <= 0:
                err(gloc, f"zero-length geometry at s={seg.s0}")
            if seg.kind == "arc" and seg.curvature == 0:
                err(gloc, "arc with zero curvature")
            if prev is not None:
                if abs(seg.s0 - prev.s1) > 1e-6:
                    err(gloc, f"plan view gap in s: {prev.s1} -> {seg.s0}")
                else:
                    px, py, _ = prev.pose_at(prev.length)
                    gap = math.hypot(seg.x0 - px, seg.y0 - py)
                    if gap > 1e-3:
                        issues.append(ParseIssue("warning", gloc, f"position gap {gap:.4g} m at s={seg.s0}"))
            prev = seg
        if road.plan_view:
            if abs(road.plan_view[0].s0) > 1e-6 or abs(road.plan_view[-1].s1 - road.length) > 1e-6:
                err(f"{loc}/planView", "plan view does not cover [0, length]")

        sections = road.lane_sections
        for si, sec in enumerate(sections):
            sloc = f"{loc}/lanes/laneSection[{si}]"
            if sec.s < -1e-9 or sec.s > road.length + 1e-9:
                err(sloc, f"lane section start {sec.s} outside road [0, {road.length}]")
            if si > 0 and sec.s <= sections[si - 1].s:
                err(sloc, f"lane section at s={sec.s} overlaps previous section at s={sections[si - 1].s}")
            start, end = road.section_bounds(si)
            extent = max(end - start, 0.0)
            for lane in sec.lanes:
                lloc = f"{sloc}/lane[@id='{lane.id}']"
                recs = lane.width_polys
                for wi, rec in enumerate(recs):
                    t1 = (recs[wi + 1].s_offset if wi + 1 < len(recs) else extent) - rec.s_offset
                    if t1 < 0:
                        continue
                    value, t = _cubic_min(rec, 0.0, t1)
                    if value < -1e-9:
                        err(f"{lloc}/width[{wi}]",
                            f"lane {lane.id} width {value:.6g} < 0 at s={start + rec.s_offset + t:.6g}")
                for name in ("predecessor", "successor"):
                    target = getattr(lane.link, name)
                    if target is None:
                        continue
                    if name == "successor":
                        other = sections[si + 1] if si + 1 < len(sections) else _link_section(network, road.successor)
                        boundary = si + 1 < len(sections) or (road.successor and road.successor.element_type == "road")
                    else:
                        other = sections[si - 1] if si > 0 else _link_section(network, road.predecessor)
                        boundary = si > 0 or (road.predecessor and road.predecessor.element_type == "road")
                    if boundary and (other is None or not other.has_lane(target)):
                        err(f"{lloc}/link/{name}", f"lane {lane.id} {name} {target} does not resolve")
    for j in network.junctions:
        jloc = f"/OpenDRIVE/junction[@id='{j.id}']"
        for rid in j.connecting_roads + j.incoming_roads:
            if not network.has_road(rid):
                err(jloc, f"junction {j.id} references missing road {rid}")
    return issues


# -- summary round trip ------------------------------------------------------


def network_summary(network: RoadNetwork) -> dict:
    """JSON-ready description of the full network plus aggregate counts."""
    roads = []
    for r in network.roads:
        roads.append({
            "id": r.id, "length": r.length, "junction": r.junction_id, "name": r.name,
            "predecessor": _link_dict(r.predecessor), "successor": _link_dict(r.successor),
            "geometry": [{
                "s": g.s0, "x": g.x0, "y": g.y0, "hdg": g.hdg0, "length": g.length, "kind": g.kind,
                "curvature": g.curvature, "curvature_end": g.curvature_end,
                "poly": list(g.poly), "normalized": g.normalized,
            } for g in r.plan_view],
            "sections": [{
                "s": sec.s,
                "lanes": [{
                    "id": lane.id, "type": lane.type, "lane_change": lane.lane_change_permission,
                    "junction_member": lane.junction_member,
                    "predecessor": lane.link.predecessor, "successor": lane.link.successor,
                    "widths": [[w.s_offset, w.a, w.b, w.c, w.d] for w in lane.width_polys],
                } for lane in sec.lanes],
            } for sec in r.lane_sections],
        })
    lanes = list(network.iter_lanes())
    return {
        "roads": roads,
        "junctions": [{"id": j.id, "connecting_roads": list(j.connecting_roads),
                       "incoming_roads": list(j.incoming_roads)} for j in network.junctions],
        "counts": {
            "roads": len(network.roads),
            "lanes": sum(1 for _, _, lane in lanes if lane.id != 0),
            "driving_lanes": sum(1 for _, _, lane in lanes if lane.is_driving),
            "junctions": len(network.junctions),
        },
        "total_centerline_length": total_centerline_length(network),
    }


def _link_dict(link: Optional[RoadLink]):
    if link is None:
        return None
    return {"element_type": link.element_type, "element_id": link.element_id,
            "contact_point": link.contact_point}


def network_from_summary(summary: dict) -> RoadNetwork:
    def link(d):
        return None if d is None else RoadLink(d["element_type"], d["element_id"], d.get("contact_point"))

    roads = []
    for r in summary["roads"]:
        geoms = tuple(GeometrySegment(
            s0=g["s"], x0=g["x"], y0=g["y"], hdg0=g["hdg"], length=g["length"], kind=g["kind"],
            curvature=g["curvature"], curvature_end=g["curvature_end"], poly=tuple(g["poly"]),
            normalized=g["normalized"]) for g in r["geometry"])
        sections = tuple(LaneSection(s=sec["s"], lanes=tuple(Lane(
            id=lane["id"], type=lane["type"], lane_change_permission=lane["lane_change"],
            junction_member=lane["junction_member"],
            link=LaneLinkRef(lane["predecessor"], lane["successor"]),
            width_polys=tuple(WidthRecord(*w) for w in lane["widths"]),
        ) for lane in sec["lanes"])) for sec in r["sections"])
        roads.append(Road(id=r["id"], length=r["length"], plan_view=geoms, lane_sections=sections,
                          junction_id=r["junction"], predecessor=link(r["predecessor"]),
                          successor=link(r["successor"]), name=r.get("name", "")))
    junctions = tuple(Junction(j["id"], tuple(j["connecting_roads"]), tuple(j["incoming_roads"]))
                      for j in summary["junctions"])
    return RoadNetwork(tuple(roads), junctions)


def total_centerline_length(network: RoadNetwork) -> float:
    """Sum over driving lanes of the arclength of the section each occupies."""
    total = 0.0
    for road in network.roads:
        for idx, sec in enumerate(road.lane_sections):
            start, end = road.section_bounds(idx)
            total += max(end - start, 0.0) * sum(1 for lane in sec.lanes if lane.is_driving)
    return total

