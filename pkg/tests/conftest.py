import math
from pathlib import Path

import pytest

from odxkit.map_model import GeometrySegment, Lane, LaneSection, Road, RoadNetwork, WidthRecord
from odxkit.opendrive_parser import load_opendrive

ROOT = Path(__file__).resolve().parents[1]
MAPS = ROOT / "src" / "odxkit" / "data" / "maps"
SCENARIOS = ROOT / "src" / "odxkit" / "data" / "scenarios"
FIXTURES = Path(__file__).resolve().parent / "fixtures"
MAP_NAMES = ("minimal", "straight", "curved", "highway_merge", "junction4")

_criteria = []


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(_criteria):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} ({detail})")


@pytest.fixture
def criterion():
    """Record a criterion verdict; the line is printed now and in the summary."""

    def record(number, title, passed, detail=""):
        _criteria.append((number, title, bool(passed), detail))
        print(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} ({detail})")
        return passed

    return record


@pytest.fixture(scope="session")
def networks():
    return {name: load_opendrive(MAPS / f"{name}.xodr")[0] for name in MAP_NAMES}


def lane(lid, width=3.5, change="none", ltype="driving", junction=False):
    return Lane(lid, ltype, (WidthRecord(0.0, width),), change, junction)


def straight_network(length=100.0, right=(3.5,), left=(), hdg=0.0, x0=0.0, y0=0.0):
    lanes = [lane(-(i + 1), w) for i, w in enumerate(right)] + [lane(i + 1, w) for i, w in enumerate(left)]
    geo = GeometrySegment(0.0, x0, y0, hdg, length)
    return RoadNetwork((Road("1", length, (geo,), (LaneSection(0.0, tuple(lanes)),)),))


def arc_road(curvature, length=None, right=(2.0,)):
    length = length if length is not None else abs(math.pi / 2 / curvature)
    geo = GeometrySegment(0.0, 0.0, 0.0, 0.0, length, "arc", curvature)
    lanes = tuple(lane(-(i + 1), w) for i, w in enumerate(right))
    return Road("1", length, (geo,), (LaneSection(0.0, lanes),))
