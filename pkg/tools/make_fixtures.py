"""Regenerate the bundled .xodr fixtures.

    python tools/make_fixtures.py
"""

import math
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
MAPS = ROOT / "src" / "odxkit" / "data" / "maps"
TEST_FIXTURES = ROOT / "tests" / "fixtures"

HEADER = ('<?xml version="1.0" standalone="yes"?>\n'
          '<OpenDRIVE>\n  <header revMajor="1" revMinor="{minor}" name="{name}" version="1.00"/>\n')


def geom(s, x, y, hdg, length, body="<line/>"):
    return (f'      <geometry s="{s!r}" x="{x!r}" y="{y!r}" hdg="{hdg!r}" length="{length!r}">'
            f"{body}</geometry>\n")


def lane(lid, width=3.5, ltype="driving", change="none", widths=None, link=""):
    if widths is None:
        widths = [(0.0, width, 0.0, 0.0, 0.0)]
    w = "".join(f'<width sOffset="{s!r}" a="{a!r}" b="{b!r}" c="{c!r}" d="{d!r}"/>'
                for s, a, b, c, d in widths)
    mark = f'<roadMark sOffset="0" type="solid" laneChange="{change}"/>'
    return f'          <lane id="{lid}" type="{ltype}" level="false">{link}{w}{mark}</lane>\n'


def center():
    return '          <lane id="0" type="none" level="false"><roadMark sOffset="0" type="solid"/></lane>\n'


def section(s, left=(), right=()):
    out = f'      <laneSection s="{s!r}">\n'
    if left:
        out += "        <left>\n" + "".join(left) + "        </left>\n"
    out += "        <center>\n" + center() + "        </center>\n"
    if right:
        out += "        <right>\n" + "".join(right) + "        </right>\n"
    return out + "      </laneSection>\n"


def road(rid, length, geoms, sections, junction="-1", link=""):
    return (f'  <road name="r{rid}" length="{length!r}" id="{rid}" junction="{junction}">\n'
            f"    <link>{link}</link>\n"
            "    <planView>\n" + "".join(geoms) + "    </planView>\n"
            "    <lanes>\n" + "".join(sections) + "    </lanes>\n  </road>\n")


def doc(name, body, minor=4):
    return HEADER.format(name=name, minor=minor) + body + "</OpenDRIVE>\n"


def minimal():
    return doc("minimal", road("1", 100.0, [geom(0.0, 0.0, 0.0, 0.0, 100.0)],
                               [section(0.0, right=[lane(-1)])]))


def straight():
    right = [lane(-1, change="both"), lane(-2, change="both"), lane(-3, width=2.0, ltype="sidewalk")]
    return doc("straight", road("1", 300.0, [geom(0.0, 0.0, 0.0, 0.0, 300.0)],
                                [section(0.0, left=[lane(1)], right=right)]), minor=5)


def curved():
    k = 0.02
    arc_len = math.pi / 2 / k
    r = 1 / k
    g = [geom(0.0, 0.0, 0.0, 0.0, 60.0),
         geom(60.0, 60.0, 0.0, 0.0, arc_len, f'<arc curvature="{k!r}"/>'),
         geom(60.0 + arc_len, 60.0 + r, r, math.pi / 2, 60.0)]
    right = [lane(-1, change="both"), lane(-2, change="both")]
    return doc("curved", road("1", 120.0 + arc_len, g, [section(0.0, right=right)]))


def highway_merge():
    # three right lanes; lane -3 tapers to zero width over 60 m, then two lanes
    taper = 60.0
    w = 3.5
    cubic = (0.0, w, 0.0, -3 * w / taper ** 2, 2 * w / taper ** 3)
    sec0 = section(0.0, right=[lane(-1, change="both", link='<link><successor id="-1"/></link>'),
                               lane(-2, change="both", link='<link><successor id="-2"/></link>'),
                               lane(-3, change="left", link='<link><successor id="-3"/></link>')])
    sec1 = section(150.0, right=[
        lane(-1, change="both", link='<link><predecessor id="-1"/><successor id="-1"/></link>'),
        lane(-2, change="both", link='<link><predecessor id="-2"/><successor id="-2"/></link>'),
        lane(-3, change="left", widths=[cubic], link='<link><predecessor id="-3"/></link>')])
    sec2 = section(150.0 + taper, right=[
        lane(-1, change="both", link='<link><predecessor id="-1"/></link>'),
        lane(-2, change="both", link='<link><predecessor id="-2"/></link>')])
    return doc("highway_merge", road("1", 400.0, [geom(0.0, 0.0, 0.0, 0.0, 400.0)], [sec0, sec1, sec2]),
               minor=6)


def junction4():
    arm = 100.0
    half = 10.0
    two_way = [lane(1)], [lane(-1)]
    body = ""
    # arms: 1 west (eastbound +s), 2 east, 3 south (northbound +s), 4 north
    body += road("1", arm, [geom(0.0, -half - arm, 0.0, 0.0, arm)], [section(0.0, *two_way)],
                 link='<successor elementType="junction" elementId="100"/>')
    body += road("2", arm, [geom(0.0, half, 0.0, 0.0, arm)], [section(0.0, *two_way)],
                 link='<predecessor elementType="junction" elementId="100"/>')
    body += road("3", arm, [geom(0.0, 0.0, -half - arm, math.pi / 2, arm)], [section(0.0, *two_way)],
                 link='<successor elementType="junction" elementId="100"/>')
    body += road("4", arm, [geom(0.0, 0.0, half, math.pi / 2, arm)], [section(0.0, *two_way)],
                 link='<predecessor elementType="junction" elementId="100"/>')
    turn = math.pi / 2 * half

    def conn(rid, inc, out, g, length, lanes, out_contact="start"):
        link = (f'<predecessor elementType="road" elementId="{inc}" contactPoint="end"/>'
                f'<successor elementType="road" elementId="{out}" contactPoint="{out_contact}"/>')
        return road(rid, length, [g], [section(0.0, right=lanes)], junction="100", link=link)

    body += conn("101", "1", "2", geom(0.0, -half, 0.0, 0.0, 2 * half), 2 * half,
                 [lane(-1, change="both")])
    body += conn("102", "3", "4", geom(0.0, 0.0, -half, math.pi / 2, 2 * half), 2 * half,
                 [lane(-1, change="both")])
    body += conn("103", "1", "3", geom(0.0, -half, 0.0, 0.0, turn, f'<arc curvature="{-1 / half!r}"/>'),
                 turn, [lane(-1)], out_contact="end")
    body += conn("104", "1", "4", geom(0.0, -half, 0.0, 0.0, turn, f'<arc curvature="{1 / half!r}"/>'),
                 turn, [lane(-1)])
    body += ('  <junction id="100" name="cross">\n'
             '    <connection id="0" incomingRoad="1" connectingRoad="101" contactPoint="start">'
             '<laneLink from="-1" to="-1"/></connection>\n'
             '    <connection id="1" incomingRoad="3" connectingRoad="102" contactPoint="start">'
             '<laneLink from="-1" to="-1"/></connection>\n'
             '    <connection id="2" incomingRoad="1" connectingRoad="103" contactPoint="start">'
             '<laneLink from="-1" to="-1"/></connection>\n'
             '    <connection id="3" incomingRoad="1" connectingRoad="104" contactPoint="start">'
             '<laneLink from="-1" to="-1"/></connection>\n'
             "  </junction>\n")
    return doc("junction4", body)


def broken_link():
    return doc("broken_link", road("1", 50.0, [geom(0.0, 0.0, 0.0, 0.0, 50.0)],
                                   [section(0.0, right=[lane(-1)])],
                                   link='<successor elementType="road" elementId="999" contactPoint="start"/>'))


def negative_width():
    # w(ds) = ds^2 - 4 ds + 3.5, minimum -0.5 at ds = 2
    return doc("negative_width", road("1", 10.0, [geom(0.0, 0.0, 0.0, 0.0, 10.0)],
                                      [section(0.0, right=[lane(-1, widths=[(0.0, 3.5, -4.0, 1.0, 0.0)])])]))


def _clothoid_end(k0, k1, length, n=200000):
    x = y = 0.0
    h = 0.0
    step = length / n
    for i in range(n):
        t = (i + 0.5) * step
        hm = k0 * t + 0.5 * (k1 - k0) / length * t * t
        x += math.cos(hm) * step
        y += math.sin(hm) * step
    h = k0 * length + 0.5 * (k1 - k0) * length
    return x, y, h


def spiral_road():
    x1, y1, h1 = _clothoid_end(0.0, 0.05, 20.0)
    g = [geom(0.0, 0.0, 0.0, 0.0, 20.0, '<spiral curvStart="0.0" curvEnd="0.05"/>'),
         geom(20.0, x1, y1, h1, 10.0,
              '<paramPoly3 aU="0" bU="10" cU="0" dU="0" aV="0" bV="0" cV="0" dV="0" pRange="normalized"/>')]
    return doc("spiral", road("1", 30.0, g, [section(0.0, right=[lane(-1)])]))


def main():
    MAPS.mkdir(parents=True, exist_ok=True)
    TEST_FIXTURES.mkdir(parents=True, exist_ok=True)
    for name, fn in (("minimal", minimal), ("straight", straight), ("curved", curved),
                     ("highway_merge", highway_merge), ("junction4", junction4)):
        (MAPS / f"{name}.xodr").write_text(fn())
    for name, fn in (("broken_link", broken_link), ("negative_width", negative_width),
                     ("spiral", spiral_road)):
        (TEST_FIXTURES / f"{name}.xodr").write_text(fn())
    (TEST_FIXTURES / "not_xml.xodr").write_text("this is not <xml")


if __name__ == "__main__":
    main()
