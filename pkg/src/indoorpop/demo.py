"""The worked-example venue used throughout the docs and tests.

Seven partitions (v0..v6) on one floor: a hallway split into two sections
(v6, v2) with an exterior door at the far end of v2, offices v1, v0, v5,
a large room v3, and a side room v4.  Nine doors d0..d8 connect them.

The geometry is laid out so that the three indoor paths from ``origin``
(in v3) to ``destination`` (in the hallway v6) have lengths 28.5 m,
14.3 m and 19.4 m, with the legs of the shortest route measuring exactly
3.0, 6.8 and 4.5 m.  Two door coordinates are solved numerically at import
time to pin the longer route lengths.
"""

from __future__ import annotations

from dataclasses import dataclass

from .topology import Location, Topology, load_topology


def _bisect(fn, lo: float, hi: float, tol: float = 1e-13) -> float:
    """Root of a continuous scalar function with a sign change on [lo, hi]."""
    flo = fn(lo)
    if flo > 0:
        lo, hi = hi, lo
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if abs(hi - lo) < tol:
            return mid
        if fn(mid) <= 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _dist(a: tuple[float, float], b: tuple[float, float]) -> float:
    return ((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2) ** 0.5

# Fixed door/location coordinates (see module docstring for the targets).
_L0 = (13.8, 12.4)          # origin, inside v3
_D4 = (12.0, 10.0)          # v3 <-> v0; |L0,D4| = 3.0
_D3 = (15.2, 4.0)           # v0 <-> v6; |D4,D3| = 6.8
_L1 = (17.9, 0.4)           # destination, inside v6; |D3,L1| = 4.5
_D0 = (8.0, 7.0)            # v0 <-> v1; |D4,D0| = 5.0
_D5 = (20.6, 4.0)           # v4 <-> v6; |D5,L1| = 4.5

# d1.x makes |D0,D1| + |D1,L1| = 20.5, so the long route totals 28.5.
_D1 = (_bisect(lambda x: 20.5 - _dist(_D0, (x, 4.0)) - _dist((x, 4.0), _L1), 0.5, 7.5), 4.0)
# d7.y makes |L0,D7| + |D7,D5| = 14.9, so the detour route totals 19.4.
_D7 = (20.0, _bisect(lambda y: _dist(_L0, (20.0, y)) + _dist((20.0, y), _D5) - 14.9, 12.4, 17.9))


def demo_document() -> dict:
    """The venue as a plain document (the JSON schema's object form)."""
    rects = {
        "v0": [(8, 4), (20, 4), (20, 10), (8, 10)],
        "v1": [(0, 4), (8, 4), (8, 10), (0, 10)],
        "v2": [(30, 0), (38, 0), (38, 4), (30, 4)],
        "v3": [(0, 10), (20, 10), (20, 18), (0, 18)],
        "v4": [(20, 4), (28, 4), (28, 18), (20, 18)],
        "v5": [(30, 4), (38, 4), (38, 10), (30, 10)],
        "v6": [(0, 0), (30, 0), (30, 4), (0, 4)],
    }
    door_specs = {
        # door id -> (position, partitions it connects, kind)
        "d0": (_D0, ["v0", "v1"], "normal"),
        "d1": (_D1, ["v1", "v6"], "normal"),
        "d2": ((30.0, 2.0), ["v2", "v6"], "normal"),
        "d3": (_D3, ["v0", "v6"], "normal"),
        "d4": (_D4, ["v0", "v3"], "normal"),
        "d5": (_D5, ["v4", "v6"], "normal"),
        "d6": ((34.0, 4.0), ["v2", "v5"], "normal"),
        "d7": (_D7, ["v3", "v4"], "normal"),
        "d8": ((38.0, 2.0), ["v2"], "exterior"),
    }
    partitions = []
    for pid, poly in rects.items():
        serving = sorted(d for d, (_, parts, _k) in door_specs.items() if pid in parts)
        partitions.append(
            {
                "id": pid,
                "floor": 0,
                "polygon": [[float(x), float(y)] for x, y in poly],
                "enterable_doors": serving,
                "leaveable_doors": serving,
            }
        )
    doors = []
    for did, ((x, y), parts, kind) in sorted(door_specs.items()):
        doors.append(
            {
                "id": did,
                "x": float(x),
                "y": float(y),
                "floor": 0,
                "enterable_partitions": parts,
                "leaveable_partitions": parts,
                "kind": kind,
            }
        )
    return {"floors": 1, "partitions": partitions, "doors": doors}


@dataclass(frozen=True)
class DemoVenue:
    """The worked-example venue plus the origin/destination pair and routes."""

    topology: Topology
    origin: Location        # hosted by v3
    destination: Location   # hosted by v6
    route_short: tuple[str, ...]   # doors d4, d3       -> 14.3 m
    route_detour: tuple[str, ...]  # doors d7, d5       -> 19.4 m
    route_long: tuple[str, ...]    # doors d4, d0, d1   -> 28.5 m


def demo_venue() -> DemoVenue:
    topo = load_topology(demo_document())
    return DemoVenue(
        topology=topo,
        origin=Location(*_L0),
        destination=Location(*_L1),
        route_short=("d4", "d3"),
        route_detour=("d7", "d5"),
        route_long=("d4", "d0", "d1"),
    )
