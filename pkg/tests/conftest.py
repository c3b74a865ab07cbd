"""Shared fixtures: the worked-example venue and small record stores."""

from __future__ import annotations

import pytest

from indoorpop.demo import demo_venue
from indoorpop.synth import grid_venue, ring_venue
from indoorpop.topology import Location
from indoorpop.trajectory import PositioningRecord, ingest_records


def record(oid, t, x, y, floor=0):
    return PositioningRecord(object_id=oid, location=Location(float(x), float(y), floor), time=float(t))


@pytest.fixture(scope="session")
def demo():
    return demo_venue()


@pytest.fixture(scope="session")
def demo_topo(demo):
    return demo.topology


@pytest.fixture(scope="session")
def ring6():
    return ring_venue(6)


@pytest.fixture(scope="session")
def grid23():
    return grid_venue(2, 3, extra_door_prob=0.0, seed=1)


@pytest.fixture()
def demo_walk_store(demo):
    """One object reported at the worked example's origin, then destination 15 s later."""
    o, d = demo.origin, demo.destination
    return ingest_records([record("a", 0.0, o.x, o.y), record("a", 15.0, d.x, d.y)])
