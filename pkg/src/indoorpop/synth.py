"""Synthetic venue generators for experiments and property tests."""

from __future__ import annotations

import numpy as np

from .topology import Topology, load_topology
from .trajectory import (
    GroundTruth,
    MovementConfig,
    Segment,
    TrajectoryStore,
    _sample_records,
    _uniform_point_in,
    _walk_route,
    door_route,
    ingest_records,
)


def grid_venue(
    rows: int,
    cols: int,
    room_w: float = 8.0,
    room_h: float = 6.0,
    extra_door_prob: float = 0.35,
    seed: int = 0,
) -> Topology:
    """A rows x cols grid of rectangular rooms with doors on shared walls.

    A random spanning tree guarantees connectivity; each remaining shared
    wall gets a door with probability ``extra_door_prob``.  Doors sit at
    wall midpoints.  All doors are ordinary two-way doors, so the venue is
    convenient for oracle tests (convex rooms, symmetric reachability).
    """
    if rows < 1 or cols < 1:
        raise ValueError("grid must have at least one room")
    rng = np.random.default_rng(seed)
    pid = lambda r, c: f"p{r * cols + c:02d}"

    # Candidate walls between orthogonally adjacent rooms.
    walls = []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                walls.append(((r, c), (r, c + 1)))
            if r + 1 < rows:
                walls.append(((r, c), (r + 1, c)))

    # Spanning tree via randomized Kruskal.
    parent = {(r, c): (r, c) for r in range(rows) for c in range(cols)}

    def find(n):
        while parent[n] != n:
            parent[n] = parent[parent[n]]
            n = parent[n]
        return n

    order = list(range(len(walls)))
    rng.shuffle(order)
    chosen = set()
    for i in order:
        a, b = walls[i]
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            chosen.add(i)
    for i in range(len(walls)):
        if i not in chosen and rng.random() < extra_door_prob:
            chosen.add(i)

    partitions = {}
    for r in range(rows):
        for c in range(cols):
            x0, y0 = c * room_w, r * room_h
            partitions[pid(r, c)] = {
                "id": pid(r, c),
                "floor": 0,
                "polygon": [[x0, y0], [x0 + room_w, y0], [x0 + room_w, y0 + room_h], [x0, y0 + room_h]],
                "enterable_doors": [],
                "leaveable_doors": [],
            }

    doors = []
    for n, i in enumerate(sorted(chosen)):
        (r1, c1), (r2, c2) = walls[i]
        if r1 == r2:  # vertical wall between horizontal neighbours
            x = max(c1, c2) * room_w
            y = r1 * room_h + room_h / 2.0
        else:  # horizontal wall between vertical neighbours
            x = c1 * room_w + room_w / 2.0
            y = max(r1, r2) * room_h
        did = f"d{n:02d}"
        parts = sorted([pid(r1, c1), pid(r2, c2)])
        doors.append(
            {
                "id": did,
                "x": x,
                "y": y,
                "floor": 0,
                "enterable_partitions": parts,
                "leaveable_partitions": parts,
                "kind": "normal",
            }
        )
        for p in parts:
            partitions[p]["enterable_doors"].append(did)
            partitions[p]["leaveable_doors"].append(did)

    doc = {"floors": 1, "partitions": list(partitions.values()), "doors": doors}
    return load_topology(doc)


def ring_venue(k: int = 6, room_w: float = 8.0, room_h: float = 6.0) -> Topology:
    """A cycle of ``k`` rectangular rooms, each sharing a door with the next.

    Laid out as a strip of rooms with doors between horizontal neighbours
    plus one long return corridor closing the cycle is overkill for what
    this is used for, so the rooms are simply arranged in a 2 x (k/2)
    block whose outer walls carry the ring's doors.  Requires even k >= 4.
    """
    if k < 4 or k % 2:
        raise ValueError("ring_venue needs an even k >= 4")
    half = k // 2
    partitions = {}
    order = []  # room ids in ring order
    for c in range(half):          # bottom row, left to right
        order.append((0, c))
    for c in reversed(range(half)):  # top row, right to left
        order.append((1, c))

    def pid(rc):
        return f"r{order.index(rc):02d}"

    for rc in order:
        r, c = rc
        x0, y0 = c * room_w, r * room_h
        partitions[pid(rc)] = {
            "id": pid(rc),
            "floor": 0,
            "polygon": [[x0, y0], [x0 + room_w, y0], [x0 + room_w, y0 + room_h], [x0, y0 + room_h]],
            "enterable_doors": [],
            "leaveable_doors": [],
        }

    doors = []
    for i, rc in enumerate(order):
        nxt = order[(i + 1) % k]
        (r1, c1), (r2, c2) = rc, nxt
        if r1 == r2:
            x = max(c1, c2) * room_w
            y = r1 * room_h + room_h / 2.0
        else:
            x = c1 * room_w + room_w / 2.0
            y = max(r1, r2) * room_h
        did = f"d{i:02d}"
        parts = sorted([pid(rc), pid(nxt)])
        doors.append(
            {
                "id": did,
                "x": x,
                "y": y,
                "floor": 0,
                "enterable_partitions": parts,
                "leaveable_partitions": parts,
                "kind": "normal",
            }
        )
        for p in parts:
            partitions[p]["enterable_doors"].append(did)
            partitions[p]["leaveable_doors"].append(did)

    doc = {"floors": 1, "partitions": list(partitions.values()), "doors": doors}
    return load_topology(doc)


def ring_crowd_movement(
    topo: Topology, config: MovementConfig, object_prefix: str = "o"
) -> tuple[GroundTruth, TrajectoryStore]:
    """Everyone walks the venue's rooms in id order, wrapping around.

    Unlike the uniform waypoint model this keeps the whole population
    clumped into a single travelling pulse: each object dwells in its
    current room for U[dwell_range] seconds and then crosses to the next
    room in ``partition_order``.  On a ring venue that is the ring
    direction, so room occupancies form a wave whose arrival at room i+1
    is telegraphed by room i — exactly the structure a spatially-aware
    estimator should exploit and a per-room one cannot.  Sparse records
    are sampled the same way as in ``generate_movement``.
    """
    order = topo.partition_order
    k = len(order)
    traces: dict[str, list[Segment]] = {}
    records = []
    for idx in range(config.object_count):
        oid = f"{object_prefix}{idx:03d}"
        rng = np.random.default_rng([config.seed, idx])
        segments: list[Segment] = []
        t = 0.0
        room = 0
        pos = _uniform_point_in(topo, order[room], rng)
        while t < config.duration:
            dwell = rng.uniform(*config.dwell_range)
            t_end = min(t + dwell, config.duration)
            segments.append(Segment(t, t_end, order[room], pos, pos))
            t = t_end
            if t >= config.duration:
                break
            room = (room + 1) % k
            target = _uniform_point_in(topo, order[room], rng)
            doors, partitions, _length = door_route(topo, pos, target)
            legs, t, finished = _walk_route(
                topo, config.speed, t, pos, doors, partitions, target, config.duration
            )
            segments.extend(legs)
            if not finished:
                break
            pos = target
        traces[oid] = segments
        records.extend(_sample_records(oid, segments, config, rng))
    return GroundTruth(traces), ingest_records(records)
