"""Sparse positioning trajectories and the movement simulator.

Positioning data is sparse: an object reports its location every few tens of
seconds, so between reports only the pair of bracketing records is known.
The simulator produces both views of the same motion: a dense analytic trace
(the ground truth, piecewise-linear in time) and the sparse records sampled
from it.
"""

from __future__ import annotations

import csv
import heapq
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from shapely.geometry import Point

from .topology import (
    Location,
    Topology,
    host_partition,
)

log = logging.getLogger(__name__)


class UnreachableWaypointError(ValueError):
    """No door route exists between two waypoints (disconnected venue)."""


@dataclass(frozen=True)
class PositioningRecord:
    object_id: str
    location: Location
    time: float


@dataclass(frozen=True)
class Trajectory:
    """One object's positioning records in increasing time order."""

    object_id: str
    records: tuple[PositioningRecord, ...]


class TrajectoryStore:
    """All objects' sparse trajectories, indexed for bracketing lookups.

    The store is immutable after :func:`ingest_records`; lookups are pure,
    so a store may be shared across threads.
    """

    def __init__(self, trajectories: Mapping[str, Trajectory]):
        self._trajectories = dict(trajectories)
        self._times = {
            oid: np.array([r.time for r in traj.records], dtype=np.float64)
            for oid, traj in self._trajectories.items()
        }

    @property
    def object_ids(self) -> list[str]:
        return sorted(self._trajectories)

    def trajectory(self, oid: str) -> Trajectory:
        return self._trajectories[oid]

    def records(self) -> list[PositioningRecord]:
        out = []
        for oid in self.object_ids:
            out.extend(self._trajectories[oid].records)
        return out

    def bracketing_pairs(self, t: float) -> dict[str, tuple[PositioningRecord, PositioningRecord]]:
        """Per object, the consecutive record pair with ``t_A <= t <= t_B``.

        When ``t`` coincides with an interior record time two pairs qualify;
        the one with the smaller ``t_A`` is returned.  Objects with no
        bracketing pair (t outside their reporting span) are omitted.
        """
        pairs = {}
        for oid, times in self._times.items():
            n = times.size
            if n < 2:
                continue
            i = int(np.searchsorted(times, t, side="left"))
            recs = self._trajectories[oid].records
            if i < n and times[i] == t:
                if i > 0:
                    pairs[oid] = (recs[i - 1], recs[i])
                else:
                    pairs[oid] = (recs[0], recs[1])
            elif 0 < i < n:
                pairs[oid] = (recs[i - 1], recs[i])
        return pairs


def ingest_records(records: Iterable[PositioningRecord]) -> TrajectoryStore:
    """Group raw records into per-object trajectories sorted by time.

    Rejects duplicate (object, time) pairs and non-finite coordinates or
    timestamps.  Input order is irrelevant.
    """
    by_object: dict[str, list[PositioningRecord]] = {}
    for rec in records:
        if not (math.isfinite(rec.time) and math.isfinite(rec.location.x) and math.isfinite(rec.location.y)):
            raise ValueError(f"non-finite record for object {rec.object_id!r} at t={rec.time!r}")
        by_object.setdefault(rec.object_id, []).append(rec)
    trajectories = {}
    for oid, recs in by_object.items():
        recs.sort(key=lambda r: r.time)
        for a, b in zip(recs, recs[1:]):
            if a.time == b.time:
                raise ValueError(f"duplicate timestamp {a.time} for object {oid!r}")
        trajectories[oid] = Trajectory(object_id=oid, records=tuple(recs))
    return TrajectoryStore(trajectories)


# ---------------------------------------------------------------------------
# Dense ground truth


@dataclass(frozen=True)
class Segment:
    """A constant-partition piece of a dense trace, linear in time.

    The object occupies ``partition`` for t in [t0, t1) and moves linearly
    from ``start`` to ``end`` (equal for a dwell).
    """

    t0: float
    t1: float
    partition: str
    start: Location | None = None
    end: Location | None = None

    def location_at(self, t: float) -> Location:
        if self.start is None or self.end is None:
            raise ValueError("segment carries no location data (interval-only truth)")
        if self.t1 == self.t0:
            return self.start
        a = (t - self.t0) / (self.t1 - self.t0)
        return Location(
            self.start.x + a * (self.end.x - self.start.x),
            self.start.y + a * (self.end.y - self.start.y),
            self.start.floor,
        )


class GroundTruth:
    """Dense per-object traces supporting exact partition/location queries."""

    def __init__(self, traces: Mapping[str, Sequence[Segment]]):
        self._traces = {oid: list(segs) for oid, segs in traces.items()}
        self._starts = {
            oid: np.array([s.t0 for s in segs], dtype=np.float64)
            for oid, segs in self._traces.items()
        }

    @property
    def object_ids(self) -> list[str]:
        return sorted(self._traces)

    def span(self, oid: str) -> tuple[float, float]:
        segs = self._traces[oid]
        return segs[0].t0, segs[-1].t1

    def _segment_at(self, oid: str, t: float) -> Segment:
        segs = self._traces[oid]
        t0, t1 = segs[0].t0, segs[-1].t1
        if not (t0 <= t <= t1):
            raise ValueError(f"t={t} outside trace span [{t0}, {t1}] of object {oid!r}")
        # Half-open [t0, t1) pieces; the final instant belongs to the last segment.
        i = int(np.searchsorted(self._starts[oid], t, side="right")) - 1
        return segs[max(i, 0)]

    def partition_at(self, oid: str, t: float) -> str:
        return self._segment_at(oid, t).partition

    def location_at(self, oid: str, t: float) -> Location:
        return self._segment_at(oid, t).location_at(t)

    def intervals(self, oid: str) -> list[tuple[float, float, str]]:
        """Merged (t_start, t_end, partition) rows for the object."""
        merged: list[list] = []
        for seg in self._traces[oid]:
            if merged and merged[-1][2] == seg.partition and merged[-1][1] == seg.t0:
                merged[-1][1] = seg.t1
            else:
                merged.append([seg.t0, seg.t1, seg.partition])
        return [tuple(row) for row in merged]


def true_population(truth: GroundTruth, partition: str, t: float) -> int:
    """Exact number of objects inside ``partition`` at time ``t``."""
    count = 0
    for oid in truth.object_ids:
        lo, hi = truth.span(oid)
        if lo <= t <= hi and truth.partition_at(oid, t) == partition:
            count += 1
    return count


# ---------------------------------------------------------------------------
# Movement simulation


@dataclass(frozen=True)
class MovementConfig:
    """Parameters of the random-waypoint movement simulator."""

    object_count: int
    duration: float
    speed: float = 1.53
    dwell_range: tuple[float, float] = (1.0, 500.0)
    interval_range: tuple[float, float] = (5.0, 48.0)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.object_count < 1:
            raise ValueError("object_count must be positive")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.speed <= 0:
            raise ValueError("speed must be positive")
        for name, (lo, hi) in (("dwell_range", self.dwell_range), ("interval_range", self.interval_range)):
            if not (0 < lo <= hi):
                raise ValueError(f"{name} must satisfy 0 < lo <= hi, got ({lo}, {hi})")


def door_route(
    topo: Topology, a: Location, b: Location
) -> tuple[list[str], list[str], float]:
    """Shortest door sequence from ``a`` to ``b``.

    Returns ``(doors, partitions, length)`` where ``partitions`` is the
    host chain (one entry more than ``doors``).  Within a partition the
    route is the straight line between its endpoints/doors; ties between
    equally short routes break towards lexicographically smaller door ids.
    Raises :class:`UnreachableWaypointError` when no route exists.
    """
    va, vb = host_partition(topo, a), host_partition(topo, b)
    if va == vb:
        return [], [va], a.distance_to(b)

    dist: dict[str, float] = {}
    prev: dict[str, tuple[str | None, str]] = {}  # door -> (previous door, partition crossed)
    heap: list[tuple[float, str]] = []
    for did in sorted(topo.leaveable_doors(va)):
        d = a.distance_to(topo.doors[did].position)
        if d < dist.get(did, math.inf):
            dist[did] = d
            prev[did] = (None, va)
            heapq.heappush(heap, (d, did))
    done: set[str] = set()
    best: tuple[float, str] | None = None
    while heap:
        dd, did = heapq.heappop(heap)
        if did in done:
            continue
        done.add(did)
        if best is not None and dd >= best[0]:
            break
        for pid in sorted(topo.enterable_partitions(did)):
            if pid == prev[did][1]:
                continue
            if pid == vb:
                total = dd + topo.doors[did].position.distance_to(b)
                if best is None or (total, did) < best:
                    best = (total, did)
            for dj in sorted(topo.leaveable_doors(pid)):
                if dj in done or dj == did:
                    continue
                nd = dd + topo.doors[did].position.distance_to(topo.doors[dj].position)
                if nd < dist.get(dj, math.inf):
                    dist[dj] = nd
                    prev[dj] = (did, pid)
                    heapq.heappush(heap, (nd, dj))
    if best is None:
        raise UnreachableWaypointError(f"no door route from {va!r} to {vb!r}")
    doors: list[str] = []
    partitions = [vb]
    cursor: str | None = best[1]
    while cursor is not None:
        doors.append(cursor)
        before, crossed = prev[cursor]
        partitions.append(crossed)
        cursor = before
    doors.reverse()
    partitions.reverse()
    return doors, partitions, best[0]


def _uniform_point_in(topo: Topology, pid: str, rng: np.random.Generator) -> Location:
    poly = topo.polygon(pid)
    minx, miny, maxx, maxy = poly.bounds
    for _ in range(10_000):
        x = rng.uniform(minx, maxx)
        y = rng.uniform(miny, maxy)
        if poly.contains(Point(x, y)):
            return Location(x, y, topo.partitions[pid].floor)
    raise RuntimeError(f"rejection sampling failed for partition {pid!r}")


def generate_movement(
    topo: Topology, config: MovementConfig, object_prefix: str = "o"
) -> tuple[GroundTruth, TrajectoryStore]:
    """Simulate random-waypoint movement and sample sparse records from it.

    Objects pick waypoints uniformly over the union of partition interiors
    (area-weighted partition choice, then uniform inside), walk the shortest
    door route at constant ``config.speed``, and dwell at each waypoint for
    U[dwell_range] seconds.  Sparse records are taken at t=0 and then every
    U[interval_range] seconds.  Each object draws from its own seeded
    substream, so generation is order-independent and could run per object
    in parallel without changing the output.
    """
    areas = np.array([topo.polygon(pid).area for pid in topo.partition_order])
    weights = areas / areas.sum()

    traces: dict[str, list[Segment]] = {}
    records: list[PositioningRecord] = []
    for idx in range(config.object_count):
        oid = f"{object_prefix}{idx:03d}"
        rng = np.random.default_rng([config.seed, idx])
        segments = _simulate_object(topo, config, rng, weights)
        traces[oid] = segments
        records.extend(_sample_records(oid, segments, config, rng))
    truth = GroundTruth(traces)
    return truth, ingest_records(records)


def _walk_route(
    topo: Topology,
    speed: float,
    t: float,
    pos: Location,
    doors: list[str],
    partitions: list[str],
    target: Location,
    horizon: float,
) -> tuple[list[Segment], float, bool]:
    """Walk each leg (between doors / endpoints) inside its partition.

    Returns ``(segments, t_end, finished)``; ``finished`` is False when the
    walk was truncated mid-leg at the horizon.
    """
    segments: list[Segment] = []
    points = [pos] + [topo.doors[d].position for d in doors] + [target]
    cursor = pos
    for leg_idx, nxt in enumerate(points[1:]):
        leg_pid = partitions[leg_idx]
        leg_len = cursor.distance_to(nxt)
        if leg_len == 0.0:
            cursor = nxt
            continue
        t_leg_end = t + leg_len / speed
        if t_leg_end >= horizon:
            # Truncate mid-leg at the horizon.
            frac = (horizon - t) / (t_leg_end - t)
            stop = Location(
                cursor.x + frac * (nxt.x - cursor.x),
                cursor.y + frac * (nxt.y - cursor.y),
                cursor.floor,
            )
            segments.append(Segment(t, horizon, leg_pid, cursor, stop))
            return segments, horizon, False
        segments.append(Segment(t, t_leg_end, leg_pid, cursor, nxt))
        t = t_leg_end
        cursor = nxt
    return segments, t, True


def _simulate_object(
    topo: Topology,
    config: MovementConfig,
    rng: np.random.Generator,
    weights: np.ndarray,
) -> list[Segment]:
    def draw_waypoint() -> tuple[str, Location]:
        pid = topo.partition_order[int(rng.choice(len(weights), p=weights))]
        return pid, _uniform_point_in(topo, pid, rng)

    segments: list[Segment] = []
    t = 0.0
    pid, pos = draw_waypoint()
    while t < config.duration:
        dwell = rng.uniform(*config.dwell_range)
        t_end = min(t + dwell, config.duration)
        segments.append(Segment(t, t_end, pid, pos, pos))
        t = t_end
        if t >= config.duration:
            break
        target_pid, target = draw_waypoint()
        doors, partitions, _length = door_route(topo, pos, target)
        legs, t, finished = _walk_route(
            topo, config.speed, t, pos, doors, partitions, target, config.duration
        )
        segments.extend(legs)
        if not finished:
            break
        pid, pos = target_pid, target
    return segments


def _sample_records(
    oid: str, segments: list[Segment], config: MovementConfig, rng: np.random.Generator
) -> list[PositioningRecord]:
    truth = GroundTruth({oid: segments})
    duration = segments[-1].t1
    out = []
    t = 0.0
    while t <= duration:
        out.append(PositioningRecord(oid, truth.location_at(oid, t), t))
        t += rng.uniform(*config.interval_range)
    return out


# ---------------------------------------------------------------------------
# CSV interfaces

TRAJECTORY_HEADER = ["object_id", "x", "y", "floor", "timestamp_s"]
TRUTH_HEADER = ["object_id", "partition_id", "t_start", "t_end"]


def write_trajectories(store: TrajectoryStore, fp) -> None:
    writer = csv.writer(fp)
    writer.writerow(TRAJECTORY_HEADER)
    for rec in store.records():
        writer.writerow([rec.object_id, repr(rec.location.x), repr(rec.location.y), rec.location.floor, repr(rec.time)])


def read_trajectories(fp) -> TrajectoryStore:
    reader = csv.reader(fp)
    header = next(reader, None)
    if header != TRAJECTORY_HEADER:
        raise ValueError(f"unexpected trajectory CSV header: {header!r}")
    records = []
    for row in reader:
        if not row:
            continue
        oid, x, y, floor, ts = row
        records.append(PositioningRecord(oid, Location(float(x), float(y), int(floor)), float(ts)))
    return ingest_records(records)


def write_ground_truth(truth: GroundTruth, fp) -> None:
    writer = csv.writer(fp)
    writer.writerow(TRUTH_HEADER)
    for oid in truth.object_ids:
        for t0, t1, pid in truth.intervals(oid):
            writer.writerow([oid, pid, repr(t0), repr(t1)])


def read_ground_truth(fp) -> GroundTruth:
    """Rebuild interval-only truth (partition queries work, locations do not)."""
    reader = csv.reader(fp)
    header = next(reader, None)
    if header != TRUTH_HEADER:
        raise ValueError(f"unexpected ground-truth CSV header: {header!r}")
    traces: dict[str, list[Segment]] = {}
    for row in reader:
        if not row:
            continue
        oid, pid, t0, t1 = row
        traces.setdefault(oid, []).append(Segment(float(t0), float(t1), pid))
    for segs in traces.values():
        segs.sort(key=lambda s: s.t0)
    return GroundTruth(traces)
