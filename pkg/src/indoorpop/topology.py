"""Indoor venue model: partitions, doors, directional mappings, and the indoor graph.

A venue is a set of polygonal partitions (rooms, hallway sections, stairwells)
connected by point-sized doors.  Each door knows which partitions it can be
used to enter and to leave, and each partition carries the mirror mappings.
The undirected indoor graph has one vertex per partition and one edge per
door that connects two distinct partitions; doors to the outdoors contribute
no edge.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from shapely.geometry import Point, Polygon
from shapely.prepared import prep

#: Tolerance (metres) for "door lies on the partition boundary" validation.
EPS_GEOM = 1e-6

DOOR_KINDS = ("normal", "stair", "exterior")


class TopologyError(ValueError):
    """A topology document violates the schema or its structural invariants."""


class SchemaError(TopologyError):
    """Malformed document: wrong types, duplicate ids, bad polygons, etc."""


class DanglingIdError(TopologyError):
    """A partition or door references an id that does not exist."""


class MappingConsistencyError(TopologyError):
    """Door->partition and partition->door mappings disagree."""


class LocationError(ValueError):
    """Base class for host-partition lookup failures."""


class OutsideVenueError(LocationError):
    """The location is not inside any partition on its floor."""


class BoundaryLocationError(LocationError):
    """The location sits exactly on a partition boundary (host is ambiguous)."""


class DoorNotIncidentError(ValueError):
    """A door was used with a partition it does not serve."""


@dataclass(frozen=True)
class Location:
    """A point position inside (or outside) the venue."""

    x: float
    y: float
    floor: int = 0

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)

    def distance_to(self, other: "Location") -> float:
        """Planar Euclidean distance; floors are ignored (see module notes)."""
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class Door:
    """A point-sized door.

    ``enterable_partitions`` holds the partitions one can enter *through* this
    door; ``leaveable_partitions`` the partitions one can leave through it.
    Ordinary two-way doors list the same partitions in both sets.  An exterior
    door references only its indoor partition(s); the outdoors is not modeled
    as a partition.
    """

    id: str
    position: Location
    enterable_partitions: frozenset[str]
    leaveable_partitions: frozenset[str]
    kind: str = "normal"

    @property
    def partitions(self) -> frozenset[str]:
        """All partitions this door serves, in either direction."""
        return self.enterable_partitions | self.leaveable_partitions


@dataclass(frozen=True)
class Partition:
    """A polygonal indoor partition on a single floor."""

    id: str
    floor: int
    boundary: tuple[tuple[float, float], ...]
    enterable_doors: frozenset[str]
    leaveable_doors: frozenset[str]

    @property
    def doors(self) -> frozenset[str]:
        return self.enterable_doors | self.leaveable_doors

    def polygon(self) -> Polygon:
        return Polygon(self.boundary)


@dataclass
class Topology:
    """A validated indoor venue.

    Construction validates the schema-level invariants (id uniqueness is
    implied by the dict keys, mapping duality, door-on-boundary placement)
    and derives the indoor graph.  Instances are immutable by convention:
    nothing in this package mutates a Topology after construction, so one
    instance may be shared freely across threads.
    """

    partitions: dict[str, Partition]
    doors: dict[str, Door]
    floor_count: int = 1

    # Derived fields, populated in __post_init__.
    partition_order: list[str] = field(init=False, repr=False)
    graph_edges: set[tuple[str, str, str]] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._validate_references()
        self._validate_mapping_duality()
        self._polygons = {}
        self._prepared = {}
        for pid, part in self.partitions.items():
            poly = part.polygon()
            if not poly.is_valid or poly.area <= 0.0:
                raise SchemaError(f"partition {pid!r}: polygon is degenerate or self-intersecting")
            self._polygons[pid] = poly
            self._prepared[pid] = prep(poly)
        self._validate_door_placement()
        self.partition_order = sorted(self.partitions)
        self._index = {pid: i for i, pid in enumerate(self.partition_order)}
        self.graph_edges = set()
        for did, door in self.doors.items():
            parts = sorted(door.partitions)
            if len(parts) > 2:
                raise SchemaError(f"door {did!r} connects {len(parts)} partitions; at most 2 allowed")
            if len(parts) == 2:
                self.graph_edges.add((parts[0], parts[1], did))

    # -- validation helpers -------------------------------------------------

    def _validate_references(self) -> None:
        for pid, part in self.partitions.items():
            if part.id != pid:
                raise SchemaError(f"partition key {pid!r} does not match its id {part.id!r}")
            if not (0 <= part.floor < self.floor_count):
                raise SchemaError(f"partition {pid!r}: floor {part.floor} outside 0..{self.floor_count - 1}")
            for did in part.doors:
                if did not in self.doors:
                    raise DanglingIdError(f"partition {pid!r} references unknown door {did!r}")
        for did, door in self.doors.items():
            if door.id != did:
                raise SchemaError(f"door key {did!r} does not match its id {door.id!r}")
            if door.kind not in DOOR_KINDS:
                raise SchemaError(f"door {did!r}: unknown kind {door.kind!r}")
            if not door.partitions:
                raise SchemaError(f"door {did!r} serves no partition at all")
            for pid in door.partitions:
                if pid not in self.partitions:
                    raise DanglingIdError(f"door {did!r} references unknown partition {pid!r}")

    def _validate_mapping_duality(self) -> None:
        for did, door in self.doors.items():
            for pid in door.enterable_partitions:
                if did not in self.partitions[pid].enterable_doors:
                    raise MappingConsistencyError(
                        f"door {did!r} lists {pid!r} as enterable but the partition does not list it back"
                    )
            for pid in door.leaveable_partitions:
                if did not in self.partitions[pid].leaveable_doors:
                    raise MappingConsistencyError(
                        f"door {did!r} lists {pid!r} as leaveable but the partition does not list it back"
                    )
        for pid, part in self.partitions.items():
            for did in part.enterable_doors:
                if pid not in self.doors[did].enterable_partitions:
                    raise MappingConsistencyError(
                        f"partition {pid!r} lists door {did!r} as enterable but the door does not list it back"
                    )
            for did in part.leaveable_doors:
                if pid not in self.doors[did].leaveable_partitions:
                    raise MappingConsistencyError(
                        f"partition {pid!r} lists door {did!r} as leaveable but the door does not list it back"
                    )

    def _validate_door_placement(self) -> None:
        for did, door in self.doors.items():
            pt = Point(door.position.x, door.position.y)
            for pid in door.partitions:
                if self._polygons[pid].boundary.distance(pt) > EPS_GEOM:
                    raise MappingConsistencyError(
                        f"door {did!r} does not lie on the boundary of partition {pid!r}"
                    )

    # -- lookups ------------------------------------------------------------

    def partition_index(self, pid: str) -> int:
        """Stable index of a partition in the canonical (sorted-id) order."""
        return self._index[pid]

    def polygon(self, pid: str) -> Polygon:
        return self._polygons[pid]

    def enterable_doors(self, pid: str) -> frozenset[str]:
        """Doors through which partition ``pid`` can be entered."""
        return self.partitions[pid].enterable_doors

    def leaveable_doors(self, pid: str) -> frozenset[str]:
        """Doors through which partition ``pid`` can be left."""
        return self.partitions[pid].leaveable_doors

    def enterable_partitions(self, did: str) -> frozenset[str]:
        return self.doors[did].enterable_partitions

    def leaveable_partitions(self, did: str) -> frozenset[str]:
        return self.doors[did].leaveable_partitions


def load_topology(document: str | bytes | Mapping) -> Topology:
    """Parse and validate a venue document.

    ``document`` is either a JSON string/bytes or an already-parsed mapping
    with the layout::

        {"floors": 1,
         "partitions": [{"id", "floor", "polygon", "enterable_doors", "leaveable_doors"}, ...],
         "doors": [{"id", "x", "y", "floor", "enterable_partitions",
                    "leaveable_partitions", "kind"}, ...]}

    Raises :class:`SchemaError`, :class:`DanglingIdError` or
    :class:`MappingConsistencyError` with the offending id in the message.
    """
    if isinstance(document, (str, bytes)):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"document is not valid JSON: {exc}") from exc
    else:
        doc = document
    if not isinstance(doc, Mapping):
        raise SchemaError("top-level document must be an object")
    for key in ("floors", "partitions", "doors"):
        if key not in doc:
            raise SchemaError(f"missing top-level key {key!r}")
    floors = doc["floors"]
    if not isinstance(floors, int) or floors < 1:
        raise SchemaError(f"'floors' must be a positive integer, got {floors!r}")

    partitions: dict[str, Partition] = {}
    for entry in doc["partitions"]:
        pid = _require_str(entry, "id", "partition")
        if pid in partitions:
            raise SchemaError(f"duplicate partition id {pid!r}")
        polygon = entry.get("polygon")
        if not isinstance(polygon, (list, tuple)) or len(polygon) < 3:
            raise SchemaError(f"partition {pid!r}: polygon needs at least 3 vertices")
        boundary = []
        for vertex in polygon:
            if not isinstance(vertex, (list, tuple)) or len(vertex) != 2:
                raise SchemaError(f"partition {pid!r}: polygon vertices must be [x, y] pairs")
            x, y = float(vertex[0]), float(vertex[1])
            if not (math.isfinite(x) and math.isfinite(y)):
                raise SchemaError(f"partition {pid!r}: non-finite polygon vertex")
            boundary.append((x, y))
        partitions[pid] = Partition(
            id=pid,
            floor=_require_int(entry, "floor", f"partition {pid!r}"),
            boundary=tuple(boundary),
            enterable_doors=frozenset(_require_str_list(entry, "enterable_doors", pid)),
            leaveable_doors=frozenset(_require_str_list(entry, "leaveable_doors", pid)),
        )

    doors: dict[str, Door] = {}
    for entry in doc["doors"]:
        did = _require_str(entry, "id", "door")
        if did in doors:
            raise SchemaError(f"duplicate door id {did!r}")
        x, y = entry.get("x"), entry.get("y")
        if not isinstance(x, (int, float)) or not isinstance(y, (int, float)):
            raise SchemaError(f"door {did!r}: x/y must be numbers")
        if not (math.isfinite(x) and math.isfinite(y)):
            raise SchemaError(f"door {did!r}: non-finite position")
        doors[did] = Door(
            id=did,
            position=Location(float(x), float(y), _require_int(entry, "floor", f"door {did!r}")),
            enterable_partitions=frozenset(_require_str_list(entry, "enterable_partitions", did)),
            leaveable_partitions=frozenset(_require_str_list(entry, "leaveable_partitions", did)),
            kind=entry.get("kind", "normal"),
        )

    return Topology(partitions=partitions, doors=doors, floor_count=floors)


def dump_topology(topo: Topology) -> str:
    """Serialize a Topology back to its JSON document form."""
    doc = {
        "floors": topo.floor_count,
        "partitions": [
            {
                "id": p.id,
                "floor": p.floor,
                "polygon": [list(v) for v in p.boundary],
                "enterable_doors": sorted(p.enterable_doors),
                "leaveable_doors": sorted(p.leaveable_doors),
            }
            for p in (topo.partitions[pid] for pid in sorted(topo.partitions))
        ],
        "doors": [
            {
                "id": d.id,
                "x": d.position.x,
                "y": d.position.y,
                "floor": d.position.floor,
                "enterable_partitions": sorted(d.enterable_partitions),
                "leaveable_partitions": sorted(d.leaveable_partitions),
                "kind": d.kind,
            }
            for d in (topo.doors[did] for did in sorted(topo.doors))
        ],
    }
    return json.dumps(doc, indent=2)


def _require_str(entry: Mapping, key: str, what: str) -> str:
    value = entry.get(key)
    if not isinstance(value, str) or not value:
        raise SchemaError(f"{what} entry needs a non-empty string {key!r}, got {value!r}")
    return value


def _require_int(entry: Mapping, key: str, what: str) -> int:
    value = entry.get(key)
    if not isinstance(value, int) or isinstance(value, bool):
        raise SchemaError(f"{what}: {key!r} must be an integer, got {value!r}")
    return value


def _require_str_list(entry: Mapping, key: str, owner: str) -> list[str]:
    value = entry.get(key)
    if value is None:
        raise SchemaError(f"{owner!r}: missing {key!r}")
    if not isinstance(value, (list, tuple)) or not all(isinstance(v, str) for v in value):
        raise SchemaError(f"{owner!r}: {key!r} must be a list of ids")
    return list(value)


def host_partition(topo: Topology, location: Location) -> str:
    """Return the id of the partition whose interior covers ``location``.

    Raises :class:`BoundaryLocationError` if the point sits exactly on a
    partition boundary (the host is ambiguous there) and
    :class:`OutsideVenueError` if no partition on the location's floor
    covers it at all.
    """
    pt = Point(location.x, location.y)
    inside = []
    on_boundary = False
    for pid, part in topo.partitions.items():
        if part.floor != location.floor:
            continue
        if topo._prepared[pid].contains(pt):
            inside.append(pid)
        elif not on_boundary and topo._polygons[pid].covers(pt):
            on_boundary = True
    if len(inside) == 1:
        return inside[0]
    if len(inside) > 1:
        raise MappingConsistencyError(
            f"partitions {sorted(inside)} overlap at ({location.x}, {location.y})"
        )
    if on_boundary:
        raise BoundaryLocationError(
            f"location ({location.x}, {location.y}) floor {location.floor} lies on a partition boundary"
        )
    raise OutsideVenueError(
        f"location ({location.x}, {location.y}) floor {location.floor} is outside every partition"
    )


def door_to_door_distance(topo: Topology, pid: str, door_a: str, door_b: str) -> float:
    """Planar Euclidean distance between two doors of partition ``pid``.

    Both doors must serve the partition in some direction; stair doors are
    treated like any other door (no vertical distance term).
    """
    for did in (door_a, door_b):
        if did not in topo.doors:
            raise DanglingIdError(f"unknown door {did!r}")
        if pid not in topo.doors[did].partitions:
            raise DoorNotIncidentError(f"door {did!r} does not serve partition {pid!r}")
    return topo.doors[door_a].position.distance_to(topo.doors[door_b].position)


def adjacency_matrix(topo: Topology) -> np.ndarray:
    """Binary |V| x |V| adjacency matrix of the indoor graph.

    Rows/columns follow ``topo.partition_order`` (sorted partition ids).
    The matrix is symmetric with a zero diagonal; doors to the outdoors
    contribute nothing.
    """
    n = len(topo.partition_order)
    A = np.zeros((n, n), dtype=np.float64)
    for pa, pb, _door in topo.graph_edges:
        i, j = topo.partition_index(pa), topo.partition_index(pb)
        if i != j:
            A[i, j] = 1.0
            A[j, i] = 1.0
    return A
