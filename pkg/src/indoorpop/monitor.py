"""Continuous nearby-population monitoring.

Answers a standing query — "which partitions within walking distance r of me
hold more than theta objects, with confidence eta?" — on a simulated clock.
Population estimates come from a trained estimator (or directly from the
trajectory store for the last-fix baseline) and are cached per partition
with a validity horizon, so consecutive emissions reuse recent predictions
instead of recomputing them.
"""

from __future__ import annotations

import json
import math
import time as _time
from bisect import bisect_right
from dataclasses import dataclass, field
from heapq import heappop, heappush
from typing import Callable

import numpy as np

from .estimators import MEModel, SEModel, me_predict_window, se_predict_window
from .extraction import extract_population
from .topology import LocationError, Location, Topology, host_partition, door_to_door_distance
from .trajectory import TrajectoryStore

MODES = ("se", "me", "last")


class QueryConfigError(ValueError):
    """Query or engine parameters are inconsistent."""


@dataclass(frozen=True)
class CmppQuery:
    """One standing nearby-population query.

    ``delta_t`` is both the emission period and the prediction offset: a
    tick at clock time t_c asks about t_q = t_c + delta_t. The clock
    advances in steps of delta_t / tick_divisor.
    """

    start: float
    duration: float = 3600.0
    radius: float = 60.0
    theta: float = 2.0
    eta: float = 0.5
    delta_t: float = 60.0
    tick_divisor: int = 4

    def __post_init__(self) -> None:
        if self.duration <= 0 or self.radius <= 0 or self.delta_t <= 0:
            raise QueryConfigError("duration, radius and delta_t must be positive")
        if not 0.0 <= self.eta <= 1.0:
            raise QueryConfigError(f"eta must lie in [0, 1], got {self.eta}")
        if self.theta < 0:
            raise QueryConfigError(f"theta must be non-negative, got {self.theta}")
        if self.tick_divisor < 1:
            raise QueryConfigError("tick_divisor must be at least 1")


def pmf_exceed(mu: float, sigma: float, theta: float) -> float:
    """Pr[X > theta] for X ~ Normal(mu, sigma^2).

    Saturates to exactly 0/1 beyond four deviations; a degenerate sigma = 0
    collapses to the point mass at mu.
    """
    if sigma < 0:
        raise ValueError(f"negative deviation {sigma}")
    if sigma == 0.0:
        return 1.0 if mu > theta else 0.0
    norm = (theta - mu) / sigma
    if norm <= -4.0:
        return 1.0
    if norm >= 4.0:
        return 0.0
    return 0.5 * math.erfc(norm / math.sqrt(2.0))


# ---------------------------------------------------------------------------
# Door-graph range search


def reachable_partitions(topo: Topology, location: Location, radius: float) -> set[str]:
    """Partitions within walking distance ``radius`` of ``location``.

    Dijkstra over doors: a partition is reached when some door entering it
    is within ``radius`` along straight-line legs between doors. The host
    partition is always included. Ties pop by door id.
    """
    origin = host_partition(topo, location)
    reached = {origin}
    best: dict[str, float] = {}
    heap: list[tuple[float, str]] = []
    for did in sorted(topo.partitions[origin].leaveable_doors):
        d = location.distance_to(topo.doors[did].position)
        if d < best.get(did, math.inf):
            best[did] = d
            heappush(heap, (d, did))
    settled: set[str] = set()
    while heap:
        dist, did = heappop(heap)
        if dist > radius:
            break
        if did in settled:
            continue
        settled.add(did)
        door = topo.doors[did]
        for u in sorted(door.enterable_partitions):
            reached.add(u)
            for nxt in sorted(topo.partitions[u].leaveable_doors):
                if nxt in settled:
                    continue
                cand = dist + door_to_door_distance(topo, u, did, nxt)
                if cand < best.get(nxt, math.inf):
                    best[nxt] = cand
                    heappush(heap, (cand, nxt))
    return reached


# ---------------------------------------------------------------------------
# Caches


def _time_key(t: float) -> int:
    return int(round(t * 1000.0))


class FeatureCache:
    """Memoizes whole-venue extraction snapshots by millisecond-rounded time."""

    def __init__(self) -> None:
        self._snapshots: dict[int, dict[str, tuple[float, float]]] = {}
        self.hits = 0
        self.misses = 0

    def get(self, t: float) -> dict[str, tuple[float, float]] | None:
        snap = self._snapshots.get(_time_key(t))
        if snap is None:
            self.misses += 1
        else:
            self.hits += 1
        return snap

    def put(self, t: float, entries: dict[str, tuple[float, float]]) -> None:
        self._snapshots[_time_key(t)] = entries

    def __len__(self) -> int:
        return len(self._snapshots)


@dataclass(frozen=True)
class PopulationEntry:
    """One cached per-partition estimate (sigma is a standard deviation)."""

    mu: float
    sigma: float
    time: float


# ---------------------------------------------------------------------------
# Baseline


def last_baseline(store: TrajectoryStore, topo: Topology, t: float) -> dict[str, int]:
    """Count objects by the host partition of their most recent fix <= t.

    Objects with no fix yet, or whose last fix does not resolve to a
    partition interior, contribute nothing.
    """
    counts = {pid: 0 for pid in topo.partition_order}
    for oid in store.object_ids:
        recs = store.trajectory(oid).records
        times = [r.time for r in recs]
        i = bisect_right(times, t) - 1
        if i < 0:
            continue
        try:
            pid = host_partition(topo, recs[i].location)
        except LocationError:
            continue
        counts[pid] += 1
    return counts


# ---------------------------------------------------------------------------
# Engine


class CmppEngine:
    """Stateful population oracle behind a continuous query.

    ``mode`` selects the estimator: ``"se"`` predicts one partition per call,
    ``"me"`` predicts the whole venue on a coarse grid aligned to the cache
    validity, ``"last"`` counts raw last fixes (no model, no caching).
    """

    def __init__(
        self,
        topo: Topology,
        store: TrajectoryStore,
        mode: str,
        model=None,
        delta: float = 60.0,
        validity: float = 120.0,
        s_max: float = 1.53,
        k_samples: int = 200,
        seed: int = 0,
        max_hops: int = 8,
        use_feature_cache: bool = True,
    ):
        if mode not in MODES:
            raise QueryConfigError(f"unknown mode {mode!r}; options: {MODES}")
        if delta <= 0 or validity <= 0:
            raise QueryConfigError("delta and validity must be positive")
        if mode == "se" and not isinstance(model, SEModel):
            raise QueryConfigError("se mode needs an SEModel")
        if mode == "me":
            if not isinstance(model, MEModel):
                raise QueryConfigError("me mode needs an MEModel")
            m = validity / delta
            if abs(m - round(m)) > 1e-9 or round(m) < 1:
                raise QueryConfigError(
                    f"validity must be a positive multiple of delta, got {validity}/{delta}"
                )
            if round(m) >= model.n_inputs:
                raise QueryConfigError(
                    f"validity spans {round(m)} grid steps but the model only looks back {model.n_inputs}"
                )
            if tuple(model.partitions) != tuple(topo.partition_order):
                raise QueryConfigError("model partition order does not match the venue")
        self.topo = topo
        self.store = store
        self.mode = mode
        self.model = model
        self.delta = float(delta)
        self.validity = float(validity)
        self.s_max = s_max
        self.k_samples = k_samples
        self.seed = seed
        self.max_hops = max_hops
        self.feature_cache = FeatureCache() if use_feature_cache else None
        self.population_cache: dict[str, PopulationEntry] = {}
        self.predict_calls = 0
        self.extract_calls = 0
        self._last_counts_memo: tuple[float, dict[str, int]] | None = None

    # -- feature extraction ------------------------------------------------

    def _extract(self, t: float) -> dict[str, tuple[float, float]]:
        if self.feature_cache is not None:
            snap = self.feature_cache.get(t)
            if snap is not None:
                return snap
        dist = extract_population(
            self.store,
            self.topo,
            None,
            t,
            s_max=self.s_max,
            k_samples=self.k_samples,
            seed=self.seed,
            max_hops=self.max_hops,
        )
        self.extract_calls += 1
        entries = dist.entries
        if self.feature_cache is not None:
            self.feature_cache.put(t, entries)
        return entries

    def _feature_times(self, t: float) -> list[float]:
        n = self.model.n_inputs
        return [t - (n - i) * self.delta for i in range(n)]

    # -- prediction --------------------------------------------------------

    def _se_predict(self, partition_id: str, t_q: float) -> PopulationEntry:
        feats = np.empty((self.model.n_inputs, 2))
        for i, ft in enumerate(self._feature_times(t_q)):
            mu, var = self._extract(ft)[partition_id]
            feats[i] = (mu, math.sqrt(var))
        self.predict_calls += 1
        mu, sigma = se_predict_window(self.model, feats)
        return PopulationEntry(mu=mu, sigma=sigma, time=t_q)

    def _me_predict(self, t_q: float) -> dict[str, PopulationEntry]:
        # Predictions are pinned to a grid of step validity = M * delta, so
        # consecutive refreshes share all but M of their feature snapshots.
        grid_t = math.floor(t_q / self.validity) * self.validity
        n = self.model.n_inputs
        v = len(self.model.partitions)
        feats = np.empty((n, v, 2))
        for i, ft in enumerate(self._feature_times(grid_t)):
            snap = self._extract(ft)
            for j, pid in enumerate(self.model.partitions):
                mu, var = snap[pid]
                feats[i, j] = (mu, math.sqrt(var))
        self.predict_calls += 1
        mu, sigma = me_predict_window(self.model, feats)
        return {
            pid: PopulationEntry(mu=float(mu[j]), sigma=float(sigma[j]), time=t_q)
            for j, pid in enumerate(self.model.partitions)
        }

    def refresh_population(self, partition_id: str, t_q: float) -> PopulationEntry:
        """Recompute the estimate for one partition at t_q and cache it.

        Multi-way prediction covers every partition per forward pass, so all
        cache entries are restamped, not just the requested one.
        """
        if self.mode == "se":
            entry = self._se_predict(partition_id, t_q)
            self.population_cache[partition_id] = entry
            return entry
        entries = self._me_predict(t_q)
        self.population_cache.update(entries)
        return entries[partition_id]

    def is_populated(
        self, partition_id: str, t_q: float, theta: float, eta: float, t_ask: float | None = None
    ) -> bool:
        """Does the estimate at t_q give Pr[population > theta] >= eta?

        ``t_ask`` is the clock time the question was raised (defaults to
        t_q). The non-predictive baseline counts fixes at or before t_ask —
        it extrapolates what it has seen, never data newer than the asker.
        """
        if self.mode == "last":
            return self._last_counts(t_q if t_ask is None else t_ask)[partition_id] > theta
        entry = self.population_cache.get(partition_id)
        if entry is None or t_q - entry.time >= self.validity:
            entry = self.refresh_population(partition_id, t_q)
        return pmf_exceed(entry.mu, entry.sigma, theta) >= eta

    def _last_counts(self, t_q: float) -> dict[str, int]:
        if self._last_counts_memo is not None and self._last_counts_memo[0] == t_q:
            return self._last_counts_memo[1]
        counts = last_baseline(self.store, self.topo, t_q)
        self._last_counts_memo = (t_q, counts)
        return counts

    # -- emission ----------------------------------------------------------

    def emit(self, location: Location, t_q: float, query: CmppQuery) -> "Emission":
        start = _time.perf_counter()
        predict0 = self.predict_calls
        extract0 = self.extract_calls
        hits0 = self.feature_cache.hits if self.feature_cache is not None else 0
        reached = sorted(reachable_partitions(self.topo, location, query.radius))
        t_ask = t_q - query.delta_t
        populated = tuple(
            pid
            for pid in reached
            if self.is_populated(pid, t_q, query.theta, query.eta, t_ask=t_ask)
        )
        elapsed_ms = (_time.perf_counter() - start) * 1000.0
        hits = (self.feature_cache.hits - hits0) if self.feature_cache is not None else 0
        return Emission(
            t_q=t_q,
            populated=populated,
            reached=tuple(reached),
            elapsed_ms=elapsed_ms,
            predict_calls=self.predict_calls - predict0,
            extract_calls=self.extract_calls - extract0,
            cache_hits=hits,
        )


@dataclass(frozen=True)
class Emission:
    """One answer of the standing query, with per-emission effort counters."""

    t_q: float
    populated: tuple[str, ...]
    reached: tuple[str, ...]
    elapsed_ms: float = 0.0
    predict_calls: int = 0
    extract_calls: int = 0
    cache_hits: int = 0

    def to_json(self) -> dict:
        return {
            "t_q": self.t_q,
            "populated": list(self.populated),
            "reached": list(self.reached),
            "elapsed_ms": self.elapsed_ms,
            "predict_calls": self.predict_calls,
            "extract_calls": self.extract_calls,
            "cache_hits": self.cache_hits,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Emission":
        return cls(
            t_q=float(doc["t_q"]),
            populated=tuple(doc["populated"]),
            reached=tuple(doc["reached"]),
            elapsed_ms=float(doc.get("elapsed_ms", 0.0)),
            predict_calls=int(doc.get("predict_calls", 0)),
            extract_calls=int(doc.get("extract_calls", 0)),
            cache_hits=int(doc.get("cache_hits", 0)),
        )


def write_emissions(emissions, fp) -> None:
    for e in emissions:
        fp.write(json.dumps(e.to_json()) + "\n")


def read_emissions(fp) -> list[Emission]:
    return [Emission.from_json(json.loads(line)) for line in fp if line.strip()]


# ---------------------------------------------------------------------------
# Query loop


def run_cmpp(
    engine: CmppEngine,
    query: CmppQuery,
    location_at: Callable[[float], Location | None],
) -> list[Emission]:
    """Drive one standing query over its duration on a simulated clock.

    Each tick reads the querying object's current location. An emission
    fires when at least ``delta_t`` has passed since the previous one and
    the object has moved since the last tick; it asks about t_q = t_c +
    delta_t, searching from the current location. ``location_at`` may return
    None (or raise a location error) to pause the query — no emission, and
    the movement guard resets.
    """
    tick = query.delta_t / query.tick_divisor
    end = query.start + query.duration
    emissions: list[Emission] = []
    t_last_emit: float | None = None
    l_last: Location | None = None
    step = 0
    while True:
        t_c = query.start + step * tick
        t_q = t_c + query.delta_t
        if t_q > end + 1e-9:
            break
        step += 1
        try:
            loc = location_at(t_c)
        except LocationError:
            loc = None
        if loc is None:
            l_last = None
            continue
        due = t_last_emit is None or t_q - t_last_emit >= query.delta_t - 1e-9
        moved = l_last is None or loc != l_last
        if due and moved:
            emissions.append(engine.emit(loc, t_q, query))
            t_last_emit = t_q
        l_last = loc
    return emissions
