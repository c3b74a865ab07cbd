"""Population extraction from sparse trajectories.

For a query time t, each object contributes the pair of positioning records
bracketing t.  All indoor paths the object could have walked between the two
reports (within the speed budget) are enumerated; each path gets a
probability inversely proportional to its length; door pass times along a
path are Monte-Carlo sampled to estimate where along the path the object was
at t.  Summing the per-object presence probabilities per partition yields a
Poisson-binomial population, which is approximated by a Normal distribution
via its first two moments.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .topology import Location, Topology, host_partition
from .trajectory import TrajectoryStore

log = logging.getLogger(__name__)

#: Paths shorter than this (metres) weigh as if they had this length, so the
#: inverse-length weighting never divides by zero.
EPS_LEN = 0.1

#: Default cap on the number of doors per enumerated path.
MAX_HOPS = 8


class InfeasiblePathError(ValueError):
    """A path cannot be walked within the time budget (caller bug)."""


class PathConnectivityError(ValueError):
    """A door sequence does not form a connected indoor path."""


@dataclass(frozen=True)
class IndoorPath:
    """A candidate indoor path: source, door sequence, target.

    ``partitions`` is the host chain (one entry more than ``doors``) and
    ``legs`` the Euclidean leg lengths source->d1, d1->d2, ..., dm->target.
    """

    source: Location
    doors: tuple[str, ...]
    target: Location
    partitions: tuple[str, ...]
    legs: tuple[float, ...]

    @property
    def length(self) -> float:
        return float(sum(self.legs))


@dataclass(frozen=True)
class PathDistribution:
    """Candidate paths with their normalized probabilities."""

    paths: tuple[IndoorPath, ...]
    probs: np.ndarray


@dataclass(frozen=True)
class PresenceVector:
    """One object's per-partition presence probabilities at a time instant."""

    object_id: str
    time: float
    probs: dict[str, float]


@dataclass(frozen=True)
class PopulationDistribution:
    """Per-partition Normal population parameters at a time instant."""

    time: float
    entries: dict[str, tuple[float, float]]  # partition -> (mu, sigma^2)


def make_path(topo: Topology, source: Location, doors: Sequence[str], target: Location) -> IndoorPath:
    """Build an IndoorPath from a door sequence, validating connectivity.

    The host chain is resolved greedily: each consecutive door pair must
    share a partition that the first door enters and the second door leaves.
    """
    va = host_partition(topo, source)
    vb = host_partition(topo, target)
    doors = tuple(doors)
    if not doors:
        if va != vb:
            raise PathConnectivityError("door-free path requires both endpoints in one partition")
        return IndoorPath(source, (), target, (va,), (source.distance_to(target),))
    first, last = topo.doors[doors[0]], topo.doors[doors[-1]]
    if va not in first.leaveable_partitions:
        raise PathConnectivityError(f"source partition {va!r} cannot be left through door {doors[0]!r}")
    if vb not in last.enterable_partitions:
        raise PathConnectivityError(f"target partition {vb!r} cannot be entered through door {doors[-1]!r}")
    chain = [va]
    for d_cur, d_nxt in zip(doors, doors[1:]):
        shared = topo.doors[d_cur].enterable_partitions & topo.doors[d_nxt].leaveable_partitions
        if not shared:
            raise PathConnectivityError(f"doors {d_cur!r} and {d_nxt!r} share no partition")
        # Prefer not to U-turn into the partition we just left.
        forward = sorted(shared - {chain[-1]})
        chain.append(forward[0] if forward else sorted(shared)[0])
    chain.append(vb)
    points = [source] + [topo.doors[d].position for d in doors] + [target]
    legs = tuple(a.distance_to(b) for a, b in zip(points, points[1:]))
    return IndoorPath(source, doors, target, tuple(chain), legs)


def path_length(topo: Topology, path: IndoorPath) -> float:
    """Recompute a path's length from the venue, re-validating connectivity."""
    rebuilt = make_path(topo, path.source, path.doors, path.target)
    return rebuilt.length


def enumerate_paths(
    topo: Topology,
    source: Location,
    target: Location,
    budget: float,
    max_hops: int = MAX_HOPS,
) -> list[IndoorPath]:
    """All indoor paths from ``source`` to ``target`` within a length budget.

    Depth-first search over door sequences without repeated doors, pruned by
    the admissible bound prefix + straight-line-to-target > budget and capped
    at ``max_hops`` doors.  If both endpoints share a partition the door-free
    straight path is included.  Results are sorted by door sequence, so the
    order is deterministic.
    """
    va = host_partition(topo, source)
    vb = host_partition(topo, target)
    results: list[IndoorPath] = []
    tol = 1e-9
    if va == vb:
        direct = source.distance_to(target)
        if direct <= budget + tol:
            results.append(IndoorPath(source, (), target, (va,), (direct,)))

    def extend(current: str, used: tuple[str, ...], chain: tuple[str, ...], legs: tuple[float, ...], last: Location, prefix: float) -> None:
        if len(used) >= max_hops:
            return
        for did in sorted(topo.leaveable_doors(current)):
            if did in used:
                continue
            pos = topo.doors[did].position
            leg = last.distance_to(pos)
            new_prefix = prefix + leg
            if new_prefix + pos.distance_to(target) > budget + tol:
                continue
            for nxt in sorted(topo.enterable_partitions(did)):
                if nxt == current:
                    continue
                if nxt == vb:
                    closing = pos.distance_to(target)
                    results.append(
                        IndoorPath(source, used + (did,), target, chain + (vb,), legs + (leg, closing))
                    )
                extend(nxt, used + (did,), chain + (nxt,), legs + (leg,), pos, new_prefix)

    extend(va, (), (va,), (), source, 0.0)
    results.sort(key=lambda p: p.doors)
    return results


def path_probabilities(paths: Sequence[IndoorPath], eps_len: float = EPS_LEN) -> PathDistribution:
    """Normalized inverse-length path probabilities.

    Lengths below ``eps_len`` are clamped to it, so degenerate zero-length
    paths (object reported twice from the same spot) get finite weight.
    """
    if not paths:
        raise ValueError("no paths to weigh")
    lengths = np.array([max(p.length, eps_len) for p in paths], dtype=np.float64)
    weights = 1.0 / lengths
    return PathDistribution(paths=tuple(paths), probs=weights / weights.sum())


def pass_time_bounds(
    path: IndoorPath, k: int, t_prev: float, t_b: float, s_max: float
) -> tuple[float, float]:
    """[earliest, latest] pass time of the path's k-th door (1-based).

    The lower bound assumes top speed from the previous sampled node (at
    ``t_prev``) over the single leg to door k; the upper bound reserves, at
    top speed, the remaining along-path distance after door k before the
    bracket closes at ``t_b``.
    """
    if not (1 <= k <= len(path.doors)):
        raise ValueError(f"door index {k} out of range 1..{len(path.doors)}")
    lb = t_prev + path.legs[k - 1] / s_max
    ub = t_b - sum(path.legs[k:]) / s_max
    if lb > ub + 1e-9:
        raise InfeasiblePathError(
            f"door {k} of path {path.doors!r} cannot be passed in [{t_prev}, {t_b}] at speed {s_max}"
        )
    return lb, max(lb, ub)


def find_partition(
    path: IndoorPath,
    t_a: float,
    t_b: float,
    t: float,
    s_max: float,
    rng: np.random.Generator,
) -> str:
    """Sample the partition hosting the object at t, given it walked ``path``.

    Door pass times are drawn sequentially, each uniform within its
    feasibility bounds given the previous draw.  The object is in
    ``path.partitions[i]`` for t in [t_i, t_{i+1}) with t_0 = t_a and
    t_{m+1} = t_b; t = t_b maps to the final partition.
    """
    if not (t_a <= t <= t_b):
        raise ValueError(f"t={t} outside bracket [{t_a}, {t_b}]")
    times = [t_a]
    t_prev = t_a
    for k in range(1, len(path.doors) + 1):
        lb, ub = pass_time_bounds(path, k, t_prev, t_b, s_max)
        t_prev = float(rng.uniform(lb, max(lb, ub)))
        times.append(t_prev)
    times.append(t_b)
    if t == t_b:
        return path.partitions[-1]
    idx = 0
    for i in range(len(times) - 1):
        if times[i] <= t:
            idx = i
    return path.partitions[min(idx, len(path.partitions) - 1)]


def _sample_presence(
    path: IndoorPath,
    t_a: float,
    t_b: float,
    t: float,
    s_max: float,
    rng: np.random.Generator,
    k_samples: int,
) -> dict[str, float]:
    """Monte-Carlo Pr(partition | path, t) over ``k_samples`` pass-time draws.

    Vectorized version of :func:`find_partition`: all samples advance
    door-by-door together.
    """
    m = len(path.doors)
    if m == 0:
        return {path.partitions[0]: 1.0}
    times = np.empty((k_samples, m + 2), dtype=np.float64)
    times[:, 0] = t_a
    times[:, m + 1] = t_b
    suffix = np.cumsum(path.legs[::-1])[::-1]
    t_prev = np.full(k_samples, t_a)
    for k in range(1, m + 1):
        lb = t_prev + path.legs[k - 1] / s_max
        ub = t_b - suffix[k] / s_max
        if np.any(lb > ub + 1e-9):
            raise InfeasiblePathError(f"path {path.doors!r} infeasible in [{t_a}, {t_b}]")
        t_prev = rng.uniform(lb, np.maximum(lb, ub))
        times[:, k] = t_prev
    if t == t_b:
        return {path.partitions[-1]: 1.0}
    idx = np.minimum((times <= t).sum(axis=1) - 1, m)
    counts = np.bincount(idx, minlength=m + 1)
    # a looping path hosts the same partition at several chain positions, so
    # accumulate rather than keying the comprehension on partition id
    out: dict[str, float] = {}
    for i in range(m + 1):
        if counts[i]:
            out[path.partitions[i]] = out.get(path.partitions[i], 0.0) + counts[i] / k_samples
    return out


def presence_from_paths(
    dist: PathDistribution,
    conditionals: Sequence[Mapping[str, float]],
    object_id: str = "",
    time: float = 0.0,
) -> PresenceVector:
    """Mix per-path conditional partition probabilities into presence.

    ``conditionals[j]`` maps partition -> Pr(partition | path j, t) and must
    sum to 1 within 1e-6.
    """
    if len(conditionals) != len(dist.paths):
        raise ValueError("one conditional map per path required")
    probs: dict[str, float] = {}
    for j, cond in enumerate(conditionals):
        total = float(sum(cond.values()))
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"conditionals of path {j} sum to {total}, not 1")
        for pid, pr in cond.items():
            probs[pid] = probs.get(pid, 0.0) + float(dist.probs[j]) * pr
    return PresenceVector(object_id=object_id, time=time, probs=probs)


def extract_population(
    store: TrajectoryStore,
    topo: Topology,
    targets: Iterable[str] | None,
    t: float,
    s_max: float = 1.53,
    k_samples: int = 200,
    seed: int = 0,
    max_hops: int = MAX_HOPS,
) -> PopulationDistribution:
    """Estimate per-partition Normal population parameters at time ``t``.

    ``targets`` restricts the returned entries (None means every partition);
    the computation itself always covers all partitions touched by any path,
    so results for a partition do not depend on what else was requested.
    Monte-Carlo draws come from per-(object, path) substreams keyed on
    ``seed`` and ``t``, making the result deterministic and independent of
    object processing order.
    """
    pairs = store.bracketing_pairs(t)
    mu: dict[str, float] = {}
    var: dict[str, float] = {}
    t_key = int(round(t * 1000.0)) % (2**31)
    for obj_idx, oid in enumerate(sorted(pairs)):
        rec_a, rec_b = pairs[oid]
        budget = s_max * (rec_b.time - rec_a.time)
        paths = enumerate_paths(topo, rec_a.location, rec_b.location, budget, max_hops)
        if not paths:
            log.debug("no feasible path for object %s in [%s, %s]", oid, rec_a.time, rec_b.time)
            continue
        dist = path_probabilities(paths)
        presence: dict[str, float] = {}
        for p_idx, (path, pr) in enumerate(zip(dist.paths, dist.probs)):
            rng = np.random.default_rng([seed, t_key, obj_idx, p_idx])
            for pid, frac in _sample_presence(path, rec_a.time, rec_b.time, t, s_max, rng, k_samples).items():
                presence[pid] = presence.get(pid, 0.0) + float(pr) * frac
        for pid, p in presence.items():
            # Mixing weights sum to 1 exactly in theory; rounding can push the
            # total a few ulp past it, which would turn p(1-p) negative.
            p = min(max(p, 0.0), 1.0)
            mu[pid] = mu.get(pid, 0.0) + p
            var[pid] = var.get(pid, 0.0) + p * (1.0 - p)
    if targets is None:
        targets = topo.partition_order
    entries = {pid: (mu.get(pid, 0.0), var.get(pid, 0.0)) for pid in targets}
    return PopulationDistribution(time=t, entries=entries)


def exact_poisson_binomial(probs: Sequence[float]) -> np.ndarray:
    """Exact PMF of a sum of independent Bernoulli variables.

    Reference implementation for validating the Normal approximation; capped
    because it exists for oracle use on small cases, not production counts.
    """
    probs = list(probs)
    if len(probs) > 64:
        raise ValueError(f"exact PMF limited to 64 probabilities, got {len(probs)}")
    for p in probs:
        if not (0.0 <= p <= 1.0):
            raise ValueError(f"probability {p} outside [0, 1]")
    pmf = np.array([1.0])
    for p in probs:
        pmf = np.convolve(pmf, [1.0 - p, p])
    return pmf
