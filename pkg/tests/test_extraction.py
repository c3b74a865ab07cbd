"""Path enumeration, pass-time sampling, presence mixing, population extraction.

The numeric oracles come from the worked example on the demo venue: three
routes of 28.5 / 14.3 / 19.4 m between a fixed origin (room v3) and
destination (hallway v6), observed 15 s apart at top speed 1.53 m/s.
"""

import itertools
import math

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given, settings

from indoorpop.extraction import (
    EPS_LEN,
    IndoorPath,
    InfeasiblePathError,
    PathConnectivityError,
    enumerate_paths,
    exact_poisson_binomial,
    extract_population,
    find_partition,
    make_path,
    pass_time_bounds,
    path_probabilities,
    presence_from_paths,
)
from indoorpop.topology import Location
from indoorpop.trajectory import ingest_records

from conftest import record

S_MAX = 1.53


class FixedRng:
    """Stands in for a Generator, popping preset uniform draws."""

    def __init__(self, values):
        self._values = list(values)

    def uniform(self, lo, hi):
        v = self._values.pop(0)
        assert lo - 1e-9 <= v <= hi + 1e-9, f"preset draw {v} outside [{lo}, {hi}]"
        return v


# -- path construction -------------------------------------------------------


def test_make_path_route_legs(demo):
    path = make_path(demo.topology, demo.origin, demo.route_short, demo.destination)
    assert path.partitions == ("v3", "v0", "v6")
    np.testing.assert_allclose(path.legs, (3.0, 6.8, 4.5), atol=1e-9)
    assert path.length == pytest.approx(14.3)


@pytest.mark.parametrize(
    "route_attr, expected_length",
    [("route_short", 14.3), ("route_detour", 19.4), ("route_long", 28.5)],
)
def test_make_path_worked_lengths(demo, route_attr, expected_length):
    route = getattr(demo, route_attr)
    path = make_path(demo.topology, demo.origin, route, demo.destination)
    assert path.length == pytest.approx(expected_length, abs=1e-9)


def test_make_path_door_free_same_partition(demo):
    a, b = Location(2.0, 12.0), Location(6.0, 16.0)
    path = make_path(demo.topology, a, [], b)
    assert path.doors == ()
    assert path.partitions == ("v3",)
    assert path.length == pytest.approx(a.distance_to(b))


def test_make_path_door_free_needs_one_partition(demo):
    with pytest.raises(PathConnectivityError):
        make_path(demo.topology, demo.origin, [], demo.destination)


def test_make_path_rejects_disconnected_chain(demo):
    # d4 enters v0/v3 but d5 leaves v4/v6 -- nothing shared
    with pytest.raises(PathConnectivityError, match="share no partition"):
        make_path(demo.topology, demo.origin, ["d4", "d5"], demo.destination)


def test_make_path_rejects_wrong_first_door(demo):
    # origin is in v3, which d2 does not serve
    with pytest.raises(PathConnectivityError, match="source"):
        make_path(demo.topology, demo.origin, ["d2"], demo.destination)


# -- enumeration ---------------------------------------------------------------


def test_enumerate_budget_excludes_long_route(demo):
    paths = enumerate_paths(demo.topology, demo.origin, demo.destination, budget=S_MAX * 15.0)
    assert [p.doors for p in paths] == [("d4", "d3"), ("d7", "d5")]


def test_enumerate_generous_budget_includes_long_route(demo):
    paths = enumerate_paths(demo.topology, demo.origin, demo.destination, budget=30.0)
    assert ("d4", "d0", "d1") in {p.doors for p in paths}


def test_enumerate_max_hops_cap(demo):
    paths = enumerate_paths(
        demo.topology, demo.origin, demo.destination, budget=100.0, max_hops=1
    )
    assert paths == []


def test_enumerate_door_free_included(demo):
    a, b = Location(2.0, 12.0), Location(6.0, 16.0)
    paths = enumerate_paths(demo.topology, a, b, budget=100.0)
    assert paths[0].doors == ()


def test_enumerate_matches_brute_force(demo):
    """DFS pruning must not drop any crossing sequence within budget.

    A door sequence counts as a path when every door is crossed into a
    different partition and the final crossing lands in the target's host.
    """
    topo = demo.topology
    budget = 35.0
    origin, dest = demo.origin, demo.destination
    got = {p.doors for p in enumerate_paths(topo, origin, dest, budget, max_hops=3)}

    def crossable(seq):
        states = {"v3"}
        for did in seq:
            states = {
                nxt
                for cur in states
                if did in topo.leaveable_doors(cur)
                for nxt in topo.enterable_partitions(did)
                if nxt != cur
            }
            if not states:
                return False
        return "v6" in states

    expected = set()
    for n in (1, 2, 3):
        for seq in itertools.permutations(sorted(topo.doors), n):
            points = [origin] + [topo.doors[d].position for d in seq] + [dest]
            length = sum(a.distance_to(b) for a, b in zip(points, points[1:]))
            if length <= budget + 1e-9 and crossable(seq):
                expected.add(seq)
    assert got == expected


# -- inverse-length weighting -----------------------------------------------------


def test_path_probabilities_worked_example(demo):
    short = make_path(demo.topology, demo.origin, demo.route_short, demo.destination)
    detour = make_path(demo.topology, demo.origin, demo.route_detour, demo.destination)
    dist = path_probabilities([short, detour])
    np.testing.assert_allclose(dist.probs, [0.575668, 0.424332], atol=1e-3)
    assert dist.probs.sum() == pytest.approx(1.0)


def test_path_probabilities_clamps_zero_length(demo):
    loc = Location(2.0, 12.0)
    degenerate = make_path(demo.topology, loc, [], loc)
    assert degenerate.length == 0.0
    dist = path_probabilities([degenerate, degenerate])
    np.testing.assert_allclose(dist.probs, [0.5, 0.5])
    # a degenerate path weighs as if its length were EPS_LEN
    other = IndoorPath(loc, (), loc, ("v3",), (EPS_LEN,))
    both = path_probabilities([degenerate, other])
    np.testing.assert_allclose(both.probs, [0.5, 0.5])


def test_path_probabilities_empty():
    with pytest.raises(ValueError):
        path_probabilities([])


# -- pass-time bounds ---------------------------------------------------------------


def test_pass_time_bounds_first_door(demo):
    path = make_path(demo.topology, demo.origin, demo.route_short, demo.destination)
    lb, ub = pass_time_bounds(path, k=1, t_prev=0.0, t_b=15.0, s_max=S_MAX)
    assert lb == pytest.approx(1.96, abs=0.01)
    assert ub == pytest.approx(7.61, abs=0.01)


def test_pass_time_bounds_second_door(demo):
    path = make_path(demo.topology, demo.origin, demo.route_short, demo.destination)
    lb, ub = pass_time_bounds(path, k=2, t_prev=2.5, t_b=15.0, s_max=S_MAX)
    assert lb == pytest.approx(2.5 + 6.8 / S_MAX)
    assert ub == pytest.approx(15.0 - 4.5 / S_MAX)


def test_pass_time_bounds_infeasible(demo):
    path = make_path(demo.topology, demo.origin, demo.route_short, demo.destination)
    with pytest.raises(InfeasiblePathError):
        pass_time_bounds(path, k=1, t_prev=0.0, t_b=5.0, s_max=S_MAX)


def test_pass_time_bounds_door_index_range(demo):
    path = make_path(demo.topology, demo.origin, demo.route_short, demo.destination)
    with pytest.raises(ValueError):
        pass_time_bounds(path, k=0, t_prev=0.0, t_b=15.0, s_max=S_MAX)
    with pytest.raises(ValueError):
        pass_time_bounds(path, k=3, t_prev=0.0, t_b=15.0, s_max=S_MAX)


# -- conditional partition sampling ----------------------------------------------


def test_find_partition_between_draws(demo):
    path = make_path(demo.topology, demo.origin, demo.route_short, demo.destination)
    assert find_partition(path, 0.0, 15.0, 5.0, S_MAX, FixedRng([2.5, 7.5])) == "v0"


def test_find_partition_edges(demo):
    path = make_path(demo.topology, demo.origin, demo.route_short, demo.destination)
    assert find_partition(path, 0.0, 15.0, 0.0, S_MAX, FixedRng([2.5, 7.5])) == "v3"
    assert find_partition(path, 0.0, 15.0, 15.0, S_MAX, FixedRng([2.5, 7.5])) == "v6"
    # exactly on a sampled door time -> the partition just entered
    assert find_partition(path, 0.0, 15.0, 2.5, S_MAX, FixedRng([2.5, 7.5])) == "v0"


def test_find_partition_door_free(demo):
    a, b = Location(2.0, 12.0), Location(6.0, 16.0)
    path = make_path(demo.topology, a, [], b)
    assert find_partition(path, 0.0, 15.0, 8.0, S_MAX, FixedRng([])) == "v3"


def test_find_partition_outside_bracket(demo):
    path = make_path(demo.topology, demo.origin, demo.route_short, demo.destination)
    with pytest.raises(ValueError, match="outside"):
        find_partition(path, 0.0, 15.0, 16.0, S_MAX, FixedRng([]))


def test_presence_from_paths_worked_example(demo):
    short = make_path(demo.topology, demo.origin, demo.route_short, demo.destination)
    detour = make_path(demo.topology, demo.origin, demo.route_detour, demo.destination)
    dist = path_probabilities([short, detour])
    presence = presence_from_paths(
        dist,
        [{"v3": 0.1, "v6": 0.9}, {"v3": 0.05, "v6": 0.95}],
        object_id="o",
        time=5.0,
    )
    p = presence.probs["v3"]
    assert p == pytest.approx(0.0788, abs=1e-4)
    assert p * (1.0 - p) == pytest.approx(0.0726, abs=1e-4)


def test_presence_requires_normalized_conditionals(demo):
    short = make_path(demo.topology, demo.origin, demo.route_short, demo.destination)
    dist = path_probabilities([short])
    with pytest.raises(ValueError, match="sum"):
        presence_from_paths(dist, [{"v3": 0.4}])
    with pytest.raises(ValueError, match="per path"):
        presence_from_paths(dist, [])


# -- population extraction ---------------------------------------------------------


def test_extract_is_deterministic(demo, demo_walk_store):
    a = extract_population(demo_walk_store, demo.topology, None, 5.0)
    b = extract_population(demo_walk_store, demo.topology, None, 5.0)
    assert a.entries == b.entries


def test_extract_target_independence(demo, demo_walk_store):
    full = extract_population(demo_walk_store, demo.topology, None, 5.0)
    partial = extract_population(demo_walk_store, demo.topology, ["v0", "v3"], 5.0)
    assert set(partial.entries) == {"v0", "v3"}
    for pid in partial.entries:
        assert partial.entries[pid] == full.entries[pid]


def test_extract_conserves_single_object(demo, demo_walk_store):
    dist = extract_population(demo_walk_store, demo.topology, None, 5.0)
    total = sum(mu for mu, _ in dist.entries.values())
    assert total == pytest.approx(1.0, abs=1e-9)


def test_extract_variance_below_mean(demo, demo_walk_store):
    dist = extract_population(demo_walk_store, demo.topology, None, 5.0)
    for pid, (mu, var) in dist.entries.items():
        assert 0.0 <= var <= mu + 1e-12, pid


def test_extract_ignores_unbracketed_objects(demo, demo_walk_store):
    dist = extract_population(demo_walk_store, demo.topology, None, 100.0)
    assert all(mu == 0.0 for mu, _ in dist.entries.values())


def test_extract_multiple_objects_add_up(demo):
    o, d = demo.origin, demo.destination
    store = ingest_records(
        [
            record("a", 0.0, o.x, o.y),
            record("a", 15.0, d.x, d.y),
            record("b", 0.0, d.x, d.y),
            record("b", 15.0, o.x, o.y),
        ]
    )
    dist = extract_population(store, demo.topology, None, 7.0)
    total = sum(mu for mu, _ in dist.entries.values())
    assert total == pytest.approx(2.0, abs=1e-9)


def test_sampling_converges_with_more_draws(demo, demo_walk_store):
    """Estimates at 10^4 draws sit within 0.02 of a 10^6-draw reference."""
    coarse = extract_population(demo_walk_store, demo.topology, None, 5.0, k_samples=10_000)
    fine = extract_population(demo_walk_store, demo.topology, None, 5.0, k_samples=1_000_000)
    worst = max(abs(coarse.entries[pid][0] - fine.entries[pid][0]) for pid in coarse.entries)
    assert worst <= 0.02


@settings(max_examples=25, deadline=None)
@given(
    x0=st.floats(0.5, 19.5),
    y0=st.floats(10.5, 17.5),
    x1=st.floats(0.5, 29.5),
    y1=st.floats(0.5, 3.5),
    gap=st.floats(12.0, 40.0),
    t_frac=st.floats(0.0, 1.0),
)
def test_single_object_presence_normalizes(demo, x0, y0, x1, y1, gap, t_frac):
    """Whenever any path is feasible, one object's presence sums to one."""
    store = ingest_records([record("a", 0.0, x0, y0), record("a", gap, x1, y1)])
    dist = extract_population(store, demo.topology, None, t_frac * gap, k_samples=40)
    total = sum(mu for mu, _ in dist.entries.values())
    assert total == pytest.approx(1.0, abs=1e-9) or total == 0.0


# -- exact population PMF ------------------------------------------------------------


def test_poisson_binomial_empty():
    np.testing.assert_array_equal(exact_poisson_binomial([]), [1.0])


def test_poisson_binomial_single():
    np.testing.assert_allclose(exact_poisson_binomial([0.5]), [0.5, 0.5])


def test_poisson_binomial_two():
    np.testing.assert_allclose(
        exact_poisson_binomial([0.3, 0.6]), [0.28, 0.54, 0.18], atol=1e-12
    )


def test_poisson_binomial_validation():
    with pytest.raises(ValueError, match="64"):
        exact_poisson_binomial([0.5] * 65)
    with pytest.raises(ValueError, match="outside"):
        exact_poisson_binomial([1.2])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=0, max_size=64))
def test_poisson_binomial_is_a_distribution(probs):
    pmf = exact_poisson_binomial(probs)
    assert pmf.shape == (len(probs) + 1,)
    assert np.all(pmf >= -1e-12)
    assert pmf.sum() == pytest.approx(1.0, abs=1e-9)
    # mean and variance identities for independent Bernoullis
    k = np.arange(len(pmf))
    assert (pmf * k).sum() == pytest.approx(sum(probs), abs=1e-9)
