from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partadvisor.baselines import (
    BaselineError,
    brute_force_optimal,
    fact_tables,
    heuristic_general,
    heuristic_star,
)
from partadvisor.cost import DeploymentConfig, ModelScorer
from partadvisor.schema import WorkloadMix, is_valid, load_schema

from schemas import (
    FAST_NETWORK,
    SLOW_NETWORK,
    microbenchmark,
    microbenchmark_deploy,
    query,
    star3,
    table,
    two_table,
)


def ssb_like():
    return load_schema({
        "tables": [table("lineorder", 6_000_000, 100, ["lo_key", "lo_cust", "lo_date", "lo_supp"],
                         fact=True),
                   table("customer", 30_000, 200, ["c_key", "c_region"]),
                   table("date", 2_556, 80, ["d_key", "d_year"]),
                   table("supplier", 2_000, 150, ["s_key"])],
        "join_predicates": [{"left": "lineorder.lo_cust", "right": "customer.c_key"},
                            {"left": "lineorder.lo_date", "right": "date.d_key"},
                            {"left": "lineorder.lo_supp", "right": "supplier.s_key"}],
        "queries": [query(0, [("lineorder", 0.1), ("date", 0.2)], [1]),
                    query(1, [("lineorder", 0.1), ("date", 0.2), ("customer", 0.3)], [1, 0]),
                    query(2, [("lineorder", 0.1), ("date", 0.2), ("supplier", 0.5)], [1, 2]),
                    query(3, [("lineorder", 0.1), ("customer", 0.5)], [0])],
    })


class CountingScorer:
    def __init__(self, inner):
        self.inner = inner
        self.schema = inner.schema
        self.designs = []

    def query_cost(self, designs, qid):
        return self.inner.query_cost(designs, qid)

    def costs(self, designs, freqs=None):
        self.designs.append(tuple(designs))
        return self.inner.costs(designs, freqs)


def test_star_most_frequent_dimension():
    s = ssb_like()
    p = heuristic_star(s, "most-frequent")
    assert p.designs == (3, 1, 1, 1)  # lineorder on lo_date with date
    assert p.active_edges == frozenset({1})


def test_star_largest_dimension():
    p = heuristic_star(ssb_like(), "largest")
    assert p.designs == (2, 1, 1, 1)  # customer is the largest dimension
    assert p.active_edges == frozenset({0})


def test_star_modes_coincide_for_one_dimension():
    s = two_table()
    assert heuristic_star(s, "most-frequent") == heuristic_star(s, "largest")
    assert fact_tables(s) == [0]


def test_star_without_join_edge_fails():
    s = load_schema({"tables": [table("f", 100, 10, ["id"]), table("d", 10, 10, ["id"])]})
    with pytest.raises(BaselineError):
        heuristic_star(s)


def test_general_all_small_are_replicated():
    p = heuristic_general(star3(), "replicate-small", small_threshold=1e12)
    assert p.designs == (0, 0, 0)


def test_general_replicate_small_default_threshold():
    # 5% of 2e6 rows = 1e5: item is small, customer is not
    assert heuristic_general(star3(), "replicate-small").designs == (1, 1, 0)


def test_greedy_pairs_co_partition_large_and_replicate_small():
    p = heuristic_general(star3(), "greedy-largest-pairs")
    assert p.designs == (2, 1, 0)
    assert p.active_edges == frozenset({0})


def test_greedy_tie_break_by_name():
    s = load_schema({
        "tables": [table("hub", 1000, 10, ["id", "x", "y"]), table("y_side", 500, 10, ["id"]),
                   table("x_side", 500, 10, ["id"])],
        "join_predicates": [{"left": "hub.y", "right": "y_side.id"},
                            {"left": "hub.x", "right": "x_side.id"}],
    })
    p = heuristic_general(s, "greedy-largest-pairs", small_threshold=1)
    # equal combined size: (hub, x_side) sorts before (hub, y_side)
    assert p.active_edges == frozenset({1})
    assert p.designs == (2, 1, 1)
    assert p == heuristic_general(s, "greedy-largest-pairs", small_threshold=1)


def test_invalid_mode_and_threshold():
    with pytest.raises(ValueError):
        heuristic_general(star3(), "replicate-small", small_threshold=0)
    with pytest.raises(ValueError):
        heuristic_star(star3(), "random")


def test_single_table_enumerates_three_candidates():
    s = load_schema({"tables": [table("t", 1000, 10, ["a", "b"])],
                     "queries": [query(0, [("t", 1.0)], [])]})
    sc = CountingScorer(ModelScorer(s, DeploymentConfig()))
    brute_force_optimal(s, WorkloadMix.uniform(1), sc)
    assert sc.designs == [(0,), (1,), (2,)]


def test_guard():
    with pytest.raises(BaselineError):
        brute_force_optimal(star3(), WorkloadMix.uniform(3),
                            ModelScorer(star3(), DeploymentConfig()), guard=10)


def test_ties_go_to_smallest_design_vector():
    class Flat:
        schema = star3()

        def costs(self, designs, freqs=None):
            return np.ones(3)

    p, c = brute_force_optimal(star3(), WorkloadMix.uniform(3), Flat())
    assert p.designs == (0, 0, 0) and c == 3.0


@pytest.mark.parametrize("bandwidth, b_design", [(SLOW_NETWORK, 0), (FAST_NETWORK, 1)])
def test_microbenchmark_optimum_flips_with_bandwidth(bandwidth, b_design):
    s = microbenchmark()
    sc = ModelScorer(s, microbenchmark_deploy(bandwidth))
    p, cost = brute_force_optimal(s, WorkloadMix.uniform(2), sc)
    assert p.designs == (3, b_design, 1)
    assert p.active_edges == frozenset({1})
    # independent re-enumeration
    everything = {d: float(sc.costs(d).sum())
                  for d in itertools.product(range(4), range(3), range(3))}
    assert min(everything.values()) == cost
    assert sorted(everything.values())[1] > cost


@st.composite
def star_schemas(draw):
    n_dims = draw(st.integers(1, 3))
    fact_attrs = ["id"] + [f"d{i}" for i in range(n_dims)]
    tables = [table("fact", draw(st.integers(10_000, 2_000_000)), draw(st.integers(20, 200)),
                    fact_attrs, fact=True)]
    preds, queries = [], []
    for i in range(n_dims):
        tables.append(table(f"dim{i}", draw(st.integers(100, 500_000)), draw(st.integers(20, 200)),
                            ["id", "attr"]))
        preds.append({"left": f"fact.d{i}", "right": f"dim{i}.id"})
        queries.append(query(i, [("fact", draw(st.floats(0.01, 1))),
                                 (f"dim{i}", draw(st.floats(0.01, 1)))], [i]))
    return load_schema({"tables": tables, "join_predicates": preds, "queries": queries})


@settings(max_examples=100, deadline=None)
@given(star_schemas(), st.floats(5e7, 5e9))
def test_oracle_never_worse_than_heuristics(s, bw):
    sc = ModelScorer(s, DeploymentConfig(network_bandwidth=bw))
    mix = WorkloadMix.uniform(s.n_queries)
    best, cost = brute_force_optimal(s, mix, sc)
    assert is_valid(best, s)
    f = np.ones(s.n_queries)
    for p in [heuristic_star(s, "most-frequent"), heuristic_star(s, "largest"),
              heuristic_general(s, "replicate-small"),
              heuristic_general(s, "greedy-largest-pairs")]:
        assert is_valid(p, s)
        assert cost <= float(f @ sc.costs(p.designs)) * (1 + 1e-12)
