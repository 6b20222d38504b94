from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partadvisor.cost import DeploymentConfig, estimate_query_cost
from partadvisor.schema import PartitioningState, WorkloadMix, load_schema
from partadvisor.sim import (
    SampledDatabase,
    SimCluster,
    SimProfile,
    SimScorer,
    compute_scale_factors,
    repartition_seconds,
    sampling_rank_agreement,
    simulate_query,
)

from schemas import chain4, query, star3, table, two_table

DEPLOY = DeploymentConfig(node_count=4, network_bandwidth=1e8)


@settings(max_examples=150, deadline=None)
@given(st.sampled_from([two_table(), star3(), chain4()]).flatmap(
    lambda s: st.tuples(st.just(s), st.tuples(*(st.integers(0, t.block_size - 1)
                                                for t in s.tables)))))
def test_neutral_profile_reproduces_cost_model_exactly(sd):
    s, designs = sd
    p = PartitioningState(designs)
    full = SampledDatabase.full(s)
    for q in s.queries:
        assert simulate_query(p, q, full, SimProfile(DEPLOY)) == \
            estimate_query_cost(p, q, s, DEPLOY).total


def test_repartition_times():
    # 1e8 bytes over 4 nodes at 1e8 B/s
    assert repartition_seconds(1e8, 0, DEPLOY) == pytest.approx(3.0)
    assert repartition_seconds(1e8, 1, DEPLOY) == pytest.approx(0.75)


def test_sample_rows_rounding_and_floor():
    s = load_schema({"tables": [table("a", 134_200, 10, ["id"]), table("b", 500, 10, ["id"]),
                                table("c", 50, 10, ["id"])]})
    assert SampledDatabase.uniform(s, 0.1).rows == (13_420, 100, 50)
    assert SampledDatabase.uniform(s, 0.1, min_rows=1).rows == (13_420, 50, 5)
    with pytest.raises(ValueError):
        SampledDatabase.uniform(s, 0.0)
    with pytest.raises(ValueError):
        SampledDatabase(s, (0.1,))


def test_scale_factor_is_inverse_rate_for_linear_profile():
    s = two_table()
    scale = compute_scale_factors(PartitioningState((1, 1)), SampledDatabase.full(s),
                                  SampledDatabase.uniform(s, 0.1), SimProfile(DEPLOY))
    assert scale == pytest.approx([10.0, 10.0], rel=1e-12)


def test_scale_factor_superlinear_scan():
    s = two_table()
    prof = SimProfile(DEPLOY, scan_exponent={"fact": 1.2})
    scale = compute_scale_factors(PartitioningState((1, 1)), SampledDatabase.full(s),
                                  SampledDatabase.uniform(s, 0.1), prof)
    assert scale[1] == pytest.approx(10 ** 1.2, rel=1e-9)


def test_zero_sample_runtime_raises():
    s = load_schema({"tables": [table("t", 0, 10, ["id"])],
                     "queries": [query(0, [("t", 1.0)], [])]})
    with pytest.raises(ZeroDivisionError):
        compute_scale_factors(PartitioningState((1,)), SampledDatabase.full(s),
                              SampledDatabase.uniform(s, 0.5), SimProfile())


def test_profile_knobs():
    s = two_table()
    full = SampledDatabase.full(s)
    q = s.queries[0]
    base = simulate_query(PartitioningState((1, 0)), q, full, SimProfile(DEPLOY))
    pen = simulate_query(PartitioningState((1, 0)), q, full,
                         SimProfile(DEPLOY, replication_penalty=3.0))
    # only the replicated dim scan (1e6 / 1e9 s) is tripled
    assert pen - base == pytest.approx(2 * 1e-3, rel=1e-9)
    part = PartitioningState((1, 1))
    assert simulate_query(part, q, full, SimProfile(DEPLOY, replication_penalty=3.0)) == \
        simulate_query(part, q, full, SimProfile(DEPLOY))
    lat = simulate_query(part, q, full, SimProfile(DEPLOY, shuffle_latency=0.5))
    assert lat - simulate_query(part, q, full, SimProfile(DEPLOY)) == pytest.approx(0.5)
    colo = PartitioningState((2, 1))
    assert simulate_query(colo, q, full, SimProfile(DEPLOY, shuffle_latency=0.5)) == \
        simulate_query(colo, q, full, SimProfile(DEPLOY))


def test_noise_bounded_and_deterministic():
    s = star3()
    full = SampledDatabase.full(s)
    prof = SimProfile(DEPLOY, noise=0.05)
    for designs in [(1, 1, 1), (2, 1, 0), (0, 0, 0)]:
        p = PartitioningState(designs)
        for q in s.queries:
            clean = simulate_query(p, q, full, SimProfile(DEPLOY))
            a = simulate_query(p, q, full, prof, seed=3)
            assert a == simulate_query(p, q, full, prof, seed=3)
            assert abs(a / clean - 1) <= 0.05
    with pytest.raises(ValueError):
        SimProfile(noise=0.2)


def test_cluster_bookkeeping_and_timeout():
    s = two_table()
    db = SampledDatabase.full(s)
    c = SimCluster(db, SimProfile(DEPLOY), (1, 1))
    assert c.repartition_table(0, 1) == 0.0 and c.repartitions == 0
    assert c.repartition_table(1, 0) == pytest.approx(1e6 * 3 / 1e8)
    assert c.repartitions == 1 and c.deployed == [1, 0]
    rt = c.run_query(0)
    assert rt == simulate_query(PartitioningState((1, 0)), s.queries[0], db, SimProfile(DEPLOY))
    assert c.run_query(0, timeout=rt / 2) is None
    assert c.executed_queries == 2
    assert c.query_time == pytest.approx(rt * 1.5)


def test_profile_dict_round_trip():
    prof = SimProfile(DEPLOY, scan_exponent={"fact": 1.1}, shuffle_latency=0.1,
                      replication_penalty=2.0, noise=0.01)
    assert SimProfile.from_dict(prof.to_dict()) == prof
    with pytest.raises(ValueError, match="bogus"):
        SimProfile.from_dict({"bogus": 1})


def test_rank_agreement_perfect_on_full_data():
    s = star3()
    states = [PartitioningState(d) for d in [(1, 1, 1), (2, 1, 0), (0, 0, 0), (3, 2, 1)]]
    full = SampledDatabase.full(s)
    out = sampling_rank_agreement(states, WorkloadMix.uniform(3), full, full, SimProfile(),
                                  [1.0, 1.0, 1.0])
    assert out["pairwise_agreement"] == 1.0
    assert out["best_on_sample_is_best_on_full"]
    assert out["weighted_sample"] == out["full"]


def test_sim_scorer_applies_scale():
    s = two_table()
    db = SampledDatabase.uniform(s, 0.1)
    plain = SimScorer(db, SimProfile(DEPLOY))
    scaled = SimScorer(db, SimProfile(DEPLOY), scale=[10.0, 2.0])
    assert scaled.query_cost((1, 1), 0) == pytest.approx(10 * plain.query_cost((1, 1), 0))
    assert list(scaled.costs((1, 1), [0.0, 1.0]))[0] == 0.0
