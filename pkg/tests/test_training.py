from __future__ import annotations

import json

import numpy as np
import pytest

from partadvisor.cost import DeploymentConfig, ModelScorer
from partadvisor.schema import PartitioningState, WorkloadMix, reference_partitioning
from partadvisor.sim import SampledDatabase, SimProfile, SimScorer
from partadvisor.training import (
    OnlineBackend,
    OnlineEnvironment,
    RuntimeCache,
    TrainConfig,
    make_online_backend,
    sample_mix,
    timeout_for,
    train_offline,
    train_online,
)

from schemas import chain4, star3, two_table

SMALL = dict(episodes=6, t_max=8, hidden=(16, 8), batch_size=8)


def test_timeout_threshold():
    # reference cost 100, best reward so far -0.5, scale 2, frequency 1
    assert timeout_for(100.0, -0.5, 2.0, 1.0) == pytest.approx(25.0)
    assert timeout_for(100.0, -0.5, 2.0, 0.0) is None


def test_sampled_mixes_are_normalized():
    rng = np.random.default_rng(0)
    for _ in range(50):
        m = sample_mix(4, rng)
        assert max(m.frequencies) == 1.0 and min(m.frequencies) >= 0


def test_config_round_trip_and_validation():
    c = TrainConfig(**SMALL)
    assert TrainConfig.from_dict(c.to_dict()) == c
    assert TrainConfig().warm_epsilon == pytest.approx(0.997 ** 600)
    with pytest.raises(ValueError, match="bogus"):
        TrainConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        TrainConfig(mix_mode="zipf")


def test_offline_log_shape_and_signs():
    s = star3()
    result = train_offline(s, DeploymentConfig(), TrainConfig(**SMALL))
    assert len(result.log) == 6 * 8
    assert all(r["reward"] <= 0 for r in result.log)
    assert [r["episode"] for r in result.log[::8]] == list(range(6))
    assert result.agent.episodes == 6


def test_offline_rejects_short_episodes():
    with pytest.raises(ValueError):
        train_offline(chain4(), DeploymentConfig(), TrainConfig(episodes=1, t_max=3))


def test_same_seed_same_log(tmp_path):
    s = star3()
    a = train_offline(s, DeploymentConfig(), TrainConfig(seed=4, **SMALL))
    b = train_offline(s, DeploymentConfig(), TrainConfig(seed=4, **SMALL))
    c = train_offline(s, DeploymentConfig(), TrainConfig(seed=5, **SMALL))
    a.write_log(tmp_path / "a.jsonl")
    b.write_log(tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert a.log != c.log


def _backend(s, use_cache=True, lazy=True, rate=0.1):
    cfg = TrainConfig(use_cache=use_cache, lazy_repartitioning=lazy, **SMALL)
    db = SampledDatabase.uniform(s, rate)
    return make_online_backend(s, db, SimProfile(), cfg, np.full(s.n_queries, 1 / rate)), cfg


def test_cache_serves_repeat_measurements():
    s = star3()
    backend, _ = _backend(s)
    designs = (2, 1, 0)
    first = backend.costs(designs)
    executed = backend.executed_queries
    assert executed == 3
    assert np.array_equal(backend.costs(designs), first)
    assert backend.executed_queries == executed and backend.cache.hits == 3


def test_lazy_deploys_only_needed_tables():
    s = chain4()
    lazy, _ = _backend(s, lazy=True)
    eager, _ = _backend(s, lazy=False)
    designs = (0, 2, 1, 0)
    lazy.measure(designs, [0])  # query 0 touches a and b
    eager.measure(designs, [0])
    assert lazy.cluster.deployed == [0, 2, 1, 1]
    assert eager.cluster.deployed == list(designs)
    assert lazy.repartitions == 2 and eager.repartitions == 3


def test_cached_costs_equal_scaled_sample_runtimes():
    s = two_table()
    backend, _ = _backend(s)
    oracle = SimScorer(SampledDatabase.uniform(s, 0.1), SimProfile(), scale=[10.0, 10.0])
    for designs in [(1, 1), (2, 1), (0, 2)]:
        assert backend.costs(designs) == pytest.approx(oracle.costs(designs), rel=1e-12)
    scorer = backend.scorer(fallback=oracle)
    assert scorer.costs((2, 1)) == pytest.approx(oracle.costs((2, 1)), rel=1e-12)


def test_timeout_gives_penalised_best_reward():
    s = two_table()
    backend, _ = _backend(s)
    env = OnlineEnvironment(s, backend, timeouts=True)
    env.reset(WorkloadMix.uniform(2))
    env.best_reward = -1e-9  # every query will exceed its budget
    assert env.evaluate(PartitioningState((0, 0))) == pytest.approx(-1e-9 * 1.05)
    assert backend.timeouts == 1


def test_online_rewards_and_trace_fields():
    s = star3()
    backend, cfg = _backend(s)
    result = train_online(s, backend.cluster.db, SimProfile(), cfg, backend=backend)
    assert all(r["reward"] <= 0 for r in result.log)
    first = result.log[0]
    for key in ("executed", "runtimes", "repartitioned", "timed_out", "cache_hits"):
        assert key in first
    assert sum(r["executed_queries"] for r in result.log) == backend.executed_queries


def test_warm_start_resumes_at_reduced_epsilon():
    s = two_table()
    offline = train_offline(s, DeploymentConfig(), TrainConfig(**SMALL))
    cfg = TrainConfig(**SMALL)
    result = train_online(s, SampledDatabase.uniform(s, 0.1), SimProfile(), cfg,
                          agent=offline.agent)
    assert result.log[0]["epsilon"] == pytest.approx(0.997 ** 600)
    # the offline agent itself is untouched
    assert offline.agent.episodes == 6


def test_cache_document_round_trip(tmp_path):
    s = star3()
    backend, _ = _backend(s)
    backend.costs((1, 1, 1))
    backend.costs((2, 1, 0))
    path = tmp_path / "cache.json"
    backend.cache.save(path)
    loaded = RuntimeCache.load(path)
    assert loaded.entries == backend.cache.entries
    json.loads(path.read_text())


def test_reference_reward_is_exactly_minus_one_online():
    s = chain4()
    backend, _ = _backend(s)
    env = OnlineEnvironment(s, backend)
    env.reset(WorkloadMix((0.2, 1.0, 0.6, 0.9)))
    assert env.evaluate(reference_partitioning(s)) == -1.0
    model_env = OnlineEnvironment(s, backend, timeouts=False)
    model_env.reset(WorkloadMix.uniform(4))
    assert model_env.evaluate(reference_partitioning(s)) == -1.0
    assert ModelScorer(s, DeploymentConfig()).costs((1, 1, 1, 1)).min() > 0
