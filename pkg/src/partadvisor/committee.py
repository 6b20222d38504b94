"""A committee of agents, each specialised on one region of the frequency space.

Reference partitionings are the naive agent's answers to probe mixes that
over-weight a single query. A mix belongs to the subspace of the reference
that is cheapest for it, and one expert per reference is trained only on
mixes from its own subspace.
"""

from __future__ import annotations

import json
from collections.abc import Mapping, Sequence
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .cost import DeploymentConfig, ModelScorer
from .dqn import QAgent
from .env import Environment, Scorer, state_size
from .inference import Recommendation, recommend
from .schema import PartitioningState, Schema, WorkloadMix, reference_partitioning
from .sim import SampledDatabase, SimCluster, SimProfile, compute_scale_factors
from .training import (
    CachedScorer,
    MixSource,
    OnlineBackend,
    RuntimeCache,
    TrainConfig,
    train_online,
)

MANIFEST = "manifest.json"


@dataclass
class CommitteeConfig:
    f_low: float = 0.1
    f_high: float = 1.0
    expert_episodes: int = 200
    extend_episodes: int = 150
    max_draws: int = 10 ** 4

    def __post_init__(self):
        if not 0 <= self.f_low < self.f_high <= 1:
            raise ValueError("need 0 <= f_low < f_high <= 1")
        if self.f_high != 1.0:
            raise ValueError("f_high must be 1 for max-normalized mixes")

    @classmethod
    def from_dict(cls, doc: Mapping) -> CommitteeConfig:
        names = {f.name for f in fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"committee: unknown field(s) {sorted(unknown)}")
        return cls(**dict(doc))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ReferenceSet:
    states: list[PartitioningState]
    costs: np.ndarray  # (references, queries) scaled sample costs
    probes: list[int]  # query whose probe vector first produced each reference

    def __len__(self) -> int:
        return len(self.states)


def probe_vector(m: int, i: int, f_low: float = 0.1, f_high: float = 1.0) -> WorkloadMix:
    f = [f_low] * m
    f[i] = f_high
    return WorkloadMix(tuple(f))


def reference_costs(states: Sequence[PartitioningState], scorer: Scorer) -> np.ndarray:
    return np.array([scorer.costs(p.designs) for p in states], dtype=float)


def derive_references(agent: QAgent, schema: Schema, scorer: Scorer, t_max: int,
                      f_low: float = 0.1, f_high: float = 1.0) -> ReferenceSet:
    states: list[PartitioningState] = []
    probes: list[int] = []
    seen: set[tuple[int, ...]] = set()
    for i in range(schema.n_queries):
        rec = recommend(agent, probe_vector(schema.n_queries, i, f_low, f_high), schema,
                        scorer, t_max)
        # edges are scaffolding: equal designs mean equal costs
        if rec.state.designs not in seen:
            seen.add(rec.state.designs)
            states.append(rec.state)
            probes.append(i)
    return ReferenceSet(states, reference_costs(states, scorer), probes)


def assign_subspace(mix: WorkloadMix | Sequence[float], refs: ReferenceSet) -> int:
    """Index of the reference with the lowest weighted cost; lowest index on ties."""
    f = np.asarray(mix.frequencies if isinstance(mix, WorkloadMix) else mix, dtype=float)
    if len(refs) == 0:
        raise ValueError("no reference partitionings")
    if refs.costs.shape != (len(refs), len(f)):
        raise ValueError("reference cost table does not match the mix")
    if np.isnan(refs.costs).any():
        raise ValueError("reference cost table has missing entries")
    return int(np.argmin(refs.costs @ f))


def routed_mix_source(refs: ReferenceSet, k: int, m: int, f_low: float = 0.1,
                      max_draws: int = 10 ** 4, chunk: int = 256) -> MixSource:
    """Uniform mixes kept only when they fall into subspace ``k``."""
    probe = probe_vector(m, refs.probes[k], f_low)

    def source(rng: np.random.Generator) -> WorkloadMix:
        drawn = 0
        while drawn < max_draws:
            n = min(chunk, max_draws - drawn)
            raw = rng.uniform(0.0, 1.0, size=(n, m))
            raw /= raw.max(axis=1, keepdims=True)
            hits = np.flatnonzero(np.argmin(raw @ refs.costs.T, axis=1) == k)
            if hits.size:
                return WorkloadMix(tuple(float(x) for x in raw[hits[0]]))
            drawn += n
        return probe

    return source


def _expert_seed(seed: int, k: int) -> int:
    return seed * 1009 + 7919 * (k + 1)


def train_expert(k: int, refs: ReferenceSet, schema: Schema, naive: QAgent,
                 backend: OnlineBackend, config: TrainConfig, cconfig: CommitteeConfig) -> QAgent:
    """Expert ``k`` starts from the naive agent and only sees mixes routed to ``k``."""
    cfg = config.replace(seed=_expert_seed(config.seed, k))
    source = routed_mix_source(refs, k, schema.n_queries, cconfig.f_low, cconfig.max_draws)
    result = train_online(schema, backend.cluster.db, backend.cluster.profile, cfg, agent=naive,
                          backend=backend, mix_source=source, episodes=cconfig.expert_episodes)
    return result.agent


@dataclass
class Committee:
    schema: Schema
    naive: QAgent
    refs: ReferenceSet
    experts: list[QAgent]
    config: TrainConfig
    cconfig: CommitteeConfig = field(default_factory=CommitteeConfig)
    backend: OnlineBackend | None = None
    cache: RuntimeCache = field(default_factory=RuntimeCache)
    scale: np.ndarray | None = None
    deploy: DeploymentConfig = field(default_factory=DeploymentConfig)

    def scorer(self) -> Scorer:
        if self.backend is not None:
            return self.backend.scorer()
        scale = np.ones(self.schema.n_queries) if self.scale is None else self.scale
        return CachedScorer(self.schema, self.cache, scale, ModelScorer(self.schema, self.deploy))

    def save(self, directory: str | Path) -> None:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        self.naive.save(out / "naive.json")
        names = []
        for k, agent in enumerate(self.experts):
            names.append(f"expert_{k}.json")
            agent.save(out / names[-1])
        self.cache.save(out / "cache.json")
        (out / "schema.json").write_text(json.dumps(self.schema.to_document(), indent=2))
        manifest = {
            "kind": "committee",
            "fingerprint": self.schema.fingerprint(),
            "references": [list(p.designs) for p in self.refs.states],
            "active_edges": [sorted(p.active_edges) for p in self.refs.states],
            "probes": self.refs.probes,
            "reference_costs": self.refs.costs.tolist(),
            "experts": names,
            "naive": "naive.json",
            "cache": "cache.json",
            "scale": None if self.scale is None else [float(x) for x in self.scale],
            "train": self.config.to_dict(),
            "committee": self.cconfig.to_dict(),
            "deploy": self.deploy.to_dict(),
        }
        (out / MANIFEST).write_text(json.dumps(manifest, indent=2))

    @classmethod
    def load(cls, directory: str | Path, schema: Schema) -> Committee:
        src = Path(directory)
        manifest = json.loads((src / MANIFEST).read_text())
        fp = schema.fingerprint()
        if manifest["fingerprint"] != fp:
            raise ValueError("committee bundle was built for a different schema")
        states = [PartitioningState(tuple(d), frozenset(e))
                  for d, e in zip(manifest["references"], manifest["active_edges"])]
        refs = ReferenceSet(states, np.array(manifest["reference_costs"], dtype=float),
                            list(manifest["probes"]))
        scale = manifest.get("scale")
        return cls(
            schema=schema,
            naive=QAgent.load(src / manifest["naive"], fp),
            refs=refs,
            experts=[QAgent.load(src / name, fp) for name in manifest["experts"]],
            config=TrainConfig.from_dict(manifest["train"]),
            cconfig=CommitteeConfig.from_dict(manifest["committee"]),
            cache=RuntimeCache.load(src / manifest["cache"]),
            scale=None if scale is None else np.array(scale, dtype=float),
            deploy=DeploymentConfig.from_dict(manifest["deploy"]),
        )


def build_committee(naive: QAgent, schema: Schema, backend: OnlineBackend, config: TrainConfig,
                    cconfig: CommitteeConfig | None = None,
                    deploy: DeploymentConfig | None = None) -> Committee:
    """Derive references with the naive agent and train one expert per reference."""
    cconfig = cconfig or CommitteeConfig()
    refs = derive_references(naive, schema, backend.scorer(), config.t_max,
                             cconfig.f_low, cconfig.f_high)
    experts = [train_expert(k, refs, schema, naive, backend, config, cconfig)
               for k in range(len(refs))]
    return Committee(schema, naive, refs, experts, config, cconfig, backend, backend.cache,
                     backend.scale, deploy or backend.cluster.profile.deploy)


def recommend_committee(committee: Committee, mix: WorkloadMix,
                        scorer: Scorer | None = None) -> Recommendation:
    """Route ``mix`` to its expert; never return anything worse than that expert's
    reference partitioning."""
    scorer = scorer or committee.scorer()
    k = assign_subspace(mix, committee.refs)
    if k >= len(committee.experts):
        raise ValueError(f"no expert for reference {k}")
    rec = recommend(committee.experts[k], mix, committee.schema, scorer, committee.config.t_max)
    rec.expert = k
    env = Environment(committee.schema, scorer)
    env.reset(mix)
    ref = committee.refs.states[k]
    ref_reward = env.evaluate(ref)
    if ref_reward > rec.reward:
        rec.state, rec.reward = ref, ref_reward
    return rec


def _check_extension(old: Schema, new: Schema) -> None:
    if old.tables != new.tables or old.edges != new.edges:
        raise ValueError("extension must keep the tables and join predicates unchanged")
    if new.n_queries <= old.n_queries or new.queries[:old.n_queries] != old.queries:
        raise ValueError("new queries must extend the existing query list")


def extend_with_queries(committee: Committee, full_schema: Schema, profile: SimProfile | None = None,
                        full_db: SampledDatabase | None = None) -> Committee:
    """Add queries to a trained committee without retraining from scratch.

    The naive agent gains zero-weighted inputs for the new frequencies and is
    refined at the reduced exploration rate; references are re-derived and an
    expert is trained only for a reference that did not exist before.
    """
    old = committee.schema
    _check_extension(old, full_schema)
    if committee.backend is None:
        raise ValueError("extension needs the committee's online backend")
    extra = full_schema.n_queries - old.n_queries
    new_ids = list(range(old.n_queries, full_schema.n_queries))
    fp = full_schema.fingerprint()
    config, cconfig = committee.config, committee.cconfig
    old_backend = committee.backend
    profile = profile or old_backend.cluster.profile
    old_db = old_backend.cluster.db
    sample_db = SampledDatabase(full_schema, old_db.rates, old_db.min_rows)

    new_scale = compute_scale_factors(reference_partitioning(full_schema),
                                      full_db or SampledDatabase.full(full_schema), sample_db,
                                      profile, config.seed, queries=new_ids)
    scale = np.concatenate([old_backend.scale, new_scale[old.n_queries:]])
    cluster = SimCluster(sample_db, profile, old_backend.cluster.deployed, config.seed)
    backend = OnlineBackend(full_schema, cluster, scale, old_backend.cache,
                            use_cache=old_backend.use_cache, lazy=old_backend.lazy)

    naive = committee.naive.clone(seed=config.seed)
    naive.widen_inputs(extra, fp)
    naive = train_online(full_schema, sample_db, profile, config, agent=naive, backend=backend,
                         episodes=cconfig.extend_episodes).agent

    refs = derive_references(naive, full_schema, backend.scorer(), config.t_max,
                             cconfig.f_low, cconfig.f_high)
    previous = {p.designs: k for k, p in enumerate(committee.refs.states)}
    experts = []
    for k, p in enumerate(refs.states):
        if p.designs in previous:
            kept = committee.experts[previous[p.designs]].clone(seed=config.seed)
            kept.widen_inputs(extra, fp)
            experts.append(kept)
        else:
            experts.append(train_expert(k, refs, full_schema, naive, backend, config, cconfig))
    assert state_size(full_schema) == naive.n_inputs
    return Committee(full_schema, naive, refs, experts, config, cconfig, backend, backend.cache,
                     scale, committee.deploy)
