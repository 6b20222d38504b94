"""Offline (cost model) and online (simulated cluster) training loops."""

from __future__ import annotations

import json
from collections.abc import Callable, Mapping, Sequence
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .cost import DeploymentConfig, ModelScorer, relevant_key
from .dqn import QAgent
from .env import ActionSpace, Environment, Scorer, state_size
from .schema import PartitioningState, Query, Schema, WorkloadMix, reference_partitioning
from .sim import SampledDatabase, SimCluster, SimProfile, compute_scale_factors

MixSource = Callable[[np.random.Generator], WorkloadMix]


@dataclass
class TrainConfig:
    episodes: int = 600
    t_max: int = 100
    gamma: float = 0.99
    lr: float = 5e-4
    batch_size: int = 32
    buffer_size: int = 10000
    tau: float = 1e-3
    target_update: str = "episode"  # when the soft target update runs: "episode" or "step"
    eps_start: float = 1.0
    eps_decay: float = 0.997
    warm_start_episodes: int = 600  # online/incremental runs resume at eps_start * decay**this
    hidden: tuple[int, ...] = (128, 64)
    seed: int = 0
    mix_mode: str = "uniform"  # "uniform": resampled per episode, "fixed": all ones
    use_cache: bool = True
    lazy_repartitioning: bool = True
    timeouts: bool = True

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        if self.mix_mode not in ("uniform", "fixed"):
            raise ValueError(f"unknown mix_mode {self.mix_mode!r}")
        if self.episodes < 0 or self.t_max < 1 or self.batch_size < 1:
            raise ValueError("episodes, t_max and batch_size must be positive")

    @property
    def warm_epsilon(self) -> float:
        return self.eps_start * self.eps_decay ** self.warm_start_episodes

    @classmethod
    def from_dict(cls, doc: Mapping) -> TrainConfig:
        names = {f.name for f in fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"train: unknown field(s) {sorted(unknown)}")
        return cls(**dict(doc))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    def replace(self, **changes) -> TrainConfig:
        d = self.to_dict()
        d.update(changes)
        return TrainConfig(**d)


def make_agent(schema: Schema, config: TrainConfig, eps_start: float | None = None) -> QAgent:
    return QAgent(
        state_size(schema), len(ActionSpace(schema)), hidden=config.hidden, lr=config.lr,
        gamma=config.gamma, tau=config.tau, batch_size=config.batch_size,
        buffer_size=config.buffer_size,
        eps_start=config.eps_start if eps_start is None else eps_start,
        eps_decay=config.eps_decay, seed=config.seed, fingerprint=schema.fingerprint(),
        target_update=config.target_update,
    )


def sample_mix(m: int, rng: np.random.Generator) -> WorkloadMix:
    """Uniform [0, 1] frequencies normalized by their maximum."""
    while True:
        raw = rng.uniform(0.0, 1.0, size=m)
        if raw.max() > 0:
            return WorkloadMix.from_raw(raw)


def mix_source_for(schema: Schema, config: TrainConfig) -> MixSource:
    if config.mix_mode == "fixed":
        fixed = WorkloadMix.uniform(schema.n_queries)
        return lambda rng: fixed
    return lambda rng: sample_mix(schema.n_queries, rng)


# -- query runtime cache -----------------------------------------------------

class RuntimeCache:
    """Sample runtimes keyed by query id and the designs of the tables it scans."""

    def __init__(self):
        self.entries: dict[tuple[int, tuple[int, ...]], float] = {}
        self.hits = 0
        self.misses = 0

    @staticmethod
    def key(q: Query, designs: Sequence[int]) -> tuple[int, tuple[int, ...]]:
        return q.id, relevant_key(designs, q)

    def lookup(self, q: Query, designs: Sequence[int]) -> float | None:
        value = self.entries.get(self.key(q, designs))
        if value is None:
            self.misses += 1
        else:
            self.hits += 1
        return value

    def peek(self, q: Query, designs: Sequence[int]) -> float | None:
        return self.entries.get(self.key(q, designs))

    def insert(self, q: Query, designs: Sequence[int], runtime: float) -> None:
        self.entries[self.key(q, designs)] = runtime

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, key) -> bool:
        return key in self.entries

    def to_document(self) -> dict:
        return {"entries": [{"query": qid, "designs": list(designs), "runtime": rt}
                            for (qid, designs), rt in sorted(self.entries.items())]}

    @classmethod
    def from_document(cls, doc: Mapping) -> RuntimeCache:
        cache = cls()
        for e in doc["entries"]:
            cache.entries[(int(e["query"]), tuple(int(d) for d in e["designs"]))] = float(e["runtime"])
        return cache

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_document()))

    @classmethod
    def load(cls, path: str | Path) -> RuntimeCache:
        return cls.from_document(json.loads(Path(path).read_text()))


def timeout_for(reference_cost: float, best_reward: float, scale: float, freq: float) -> float | None:
    """Longest runtime query ``i`` may take before its state cannot beat ``best_reward``."""
    if freq <= 0:
        return None
    return -reference_cost * best_reward / (scale * freq)


class CachedScorer:
    """Scaled cached runtimes, falling back to another scorer on a miss."""

    def __init__(self, schema: Schema, cache: RuntimeCache, scale: Sequence[float],
                 fallback: Scorer):
        self.schema = schema
        self.cache = cache
        self.scale = np.asarray(scale, dtype=float)
        self.fallback = fallback

    def query_cost(self, designs: Sequence[int], qid: int) -> float:
        raw = self.cache.peek(self.schema.queries[qid], designs)
        if raw is None:
            return self.fallback.query_cost(designs, qid)
        return float(self.scale[qid] * raw)

    def costs(self, designs: Sequence[int], freqs: Sequence[float] | None = None) -> np.ndarray:
        out = np.zeros(self.schema.n_queries)
        for j in range(self.schema.n_queries):
            if freqs is None or freqs[j]:
                out[j] = self.query_cost(designs, j)
        return out


class OnlineBackend:
    """Runtime source for online training: cache, lazy repartitioning, simulator.

    Every cost it returns is ``scale[j] * sample runtime``; queries with zero
    frequency are neither executed nor costed.
    """

    def __init__(self, schema: Schema, cluster: SimCluster, scale: Sequence[float],
                 cache: RuntimeCache | None = None, use_cache: bool = True, lazy: bool = True):
        self.schema = schema
        self.cluster = cluster
        self.scale = np.asarray(scale, dtype=float)
        self.cache = cache if cache is not None else RuntimeCache()
        self.use_cache = use_cache
        self.lazy = lazy
        self.timeouts = 0
        self.trace: list[dict] = []  # per-measurement events since the last drain
        self.executed_keys: list[tuple[int, tuple[int, ...]]] = []

    @property
    def executed_queries(self) -> int:
        return self.cluster.executed_queries

    @property
    def repartitions(self) -> int:
        return self.cluster.repartitions

    def _deploy(self, designs: Sequence[int], tables) -> list[int]:
        moved = []
        for t in sorted(tables):
            if self.cluster.deployed[t] != designs[t]:
                self.cluster.repartition_table(t, designs[t])
                moved.append(t)
        return moved

    def measure(self, designs: Sequence[int], qids: Sequence[int],
                budgets: Mapping[int, float] | None = None) -> tuple[dict[int, float], bool]:
        """Runtimes for ``qids`` on ``designs``; the flag reports an aborted query."""
        runtimes: dict[int, float] = {}
        missing = []
        for j in qids:
            q = self.schema.queries[j]
            hit = self.cache.lookup(q, designs) if self.use_cache else None
            if hit is None:
                missing.append(j)
            else:
                runtimes[j] = hit
        if self.lazy:
            needed = {t for j in missing for t in self.schema.queries[j].tables}
        else:
            needed = range(len(self.schema.tables))
        moved = self._deploy(designs, needed)
        executed, timed_out = [], False
        for j in missing:
            q = self.schema.queries[j]
            self.executed_keys.append(RuntimeCache.key(q, designs))
            budget = None if budgets is None else budgets.get(j)
            rt = self.cluster.run_query(j, budget)
            executed.append(j)
            if rt is None:
                timed_out = True
                self.timeouts += 1
                break
            runtimes[j] = rt
            if self.use_cache:
                self.cache.insert(q, designs, rt)
        self.trace.append({"executed": executed,
                           "runtimes": [runtimes.get(j) for j in executed],
                           "repartitioned": [self.schema.tables[t].name for t in moved],
                           "timed_out": timed_out})
        return runtimes, timed_out

    def query_cost(self, designs: Sequence[int], qid: int) -> float:
        runtimes, _ = self.measure(designs, [qid])
        return float(self.scale[qid] * runtimes[qid])

    def costs(self, designs: Sequence[int], freqs: Sequence[float] | None = None) -> np.ndarray:
        qids = [j for j in range(self.schema.n_queries) if freqs is None or freqs[j]]
        runtimes, _ = self.measure(designs, qids)
        out = np.zeros(self.schema.n_queries)
        for j in qids:
            out[j] = self.scale[j] * runtimes[j]
        return out

    def drain_trace(self) -> dict:
        events, self.trace = self.trace, []
        merged = {"executed": [], "runtimes": [], "repartitioned": [], "timed_out": False}
        for e in events:
            merged["executed"] += e["executed"]
            merged["runtimes"] += e["runtimes"]
            merged["repartitioned"] += e["repartitioned"]
            merged["timed_out"] |= e["timed_out"]
        return merged

    def scorer(self, fallback: Scorer | None = None) -> Scorer:
        return CachedScorer(self.schema, self.cache, self.scale, fallback or self)


class OnlineEnvironment(Environment):
    """Environment whose rewards come from an :class:`OnlineBackend`, with timeouts."""

    TIMEOUT_PENALTY = 1.05

    def __init__(self, schema: Schema, backend: OnlineBackend, timeouts: bool = True):
        super().__init__(schema, backend)
        self.backend = backend
        self.timeouts = timeouts

    def evaluate(self, p: PartitioningState) -> float:
        if not self.timeouts:
            return super().evaluate(p)
        qids = [j for j in range(self.schema.n_queries) if self.freqs[j]]
        budgets = {j: timeout_for(self.denominator, self.best_reward, self.backend.scale[j],
                                  self.freqs[j]) for j in qids}
        runtimes, timed_out = self.backend.measure(p.designs, qids, budgets)
        if timed_out:
            return self.best_reward * self.TIMEOUT_PENALTY
        costs = np.zeros(self.schema.n_queries)
        for j in qids:
            costs[j] = self.backend.scale[j] * runtimes[j]
        # same arithmetic as the denominator so the reference scores exactly -1
        return -float(self.freqs @ costs) / self.denominator


# -- training loops ------------------------------------------------------------

@dataclass
class TrainingResult:
    agent: QAgent
    log: list[dict] = field(default_factory=list)
    mixes: list[WorkloadMix] = field(default_factory=list)
    backend: OnlineBackend | None = None

    def write_log(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for rec in self.log:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def scorer(self, fallback: Scorer | None = None) -> Scorer | None:
        return None if self.backend is None else self.backend.scorer(fallback)


def run_episodes(agent: QAgent, env: Environment, episodes: int, t_max: int,
                 mix_source: MixSource, rng: np.random.Generator,
                 result: TrainingResult, backend: OnlineBackend | None = None) -> TrainingResult:
    """The shared episode loop: select, apply, reward, store, train; decay per episode."""
    for _ in range(episodes):
        mix = mix_source(rng)
        result.mixes.append(mix)
        episode = agent.episodes
        hits0 = backend.cache.hits if backend else 0
        exec0 = backend.executed_queries if backend else 0
        rep0 = backend.repartitions if backend else 0
        s = env.reset(mix)
        mask = env.mask()
        for t in range(t_max):
            eps = agent.epsilon
            a = agent.act(s, mask)
            p_next, r = env.step(a)
            s_next = env.observe()
            next_mask = env.mask()
            agent.remember(s, a, r, s_next, next_mask)
            loss = agent.train_step()
            rec = {"episode": episode, "step": t, "action": a, "reward": r,
                   "epsilon": eps, "loss": loss, "cache_hits": 0,
                   "executed_queries": 0, "repartitions": 0}
            if backend:
                rec["cache_hits"] = backend.cache.hits - hits0
                rec["executed_queries"] = backend.executed_queries - exec0
                rec["repartitions"] = backend.repartitions - rep0
                hits0, exec0, rep0 = (backend.cache.hits, backend.executed_queries,
                                      backend.repartitions)
                trace = backend.drain_trace()
                rec["executed"] = trace["executed"]
                rec["runtimes"] = trace["runtimes"]
                rec["repartitioned"] = trace["repartitioned"]
                rec["timed_out"] = trace["timed_out"]
            result.log.append(rec)
            s, mask = s_next, next_mask
        agent.end_episode()
    return result


def train_offline(schema: Schema, deploy: DeploymentConfig, config: TrainConfig,
                  agent: QAgent | None = None, scorer: Scorer | None = None,
                  mix_source: MixSource | None = None) -> TrainingResult:
    """Train against the analytical cost model."""
    if config.t_max < len(schema.tables):
        raise ValueError("t_max must be at least the number of tables")
    agent = agent or make_agent(schema, config)
    env = Environment(schema, scorer or ModelScorer(schema, deploy))
    rng = np.random.default_rng([config.seed, 1])
    return run_episodes(agent, env, config.episodes, config.t_max,
                        mix_source or mix_source_for(schema, config), rng,
                        TrainingResult(agent))


def make_online_backend(schema: Schema, sample_db: SampledDatabase, profile: SimProfile,
                        config: TrainConfig, scale: Sequence[float],
                        cache: RuntimeCache | None = None) -> OnlineBackend:
    cluster = SimCluster(sample_db, profile, reference_partitioning(schema).designs, config.seed)
    return OnlineBackend(schema, cluster, scale, cache, use_cache=config.use_cache,
                         lazy=config.lazy_repartitioning)


def train_online(schema: Schema, sample_db: SampledDatabase, profile: SimProfile,
                 config: TrainConfig, agent: QAgent | None = None,
                 scale: Sequence[float] | None = None,
                 p_offline: PartitioningState | None = None,
                 full_db: SampledDatabase | None = None,
                 backend: OnlineBackend | None = None,
                 mix_source: MixSource | None = None,
                 episodes: int | None = None) -> TrainingResult:
    """Refine (``agent`` given) or train from scratch against the simulator.

    A warm agent is cloned and restarts exploration at the reduced epsilon.
    Scale factors are computed once here unless passed in.
    """
    if agent is not None:
        agent = agent.clone(seed=config.seed)
        agent.restart_exploration(config.warm_epsilon)
    else:
        agent = make_agent(schema, config)
    if backend is None:
        if scale is None:
            p_ref = p_offline or reference_partitioning(schema)
            scale = compute_scale_factors(p_ref, full_db or SampledDatabase.full(schema),
                                          sample_db, profile, config.seed)
        backend = make_online_backend(schema, sample_db, profile, config, scale)
    env = OnlineEnvironment(schema, backend, timeouts=config.timeouts)
    rng = np.random.default_rng([config.seed, 2])
    return run_episodes(agent, env, config.episodes if episodes is None else episodes,
                        config.t_max, mix_source or mix_source_for(schema, config), rng,
                        TrainingResult(agent, backend=backend), backend)
