"""Deterministic stand-in for a real cluster.

The simulator reuses the analytical cost model and bends it with a few
profile knobs so that "measured" runtimes can disagree with the estimates.
With every knob neutral it reproduces the cost model bit for bit.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .cost import DeploymentConfig, breakdown, relevant_key
from .schema import REPLICATED, PartitioningState, Query, Schema, WorkloadMix

DEFAULT_MIN_ROWS = 100


@dataclass(frozen=True)
class SimProfile:
    deploy: DeploymentConfig = field(default_factory=DeploymentConfig)
    scan_exponent: Mapping[str, float] = field(default_factory=dict)
    shuffle_latency: float = 0.0  # seconds added per shuffling join
    replication_penalty: float = 1.0  # multiplier on scans of replicated tables
    noise: float = 0.0

    def __post_init__(self):
        if not 0 <= self.noise <= 0.05:
            raise ValueError("noise fraction must lie in [0, 0.05]")
        if self.shuffle_latency < 0:
            raise ValueError("shuffle_latency must be non-negative")
        if self.replication_penalty <= 0:
            raise ValueError("replication_penalty must be positive")
        if any(e <= 0 for e in self.scan_exponent.values()):
            raise ValueError("scan exponents must be positive")

    @property
    def neutral(self) -> bool:
        return (self.shuffle_latency == 0 and self.replication_penalty == 1
                and self.noise == 0 and all(e == 1 for e in self.scan_exponent.values()))

    @classmethod
    def from_dict(cls, doc: Mapping, deploy: DeploymentConfig | None = None) -> SimProfile:
        allowed = {"deploy", "scan_exponent", "shuffle_latency", "replication_penalty", "noise",
                   "sampling_rate", "min_rows"}
        unknown = set(doc) - allowed
        if unknown:
            raise ValueError(f"sim_profile: unknown field(s) {sorted(unknown)}")
        if "deploy" in doc:
            deploy = DeploymentConfig.from_dict(doc["deploy"])
        return cls(
            deploy=deploy or DeploymentConfig(),
            scan_exponent=dict(doc.get("scan_exponent", {})),
            shuffle_latency=float(doc.get("shuffle_latency", 0.0)),
            replication_penalty=float(doc.get("replication_penalty", 1.0)),
            noise=float(doc.get("noise", 0.0)),
        )

    def to_dict(self) -> dict:
        return {
            "deploy": self.deploy.to_dict(),
            "scan_exponent": dict(self.scan_exponent),
            "shuffle_latency": self.shuffle_latency,
            "replication_penalty": self.replication_penalty,
            "noise": self.noise,
        }


@dataclass(frozen=True)
class SampledDatabase:
    schema: Schema
    rates: tuple[float, ...]
    min_rows: int = DEFAULT_MIN_ROWS

    def __post_init__(self):
        if len(self.rates) != len(self.schema.tables):
            raise ValueError("one sampling rate per table is required")
        if any(not 0 < r <= 1 for r in self.rates):
            raise ValueError("sampling rates must lie in (0, 1]")

    @classmethod
    def uniform(cls, schema: Schema, rate: float, min_rows: int = DEFAULT_MIN_ROWS) -> SampledDatabase:
        return cls(schema, tuple(rate for _ in schema.tables), min_rows)

    @classmethod
    def full(cls, schema: Schema) -> SampledDatabase:
        return cls.uniform(schema, 1.0)

    @property
    def rows(self) -> tuple[int, ...]:
        out = []
        for t, rate in zip(self.schema.tables, self.rates):
            # round first so 0.1 * 134200 does not ceil to 13421
            sampled = math.ceil(round(rate * t.row_count, 9))
            out.append(min(t.row_count, max(sampled, self.min_rows)))
        return tuple(out)


def _scan_adjust(schema: Schema, profile: SimProfile):
    if all(e == 1 for e in profile.scan_exponent.values()) and profile.replication_penalty == 1:
        return None

    def adjust(t: int, design: int, seconds: float, local_rows: float) -> float:
        e = profile.scan_exponent.get(schema.tables[t].name, 1.0)
        if e != 1:
            seconds *= max(local_rows, 1.0) ** (e - 1)
        if design == REPLICATED:
            seconds *= profile.replication_penalty
        return seconds

    return adjust


def simulate_designs(designs: Sequence[int], q: Query, db: SampledDatabase,
                     profile: SimProfile, seed: int = 0) -> float:
    b, shuffles = breakdown(designs, q, db.schema, profile.deploy, rows=db.rows,
                            scan_adjust=_scan_adjust(db.schema, profile))
    runtime = b.total
    if profile.shuffle_latency:
        runtime += profile.shuffle_latency * shuffles
    if profile.noise:
        rng = np.random.default_rng([seed, q.id, *relevant_key(designs, q)])
        runtime *= 1.0 + profile.noise * rng.uniform(-1.0, 1.0)
    return runtime


def simulate_query(p: PartitioningState, q: Query, db: SampledDatabase,
                   profile: SimProfile, seed: int = 0) -> float:
    """Simulated runtime in seconds; a pure function of its arguments."""
    return simulate_designs(p.designs, q, db, profile, seed)


def repartition_seconds(table_bytes: float, design: int, deploy: DeploymentConfig) -> float:
    n = deploy.node_count
    if design == REPLICATED:
        return table_bytes * (n - 1) / deploy.network_bandwidth
    return table_bytes * (n - 1) / n / deploy.network_bandwidth


class SimCluster:
    """Tracks the physically deployed designs of a sampled database."""

    def __init__(self, db: SampledDatabase, profile: SimProfile, designs: Sequence[int],
                 seed: int = 0):
        self.db = db
        self.profile = profile
        self.seed = seed
        self.deployed = list(designs)
        self.repartitions = 0
        self.repartition_time = 0.0
        self.executed_queries = 0
        self.query_time = 0.0

    def repartition_table(self, table: int, design: int) -> float:
        if self.deployed[table] == design:
            return 0.0
        t = self.db.schema.tables[table]
        seconds = repartition_seconds(self.db.rows[table] * t.row_width, design, self.profile.deploy)
        self.deployed[table] = design
        self.repartitions += 1
        self.repartition_time += seconds
        return seconds

    def run_query(self, qid: int, timeout: float | None = None) -> float | None:
        """Execute on the deployed designs; ``None`` when aborted by ``timeout``."""
        q = self.db.schema.queries[qid]
        runtime = simulate_designs(self.deployed, q, self.db, self.profile, self.seed)
        self.executed_queries += 1
        if timeout is not None and runtime > timeout:
            self.query_time += timeout
            return None
        self.query_time += runtime
        return runtime


def compute_scale_factors(p_offline: PartitioningState, full_db: SampledDatabase,
                          sample_db: SampledDatabase, profile: SimProfile,
                          seed: int = 0, queries: Sequence[int] | None = None) -> np.ndarray:
    """Per-query ratio of full-dataset to sample runtime under ``p_offline``.

    With ``queries`` given only those entries are computed; the rest stay NaN.
    """
    if full_db.schema.fingerprint() != sample_db.schema.fingerprint():
        raise ValueError("full and sampled databases must share the schema")
    out = np.full(full_db.schema.n_queries, np.nan)
    qids = range(full_db.schema.n_queries) if queries is None else queries
    for q in (full_db.schema.queries[j] for j in qids):
        sample = simulate_query(p_offline, q, sample_db, profile, seed)
        if sample <= 0:
            raise ZeroDivisionError(f"query {q.id} has zero runtime on the sample")
        out[q.id] = simulate_query(p_offline, q, full_db, profile, seed) / sample
    return out


class SimScorer:
    """Scaled sample runtimes without any cluster bookkeeping (for oracles)."""

    def __init__(self, db: SampledDatabase, profile: SimProfile, scale: Sequence[float] | None = None,
                 seed: int = 0):
        self.db = db
        self.schema = db.schema
        self.profile = profile
        self.seed = seed
        self.scale = np.ones(db.schema.n_queries) if scale is None else np.asarray(scale, float)
        self._memo: dict[tuple[int, tuple[int, ...]], float] = {}

    def query_cost(self, designs: Sequence[int], qid: int) -> float:
        q = self.schema.queries[qid]
        key = (qid, relevant_key(designs, q))
        hit = self._memo.get(key)
        if hit is None:
            hit = self._memo[key] = self.scale[qid] * simulate_designs(
                designs, q, self.db, self.profile, self.seed)
        return hit

    def costs(self, designs: Sequence[int], freqs: Sequence[float] | None = None) -> np.ndarray:
        out = np.zeros(self.schema.n_queries)
        for j in range(self.schema.n_queries):
            if freqs is None or freqs[j]:
                out[j] = self.query_cost(designs, j)
        return out


def _concordance(a: Sequence[float], b: Sequence[float]) -> float:
    pairs = agree = 0
    for i in range(len(a)):
        for j in range(i + 1, len(a)):
            if a[i] == a[j] or b[i] == b[j]:
                continue
            pairs += 1
            agree += (a[i] < a[j]) == (b[i] < b[j])
    return 1.0 if pairs == 0 else agree / pairs


def sampling_rank_agreement(states: Sequence[PartitioningState], mix: WorkloadMix,
                            full_db: SampledDatabase, sample_db: SampledDatabase,
                            profile: SimProfile, scale: Sequence[float], seed: int = 0) -> dict:
    """Compare weighted sample runtimes against full runtimes for ``states``.

    Reports the fraction of state pairs ordered the same way on both; choosing
    an acceptance threshold is left to the operator.
    """
    f = np.asarray(mix.frequencies)
    sample_scorer = SimScorer(sample_db, profile, scale, seed)
    full_scorer = SimScorer(full_db, profile, None, seed)
    sample_costs = [float(f @ sample_scorer.costs(p.designs, f)) for p in states]
    full_costs = [float(f @ full_scorer.costs(p.designs, f)) for p in states]
    best_sample = int(np.argmin(sample_costs))
    return {
        "weighted_sample": sample_costs,
        "full": full_costs,
        "pairwise_agreement": _concordance(sample_costs, full_costs),
        "best_on_sample_is_best_on_full": bool(
            full_costs[best_sample] <= min(full_costs) * (1 + 1e-12)),
    }
