"""Analytical distributed-join cost model.

Each query is costed as a sum of three parts:

* scan: every scanned table is read in full; partitioned tables are split over
  the nodes (and slowed down by the skew of their partition key), replicated
  tables are read whole.
* shuffle: per join predicate of the query. Co-located joins and joins with a
  replicated side move nothing; otherwise the cheaper of re-hashing the inputs
  not already hashed on the join key and broadcasting the smaller input.
* join: per-tuple CPU work on the filtered inputs, parallel over the
  partitioned side(s).

Costs are seconds-equivalents over an aggregate network bandwidth.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np

from .schema import REPLICATED, PartitioningState, Query, Schema, WorkloadMix


@dataclass(frozen=True)
class DeploymentConfig:
    node_count: int = 4
    network_bandwidth: float = 1.25e9  # bytes/s, 10 Gbps
    scan_throughput: float = 1.0e9  # bytes/s per node
    join_cpu_factor: float = 1.0e-8  # seconds per input tuple
    skew_map: Mapping[tuple[str, str], float] = field(default_factory=dict)
    include_join_cost: bool = True

    def __post_init__(self):
        if self.node_count < 1:
            raise ValueError("node_count must be positive")
        if self.network_bandwidth <= 0 or self.scan_throughput <= 0 or self.join_cpu_factor <= 0:
            raise ValueError("deployment rates must be strictly positive")
        for key, mult in self.skew_map.items():
            if mult < 1:
                raise ValueError(f"skew multiplier for {key} must be >= 1")

    def skew(self, table: str, slot: str) -> float:
        return self.skew_map.get((table, slot), 1.0)

    @classmethod
    def from_dict(cls, doc: Mapping) -> DeploymentConfig:
        allowed = {"node_count", "network_bandwidth", "scan_throughput", "join_cpu_factor",
                   "skew", "include_join_cost"}
        unknown = set(doc) - allowed
        if unknown:
            raise ValueError(f"deploy: unknown field(s) {sorted(unknown)}")
        kwargs = {k: doc[k] for k in allowed - {"skew"} if k in doc}
        skew = {}
        for entry in doc.get("skew", []):
            skew[(entry["table"], entry["attribute"])] = float(entry["multiplier"])
        return cls(skew_map=skew, **kwargs)

    def to_dict(self) -> dict:
        return {
            "node_count": self.node_count,
            "network_bandwidth": self.network_bandwidth,
            "scan_throughput": self.scan_throughput,
            "join_cpu_factor": self.join_cpu_factor,
            "include_join_cost": self.include_join_cost,
            "skew": [{"table": t, "attribute": a, "multiplier": m}
                     for (t, a), m in sorted(self.skew_map.items())],
        }


@dataclass(frozen=True)
class CostBreakdown:
    scan_cost: float
    shuffle_cost: float
    join_cost: float

    @property
    def total(self) -> float:
        return self.scan_cost + self.shuffle_cost + self.join_cost


# (table index, design, neutral scan seconds, rows scanned per node) -> seconds
ScanAdjust = Callable[[int, int, float, float], float]


def breakdown(
    designs: Sequence[int],
    q: Query,
    schema: Schema,
    deploy: DeploymentConfig,
    rows: Sequence[int] | None = None,
    scan_adjust: ScanAdjust | None = None,
) -> tuple[CostBreakdown, int]:
    """Cost ``q`` under ``designs``; also return the number of shuffling joins.

    ``rows`` overrides table cardinalities (sampled databases) and
    ``scan_adjust`` lets a simulator distort scan times.
    """
    n = deploy.node_count
    bw = deploy.network_bandwidth
    if rows is None:
        rows = [t.row_count for t in schema.tables]

    scan = 0.0
    for t in q.tables:
        table = schema.tables[t]
        d = designs[t]
        seconds = rows[t] * table.row_width / deploy.scan_throughput
        local_rows = float(rows[t])
        if d != REPLICATED:
            seconds = seconds / n * deploy.skew(table.name, table.slot_name(d - 1))
            local_rows = rows[t] / n
        if scan_adjust is not None:
            seconds = scan_adjust(t, d, seconds, local_rows)
        scan += seconds

    shuffle = 0.0
    join = 0.0
    shuffles = 0
    for eid in q.edges:
        e = schema.edges[eid]
        lt, rt = e.left_table, e.right_table
        dl, dr = designs[lt], designs[rt]
        l_rows = rows[lt] * q.selectivity(lt)
        r_rows = rows[rt] * q.selectivity(rt)
        l_bytes = l_rows * schema.tables[lt].row_width
        r_bytes = r_rows * schema.tables[rt].row_width
        l_keyed = dl == e.left_attr + 1
        r_keyed = dr == e.right_attr + 1

        if not (l_keyed and r_keyed) and dl != REPLICATED and dr != REPLICATED:
            moved = (0.0 if l_keyed else l_bytes) + (0.0 if r_keyed else r_bytes)
            repartition = moved * (n - 1) / n / bw
            broadcast = min(l_bytes, r_bytes) * (n - 1) / bw
            cost = min(repartition, broadcast)
            if cost > 0:
                shuffles += 1
            shuffle += cost

        if deploy.include_join_cost:
            if dl == REPLICATED and dr == REPLICATED:
                tuples = l_rows + r_rows
            elif dl == REPLICATED:
                tuples = l_rows + r_rows / n
            elif dr == REPLICATED:
                tuples = l_rows / n + r_rows
            else:
                tuples = (l_rows + r_rows) / n
            join += tuples * deploy.join_cpu_factor

    return CostBreakdown(scan, shuffle, join), shuffles


def _check_query(q: Query, schema: Schema) -> None:
    if any(not 0 <= t < len(schema.tables) for t in q.tables):
        raise KeyError(f"query {q.id} references a table absent from the schema")
    if any(not 0 <= e < schema.n_edges for e in q.edges):
        raise KeyError(f"query {q.id} references a join predicate absent from the schema")


def estimate_query_cost(p: PartitioningState, q: Query, schema: Schema,
                        deploy: DeploymentConfig) -> CostBreakdown:
    _check_query(q, schema)
    return breakdown(p.designs, q, schema, deploy)[0]


def estimate_workload_cost(p: PartitioningState, mix: WorkloadMix | Sequence[float],
                           schema: Schema, deploy: DeploymentConfig) -> float:
    freqs = mix.frequencies if isinstance(mix, WorkloadMix) else tuple(mix)
    if len(freqs) != schema.n_queries:
        raise ValueError(f"mix has {len(freqs)} entries, schema has {schema.n_queries} queries")
    return sum(f * breakdown(p.designs, q, schema, deploy)[0].total
               for f, q in zip(freqs, schema.queries) if f)


def relevant_key(designs: Sequence[int], q: Query) -> tuple[int, ...]:
    """Designs of exactly the tables ``q`` scans, in table-index order."""
    return tuple(designs[t] for t in sorted(q.tables))


class ModelScorer:
    """Memoized per-query cost-model costs."""

    def __init__(self, schema: Schema, deploy: DeploymentConfig):
        self.schema = schema
        self.deploy = deploy
        self._memo: dict[tuple[int, tuple[int, ...]], float] = {}

    def query_cost(self, designs: Sequence[int], qid: int) -> float:
        q = self.schema.queries[qid]
        key = (qid, relevant_key(designs, q))
        hit = self._memo.get(key)
        if hit is None:
            hit = self._memo[key] = breakdown(designs, q, self.schema, self.deploy)[0].total
        return hit

    def costs(self, designs: Sequence[int], freqs: Sequence[float] | None = None) -> np.ndarray:
        out = np.zeros(self.schema.n_queries)
        for j in range(self.schema.n_queries):
            if freqs is None or freqs[j]:
                out[j] = self.query_cost(designs, j)
        return out
