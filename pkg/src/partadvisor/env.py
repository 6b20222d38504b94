"""State encoding, legal actions, transitions and rewards."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .schema import (
    REPLICATED,
    PartitioningState,
    Schema,
    WorkloadMix,
    reference_partitioning,
)


class IllegalActionError(ValueError):
    pass


class Scorer(Protocol):
    schema: Schema

    def query_cost(self, designs: Sequence[int], qid: int) -> float: ...

    def costs(self, designs: Sequence[int], freqs: Sequence[float] | None = None) -> np.ndarray: ...


@dataclass(frozen=True)
class Action:
    id: int
    kind: str  # "replicate" | "partition" | "edge"
    table: int = -1
    slot: int = -1
    edge: int = -1

    def describe(self, schema: Schema, p: PartitioningState | None = None) -> str:
        if self.kind == "replicate":
            return f"replicate {schema.tables[self.table].name}"
        if self.kind == "partition":
            t = schema.tables[self.table]
            return f"partition {t.name} by {t.slot_name(self.slot)}"
        verb = "toggle"
        if p is not None:
            verb = "deactivate" if self.edge in p.active_edges else "activate"
        return f"{verb} edge {self.edge}"


class ActionSpace:
    """Fixed action layout: one block per table (mirroring the state block) then one
    toggle per edge. An edge action activates an inactive edge and deactivates an
    active one."""

    def __init__(self, schema: Schema):
        self.schema = schema
        actions: list[Action] = []
        self.table_offset: list[int] = []
        for i, t in enumerate(schema.tables):
            self.table_offset.append(len(actions))
            actions.append(Action(len(actions), "replicate", table=i))
            for s in range(t.n_slots):
                actions.append(Action(len(actions), "partition", table=i, slot=s))
        self.edge_offset = len(actions)
        for e in schema.edges:
            actions.append(Action(len(actions), "edge", edge=e.id))
        self.actions = tuple(actions)

    def __len__(self) -> int:
        return len(self.actions)

    def __getitem__(self, i: int) -> Action:
        return self.actions[i]

    def table_action(self, table: int, design: int) -> int:
        return self.table_offset[table] + design

    def edge_action(self, edge: int) -> int:
        return self.edge_offset + edge


def state_size(schema: Schema) -> int:
    return sum(t.block_size for t in schema.tables) + schema.n_edges + schema.n_queries


def encode(p: PartitioningState, mix: WorkloadMix | Sequence[float], schema: Schema) -> np.ndarray:
    freqs = mix.frequencies if isinstance(mix, WorkloadMix) else mix
    out = np.zeros(state_size(schema))
    pos = 0
    for t, d in zip(schema.tables, p.designs):
        out[pos + d] = 1.0
        pos += t.block_size
    for e in p.active_edges:
        out[pos + e] = 1.0
    pos += schema.n_edges
    out[pos:] = freqs
    return out


def decode(vec: Sequence[float], schema: Schema) -> tuple[PartitioningState, WorkloadMix]:
    vec = np.asarray(vec)
    if vec.shape != (state_size(schema),):
        raise ValueError("encoded state has the wrong length")
    designs = []
    pos = 0
    for t in schema.tables:
        block = vec[pos:pos + t.block_size]
        hot = np.flatnonzero(block == 1.0)
        if len(hot) != 1 or np.count_nonzero(block) != 1:
            raise ValueError(f"table {t.name}: block is not one-hot")
        designs.append(int(hot[0]))
        pos += t.block_size
    edges = frozenset(int(e) for e in np.flatnonzero(vec[pos:pos + schema.n_edges]))
    pos += schema.n_edges
    return (PartitioningState(tuple(designs), edges),
            WorkloadMix(tuple(float(x) for x in vec[pos:])))


def _pinned(p: PartitioningState, schema: Schema) -> dict[int, int]:
    """Design required for each table touched by an active edge."""
    pins = {}
    for eid in p.active_edges:
        e = schema.edges[eid]
        pins[e.left_table] = e.left_attr + 1
        pins[e.right_table] = e.right_attr + 1
    return pins


def legal_actions(p: PartitioningState, schema: Schema,
                  space: ActionSpace | None = None) -> np.ndarray:
    space = space or ActionSpace(schema)
    mask = np.zeros(len(space), dtype=bool)
    pins = _pinned(p, schema)
    for i, t in enumerate(schema.tables):
        if i in pins:
            continue  # any change would break an active edge
        off = space.table_offset[i]
        mask[off:off + t.block_size] = True
        mask[off + p.designs[i]] = False
    for e in schema.edges:
        if e.id in p.active_edges:
            mask[space.edge_offset + e.id] = True
            continue
        ok = all(pins.get(t, e.required_design(t)) == e.required_design(t) for t in e.tables())
        mask[space.edge_offset + e.id] = ok
    return mask


def apply(p: PartitioningState, action: int | Action, schema: Schema,
          space: ActionSpace | None = None) -> PartitioningState:
    space = space or ActionSpace(schema)
    a = space[action] if isinstance(action, (int, np.integer)) else action
    if not legal_actions(p, schema, space)[a.id]:
        raise IllegalActionError(f"action {a.id} ({a.describe(schema, p)}) is illegal here")
    if a.kind == "replicate":
        return p.with_design(a.table, REPLICATED)
    if a.kind == "partition":
        return p.with_design(a.table, a.slot + 1)
    e = schema.edges[a.edge]
    if a.edge in p.active_edges:
        return PartitioningState(p.designs, p.active_edges - {a.edge})
    designs = list(p.designs)
    designs[e.left_table] = e.left_attr + 1
    designs[e.right_table] = e.right_attr + 1
    return PartitioningState(tuple(designs), p.active_edges | {a.edge})


def reward(p_next: PartitioningState, mix: WorkloadMix | Sequence[float], scorer: Scorer,
           denominator: float) -> float:
    """Negative weighted cost of ``p_next`` relative to the reference cost."""
    if not denominator > 0:
        raise ZeroDivisionError("reference workload cost must be positive")
    f = np.asarray(mix.frequencies if isinstance(mix, WorkloadMix) else mix, dtype=float)
    return -float(f @ scorer.costs(p_next.designs, f)) / denominator


def workload_cost(p: PartitioningState, freqs: np.ndarray, scorer: Scorer) -> float:
    return float(freqs @ scorer.costs(p.designs, freqs))


class Environment:
    """Episode driver around the pure transition functions."""

    def __init__(self, schema: Schema, scorer: Scorer):
        self.schema = schema
        self.scorer = scorer
        self.space = ActionSpace(schema)
        self.p0 = reference_partitioning(schema)
        self.state = self.p0
        self.freqs = np.ones(schema.n_queries)
        self.denominator = 1.0
        self.best_reward = -1.0

    def reset(self, mix: WorkloadMix) -> np.ndarray:
        if len(mix) != self.schema.n_queries:
            raise ValueError("mix length does not match the query count")
        self.freqs = np.asarray(mix.frequencies, dtype=float)
        self.state = self.p0
        self.denominator = self.reference_cost()
        self.best_reward = -1.0
        return self.observe()

    def reference_cost(self) -> float:
        return workload_cost(self.p0, self.freqs, self.scorer)

    def observe(self, p: PartitioningState | None = None) -> np.ndarray:
        return encode(p or self.state, self.freqs, self.schema)

    def mask(self, p: PartitioningState | None = None) -> np.ndarray:
        return legal_actions(p or self.state, self.schema, self.space)

    def evaluate(self, p: PartitioningState) -> float:
        return reward(p, self.freqs, self.scorer, self.denominator)

    def step(self, action: int) -> tuple[PartitioningState, float]:
        self.state = apply(self.state, action, self.schema, self.space)
        r = self.evaluate(self.state)
        self.best_reward = max(self.best_reward, r)
        return self.state, r
