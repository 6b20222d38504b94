"""Rule-of-thumb partitionings and the exhaustive oracle used to judge them."""

from __future__ import annotations

import itertools

import numpy as np

from .env import Scorer
from .schema import (
    REPLICATED,
    JoinEdge,
    PartitioningState,
    Schema,
    WorkloadMix,
    implied_edges,
    validate_state,
)

SEARCH_GUARD = 10 ** 6
STAR_MODES = ("most-frequent", "largest")
GENERAL_MODES = ("replicate-small", "greedy-largest-pairs")


class BaselineError(ValueError):
    pass


def fact_tables(schema: Schema) -> list[int]:
    """Flagged fact tables, or the single largest table when nothing is flagged."""
    flagged = [i for i, t in enumerate(schema.tables) if t.fact]
    if flagged:
        return flagged
    largest = min(range(len(schema.tables)),
                  key=lambda i: (-schema.tables[i].row_count, schema.tables[i].name))
    return [largest]


def _edge_between(schema: Schema, a: int, b: int) -> JoinEdge | None:
    """The join predicate between two tables used by the most queries (lowest id on ties)."""
    usage = {e.id: 0 for e in schema.edges}
    for q in schema.queries:
        for e in q.edges:
            usage[e] += 1
    candidates = [e for e in schema.edges if set(e.tables()) == {a, b}]
    if not candidates:
        return None
    return min(candidates, key=lambda e: (-usage[e.id], e.id))


def _finish(designs: list[int], edges: set[int], schema: Schema) -> PartitioningState:
    p = PartitioningState(tuple(designs), frozenset(edges))
    problems = validate_state(p, schema)
    if problems:
        raise BaselineError("; ".join(problems))
    return p


def heuristic_star(schema: Schema, mode: str = "most-frequent") -> PartitioningState:
    """Co-partition every fact table with one dimension; other dimensions go by key."""
    if mode not in STAR_MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {STAR_MODES}")
    facts = fact_tables(schema)
    dims = [i for i in range(len(schema.tables)) if i not in facts]
    designs = [t.primary_key + 1 for t in schema.tables]
    active: set[int] = set()
    if not dims:
        return _finish(designs, active, schema)
    appearances = {d: sum(d in q.tables for q in schema.queries) for d in dims}
    pinned: dict[int, int] = {}
    for f in facts:
        if mode == "most-frequent":
            dim = min(dims, key=lambda d: (-appearances[d], -schema.tables[d].row_count,
                                           schema.tables[d].name))
        else:
            dim = min(dims, key=lambda d: (-schema.tables[d].row_count, schema.tables[d].name))
        e = _edge_between(schema, f, dim)
        if e is None:
            raise BaselineError(f"no join predicate between {schema.tables[f].name} "
                                f"and {schema.tables[dim].name}")
        for t in e.tables():
            if pinned.get(t, e.required_design(t)) != e.required_design(t):
                raise BaselineError(f"table {schema.tables[t].name} would need two partition "
                                    f"attributes")
            pinned[t] = designs[t] = e.required_design(t)
        active.add(e.id)
    return _finish(designs, active, schema)


def default_small_threshold(schema: Schema) -> float:
    return 0.05 * max(t.row_count for t in schema.tables)


def heuristic_general(schema: Schema, mode: str = "replicate-small",
                      small_threshold: float | None = None) -> PartitioningState:
    if mode not in GENERAL_MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {GENERAL_MODES}")
    threshold = default_small_threshold(schema) if small_threshold is None else small_threshold
    if threshold <= 0:
        raise ValueError("small-table threshold must be positive")
    tables = schema.tables
    small = {i for i, t in enumerate(tables) if t.row_count < threshold}
    designs = [REPLICATED if i in small else t.primary_key + 1 for i, t in enumerate(tables)]
    active: set[int] = set()
    if mode == "replicate-small":
        return _finish(designs, active, schema)

    def pair_key(e: JoinEdge):
        a, b = tables[e.left_table], tables[e.right_table]
        return (-(a.row_count + b.row_count), *sorted((a.name, b.name)), e.id)

    assigned: set[int] = set()
    for e in sorted(schema.edges, key=pair_key):
        a, b = e.tables()
        if a in small or b in small or a in assigned or b in assigned:
            continue
        designs[a] = e.left_attr + 1
        designs[b] = e.right_attr + 1
        assigned |= {a, b}
        active.add(e.id)
    return _finish(designs, active, schema)


def brute_force_optimal(schema: Schema, mix: WorkloadMix, scorer: Scorer,
                        guard: int = SEARCH_GUARD) -> tuple[PartitioningState, float]:
    """Cheapest design combination for ``mix``; ties go to the lexicographically
    smallest design vector."""
    size = schema.search_space_size()
    if size > guard:
        raise BaselineError(f"search space of {size} states exceeds the guard of {guard}")
    f = np.asarray(mix.frequencies, dtype=float)
    best, best_cost = None, np.inf
    costs = []
    # product() yields in lexicographic order, so strict < keeps the first minimum
    for designs in itertools.product(*(range(t.block_size) for t in schema.tables)):
        c = float(f @ scorer.costs(designs, f))
        costs.append(c)
        if c < best_cost:
            best, best_cost = designs, c
    if min(costs) < best_cost:
        raise AssertionError("enumeration found a cheaper state than the reported optimum")
    return PartitioningState(best, implied_edges(best, schema)), best_cost
