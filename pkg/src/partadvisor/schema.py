"""Schemas, queries, workload mixes and partitioning states.

A table design is stored as a small integer that doubles as the position of
the hot bit inside the table's one-hot block: ``0`` means replicated, ``k``
means hash-partitioned by partition slot ``k - 1``. Slots are the table's
attributes in declaration order followed by any declared composite keys.
"""

from __future__ import annotations

import hashlib
import json
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

REPLICATED = 0


class SchemaError(ValueError):
    """Raised for malformed or inconsistent schema documents."""


@dataclass(frozen=True)
class Attribute:
    name: str
    distinct_values: int = 1


@dataclass(frozen=True)
class Table:
    name: str
    row_count: int
    row_width: int
    attributes: tuple[Attribute, ...]
    primary_key: int = 0
    composite_keys: tuple[tuple[int, ...], ...] = ()
    fact: bool | None = None

    @property
    def n_slots(self) -> int:
        return len(self.attributes) + len(self.composite_keys)

    @property
    def block_size(self) -> int:
        return 1 + self.n_slots

    @property
    def bytes(self) -> int:
        return self.row_count * self.row_width

    def slot_name(self, slot: int) -> str:
        if slot < len(self.attributes):
            return self.attributes[slot].name
        key = self.composite_keys[slot - len(self.attributes)]
        return "+".join(self.attributes[i].name for i in key)

    def slot_index(self, name: str) -> int:
        for slot in range(self.n_slots):
            if self.slot_name(slot) == name:
                return slot
        raise KeyError(f"{self.name} has no partition slot {name!r}")

    def attr_index(self, name: str) -> int:
        for i, a in enumerate(self.attributes):
            if a.name == name:
                return i
        raise KeyError(f"{self.name} has no attribute {name!r}")

    def design_label(self, design: int) -> str:
        if design == REPLICATED:
            return "replicated"
        return f"partitioned by {self.slot_name(design - 1)}"


@dataclass(frozen=True)
class JoinEdge:
    id: int
    left_table: int
    left_attr: int
    right_table: int
    right_attr: int

    def tables(self) -> tuple[int, int]:
        return self.left_table, self.right_table

    def required_design(self, table: int) -> int:
        """Design code the edge pins ``table`` to when active."""
        if table == self.left_table:
            return self.left_attr + 1
        if table == self.right_table:
            return self.right_attr + 1
        raise ValueError(f"edge {self.id} does not touch table {table}")


@dataclass(frozen=True)
class Query:
    id: int
    tables: tuple[int, ...]
    selectivities: tuple[float, ...]
    edges: tuple[int, ...]
    weight: float = 1.0

    def selectivity(self, table: int) -> float:
        return self.selectivities[self.tables.index(table)]


@dataclass(frozen=True)
class WorkloadMix:
    """Query frequencies normalized by their maximum."""

    frequencies: tuple[float, ...]

    def __post_init__(self):
        f = self.frequencies
        if any(x < 0 or x > 1 for x in f):
            raise ValueError("frequencies must lie in [0, 1]")
        if any(f) and max(f) != 1.0:
            raise ValueError("frequencies must be normalized so that the maximum is 1")

    @classmethod
    def from_raw(cls, values: Iterable[float]) -> WorkloadMix:
        vals = [float(v) for v in values]
        if any(v < 0 for v in vals):
            raise ValueError("frequencies must be non-negative")
        top = max(vals, default=0.0)
        if top == 0:
            return cls(tuple(0.0 for _ in vals))
        return cls(tuple(min(v / top, 1.0) for v in vals))

    @classmethod
    def uniform(cls, m: int) -> WorkloadMix:
        return cls(tuple(1.0 for _ in range(m)))

    def __len__(self) -> int:
        return len(self.frequencies)


@dataclass(frozen=True)
class PartitioningState:
    designs: tuple[int, ...]
    active_edges: frozenset[int] = field(default_factory=frozenset)

    def with_design(self, table: int, design: int) -> PartitioningState:
        d = list(self.designs)
        d[table] = design
        return PartitioningState(tuple(d), self.active_edges)


@dataclass(frozen=True)
class Schema:
    tables: tuple[Table, ...]
    edges: tuple[JoinEdge, ...]
    queries: tuple[Query, ...]

    def table_index(self, name: str) -> int:
        for i, t in enumerate(self.tables):
            if t.name == name:
                return i
        raise KeyError(f"unknown table {name!r}")

    @property
    def n_queries(self) -> int:
        return len(self.queries)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edges_of(self, table: int) -> list[JoinEdge]:
        return [e for e in self.edges if table in e.tables()]

    def search_space_size(self) -> int:
        n = 1
        for t in self.tables:
            n *= t.block_size
        return n

    def restrict_queries(self, count: int) -> Schema:
        """Same tables and join predicates, only the first ``count`` queries."""
        if not 0 < count <= self.n_queries:
            raise ValueError(f"query count {count} out of range")
        return Schema(self.tables, self.edges, self.queries[:count])

    def to_document(self) -> dict:
        tables = []
        for t in self.tables:
            doc = {
                "name": t.name,
                "row_count": t.row_count,
                "row_width": t.row_width,
                "attributes": [{"name": a.name, "distinct_values": a.distinct_values}
                               for a in t.attributes],
                "primary_key": t.attributes[t.primary_key].name,
            }
            if t.composite_keys:
                doc["composite_keys"] = [[t.attributes[i].name for i in k]
                                         for k in t.composite_keys]
            if t.fact is not None:
                doc["fact"] = t.fact
            tables.append(doc)
        preds = []
        for e in self.edges:
            lt, rt = self.tables[e.left_table], self.tables[e.right_table]
            preds.append({
                "left": f"{lt.name}.{lt.attributes[e.left_attr].name}",
                "right": f"{rt.name}.{rt.attributes[e.right_attr].name}",
            })
        queries = [{
            "id": q.id,
            "tables": [{"name": self.tables[t].name, "selectivity": s}
                       for t, s in zip(q.tables, q.selectivities)],
            "edges": list(q.edges),
            "weight": q.weight,
        } for q in self.queries]
        return {"tables": tables, "join_predicates": preds, "queries": queries}

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_document(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_TABLE_FIELDS = {"name", "row_count", "row_width", "attributes", "primary_key",
                 "composite_keys", "fact"}
_ATTR_FIELDS = {"name", "distinct_values"}
_PRED_FIELDS = {"left", "right"}
_QUERY_FIELDS = {"id", "tables", "edges", "weight"}
_QTABLE_FIELDS = {"name", "selectivity"}


def _check_fields(obj, allowed: set[str], required: set[str], where: str) -> None:
    if not isinstance(obj, Mapping):
        raise SchemaError(f"{where}: expected an object")
    unknown = set(obj) - allowed
    if unknown:
        raise SchemaError(f"{where}: unknown field(s) {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise SchemaError(f"{where}: missing field(s) {sorted(missing)}")


def _int(value, where: str, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise SchemaError(f"{where}: expected an integer >= {minimum}, got {value!r}")
    return value


def _parse_table(doc, idx: int) -> Table:
    where = f"tables[{idx}]"
    _check_fields(doc, _TABLE_FIELDS, {"name", "row_count", "row_width", "attributes"}, where)
    name = doc["name"]
    if not isinstance(name, str) or not name:
        raise SchemaError(f"{where}.name: expected a non-empty string")
    attrs_doc = doc["attributes"]
    if not isinstance(attrs_doc, list) or not attrs_doc:
        raise SchemaError(f"{where}.attributes: expected a non-empty list")
    attrs = []
    for j, a in enumerate(attrs_doc):
        aw = f"{where}.attributes[{j}]"
        _check_fields(a, _ATTR_FIELDS, {"name"}, aw)
        if not isinstance(a["name"], str) or not a["name"]:
            raise SchemaError(f"{aw}.name: expected a non-empty string")
        attrs.append(Attribute(a["name"], _int(a.get("distinct_values", 1),
                                               f"{aw}.distinct_values", 1)))
    names = [a.name for a in attrs]
    if len(set(names)) != len(names):
        raise SchemaError(f"{where}.attributes: duplicate attribute name")
    pk = 0
    if "primary_key" in doc:
        if doc["primary_key"] not in names:
            raise SchemaError(f"{where}.primary_key: unknown attribute {doc['primary_key']!r}")
        pk = names.index(doc["primary_key"])
    composites = []
    for j, key in enumerate(doc.get("composite_keys", [])):
        kw = f"{where}.composite_keys[{j}]"
        if not isinstance(key, list) or len(key) < 2:
            raise SchemaError(f"{kw}: expected a list of at least two attribute names")
        for a in key:
            if a not in names:
                raise SchemaError(f"{kw}: unknown attribute {a!r}")
        if len(set(key)) != len(key):
            raise SchemaError(f"{kw}: repeated attribute")
        composites.append(tuple(names.index(a) for a in key))
    if len(set(composites)) != len(composites):
        raise SchemaError(f"{where}.composite_keys: duplicate composite key")
    fact = doc.get("fact")
    if fact is not None and not isinstance(fact, bool):
        raise SchemaError(f"{where}.fact: expected a boolean")
    return Table(
        name=name,
        row_count=_int(doc["row_count"], f"{where}.row_count", 0),
        row_width=_int(doc["row_width"], f"{where}.row_width", 1),
        attributes=tuple(attrs),
        primary_key=pk,
        composite_keys=tuple(composites),
        fact=fact,
    )


def _resolve_column(ref, tables: Sequence[Table], where: str) -> tuple[int, int]:
    if not isinstance(ref, str) or ref.count(".") != 1:
        raise SchemaError(f"{where}: expected 'table.attribute', got {ref!r}")
    tname, aname = ref.split(".")
    for i, t in enumerate(tables):
        if t.name == tname:
            try:
                return i, t.attr_index(aname)
            except KeyError:
                raise SchemaError(f"{where}: table {tname!r} has no attribute {aname!r}") from None
    raise SchemaError(f"{where}: unknown table {tname!r}")


def _connected(nodes: set[int], edges: Iterable[tuple[int, int]]) -> bool:
    if len(nodes) <= 1:
        return True
    adj: dict[int, set[int]] = {n: set() for n in nodes}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    start = next(iter(nodes))
    seen = {start}
    stack = [start]
    while stack:
        for nxt in adj[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen == nodes


def load_schema(document: Mapping) -> Schema:
    """Build a :class:`Schema` from a parsed schema document."""
    _check_fields(document, {"tables", "join_predicates", "queries"}, {"tables"}, "schema")
    if not isinstance(document["tables"], list) or not document["tables"]:
        raise SchemaError("schema.tables: expected a non-empty list")
    tables = [_parse_table(t, i) for i, t in enumerate(document["tables"])]
    seen: set[str] = set()
    for t in tables:
        if t.name in seen:
            raise SchemaError(f"schema.tables: duplicate table name {t.name!r}")
        seen.add(t.name)

    edges = []
    pairs = set()
    for i, pred in enumerate(document.get("join_predicates", [])):
        where = f"join_predicates[{i}]"
        _check_fields(pred, _PRED_FIELDS, _PRED_FIELDS, where)
        lt, la = _resolve_column(pred["left"], tables, f"{where}.left")
        rt, ra = _resolve_column(pred["right"], tables, f"{where}.right")
        if lt == rt:
            raise SchemaError(f"{where}: self-joins are not supported")
        key = frozenset([(lt, la), (rt, ra)])
        if key in pairs:
            raise SchemaError(f"{where}: duplicate join predicate")
        pairs.add(key)
        edges.append(JoinEdge(i, lt, la, rt, ra))

    queries = []
    for i, q in enumerate(document.get("queries", [])):
        where = f"queries[{i}]"
        _check_fields(q, _QUERY_FIELDS, {"id", "tables"}, where)
        if q["id"] != i:
            raise SchemaError(f"{where}.id: query ids must be 0..m-1 in order, got {q['id']!r}")
        if not isinstance(q["tables"], list) or not q["tables"]:
            raise SchemaError(f"{where}.tables: expected a non-empty list")
        tids, sels = [], []
        for j, qt in enumerate(q["tables"]):
            tw = f"{where}.tables[{j}]"
            _check_fields(qt, _QTABLE_FIELDS, {"name"}, tw)
            try:
                tid = next(k for k, t in enumerate(tables) if t.name == qt["name"])
            except StopIteration:
                raise SchemaError(f"{tw}.name: unknown table {qt['name']!r}") from None
            if tid in tids:
                raise SchemaError(f"{tw}.name: table scanned twice")
            sel = qt.get("selectivity", 1.0)
            if isinstance(sel, bool) or not isinstance(sel, (int, float)) or not 0 <= sel <= 1:
                raise SchemaError(f"{tw}.selectivity: expected a number in [0, 1]")
            tids.append(tid)
            sels.append(float(sel))
        qedges = q.get("edges", [])
        if not isinstance(qedges, list):
            raise SchemaError(f"{where}.edges: expected a list of predicate indexes")
        for e in qedges:
            if isinstance(e, bool) or not isinstance(e, int) or not 0 <= e < len(edges):
                raise SchemaError(f"{where}.edges: unknown join predicate {e!r}")
            if not set(edges[e].tables()) <= set(tids):
                raise SchemaError(f"{where}.edges: predicate {e} joins a table the query does not scan")
        if len(set(qedges)) != len(qedges):
            raise SchemaError(f"{where}.edges: repeated predicate")
        if not _connected(set(tids), (edges[e].tables() for e in qedges)):
            raise SchemaError(f"{where}: join graph does not connect all scanned tables")
        weight = q.get("weight", 1.0)
        if isinstance(weight, bool) or not isinstance(weight, (int, float)) or weight <= 0:
            raise SchemaError(f"{where}.weight: expected a positive number")
        queries.append(Query(i, tuple(tids), tuple(sels), tuple(qedges), float(weight)))

    return Schema(tuple(tables), tuple(edges), tuple(queries))


def load_schema_file(path: str | Path) -> Schema:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from exc
    return load_schema(doc)


def reference_partitioning(schema: Schema) -> PartitioningState:
    """Every table hash-partitioned by its primary key, no active edges."""
    return PartitioningState(tuple(t.primary_key + 1 for t in schema.tables), frozenset())


def implied_edges(designs: Sequence[int], schema: Schema) -> frozenset[int]:
    """Edges whose both endpoints already sit on the edge's attributes."""
    return frozenset(
        e.id for e in schema.edges
        if designs[e.left_table] == e.left_attr + 1 and designs[e.right_table] == e.right_attr + 1
    )


def validate_state(p: PartitioningState, schema: Schema) -> list[str]:
    """Return every violated state invariant; an empty list means valid."""
    problems = []
    if len(p.designs) != len(schema.tables):
        return [f"expected {len(schema.tables)} table designs, got {len(p.designs)}"]
    for i, (d, t) in enumerate(zip(p.designs, schema.tables)):
        if not 0 <= d < t.block_size:
            problems.append(f"table {t.name}: design code {d} out of range")
    bad = [e for e in p.active_edges if not 0 <= e < schema.n_edges]
    for e in sorted(bad):
        problems.append(f"active edge {e} does not exist")
    active = [schema.edges[e] for e in sorted(p.active_edges) if 0 <= e < schema.n_edges]

    required: dict[int, set[int]] = {}
    for e in active:
        for t in e.tables():
            required.setdefault(t, set()).add(e.required_design(t))
    for t, codes in sorted(required.items()):
        if len(codes) > 1:
            problems.append(f"table {schema.tables[t].name}: active edges require conflicting "
                            f"partition attributes")
    for e in active:
        for t in e.tables():
            d = p.designs[t]
            if d == REPLICATED:
                problems.append(f"edge {e.id}: table {schema.tables[t].name} is replicated")
            elif d != e.required_design(t):
                problems.append(f"edge {e.id}: table {schema.tables[t].name} is not partitioned "
                                f"by the edge attribute")
    return problems


def is_valid(p: PartitioningState, schema: Schema) -> bool:
    return not validate_state(p, schema)
