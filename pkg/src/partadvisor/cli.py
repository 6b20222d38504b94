"""Command-line front end.

Every command reads a run config (one JSON document with optional sections
``train``, ``deploy``, ``sim_profile`` and ``committee``) and honours
``--seed``. Exit codes: 0 success, 2 bad input, 3 failure while running.
All randomness is drawn from generators seeded by ``--seed``, so repeated runs
with equal inputs produce identical outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import brute_force_optimal, heuristic_general, heuristic_star
from .committee import Committee, CommitteeConfig, build_committee, extend_with_queries, \
    recommend_committee
from .cost import DeploymentConfig, ModelScorer
from .dqn import CheckpointError, QAgent
from .inference import Recommendation, format_table, recommend, to_report
from .schema import PartitioningState, Schema, SchemaError, WorkloadMix, load_schema, \
    load_schema_file, reference_partitioning
from .sim import SampledDatabase, SimProfile, SimScorer, compute_scale_factors, \
    sampling_rank_agreement
from .training import CachedScorer, OnlineBackend, RuntimeCache, TrainConfig, \
    make_online_backend, train_offline, train_online

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 2, 3
INPUT_ERRORS = (OSError, ValueError, KeyError, TypeError, json.JSONDecodeError)


class InputError(Exception):
    pass


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    deploy: DeploymentConfig = field(default_factory=DeploymentConfig)
    profile: SimProfile = field(default_factory=SimProfile)
    committee: CommitteeConfig = field(default_factory=CommitteeConfig)
    sampling_rate: float = 0.1
    min_rows: int = 100

    @classmethod
    def from_dict(cls, doc: dict) -> RunConfig:
        unknown = set(doc) - {"train", "deploy", "sim_profile", "committee"}
        if unknown:
            raise ValueError(f"config: unknown section(s) {sorted(unknown)}")
        deploy = DeploymentConfig.from_dict(doc.get("deploy", {}))
        sim = doc.get("sim_profile", {})
        return cls(
            train=TrainConfig.from_dict(doc.get("train", {})),
            deploy=deploy,
            profile=SimProfile.from_dict(sim, deploy),
            committee=CommitteeConfig.from_dict(doc.get("committee", {})),
            sampling_rate=float(sim.get("sampling_rate", 0.1)),
            min_rows=int(sim.get("min_rows", 100)),
        )

    def sample_db(self, schema: Schema) -> SampledDatabase:
        return SampledDatabase.uniform(schema, self.sampling_rate, self.min_rows)


def _read_json(path: str):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from exc


def _load_config(path: str | None, seed: int | None) -> RunConfig:
    cfg = RunConfig.from_dict(_read_json(path)) if path else RunConfig()
    if seed is not None:
        cfg.train = cfg.train.replace(seed=seed)
    return cfg


def _load_mix(path: str, schema: Schema) -> WorkloadMix:
    doc = _read_json(path)
    values = doc["frequencies"] if isinstance(doc, dict) else doc
    if len(values) != schema.n_queries:
        raise InputError(f"mix has {len(values)} entries, schema has {schema.n_queries} queries")
    return WorkloadMix.from_raw(values)


# -- single-agent bundles ------------------------------------------------------

def save_agent_bundle(out: Path, schema: Schema, agent: QAgent, cfg: RunConfig,
                      cache: RuntimeCache | None = None, scale=None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    agent.save(out / "agent.json")
    (out / "schema.json").write_text(json.dumps(schema.to_document(), indent=2))
    if cache is not None:
        cache.save(out / "cache.json")
    manifest = {
        "kind": "agent",
        "fingerprint": schema.fingerprint(),
        "agent": "agent.json",
        "cache": None if cache is None else "cache.json",
        "scale": None if scale is None else [float(x) for x in scale],
        "train": cfg.train.to_dict(),
        "deploy": cfg.deploy.to_dict(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))


@dataclass
class Bundle:
    kind: str
    schema: Schema
    manifest: dict
    agent: QAgent | None = None
    committee: Committee | None = None
    cache: RuntimeCache = field(default_factory=RuntimeCache)

    @property
    def scale(self) -> np.ndarray | None:
        s = self.manifest.get("scale")
        return None if s is None else np.array(s, dtype=float)

    def scorer(self) -> CachedScorer:
        deploy = DeploymentConfig.from_dict(self.manifest["deploy"])
        scale = self.scale if self.scale is not None else np.ones(self.schema.n_queries)
        return CachedScorer(self.schema, self.cache, scale, ModelScorer(self.schema, deploy))


def load_bundle(path: str) -> Bundle:
    root = Path(path)
    manifest = _read_json(str(root / "manifest.json"))
    schema = load_schema_file(root / "schema.json")
    if manifest.get("kind") == "committee":
        c = Committee.load(root, schema)
        return Bundle("committee", schema, manifest, committee=c, cache=c.cache)
    agent = QAgent.load(root / manifest["agent"], schema.fingerprint())
    cache = RuntimeCache.load(root / manifest["cache"]) if manifest.get("cache") else RuntimeCache()
    return Bundle("agent", schema, manifest, agent=agent, cache=cache)


# -- commands ------------------------------------------------------------------

def cmd_train_offline(args) -> Callable[[], None]:
    schema = load_schema_file(args.schema)
    cfg = _load_config(args.config, args.seed)
    out = Path(args.out)

    def run():
        result = train_offline(schema, cfg.deploy, cfg.train)
        save_agent_bundle(out, schema, result.agent, cfg)
        result.write_log(out / "train_log.jsonl")
        print(f"trained {cfg.train.episodes} episodes; bundle written to {out}")

    return run


def _online_backend_from(bundle: Bundle | None, schema: Schema, cfg: RunConfig,
                         p_offline: PartitioningState) -> OnlineBackend:
    sample_db = cfg.sample_db(schema)
    scale = bundle.scale if bundle is not None else None
    if scale is None:
        scale = compute_scale_factors(p_offline, SampledDatabase.full(schema), sample_db,
                                      cfg.profile, cfg.train.seed)
    cache = bundle.cache if bundle is not None else None
    return make_online_backend(schema, sample_db, cfg.profile, cfg.train, scale, cache)


def cmd_train_online(args) -> Callable[[], None]:
    schema = load_schema_file(args.schema)
    cfg = _load_config(args.config, args.seed)
    if args.sim_profile:
        cfg.profile = SimProfile.from_dict(_read_json(args.sim_profile), cfg.deploy)
    warm = load_bundle(args.warm) if args.warm else None
    if warm is not None and warm.agent is None:
        raise InputError("--warm must point to a single-agent bundle")
    out = Path(args.out)

    def run():
        agent = warm.agent if warm else None
        p_offline = reference_partitioning(schema)
        if agent is not None:
            mix = WorkloadMix.uniform(schema.n_queries)
            p_offline = recommend(agent, mix, schema, ModelScorer(schema, cfg.deploy),
                                  cfg.train.t_max).state
        backend = _online_backend_from(None, schema, cfg, p_offline)
        result = train_online(schema, backend.cluster.db, cfg.profile, cfg.train, agent=agent,
                              backend=backend)
        save_agent_bundle(out, schema, result.agent, cfg, backend.cache, backend.scale)
        result.write_log(out / "train_log.jsonl")
        print(f"executed {backend.executed_queries} queries, {backend.repartitions} "
              f"repartitionings; bundle written to {out}")

    return run


def cmd_derive_committee(args) -> Callable[[], None]:
    naive = load_bundle(args.naive)
    if naive.agent is None:
        raise InputError("--naive must point to a single-agent bundle")
    schema = naive.schema
    cfg = _load_config(args.config, args.seed)
    out = Path(args.out)

    def run():
        backend = _online_backend_from(naive, schema, cfg, reference_partitioning(schema))
        committee = build_committee(naive.agent, schema, backend, cfg.train, cfg.committee,
                                    cfg.deploy)
        committee.save(out)
        print(f"{len(committee.refs)} reference partitionings; bundle written to {out}")

    return run


def cmd_extend_workload(args) -> Callable[[], None]:
    bundle = load_bundle(args.bundle)
    if bundle.committee is None:
        raise InputError("--bundle must point to a committee bundle")
    full_schema = load_schema_file(args.schema)
    cfg = _load_config(args.config, args.seed)
    out = Path(args.out)

    def run():
        c = bundle.committee
        c.backend = make_online_backend(c.schema, cfg.sample_db(c.schema), cfg.profile, c.config,
                                        c.scale, c.cache)
        extended = extend_with_queries(c, full_schema, cfg.profile)
        extended.save(out)
        print(f"{len(extended.refs)} reference partitionings after extension; "
              f"bundle written to {out}")

    return run


def cmd_recommend(args) -> Callable[[], None]:
    bundle = load_bundle(args.bundle)
    mix = _load_mix(args.mix, bundle.schema)

    def run():
        scorer = bundle.scorer()
        if bundle.committee is not None:
            rec = recommend_committee(bundle.committee, mix, scorer)
        else:
            t_max = args.t_max or bundle.manifest["train"]["t_max"]
            rec = recommend(bundle.agent, mix, bundle.schema, scorer, t_max)
        report = to_report(rec, bundle.schema)
        if args.format == "json":
            print(json.dumps(report, indent=2))
        else:
            print(format_table(report))

    return run


def _scenario_schema(entry: dict, base: Path) -> Schema:
    src = entry["schema"]
    if isinstance(src, str):
        return load_schema_file(base / src)
    return load_schema(src)


def run_benchmark_scenario(schema: Schema, cfg: RunConfig, mix: WorkloadMix) -> dict:
    """Compare heuristics, the trained agent and the oracle on simulated full-data runtimes."""
    full = SimScorer(SampledDatabase.full(schema), cfg.profile, seed=cfg.train.seed)
    f = np.asarray(mix.frequencies)

    def runtime(p: PartitioningState) -> float:
        return float(f @ full.costs(p.designs, f))

    states: dict[str, PartitioningState] = {}
    for mode in ("most-frequent", "largest"):
        try:
            states[f"star:{mode}"] = heuristic_star(schema, mode)
        except ValueError:
            pass
    for mode in ("replicate-small", "greedy-largest-pairs"):
        states[f"general:{mode}"] = heuristic_general(schema, mode)
    offline = train_offline(schema, cfg.deploy, cfg.train)
    p_offline = recommend(offline.agent, mix, schema, ModelScorer(schema, cfg.deploy),
                          cfg.train.t_max).state
    states["drl:offline"] = p_offline
    online = train_online(schema, cfg.sample_db(schema), cfg.profile, cfg.train,
                          agent=offline.agent, p_offline=p_offline)
    states["drl:online"] = recommend(online.agent, mix, schema, online.scorer(),
                                     cfg.train.t_max).state
    states["oracle"] = brute_force_optimal(schema, mix, full)[0]
    runtimes = {name: runtime(p) for name, p in states.items()}
    slowest = max(runtimes.values())
    return {
        "approaches": {
            name: {"designs": [schema.tables[i].design_label(d) for i, d in enumerate(p.designs)],
                   "runtime": runtimes[name], "speedup_vs_slowest": slowest / runtimes[name]}
            for name, p in states.items()
        },
        "agent_matches_oracle": runtimes["drl:online"] <= runtimes["oracle"] * (1 + 1e-9),
    }


def cmd_benchmark(args) -> Callable[[], None]:
    path = Path(args.scenario)
    doc = _read_json(str(path))
    entries = doc.get("scenarios", []) if isinstance(doc, dict) else doc
    if not entries:
        raise InputError("scenario list is empty")
    prepared = []
    for i, entry in enumerate(entries):
        schema = _scenario_schema(entry, path.parent)
        cfg = RunConfig.from_dict(entry.get("config", {}))
        if args.seed is not None:
            cfg.train = cfg.train.replace(seed=args.seed)
        mix = (WorkloadMix.from_raw(entry["mix"]) if "mix" in entry
               else WorkloadMix.uniform(schema.n_queries))
        if len(mix) != schema.n_queries:
            raise InputError(f"scenario {i}: mix length does not match the query count")
        prepared.append((entry.get("name", f"scenario-{i}"), schema, cfg, mix))

    def run():
        report = {name: run_benchmark_scenario(schema, cfg, mix)
                  for name, schema, cfg, mix in prepared}
        print(json.dumps(report, indent=2))

    return run


def cmd_validate_sampling(args) -> Callable[[], None]:
    schema = load_schema_file(args.schema)
    cfg = _load_config(args.config, args.seed)
    mix = _load_mix(args.mix, schema) if args.mix else WorkloadMix.uniform(schema.n_queries)

    def run():
        rng = np.random.default_rng(cfg.train.seed)
        states = [reference_partitioning(schema)]
        for _ in range(args.states - 1):
            designs = tuple(int(rng.integers(t.block_size)) for t in schema.tables)
            states.append(PartitioningState(designs))
        sample_db, full_db = cfg.sample_db(schema), SampledDatabase.full(schema)
        scale = compute_scale_factors(states[0], full_db, sample_db, cfg.profile, cfg.train.seed)
        out = sampling_rank_agreement(states, mix, full_db, sample_db, cfg.profile, scale,
                                      cfg.train.seed)
        out["states"] = [list(p.designs) for p in states]
        print(json.dumps(out, indent=2))

    return run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="partadvisor",
                                     description="Learned partitioning advisor for OLAP schemas.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=None, help="override train.seed")
        p.set_defaults(func=func)
        return p

    p = add("train-offline", cmd_train_offline, "train against the cost model")
    p.add_argument("--schema", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="bundle directory")

    p = add("train-online", cmd_train_online, "train or refine against the simulator")
    p.add_argument("--schema", required=True)
    p.add_argument("--config")
    p.add_argument("--sim-profile", help="JSON file overriding the config's sim_profile")
    p.add_argument("--warm", help="offline bundle to refine")
    p.add_argument("--out", required=True)

    p = add("derive-committee", cmd_derive_committee, "build references and experts")
    p.add_argument("--naive", required=True, help="online-trained single-agent bundle")
    p.add_argument("--config")
    p.add_argument("--out", required=True)

    p = add("extend-workload", cmd_extend_workload, "add queries to a committee")
    p.add_argument("--bundle", required=True)
    p.add_argument("--schema", required=True, help="schema including the new queries")
    p.add_argument("--config")
    p.add_argument("--out", required=True)

    p = add("recommend", cmd_recommend, "recommend a partitioning for a mix")
    p.add_argument("--bundle", required=True)
    p.add_argument("--mix", required=True)
    p.add_argument("--format", choices=("json", "table"), default="json")
    p.add_argument("--t-max", type=int, default=None)

    p = add("benchmark", cmd_benchmark, "compare baselines, agent and oracle")
    p.add_argument("--scenario", required=True)

    p = add("validate-sampling", cmd_validate_sampling, "rank agreement of sample vs full runtimes")
    p.add_argument("--schema", required=True)
    p.add_argument("--config")
    p.add_argument("--mix")
    p.add_argument("--states", type=int, default=20)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    try:
        run = args.func(args)
    except (InputError, SchemaError, CheckpointError, *INPUT_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        run()
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
