"""Greedy rollouts that turn a trained agent into a recommended partitioning."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

from .dqn import QAgent
from .env import Environment, Scorer, state_size
from .schema import PartitioningState, Schema, WorkloadMix


class AgentMismatchError(ValueError):
    pass


@dataclass
class Recommendation:
    state: PartitioningState
    reward: float
    states: list[PartitioningState] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    actions: list[int] = field(default_factory=list)
    expert: int | None = None

    @property
    def trajectory_length(self) -> int:
        return len(self.actions)


def best_step(rewards: Sequence[float]) -> int:
    """Index of the highest reward; the earliest wins ties."""
    best = 0
    for i, r in enumerate(rewards):
        if r > rewards[best]:
            best = i
    return best


def check_agent(agent: QAgent, schema: Schema) -> None:
    if agent.fingerprint and agent.fingerprint != schema.fingerprint():
        raise AgentMismatchError("agent was trained for a different schema")
    if agent.n_inputs != state_size(schema):
        raise AgentMismatchError("agent input size does not match the schema")
    if agent.episodes == 0 and agent.optimizer.t == 0:
        raise AgentMismatchError("agent has not been trained")


def recommend(agent: QAgent, mix: WorkloadMix, schema: Schema, scorer: Scorer,
              t_max: int = 100) -> Recommendation:
    """Roll out ``t_max`` greedy legal actions from the reference partitioning and
    return the best state seen on the way."""
    check_agent(agent, schema)
    env = Environment(schema, scorer)
    s = env.reset(mix)
    states = [env.state]
    rewards = [env.evaluate(env.state)]
    actions = []
    for _ in range(t_max):
        a = agent.act(s, env.mask(), greedy=True)
        p, r = env.step(a)
        s = env.observe()
        states.append(p)
        rewards.append(r)
        actions.append(a)
    i = best_step(rewards)
    # re-score the winner so a stale value can never be reported
    fresh = env.evaluate(states[i])
    return Recommendation(states[i], fresh, states, rewards, actions)


def design_report(p: PartitioningState, schema: Schema) -> dict[str, str]:
    return {t.name: t.design_label(d) for t, d in zip(schema.tables, p.designs)}


def to_report(rec: Recommendation, schema: Schema) -> dict:
    edges = []
    for eid in sorted(rec.state.active_edges):
        e = schema.edges[eid]
        lt, rt = schema.tables[e.left_table], schema.tables[e.right_table]
        edges.append(f"{lt.name}.{lt.attributes[e.left_attr].name}="
                     f"{rt.name}.{rt.attributes[e.right_attr].name}")
    return {
        "designs": design_report(rec.state, schema),
        "active_edges": edges,
        "expected_reward": rec.reward,
        "trajectory_length": rec.trajectory_length,
        "expert": rec.expert,
    }


def format_table(report: dict) -> str:
    rows = list(report["designs"].items())
    width = max(len(name) for name, _ in rows)
    lines = [f"{'table'.ljust(width)}  design", f"{'-' * width}  {'-' * 24}"]
    lines += [f"{name.ljust(width)}  {label}" for name, label in rows]
    lines.append("")
    lines.append(f"active edges:     {', '.join(report['active_edges']) or '-'}")
    lines.append(f"expected reward:  {report['expected_reward']:.6f}")
    lines.append(f"trajectory steps: {report['trajectory_length']}")
    if report.get("expert") is not None:
        lines.append(f"expert:           {report['expert']}")
    return "\n".join(lines)
