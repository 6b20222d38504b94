"""Learned data-partitioning advisor for distributed OLAP databases."""

from .baselines import brute_force_optimal, heuristic_general, heuristic_star
from .committee import Committee, CommitteeConfig, assign_subspace, build_committee, \
    derive_references, extend_with_queries, recommend_committee
from .cost import DeploymentConfig, ModelScorer, estimate_query_cost, estimate_workload_cost
from .dqn import QAgent
from .env import ActionSpace, Environment, decode, encode, legal_actions
from .inference import recommend
from .schema import JoinEdge, PartitioningState, Query, Schema, SchemaError, Table, \
    WorkloadMix, load_schema, load_schema_file, reference_partitioning, validate_state
from .sim import SampledDatabase, SimCluster, SimProfile, SimScorer, compute_scale_factors
from .training import RuntimeCache, TrainConfig, train_offline, train_online

__version__ = "0.1.0"
