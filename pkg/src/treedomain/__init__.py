"""Decentralized domain-topology management for space-tree grids.

A library plus deterministic multi-rank simulator: Morton-based initial
distribution, structured deadlock-free pairwise communication, the
refinement/deletion/migration consistency protocol, a central-manager
baseline, and a benchmark harness with consistency oracles.
"""

from .codec import (GridUid, Query, decode_query, decode_uid, encode_position_hash,
                    encode_query, encode_uid)
from .spacetree import (BISECTION, DomainSpec, GridHull, RefinementFactor,
                        SpaceTree, neighbor_oracle, partition, uniform_grid_count)
from .topology import RankTopology
from .schedule import build_pattern, join_stages, regular_stages, render_stage_table
from .transport import Channel, Transport, TrafficStats, run_cycle, run_ranks
from .protocol import (greedy_count_balancer, null_balancer, run_full_round,
                       run_migration_cycles, run_refine_delete_cycle)
from .central import CentralManager, run_central_round
from .harness import (bench_refine, bench_sweep, check_consistency,
                      dump_topologies, fuzz, initial_distribute)

__version__ = "0.1.0"

__all__ = [
    "BISECTION", "CentralManager", "Channel", "DomainSpec", "GridHull",
    "GridUid", "Query", "RankTopology", "RefinementFactor", "SpaceTree",
    "Transport", "TrafficStats", "bench_refine", "bench_sweep",
    "build_pattern", "check_consistency", "decode_query", "decode_uid",
    "dump_topologies", "encode_position_hash", "encode_query", "encode_uid",
    "fuzz", "greedy_count_balancer", "initial_distribute", "join_stages",
    "neighbor_oracle", "null_balancer", "partition", "regular_stages",
    "render_stage_table", "run_central_round", "run_cycle", "run_full_round",
    "run_migration_cycles", "run_ranks", "run_refine_delete_cycle",
    "uniform_grid_count",
]
