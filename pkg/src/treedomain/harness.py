"""Scenario runner: initial distribution, dumps, consistency checking,
fuzzing and the refinement benchmark.

The consistency checker is the package's referee: it reconstructs the
global tree from per-rank dumps and compares every stored link against
the brute-force geometric oracle, so no protocol code path is trusted
by the check.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

from . import codec
from .central import CentralManager, run_central_round
from .codec import TASK_DELETE, TASK_MIGRATE, TASK_REFINE, opposite
from .errors import ConfigurationError, DumpFormatError
from .protocol import run_full_round
from .spacetree import (BISECTION, DomainSpec, GridHull, RefinementFactor,
                        SpaceTree, format_uid, neighbor_oracle, parse_grid_record,
                        partition, position_in_parent, uniform_grid_count)
from .topology import RankTopology
from .transport import Transport

TASK_BY_NAME = {"refine": TASK_REFINE, "delete": TASK_DELETE, "migrate": TASK_MIGRATE}


# -- initial generation and distribution ------------------------------------------

def initial_distribute(spec: DomainSpec, depth: int, nranks: int,
                       scheme: str = "morton") -> dict[int, RankTopology]:
    """Master-side build: uniform tree, SFC sort, balanced cut, link rewrite.

    All links are rewritten to destination UIDs before the hulls are
    handed over; the payload blobs are attached per rank afterwards.
    """
    tree = SpaceTree.build_uniform(spec, depth)
    order = tree.linearize(scheme)
    slices = partition(order, nranks)
    final_uid = {}
    for rank, chunk in enumerate(slices):
        for gid, uid in enumerate(chunk):
            final_uid[uid] = codec.encode_uid(rank, gid, codec.uid_hash(uid))

    def rewrite(uid):
        return None if uid is None else final_uid[uid]

    topos = {rank: RankTopology(rank) for rank in range(nranks)}
    blob = bytes(8 * spec.cells_per_grid)
    for rank, chunk in enumerate(slices):
        topo = topos[rank]
        for gid, uid in enumerate(chunk):
            old = tree.grids[uid]
            children = (None if old.children is None
                        else [rewrite(c) for c in old.children])
            topo.registry[gid] = GridHull(
                final_uid[uid], old.depth, old.cell, parent=rewrite(old.parent),
                children=children, neighbors=[rewrite(n) for n in old.neighbors],
                payload=blob)
        topo.next_gid = len(chunk)
        topo.rebuild_remote_ranks()
    return topos


# -- topology dumps -----------------------------------------------------------------

def format_domain_header(spec: DomainSpec) -> str:
    fx, fy, fz = spec.factor
    return (f"domain factor={fx},{fy},{fz} max_depth={spec.max_depth} "
            f"cells={spec.cells_per_grid}")


def dump_topologies(spec: DomainSpec, topos: dict[int, RankTopology]) -> str:
    lines = [format_domain_header(spec)]
    for rank in sorted(topos):
        lines.extend(topos[rank].dump_lines())
    return "\n".join(lines) + "\n"


@dataclass
class RankDump:
    rank: int
    next_gid: int
    remote_ranks: list
    grids: dict = field(default_factory=dict)  # gid -> GridHull


@dataclass
class DumpData:
    spec: DomainSpec
    ranks: dict = field(default_factory=dict)  # rank -> RankDump


def parse_dump(text: str) -> DumpData:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("domain "):
        raise DumpFormatError("dump must start with a domain header")
    fields = dict(part.split("=", 1) for part in lines[0].split()[1:])
    try:
        spec = DomainSpec(factor=RefinementFactor.parse(fields["factor"]),
                          max_depth=int(fields["max_depth"]),
                          cells_per_grid=int(fields["cells"]))
    except (KeyError, ValueError) as exc:
        raise DumpFormatError(f"bad domain header {lines[0]!r}") from exc
    data = DumpData(spec)
    current = None
    for line in lines[1:]:
        if line.startswith("rank "):
            parts = line.split()
            try:
                rank = int(parts[1])
                fields = dict(p.split("=", 1) for p in parts[2:])
                remote = ([] if fields["remote"] == "-"
                          else [int(r) for r in fields["remote"].split(",")])
                current = RankDump(rank, int(fields["next_gid"]), remote)
            except (IndexError, KeyError, ValueError) as exc:
                raise DumpFormatError(f"bad rank header {line!r}") from exc
            if rank in data.ranks:
                raise DumpFormatError(f"duplicate rank section {rank}")
            data.ranks[rank] = current
        elif line.startswith("grid "):
            if current is None:
                raise DumpFormatError("grid record before any rank header")
            hull = parse_grid_record(line)
            current.grids[codec.uid_gid(hull.uid)] = hull
        else:
            raise DumpFormatError(f"unrecognized dump line {line!r}")
    return data


class ConsistencyReport(NamedTuple):
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def check_consistency(dump_text: str) -> ConsistencyReport:
    """Rebuild the global tree from dumps and verify every stored relation."""
    data = parse_dump(dump_text)
    spec = data.spec
    factor = spec.factor
    bad: list[str] = []
    grids: dict[int, GridHull] = {}

    def where(hull):
        return f"{format_uid(hull.uid)} depth={hull.depth} cell={hull.cell}"

    for rank, dump in data.ranks.items():
        for gid, hull in dump.grids.items():
            if codec.uid_rank(hull.uid) != rank:
                bad.append(f"grid {where(hull)} stored on rank {rank} but uid says "
                           f"{codec.uid_rank(hull.uid)}")
            if hull.uid in grids:
                bad.append(f"uid {format_uid(hull.uid)} appears on two ranks")
            grids[hull.uid] = hull
            if gid >= dump.next_gid:
                bad.append(f"rank {rank} gid counter {dump.next_gid} behind grid {gid}")

    roots = [h for h in grids.values() if h.depth == 0]
    if len(roots) != 1:
        bad.append(f"expected exactly one root grid, found {len(roots)}")

    for hull in grids.values():
        for axis, r in enumerate(factor):
            if not 0 <= hull.cell[axis] < r ** hull.depth:
                bad.append(f"grid {where(hull)} cell out of bounds")
        expected_hash = (0 if hull.depth == 0 else
                         codec.encode_position_hash(*position_in_parent(hull.cell, factor)))
        if codec.uid_hash(hull.uid) != expected_hash:
            bad.append(f"grid {where(hull)} hash {codec.uid_hash(hull.uid)} "
                       f"does not encode its position {expected_hash}")
        if hull.depth == 0:
            if hull.parent is not None:
                bad.append(f"root {where(hull)} has a parent link")
        else:
            parent = grids.get(hull.parent)
            if parent is None:
                bad.append(f"grid {where(hull)} parent {format_uid(hull.parent)} missing")
            else:
                if parent.depth != hull.depth - 1 or parent.cell != tuple(
                        hull.cell[a] // factor[a] for a in range(3)):
                    bad.append(f"grid {where(hull)} parent {format_uid(hull.parent)} "
                               "is not its geometric super-grid")
                if parent.children is None:
                    bad.append(f"parent {where(parent)} has no children array "
                               f"but {format_uid(hull.uid)} points at it")
                else:
                    slot_uids = [u for u in parent.children if u is not None]
                    if hull.uid not in slot_uids:
                        bad.append(f"parent {where(parent)} does not list child "
                                   f"{format_uid(hull.uid)}")
        if hull.children is not None:
            if len(hull.children) != factor.count:
                bad.append(f"grid {where(hull)} children array has "
                           f"{len(hull.children)} slots, expected {factor.count}")
            if all(c is None for c in hull.children):
                bad.append(f"grid {where(hull)} keeps an empty children array")
            for child_uid in hull.children:
                if child_uid is None:
                    continue
                child = grids.get(child_uid)
                if child is None:
                    bad.append(f"grid {where(hull)} child {format_uid(child_uid)} missing")
                elif child.parent != hull.uid:
                    bad.append(f"child {where(child)} does not point back at "
                               f"{format_uid(hull.uid)}")

    oracle = neighbor_oracle(grids)
    for uid, hull in grids.items():
        expect = oracle[uid]
        for direction in range(6):
            have = hull.neighbors[direction]
            want = expect[direction]
            if have != want:
                bad.append(f"grid {where(hull)} neighbor[{direction}] is "
                           f"{format_uid(have)}, oracle says {format_uid(want)}")

    for rank, dump in data.ranks.items():
        want: set[int] = set()
        for hull in dump.grids.values():
            for uid in hull.neighbors:
                if uid is not None:
                    want.add(codec.uid_rank(uid))
            if hull.parent is not None:
                want.add(codec.uid_rank(hull.parent))
            for uid in (hull.children or []):
                if uid is not None:
                    want.add(codec.uid_rank(uid))
        want.discard(rank)
        if sorted(want) != list(dump.remote_ranks):
            bad.append(f"rank {rank} remote list {dump.remote_ranks} != link image "
                       f"{sorted(want)}")
    return ConsistencyReport(bad)


# -- scenario scripts -----------------------------------------------------------------

@dataclass
class ScriptRound:
    batches: dict = field(default_factory=dict)  # rank -> [(task, gid)]
    plans: dict = field(default_factory=dict)    # rank -> [(gid, target)]


@dataclass
class Script:
    spec: DomainSpec
    depth: int
    nranks: int
    scheme: str = "morton"
    seed: int | None = None
    rounds: list = field(default_factory=list)


def write_scenario(script: Script) -> str:
    fx, fy, fz = script.spec.factor
    lines = [
        "# treedomain scenario",
        f"factor={fx},{fy},{fz}",
        f"max_depth={script.spec.max_depth}",
        f"cells={script.spec.cells_per_grid}",
        f"depth={script.depth}",
        f"ranks={script.nranks}",
        f"scheme={script.scheme}",
    ]
    if script.seed is not None:
        lines.append(f"seed={script.seed}")
    for number, rnd in enumerate(script.rounds, start=1):
        lines.append(f"round {number}")
        for rank in sorted(rnd.batches):
            for task, gid in rnd.batches[rank]:
                lines.append(f"{'refine' if task == TASK_REFINE else 'delete'} "
                             f"{rank}:{gid}")
        for rank in sorted(rnd.plans):
            for gid, target in rnd.plans[rank]:
                lines.append(f"migrate {rank}:{gid} -> {target}")
    return "\n".join(lines) + "\n"


def parse_scenario(text: str) -> Script:
    header: dict[str, str] = {}
    rounds: list[ScriptRound] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("round"):
            rounds.append(ScriptRound())
            continue
        if "=" in line and not rounds:
            key, value = line.split("=", 1)
            header[key.strip()] = value.strip()
            continue
        parts = line.split()
        op = parts[0]
        if op not in TASK_BY_NAME:
            raise ConfigurationError(f"unknown scenario op {op!r}")
        if not rounds:
            raise ConfigurationError("scenario op before any round header")
        rank_s, gid_s = parts[1].split(":")
        rank, gid = int(rank_s), int(gid_s)
        if op == "migrate":
            if len(parts) != 4 or parts[2] != "->":
                raise ConfigurationError(f"bad migrate line {line!r}")
            rounds[-1].plans.setdefault(rank, []).append((gid, int(parts[3])))
        else:
            rounds[-1].batches.setdefault(rank, []).append((TASK_BY_NAME[op], gid))
    try:
        spec = DomainSpec(factor=RefinementFactor.parse(header["factor"]),
                          max_depth=int(header["max_depth"]),
                          cells_per_grid=int(header.get("cells", "8")))
        script = Script(spec, int(header["depth"]), int(header["ranks"]),
                        header.get("scheme", "morton"),
                        int(header["seed"]) if "seed" in header else None, rounds)
    except (KeyError, ValueError) as exc:
        raise ConfigurationError(f"bad scenario header: {exc}") from exc
    return script


def run_script(script: Script, mode: str = "decentral",
               transport_mode: str = "rendezvous", buffer_budget: int = 0,
               threaded: bool = False,
               after_round: Callable | None = None):
    """Replay a script; returns (topologies, transport)."""
    topos = initial_distribute(script.spec, script.depth, script.nranks,
                               script.scheme)
    transport = Transport(transport_mode, buffer_budget)
    manager = CentralManager(topos, script.spec) if mode == "central" else None
    for index, rnd in enumerate(script.rounds):
        if mode == "central":
            run_central_round(topos, manager, script.spec, transport,
                              rnd.batches, rnd.plans)
        else:
            run_full_round(topos, script.spec, transport, rnd.batches,
                           plans=rnd.plans, threaded=threaded)
        if after_round is not None:
            after_round(index, topos, transport)
    return topos, transport


# -- fuzzing ------------------------------------------------------------------------

class FuzzResult(NamedTuple):
    passed: bool
    rounds_completed: int
    violations: list
    script: Script
    final_dump: str


def _face_has_remote_children(topos, spec, nb_uid, toward) -> bool:
    nb_rank = codec.uid_rank(nb_uid)
    nb_hull = topos[nb_rank].registry[codec.uid_gid(nb_uid)]
    if nb_hull.children is None:
        return False
    rx, ry, rz = spec.factor
    axis, at_end = toward // 2, toward % 2 == 0
    limit = (rx, ry, rz)[axis] - 1
    for slot, uid in enumerate(nb_hull.children):
        if uid is None or codec.uid_rank(uid) == nb_rank:
            continue
        pos = (slot % rx, (slot // rx) % ry, slot // (rx * ry))
        if pos[axis] == (limit if at_end else 0):
            return True
    return False


def _pick_round_ops(rng: random.Random, topos, spec) -> ScriptRound:
    """Choose a small set of valid ops against the current global state.

    Guard rails (global knowledge, generator-only): deletes require a
    local parent, refines avoid neighbors with migrated-away children on
    the shared face, link-connected grids never migrate from different
    origins, and no rank is drained of its last grid.
    """
    rnd = ScriptRound()
    used: set[tuple] = set()
    removals: dict[int, int] = {}
    planned: dict[tuple, int] = {}

    def pick_refine(rank):
        topo = topos[rank]
        options = []
        for gid in sorted(topo.registry):
            hull = topo.registry[gid]
            if hull.refined or hull.depth >= spec.max_depth or (rank, gid) in used:
                continue
            if any(nb is not None and _face_has_remote_children(
                    topos, spec, nb, opposite(direction))
                   for direction, nb in enumerate(hull.neighbors)):
                continue
            options.append(gid)
        return rng.choice(options) if options else None

    def pick_delete(rank):
        topo = topos[rank]
        if len(topo.registry) - removals.get(rank, 0) <= 1:
            return None
        options = []
        for gid in sorted(topo.registry):
            hull = topo.registry[gid]
            if (hull.refined or hull.parent is None or (rank, gid) in used
                    or codec.uid_rank(hull.parent) != rank):
                continue
            options.append(gid)
        return rng.choice(options) if options else None

    def pick_migration(rank):
        topo = topos[rank]
        if not topo.remote_ranks:
            return None
        if len(topo.registry) - removals.get(rank, 0) <= 1:
            return None
        options = []
        for gid in sorted(topo.registry):
            if (rank, gid) in used:
                continue
            hull = topo.registry[gid]
            partners = [u for u in hull.neighbors if u is not None]
            partners += [u for u in (hull.children or []) if u is not None]
            if hull.parent is not None:
                partners.append(hull.parent)
            conflict = any(
                (codec.uid_rank(u), codec.uid_gid(u)) in planned
                and codec.uid_rank(u) != rank for u in partners)
            if not conflict:
                options.append(gid)
        if not options:
            return None
        gid = rng.choice(options)
        return gid, rng.choice(topo.remote_ranks)

    ranks = sorted(topos)
    for _ in range(rng.randint(1, 4)):
        rank = rng.choice(ranks)
        kind = rng.choices(("refine", "delete", "migrate"), weights=(5, 3, 3))[0]
        if kind == "refine":
            gid = pick_refine(rank)
            if gid is not None:
                rnd.batches.setdefault(rank, []).append((TASK_REFINE, gid))
                used.add((rank, gid))
        elif kind == "delete":
            gid = pick_delete(rank)
            if gid is not None:
                rnd.batches.setdefault(rank, []).append((TASK_DELETE, gid))
                used.add((rank, gid))
                removals[rank] = removals.get(rank, 0) + 1
        else:
            choice = pick_migration(rank)
            if choice is not None:
                gid, target = choice
                rnd.plans.setdefault(rank, []).append((gid, target))
                used.add((rank, gid))
                planned[(rank, gid)] = target
                removals[rank] = removals.get(rank, 0) + 1
    return rnd


def fuzz(seed: int, rounds: int, nranks: int, depth: int,
         max_depth: int | None = None, factor: RefinementFactor = BISECTION,
         cells_per_grid: int = 8, artifact_path=None,
         threaded: bool = False) -> FuzzResult:
    """Deterministic random rounds with a consistency check after each one."""
    if rounds < 1:
        raise ConfigurationError("fuzz needs at least one round")
    spec = DomainSpec(factor=factor,
                      max_depth=depth + 1 if max_depth is None else max_depth,
                      cells_per_grid=cells_per_grid)
    script = Script(spec, depth, nranks, seed=seed)
    topos = initial_distribute(spec, depth, nranks)
    transport = Transport()
    rng = random.Random(seed)
    for index in range(rounds):
        rnd = _pick_round_ops(rng, topos, spec)
        script.rounds.append(rnd)
        run_full_round(topos, spec, transport, rnd.batches, plans=rnd.plans,
                       threaded=threaded)
        dump = dump_topologies(spec, topos)
        report = check_consistency(dump)
        if not report.ok:
            if artifact_path is not None:
                artifact_path = str(artifact_path)
                with open(artifact_path, "w") as fh:
                    fh.write(write_scenario(script))
                with open(artifact_path + ".dump", "w") as fh:
                    fh.write(dump)
            return FuzzResult(False, index + 1, report.violations, script, dump)
    return FuzzResult(True, rounds, [], script, dump_topologies(spec, topos))


# -- refinement benchmark ---------------------------------------------------------------

class BenchResult(NamedTuple):
    mode: str
    nranks: int
    from_depth: int
    to_depth: int
    initial_grids: int
    final_grids: int
    max_rank_msgs: int
    manager_msgs: int
    total_msgs: int
    total_bytes: int
    stats_csv: str


def bench_refine(from_depth: int, to_depth: int, nranks: int,
                 mode: str = "decentral", factor: RefinementFactor = BISECTION,
                 cells_per_grid: int = 8, alpha: float = 1e-6,
                 beta: float = 1e-9, threaded: bool = False) -> BenchResult:
    """Refine the whole uniform domain by one level and account the traffic."""
    if to_depth != from_depth + 1:
        raise ConfigurationError("benchmark refines by exactly one level")
    spec = DomainSpec(factor=factor, max_depth=to_depth,
                      cells_per_grid=cells_per_grid)
    topos = initial_distribute(spec, from_depth, nranks)
    initial = sum(len(t.registry) for t in topos.values())
    if initial != uniform_grid_count(factor, from_depth):
        raise ConfigurationError(f"unexpected initial grid count {initial}")
    batches = {}
    for rank in sorted(topos):
        gids = [gid for gid in sorted(topos[rank].registry)
                if not topos[rank].registry[gid].refined]
        batches[rank] = [(TASK_REFINE, gid) for gid in gids]
    transport = Transport()
    if mode == "central":
        manager = CentralManager(topos, spec)
        run_central_round(topos, manager, spec, transport, batches)
    elif mode == "decentral":
        run_full_round(topos, spec, transport, batches, threaded=threaded)
    else:
        raise ConfigurationError(f"unknown mode {mode!r}")
    final = sum(len(t.registry) for t in topos.values())
    if final != uniform_grid_count(factor, to_depth):
        raise ConfigurationError(f"unexpected final grid count {final}")
    totals = transport.stats.per_rank_totals()
    max_rank = max(c.msgs_total for c in totals.values())
    manager_msgs = totals.get(0).msgs_total if 0 in totals else 0
    return BenchResult(mode, nranks, from_depth, to_depth, initial, final,
                       max_rank, manager_msgs,
                       sum(c.msgs_total for c in totals.values()),
                       sum(c.bytes_sent for c in totals.values()),
                       transport.stats.to_csv(alpha, beta))


SWEEP_HEADER = ("mode,ranks,from_depth,to_depth,initial_grids,final_grids,"
                "max_rank_msgs,manager_msgs,total_msgs,total_bytes")


def bench_sweep(from_depth: int, to_depth: int, ranks_list, modes=("decentral",),
                **kwargs) -> tuple[list[BenchResult], str]:
    """Run bench_refine over a rank sweep; returns results and a summary CSV."""
    results = []
    lines = ["# uniform refinement benchmark; msgs are payload records "
             "(see stats CSV header)", SWEEP_HEADER]
    for mode in modes:
        for nranks in ranks_list:
            res = bench_refine(from_depth, to_depth, nranks, mode, **kwargs)
            results.append(res)
            lines.append(f"{res.mode},{res.nranks},{res.from_depth},{res.to_depth},"
                         f"{res.initial_grids},{res.final_grids},{res.max_rank_msgs},"
                         f"{res.manager_msgs},{res.total_msgs},{res.total_bytes}")
    return results, "\n".join(lines) + "\n"
