"""Decentralized consistency protocol.

One round is three communication cycles over the structured pattern:

1. refine/delete: each rank issues its local alterations, then every
   linked pair exchanges query vectors. A positive refinement query is
   answered with the face-adjacent subgrids; the origin updates its new
   children and returns the converse links. Deletion queries erase the
   named neighbour or child reference.
2. migration transfer: planned grids move with all metadata and payload
   to their target rank, which registers them under fresh UIDs and
   returns those.
3. migration update: origins retarget their bookkeeping with the fresh
   UIDs (grids co-migrated from the same origin included) and inform
   every rank holding a link to a moved grid. Afterwards all ranks
   rebuild their remote-rank lists.

All three cycles run every round; a rank with nothing to say exchanges
empty vectors. That keeps the pattern agreement-free and gives the
refine cycle a place to hand off link writes it cannot apply locally:
when a responded subgrid lives on a third rank (its parent migrated
away from it earlier), the converse write is deferred into cycle 3.

Query direction convention: a query stores the direction in which the
issuing grid lies as seen from the receiving grid; the responder
collects subgrids on its face in that direction.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

from . import codec
from .codec import (DIR_SUBGRID, DIR_SUPERGRID, TASK_DELETE, TASK_MIGRATE,
                    TASK_REFINE, opposite)
from .errors import PlanError, ProtocolError, StateError
from .schedule import build_pattern
from .spacetree import DomainSpec, GridHull, child_cell, hash_slot, slot_position
from .topology import RankTopology
from .transport import (Channel, Transport, deserialize_hulls, pack_pairs,
                        pack_words, run_ranks, run_ranks_threaded,
                        serialize_hulls, unpack_pairs, unpack_words)

Batch = list  # [(task, gid), ...] in issue order
MigrationPlan = list  # [(gid, target_rank), ...] in plan order
Balancer = Callable[[RankTopology, dict], MigrationPlan]


@dataclass
class RoundContext:
    """Per-rank bookkeeping for one protocol round."""

    rank: int
    refined: set = field(default_factory=set)
    deleted: set = field(default_factory=set)
    # per peer, metadata aligned index-for-index with the query vector;
    # refine entries are (issuer_gid, direction), deletes are None.
    issued: dict = field(default_factory=dict)
    # neighbor writes that must travel in the update cycle because the
    # target grid lives on neither exchange partner.
    deferred_links: list = field(default_factory=list)
    refine_fanout: list = field(default_factory=list)
    delete_fanout: list = field(default_factory=list)
    migrate_fanout: list = field(default_factory=list)
    # (gid, direction) -> number of neighbor-slot writes this round
    link_writes: Counter = field(default_factory=Counter)


class RoundResult(NamedTuple):
    contexts: dict
    plans: dict


def _enqueue(topo: RankTopology, ctx: RoundContext, peer: int, word: int,
             meta=None) -> None:
    topo.enqueue_query(peer, word)
    ctx.issued.setdefault(peer, []).append(meta)


def _write_link(ctx: RoundContext, hull: GridHull, direction: int, uid: int) -> None:
    if hull.neighbors[direction] is not None:
        raise ProtocolError(
            f"link slot {direction} of gid {codec.uid_gid(hull.uid)} written twice")
    hull.neighbors[direction] = uid
    ctx.link_writes[(codec.uid_gid(hull.uid), direction)] += 1


# -- issuing ------------------------------------------------------------------

def issue_refine(topo: RankTopology, ctx: RoundContext, spec: DomainSpec,
                 gid: int) -> list[int]:
    """Subdivide a local grid and queue one query per present neighbor."""
    hull = topo.registry.get(gid)
    if hull is None:
        raise ProtocolError(f"refine of unknown gid {gid} on rank {topo.rank}")
    if hull.refined:
        raise StateError(f"gid {gid} on rank {topo.rank} is already refined")
    if hull.depth >= spec.max_depth:
        raise StateError(f"gid {gid} is at max_depth {spec.max_depth}")
    children = topo.subdivide_register(gid, spec.factor)
    ctx.refined.add(gid)
    queries = 0
    for direction, nb in enumerate(hull.neighbors):
        if nb is None:
            continue
        word = codec.encode_query(TASK_REFINE, opposite(direction), codec.uid_gid(nb))
        _enqueue(topo, ctx, codec.uid_rank(nb), word, (gid, direction))
        queries += 1
    ctx.refine_fanout.append(queries)
    return children


def issue_delete(topo: RankTopology, ctx: RoundContext, gid: int) -> None:
    """Queue deletion notices for every link of a local leaf grid.

    The grid itself leaves the registry at the end of the cycle.
    """
    hull = topo.registry.get(gid)
    if hull is None:
        raise ProtocolError(f"delete of unknown gid {gid} on rank {topo.rank}")
    if hull.refined:
        raise StateError(f"gid {gid} on rank {topo.rank} is not a leaf")
    queries = 0
    for direction, nb in enumerate(hull.neighbors):
        if nb is None:
            continue
        word = codec.encode_query(TASK_DELETE, opposite(direction), codec.uid_gid(nb))
        _enqueue(topo, ctx, codec.uid_rank(nb), word, None)
        queries += 1
    if hull.parent is not None:
        word = codec.encode_query(TASK_DELETE, DIR_SUBGRID, codec.uid_gid(hull.parent),
                                  codec.uid_hash(hull.uid))
        _enqueue(topo, ctx, codec.uid_rank(hull.parent), word, None)
        queries += 1
    ctx.deleted.add(gid)
    ctx.delete_fanout.append(queries)


# -- receiver-side processing ---------------------------------------------------

def _face_children(topo: RankTopology, ctx: RoundContext, hull: GridHull,
                   spec: DomainSpec, direction: int):
    """Children on a face, ascending hash order.

    Locally deleted children are withheld: they vanish at cycle end and
    must not become anybody's neighbor.
    """
    rx, ry, rz = spec.factor
    axis, at_end = direction // 2, direction % 2 == 0
    limit = (rx, ry, rz)[axis] - 1
    out = []
    for slot, uid in enumerate(hull.children):
        if uid is None:
            continue
        if codec.uid_rank(uid) == topo.rank and codec.uid_gid(uid) in ctx.deleted:
            continue
        pos = slot_position(spec.factor, slot)
        if pos[axis] == (limit if at_end else 0):
            out.append(uid)
    return out


def _should_skip_duplicate(topo: RankTopology, ctx: RoundContext,
                           target: GridHull, issuer_uid: int) -> bool:
    """Bilateral refinement: both sides issued the mirror query; only the
    one whose issuer has the smaller (rank, gid) key is processed."""
    if codec.uid_gid(target.uid) not in ctx.refined:
        return False
    target_key = (codec.uid_rank(target.uid), codec.uid_gid(target.uid))
    issuer_key = (codec.uid_rank(issuer_uid), codec.uid_gid(issuer_uid))
    return target_key < issuer_key


def process_query_vector(topo: RankTopology, ctx: RoundContext, spec: DomainSpec,
                         words: list[int]):
    """Apply a peer's queries; returns neighbourVector pairs and their log."""
    pairs = []
    log = []
    for idx, word in enumerate(words):
        query = codec.decode_query(word)
        if query.task == TASK_DELETE:
            _apply_delete_query(topo, ctx, spec, query)
        elif query.task == TASK_REFINE:
            hull = topo.registry.get(query.gid)
            if hull is None:
                if query.gid in ctx.deleted:
                    continue
                raise ProtocolError(f"refine query names unknown gid {query.gid} "
                                    f"on rank {topo.rank}")
            issuer = hull.neighbors[query.direction]
            if issuer is None:
                raise ProtocolError(f"refine query direction {query.direction} of "
                                    f"gid {query.gid} has no issuer link")
            if _should_skip_duplicate(topo, ctx, hull, issuer):
                continue
            if hull.children is None:
                continue
            for child_uid in _face_children(topo, ctx, hull, spec, query.direction):
                pairs.append((idx, child_uid))
                log.append((child_uid, query.direction))
        else:
            raise ProtocolError("migrate task inside a refine/delete queryVector")
    return pairs, log


def _apply_delete_query(topo: RankTopology, ctx: RoundContext, spec: DomainSpec,
                        query) -> None:
    hull = topo.registry.get(query.gid)
    if hull is None:
        if query.gid in ctx.deleted:
            return  # both ends deleted this round; nothing left to clear
        raise ProtocolError(f"delete query names unknown gid {query.gid} "
                            f"on rank {topo.rank}")
    if query.direction == DIR_SUBGRID:
        topo.clear_child_slot(query.gid, query.hash, spec.factor)
        return
    if hull.neighbors[query.direction] is None:
        raise ProtocolError(f"delete query clears empty slot {query.direction} "
                            f"of gid {query.gid}")
    hull.neighbors[query.direction] = None


def apply_responses(topo: RankTopology, ctx: RoundContext, spec: DomainSpec,
                    peer: int, pairs) -> list:
    """Attach returned subgrids to this rank's new children; build converse."""
    meta = ctx.issued.get(peer, [])
    converse = []
    fx, fy, fz = spec.factor
    for idx, remote_uid in pairs:
        if idx >= len(meta) or meta[idx] is None:
            raise ProtocolError(f"response from rank {peer} references query {idx} "
                                "which is not a refine query")
        issuer_gid, direction = meta[idx]
        issuer = topo.registry[issuer_gid]
        dx, dy, dz = codec.DIRECTION_OFFSETS[direction]
        neighbor_cell = (issuer.cell[0] + dx, issuer.cell[1] + dy, issuer.cell[2] + dz)
        pos = codec.decode_position_hash(codec.uid_hash(remote_uid))
        remote_cell = child_cell(neighbor_cell, spec.factor, pos)
        own_pos = (remote_cell[0] - dx - issuer.cell[0] * fx,
                   remote_cell[1] - dy - issuer.cell[1] * fy,
                   remote_cell[2] - dz - issuer.cell[2] * fz)
        own_uid = issuer.children[hash_slot(spec.factor, codec.encode_position_hash(*own_pos))]
        _write_link(ctx, topo.registry[codec.uid_gid(own_uid)], direction, remote_uid)
        converse.append((idx, own_uid))
    return converse


def apply_converse(topo: RankTopology, ctx: RoundContext, peer: int,
                   pairs, log) -> None:
    """Attach the origin's new children to the subgrids we answered with.

    An answered subgrid that lives on a third rank cannot be written
    here; its link travels as an update query in cycle 3.
    """
    if len(pairs) != len(log):
        raise ProtocolError(f"converse from rank {peer} has {len(pairs)} entries, "
                            f"expected {len(log)}")
    for (idx, origin_uid), (own_uid, direction) in zip(pairs, log):
        if codec.uid_rank(own_uid) == topo.rank:
            _write_link(ctx, topo.registry[codec.uid_gid(own_uid)], direction, origin_uid)
        else:
            ctx.deferred_links.append((own_uid, direction, origin_uid))


def process_self_queries(topo: RankTopology, ctx: RoundContext, spec: DomainSpec,
                         transport: Transport) -> None:
    """LocalUpdate step: the rank's own queryVector, both link ends at once."""
    words = topo.query_vectors.get(topo.rank, [])
    transport.stats.record_local(topo.rank, len(words), 8 * len(words))
    fx, fy, fz = spec.factor
    for word in words:
        query = codec.decode_query(word)
        if query.task == TASK_DELETE:
            _apply_delete_query(topo, ctx, spec, query)
            continue
        if query.task != TASK_REFINE:
            raise ProtocolError("migrate task inside a refine/delete queryVector")
        hull = topo.registry.get(query.gid)
        if hull is None:
            if query.gid in ctx.deleted:
                continue
            raise ProtocolError(f"self refine query names unknown gid {query.gid}")
        issuer_uid = hull.neighbors[query.direction]
        if issuer_uid is None:
            raise ProtocolError(f"self refine query of gid {query.gid} has no issuer link")
        if _should_skip_duplicate(topo, ctx, hull, issuer_uid):
            continue
        if hull.children is None:
            continue
        issuer = topo.registry[codec.uid_gid(issuer_uid)]
        dx, dy, dz = codec.DIRECTION_OFFSETS[query.direction]
        for child_uid in _face_children(topo, ctx, hull, spec, query.direction):
            pos = codec.decode_position_hash(codec.uid_hash(child_uid))
            cell = child_cell(hull.cell, spec.factor, pos)
            other_pos = (cell[0] + dx - issuer.cell[0] * fx,
                         cell[1] + dy - issuer.cell[1] * fy,
                         cell[2] + dz - issuer.cell[2] * fz)
            other_uid = issuer.children[
                hash_slot(spec.factor, codec.encode_position_hash(*other_pos))]
            _write_link(ctx, topo.registry[codec.uid_gid(other_uid)],
                        opposite(query.direction), child_uid)
            if codec.uid_rank(child_uid) == topo.rank:
                _write_link(ctx, topo.registry[codec.uid_gid(child_uid)],
                            query.direction, other_uid)
            else:
                ctx.deferred_links.append((child_uid, query.direction, other_uid))
    topo.query_vectors[topo.rank] = []


# -- refine/delete cycle ----------------------------------------------------------

def _refine_delete_exchange(topo, ctx, spec, peer, recv_first):
    mine = pack_words(topo.query_vectors.get(peer, []))
    vectors = topo.pending_neighbour_vectors
    if recv_first:
        theirs = yield ("recv", peer, Channel.QUERY_VECTOR)
        yield ("send", peer, Channel.QUERY_VECTOR, mine)
        my_resp = yield ("recv", peer, Channel.NEIGHBOUR_VECTOR)
        resp_pairs, log = process_query_vector(topo, ctx, spec, unpack_words(theirs))
        vectors[peer] = log
        yield ("send", peer, Channel.NEIGHBOUR_VECTOR, pack_pairs(resp_pairs))
        conv = apply_responses(topo, ctx, spec, peer, unpack_pairs(my_resp))
        their_conv = yield ("recv", peer, Channel.NEIGHBOUR_VECTOR)
        apply_converse(topo, ctx, peer, unpack_pairs(their_conv), vectors.pop(peer))
        yield ("send", peer, Channel.NEIGHBOUR_VECTOR, pack_pairs(conv))
    else:
        yield ("send", peer, Channel.QUERY_VECTOR, mine)
        theirs = yield ("recv", peer, Channel.QUERY_VECTOR)
        resp_pairs, log = process_query_vector(topo, ctx, spec, unpack_words(theirs))
        vectors[peer] = log
        yield ("send", peer, Channel.NEIGHBOUR_VECTOR, pack_pairs(resp_pairs))
        my_resp = yield ("recv", peer, Channel.NEIGHBOUR_VECTOR)
        conv = apply_responses(topo, ctx, spec, peer, unpack_pairs(my_resp))
        yield ("send", peer, Channel.NEIGHBOUR_VECTOR, pack_pairs(conv))
        their_conv = yield ("recv", peer, Channel.NEIGHBOUR_VECTOR)
        apply_converse(topo, ctx, peer, unpack_pairs(their_conv), vectors.pop(peer))
    topo.query_vectors[peer] = []


def _refine_delete_proc(topo, ctx, spec, transport):
    schedule = build_pattern(topo.rank, topo.remote_ranks)
    for kind, peer, recv_first in schedule.exchange_sequence():
        if kind == "local":
            process_self_queries(topo, ctx, spec, transport)
        else:
            yield from _refine_delete_exchange(topo, ctx, spec, peer, recv_first)
    for gid in ctx.deleted:
        topo.remove_grid(gid)


def validate_batches(topos: dict, batches: dict) -> None:
    for rank, batch in batches.items():
        if rank not in topos:
            raise ProtocolError(f"batch for unknown rank {rank}")
        used = set()
        for task, gid in batch:
            if task not in (TASK_REFINE, TASK_DELETE):
                raise ProtocolError(f"bad batch task {task}")
            if gid in used:
                raise ProtocolError(f"gid {gid} used twice in rank {rank}'s batch")
            used.add(gid)


def run_refine_delete_cycle(topos: dict, spec: DomainSpec, transport: Transport,
                            batches: dict, threaded: bool = False) -> dict:
    """Issue all batches, then run one full pattern cycle. Returns contexts."""
    validate_batches(topos, batches)
    ctxs = {rank: RoundContext(rank) for rank in topos}
    for rank in sorted(topos):
        topo = topos[rank]
        for task, gid in batches.get(rank, []):
            if task == TASK_REFINE:
                issue_refine(topo, ctxs[rank], spec, gid)
            else:
                issue_delete(topo, ctxs[rank], gid)
    procs = {rank: _refine_delete_proc(topos[rank], ctxs[rank], spec, transport)
             for rank in topos}
    runner = run_ranks_threaded if threaded else run_ranks
    runner(transport, procs, "refine_delete")
    return ctxs


# -- migration ------------------------------------------------------------------

@dataclass
class _MigrationState:
    batches: dict = field(default_factory=dict)   # target -> [gid] in plan order
    entries: list = field(default_factory=list)   # (target_uid, dir, hash, old_gid)
    fanouts: list = field(default_factory=list)
    upd: dict = field(default_factory=dict)       # dest rank -> (words, uids)


def validate_plans(topos: dict, plans: dict) -> None:
    planned = {}
    for rank, plan in plans.items():
        topo = topos.get(rank)
        if topo is None:
            raise PlanError(f"plan for unknown rank {rank}")
        seen = set()
        for gid, target in plan:
            if gid not in topo.registry:
                raise PlanError(f"plan migrates unknown gid {gid} from rank {rank}")
            if gid in seen:
                raise PlanError(f"gid {gid} planned twice on rank {rank}")
            if target == rank or target not in topo.remote_ranks:
                raise PlanError(f"rank {rank} may not migrate to rank {target}; "
                                "targets must come from the communication rotation")
            seen.add(gid)
            planned[(rank, gid)] = target
        if len(topo.registry) - len(seen) < 1:
            raise PlanError(f"plan would leave rank {rank} without grids")
    for (rank, gid), _target in planned.items():
        hull = topos[rank].registry[gid]
        partners = [u for u in hull.neighbors if u is not None]
        partners += [u for u in (hull.children or []) if u is not None]
        if hull.parent is not None:
            partners.append(hull.parent)
        for uid in partners:
            key = (codec.uid_rank(uid), codec.uid_gid(uid))
            if key in planned and key[0] != rank:
                raise PlanError(
                    f"grids ({rank},{gid}) and {key} are link-connected but "
                    "migrate from different origins in the same round")


def _build_migration_state(topo: RankTopology, plan) -> _MigrationState:
    state = _MigrationState()
    dest_of = {gid: target for gid, target in plan}
    for gid, target in plan:
        state.batches.setdefault(target, []).append(gid)
        hull = topo.registry[gid]
        issued = 0

        def co_migrated(uid):
            return (codec.uid_rank(uid) == topo.rank
                    and dest_of.get(codec.uid_gid(uid)) == target)

        for direction, nb in enumerate(hull.neighbors):
            if nb is None or co_migrated(nb):
                continue  # co-migrated pairs are rewritten on arrival
            state.entries.append((nb, opposite(direction), 0, gid))
            issued += 1
        if hull.parent is not None and not co_migrated(hull.parent):
            state.entries.append((hull.parent, DIR_SUBGRID,
                                  codec.uid_hash(hull.uid), gid))
            issued += 1
        for child in (hull.children or []):
            if child is None or co_migrated(child):
                continue
            state.entries.append((child, DIR_SUPERGRID, 0, gid))
            issued += 1
        state.fanouts.append(issued)
    return state


def register_incoming(topo: RankTopology, hulls: list[GridHull]) -> list[int]:
    """Register migrated-in hulls; links among the batch are rewritten here."""
    mapping = {}
    new_uids = []
    for hull in hulls:
        old = hull.uid
        new_uids.append(topo.register_grid(hull))
        mapping[old] = hull.uid
    for hull in hulls:
        if hull.parent in mapping:
            hull.parent = mapping[hull.parent]
        hull.neighbors = [mapping.get(u, u) for u in hull.neighbors]
        if hull.children is not None:
            hull.children = [mapping.get(u, u) for u in hull.children]
    return new_uids


def _migration_a_exchange(topo, state, peer, recv_first):
    batch = state.batches.get(peer, [])
    payload = serialize_hulls([topo.registry[g] for g in batch])
    if recv_first:
        their = yield ("recv", peer, Channel.MIGRATION_GRIDS)
        yield ("send", peer, Channel.MIGRATION_GRIDS, payload)
        mine_back = yield ("recv", peer, Channel.NEW_UIDS)
        granted = register_incoming(topo, deserialize_hulls(their))
        yield ("send", peer, Channel.NEW_UIDS, pack_words(granted))
    else:
        yield ("send", peer, Channel.MIGRATION_GRIDS, payload)
        their = yield ("recv", peer, Channel.MIGRATION_GRIDS)
        granted = register_incoming(topo, deserialize_hulls(their))
        yield ("send", peer, Channel.NEW_UIDS, pack_words(granted))
        mine_back = yield ("recv", peer, Channel.NEW_UIDS)
    for gid, new_uid in zip(batch, unpack_words(mine_back)):
        topo.tombstones[gid] = new_uid


def _migration_a_proc(topo, state):
    schedule = build_pattern(topo.rank, topo.remote_ranks)
    for kind, peer, recv_first in schedule.exchange_sequence():
        if kind == "exchange":
            yield from _migration_a_exchange(topo, state, peer, recv_first)
    for batch in state.batches.values():
        for gid in batch:
            topo.remove_grid(gid)


def _retarget_update_list(topo: RankTopology, state: _MigrationState,
                          ctx: RoundContext | None) -> None:
    """Alg. 6 bookkeeping: rewrite targets and payload UIDs with the fresh
    UIDs returned by the transfer cycle, then bucket per destination rank."""
    for target_uid, direction, hash_code, old_gid in state.entries:
        new_uid = topo.tombstones[old_gid]
        final_target = target_uid
        if codec.uid_rank(target_uid) == topo.rank:
            final_target = topo.tombstones.get(codec.uid_gid(target_uid), target_uid)
        word = codec.encode_query(TASK_MIGRATE, direction,
                                  codec.uid_gid(final_target), hash_code)
        words, uids = state.upd.setdefault(codec.uid_rank(final_target), ([], []))
        words.append(word)
        uids.append(new_uid)
    if ctx is not None:
        for target_uid, direction, uid in ctx.deferred_links:
            word = codec.encode_query(TASK_MIGRATE, direction,
                                      codec.uid_gid(target_uid), 0)
            words, uids = state.upd.setdefault(codec.uid_rank(target_uid), ([], []))
            words.append(word)
            uids.append(uid)


def apply_update_words(topo: RankTopology, spec: DomainSpec, words, uids) -> None:
    for word, uid in zip(words, uids):
        query = codec.decode_query(word)
        hull = topo.registry.get(query.gid)
        if hull is None:
            raise ProtocolError(f"update query names unknown gid {query.gid} "
                                f"on rank {topo.rank}")
        if query.direction == DIR_SUPERGRID:
            if hull.parent is None:
                raise ProtocolError(f"gid {query.gid} has no parent to retarget")
            hull.parent = uid
        elif query.direction == DIR_SUBGRID:
            slot = hash_slot(spec.factor, query.hash)
            if hull.children is None or hull.children[slot] is None:
                raise ProtocolError(f"gid {query.gid} has no child at hash {query.hash}")
            hull.children[slot] = uid
        else:
            # migration retargets overwrite a live slot; deferred converse
            # writes from the refine cycle fill a fresh one
            hull.neighbors[query.direction] = uid


def _migration_b_exchange(topo, state, spec, peer, recv_first):
    words, uids = state.upd.get(peer, ([], []))
    if recv_first:
        their_words = yield ("recv", peer, Channel.UPDATE_QUERIES)
        their_uids = yield ("recv", peer, Channel.NEW_UIDS)
        yield ("send", peer, Channel.UPDATE_QUERIES, pack_words(words))
        yield ("send", peer, Channel.NEW_UIDS, pack_words(uids))
    else:
        yield ("send", peer, Channel.UPDATE_QUERIES, pack_words(words))
        yield ("send", peer, Channel.NEW_UIDS, pack_words(uids))
        their_words = yield ("recv", peer, Channel.UPDATE_QUERIES)
        their_uids = yield ("recv", peer, Channel.NEW_UIDS)
    apply_update_words(topo, spec, unpack_words(their_words), unpack_words(their_uids))


def _migration_b_proc(topo, state, spec, transport):
    schedule = build_pattern(topo.rank, topo.remote_ranks)
    for kind, peer, recv_first in schedule.exchange_sequence():
        if kind == "local":
            words, uids = state.upd.get(topo.rank, ([], []))
            transport.stats.record_local(topo.rank, 2 * len(words), 16 * len(words))
            apply_update_words(topo, spec, words, uids)
        else:
            yield from _migration_b_exchange(topo, state, spec, peer, recv_first)
    topo.rebuild_remote_ranks()
    topo.tombstones.clear()


def run_migration_cycles(topos: dict, spec: DomainSpec, transport: Transport,
                         plans: dict, ctxs: dict | None = None,
                         threaded: bool = False) -> dict:
    """Two-cycle migration round (transfer + update). Returns per-rank fanouts."""
    validate_plans(topos, plans)
    states = {rank: _build_migration_state(topos[rank], plans.get(rank, []))
              for rank in topos}
    runner = run_ranks_threaded if threaded else run_ranks
    runner(transport, {r: _migration_a_proc(topos[r], states[r]) for r in topos},
           "migration_transfer")
    for rank in sorted(topos):
        _retarget_update_list(topos[rank], states[rank],
                              None if ctxs is None else ctxs.get(rank))
    runner(transport, {r: _migration_b_proc(topos[r], states[r], spec, transport)
                       for r in topos}, "migration_update")
    return {r: states[r].fanouts for r in topos}


# -- full round --------------------------------------------------------------------

def run_full_round(topos: dict, spec: DomainSpec, transport: Transport,
                   batches: dict | None = None, balancer: Balancer | None = None,
                   plans: dict | None = None, threaded: bool = False) -> RoundResult:
    """One round: refine/delete cycle, balancing, then the migration cycles.

    All three cycles execute even when nothing migrates; ranks without
    content exchange empty vectors.
    """
    ctxs = run_refine_delete_cycle(topos, spec, transport, batches or {},
                                   threaded=threaded)
    if plans is None:
        plans = {}
        if balancer is not None:
            loads = {r: len(t.registry) for r, t in topos.items()}
            for rank in sorted(topos):
                topo = topos[rank]
                peer_loads = {p: loads[p] for p in topo.remote_ranks}
                plan = balancer(topo, peer_loads)
                if plan:
                    plans[rank] = list(plan)
    plans = {r: list(p) for r, p in plans.items() if p}
    fanouts = run_migration_cycles(topos, spec, transport, plans, ctxs=ctxs,
                                   threaded=threaded)
    for rank, counts in fanouts.items():
        ctxs[rank].migrate_fanout.extend(counts)
    return RoundResult(ctxs, plans)


# -- balancing placeholders ----------------------------------------------------------

def null_balancer(topo: RankTopology, peer_loads: dict) -> MigrationPlan:
    """No-op strategy: never migrates."""
    return []


def greedy_count_balancer(topo: RankTopology, peer_loads: dict) -> MigrationPlan:
    """Move surplus grids to the least-loaded current peer.

    Placeholder strategy; the diffusion heuristic is out of scope. Plans
    from simultaneously overloaded adjacent ranks can collide and will
    be rejected by plan validation.
    """
    if not peer_loads:
        return []
    local = len(topo.registry)
    mean = math.ceil((local + sum(peer_loads.values())) / (len(peer_loads) + 1))
    surplus = min(local - mean, local - 1)
    if surplus <= 0:
        return []
    target = min(peer_loads, key=lambda p: (peer_loads[p], p))
    gids = sorted(topo.registry, reverse=True)[:surplus]
    return [(gid, target) for gid in sorted(gids)]
