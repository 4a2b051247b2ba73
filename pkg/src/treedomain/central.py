"""Central-manager baseline: the predecessor's bookkeeping scheme.

Rank 0 mirrors the whole domain topology and is additionally a regular
worker. Every round each worker sends its alteration intents to the
manager and receives back the link updates concerning its grids plus
any migrated-in hulls. Workers still perform purely local bookkeeping
themselves (subdivision, links between two grids on the same rank,
clears against local grids); the manager computes everything that
crosses rank boundaries, including all migration UID grants.

The message framing here is an approximation for traffic-shape
comparison: intent words reuse the query layout with the migration
destination in the otherwise-unused high 27 bits; reply records are
(update query, uid) word pairs with set semantics on the migrate task
and clear semantics on the delete task.

Final states are bit-identical to the decentralized protocol on the
same script; only the traffic shape differs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import codec
from .codec import (DIR_SUBGRID, DIR_SUPERGRID, TASK_DELETE, TASK_MIGRATE,
                    TASK_REFINE, opposite)
from .errors import ProtocolError, StateError
from .protocol import validate_plans
from .schedule import arrival_order
from .spacetree import DomainSpec, GridHull, child_cell, hash_slot, slot_position
from .topology import RankTopology
from .transport import (Channel, Transport, deserialize_hulls, pack_words,
                        run_ranks, serialize_hulls, unpack_words)

MANAGER_RANK = 0


def encode_intent(task: int, gid: int, dest: int = 0) -> int:
    """Intent word: dest(63..37) | task(36..35) | zero dir | gid(31..9) | zero hash."""
    if not 0 <= dest < (1 << 27):
        raise StateError(f"destination rank {dest} out of intent range")
    return (dest << 37) | (task << 35) | (gid << 9)


def decode_intent(word: int) -> tuple[int, int, int]:
    return (word >> 35) & 3, (word >> 9) & (codec.GID_LIMIT - 1), word >> 37


def _face_child_uids(hull: GridHull, spec: DomainSpec, direction: int):
    rx, ry, rz = spec.factor
    axis, at_end = direction // 2, direction % 2 == 0
    limit = (rx, ry, rz)[axis] - 1
    out = []
    for slot, uid in enumerate(hull.children):
        if uid is None:
            continue
        pos = slot_position(spec.factor, slot)
        if pos[axis] == (limit if at_end else 0):
            out.append(uid)
    return out


def _adjacent_child(refined: GridHull, spec: DomainSpec, sub_uid: int,
                    sub_parent_cell, toward: int) -> int:
    """UID of the refined grid's child sharing a face with subgrid sub_uid."""
    fx, fy, fz = spec.factor
    dx, dy, dz = codec.DIRECTION_OFFSETS[toward]
    pos = codec.decode_position_hash(codec.uid_hash(sub_uid))
    cell = child_cell(sub_parent_cell, spec.factor, pos)
    own_pos = (cell[0] + dx - refined.cell[0] * fx,
               cell[1] + dy - refined.cell[1] * fy,
               cell[2] + dz - refined.cell[2] * fz)
    return refined.children[hash_slot(spec.factor, codec.encode_position_hash(*own_pos))]


def link_local_refined_neighbors(topo: RankTopology, spec: DomainSpec,
                                 hull: GridHull) -> None:
    """Wire the fresh children against refined neighbors on the same rank.

    Pairs with any remote grid involved are the manager's business.
    """
    for direction, nb in enumerate(hull.neighbors):
        if nb is None or codec.uid_rank(nb) != topo.rank:
            continue
        nb_hull = topo.registry[codec.uid_gid(nb)]
        if nb_hull.children is None:
            continue
        toward = opposite(direction)  # where hull lies as seen from nb
        for sub_uid in _face_child_uids(nb_hull, spec, toward):
            if codec.uid_rank(sub_uid) != topo.rank:
                continue
            own_uid = _adjacent_child(hull, spec, sub_uid, nb_hull.cell, toward)
            topo.registry[codec.uid_gid(own_uid)].neighbors[direction] = sub_uid
            topo.registry[codec.uid_gid(sub_uid)].neighbors[toward] = own_uid


def worker_local_phase(topo: RankTopology, spec: DomainSpec, batch,
                       plan) -> tuple[list[int], set]:
    """Apply the purely local part of a batch; returns intents and deletions."""
    intents = []
    deleted = set()
    for task, gid in batch:
        hull = topo.registry.get(gid)
        if hull is None:
            raise ProtocolError(f"batch names unknown gid {gid} on rank {topo.rank}")
        if task == TASK_REFINE:
            if hull.refined:
                raise StateError(f"gid {gid} on rank {topo.rank} is already refined")
            if hull.depth >= spec.max_depth:
                raise StateError(f"gid {gid} is at max_depth {spec.max_depth}")
            topo.subdivide_register(gid, spec.factor)
            link_local_refined_neighbors(topo, spec, hull)
            intents.append(encode_intent(TASK_REFINE, gid))
        elif task == TASK_DELETE:
            if hull.refined:
                raise StateError(f"gid {gid} on rank {topo.rank} is not a leaf")
            for direction, nb in enumerate(hull.neighbors):
                if nb is not None and codec.uid_rank(nb) == topo.rank:
                    topo.registry[codec.uid_gid(nb)].neighbors[opposite(direction)] = None
            if hull.parent is not None and codec.uid_rank(hull.parent) == topo.rank:
                topo.clear_child_slot(codec.uid_gid(hull.parent),
                                      codec.uid_hash(hull.uid), spec.factor)
            deleted.add(gid)
            intents.append(encode_intent(TASK_DELETE, gid))
        else:
            raise ProtocolError(f"bad batch task {task}")
    for gid, dest in plan:
        intents.append(encode_intent(TASK_MIGRATE, gid, dest))
    return intents, deleted


def apply_reply_records(topo: RankTopology, spec: DomainSpec, words, uids) -> None:
    """Apply manager records: migrate task sets a link, delete task clears."""
    for word, uid in zip(words, uids):
        query = codec.decode_query(word)
        hull = topo.registry.get(query.gid)
        if hull is None:
            raise ProtocolError(f"manager record names unknown gid {query.gid} "
                                f"on rank {topo.rank}")
        if query.task == TASK_MIGRATE:
            if query.direction == DIR_SUPERGRID:
                hull.parent = uid
            elif query.direction == DIR_SUBGRID:
                slot = hash_slot(spec.factor, query.hash)
                if hull.children is None or hull.children[slot] is None:
                    raise ProtocolError(f"gid {query.gid} has no child at hash {query.hash}")
                hull.children[slot] = uid
            else:
                hull.neighbors[query.direction] = uid
        elif query.task == TASK_DELETE:
            if query.direction == DIR_SUBGRID:
                topo.clear_child_slot(query.gid, query.hash, spec.factor)
            else:
                hull.neighbors[query.direction] = None
        else:
            raise ProtocolError(f"manager record with task {query.task}")


@dataclass
class _Outbox:
    words: list = field(default_factory=list)
    uids: list = field(default_factory=list)
    hulls: list = field(default_factory=list)

    def set_link(self, gid, direction, hash_code, uid):
        self.words.append(codec.encode_query(TASK_MIGRATE, direction, gid, hash_code))
        self.uids.append(uid)

    def clear_link(self, gid, direction, hash_code=0):
        self.words.append(codec.encode_query(TASK_DELETE, direction, gid, hash_code))
        self.uids.append(0)


class CentralManager:
    """Rank 0's global topology mirror and round bookkeeping."""

    def __init__(self, topos: dict, spec: DomainSpec):
        self.spec = spec
        self.mirror = {rank: topo.clone() for rank, topo in topos.items()}

    def _hull(self, uid: int) -> GridHull:
        return self.mirror[codec.uid_rank(uid)].registry[codec.uid_gid(uid)]

    def process_round(self, intents: dict) -> dict:
        """Apply all intents to the mirror; returns per-worker outboxes."""
        outboxes = {rank: _Outbox() for rank in self.mirror}
        plans = {}
        for rank in sorted(intents):
            for word in intents[rank]:
                task, gid, dest = decode_intent(word)
                if task == TASK_REFINE:
                    self._apply_refine(rank, gid, outboxes)
                elif task == TASK_DELETE:
                    self._apply_delete(rank, gid, outboxes)
                elif task == TASK_MIGRATE:
                    plans.setdefault(rank, []).append((gid, dest))
                else:
                    raise ProtocolError(f"manager got intent task {task}")
        if plans:
            validate_plans(self.mirror, plans)
            self._apply_migrations(plans, outboxes)
        for topo in self.mirror.values():
            topo.rebuild_remote_ranks()
        return outboxes

    def _apply_refine(self, rank: int, gid: int, outboxes: dict) -> None:
        topo = self.mirror[rank]
        hull = topo.registry[gid]
        topo.subdivide_register(gid, self.spec.factor)
        for direction, nb in enumerate(hull.neighbors):
            if nb is None:
                continue
            nb_hull = self._hull(nb)
            if nb_hull.children is None:
                continue
            toward = opposite(direction)
            for sub_uid in _face_child_uids(nb_hull, self.spec, toward):
                own_uid = _adjacent_child(hull, self.spec, sub_uid, nb_hull.cell, toward)
                self._hull(own_uid).neighbors[direction] = sub_uid
                self._hull(sub_uid).neighbors[toward] = own_uid
                # pairs fully local to the issuing worker were linked there
                if codec.uid_rank(nb) == rank and codec.uid_rank(sub_uid) == rank:
                    continue
                outboxes[rank].set_link(codec.uid_gid(own_uid), direction, 0, sub_uid)
                outboxes[codec.uid_rank(sub_uid)].set_link(
                    codec.uid_gid(sub_uid), toward, 0, own_uid)

    def _apply_delete(self, rank: int, gid: int, outboxes: dict) -> None:
        topo = self.mirror[rank]
        hull = topo.registry[gid]
        if hull.refined:
            raise StateError(f"gid {gid} on rank {rank} is not a leaf")
        for direction, nb in enumerate(hull.neighbors):
            if nb is None:
                continue
            toward = opposite(direction)
            self._hull(nb).neighbors[toward] = None
            if codec.uid_rank(nb) != rank:
                outboxes[codec.uid_rank(nb)].clear_link(codec.uid_gid(nb), toward)
        if hull.parent is not None:
            p_rank = codec.uid_rank(hull.parent)
            self.mirror[p_rank].clear_child_slot(
                codec.uid_gid(hull.parent), codec.uid_hash(hull.uid), self.spec.factor)
            if p_rank != rank:
                outboxes[p_rank].clear_link(codec.uid_gid(hull.parent), DIR_SUBGRID,
                                            codec.uid_hash(hull.uid))
        topo.remove_grid(gid)

    def _apply_migrations(self, plans: dict, outboxes: dict) -> None:
        # Grant destination gids in the order the destinations would meet
        # the origins in a pattern cycle, so both modes agree bit-exactly.
        new_uid = {}
        ordered = []
        dests = sorted({dest for plan in plans.values() for _gid, dest in plan})
        for dest in dests:
            origins = [o for o, plan in plans.items()
                       if any(d == dest for _g, d in plan)]
            for origin in arrival_order(dest, origins):
                for gid, d in plans[origin]:
                    if d != dest:
                        continue
                    topo = self.mirror[dest]
                    granted = codec.encode_uid(
                        dest, topo.next_gid,
                        codec.uid_hash(self.mirror[origin].registry[gid].uid))
                    topo.next_gid += 1
                    new_uid[(origin, gid)] = granted
                    ordered.append((origin, gid, dest))
        for origin, gid, dest in ordered:
            hull = self.mirror[origin].registry[gid]
            granted = new_uid[(origin, gid)]
            for direction, nb in enumerate(hull.neighbors):
                if nb is None:
                    continue
                key = (codec.uid_rank(nb), codec.uid_gid(nb))
                if key in new_uid:
                    continue  # partner moves too; its hull is rewritten
                outboxes[key[0]].set_link(key[1], opposite(direction), 0, granted)
                self._hull(nb).neighbors[opposite(direction)] = granted
            if hull.parent is not None:
                key = (codec.uid_rank(hull.parent), codec.uid_gid(hull.parent))
                if key not in new_uid:
                    outboxes[key[0]].set_link(key[1], DIR_SUBGRID,
                                              codec.uid_hash(hull.uid), granted)
                    slot = hash_slot(self.spec.factor, codec.uid_hash(hull.uid))
                    self._hull(hull.parent).children[slot] = granted
            for child in (hull.children or []):
                if child is None:
                    continue
                key = (codec.uid_rank(child), codec.uid_gid(child))
                if key not in new_uid:
                    outboxes[key[0]].set_link(key[1], DIR_SUPERGRID, 0, granted)
                    self._hull(child).parent = granted
        # move the hulls, rewriting links among all migrated grids
        lookup = {}
        for (origin, gid), granted in new_uid.items():
            old_uid = self.mirror[origin].registry[gid].uid
            lookup[old_uid] = granted
        for origin, gid, dest in ordered:
            hull = self.mirror[origin].remove_grid(gid)
            hull.uid = new_uid[(origin, gid)]
            if hull.parent in lookup:
                hull.parent = lookup[hull.parent]
            hull.neighbors = [lookup.get(u, u) for u in hull.neighbors]
            if hull.children is not None:
                hull.children = [lookup.get(u, u) for u in hull.children]
            self.mirror[dest].register_with_uid(hull)
            outboxes[dest].hulls.append(hull.clone())

    def mirror_dump(self) -> str:
        lines = []
        for rank in sorted(self.mirror):
            lines.extend(self.mirror[rank].dump_lines())
        return "\n".join(lines) + "\n"


def _worker_proc(topo, spec, intents, plan, deleted):
    yield ("send", MANAGER_RANK, Channel.QUERY_VECTOR, pack_words(intents))
    words = yield ("recv", MANAGER_RANK, Channel.UPDATE_QUERIES)
    uids = yield ("recv", MANAGER_RANK, Channel.NEW_UIDS)
    hulls = yield ("recv", MANAGER_RANK, Channel.MIGRATION_GRIDS)
    apply_reply_records(topo, spec, unpack_words(words), unpack_words(uids))
    for hull in deserialize_hulls(hulls):
        topo.register_with_uid(hull)
    for gid, _dest in plan:
        topo.remove_grid(gid)
    for gid in deleted:
        topo.remove_grid(gid)
    topo.rebuild_remote_ranks()


def _manager_proc(manager, topo, spec, transport, intents_by_rank, plan, deleted):
    workers = sorted(r for r in manager.mirror if r != MANAGER_RANK)
    intents = {MANAGER_RANK: intents_by_rank[MANAGER_RANK]}
    transport.stats.record_local(MANAGER_RANK, len(intents[MANAGER_RANK]),
                                 8 * len(intents[MANAGER_RANK]))
    for w in workers:
        data = yield ("recv", w, Channel.QUERY_VECTOR)
        intents[w] = unpack_words(data)
    outboxes = manager.process_round(intents)
    own = outboxes[MANAGER_RANK]
    own_hulls = serialize_hulls(own.hulls)
    transport.stats.record_local(MANAGER_RANK, 2 * len(own.words) + len(own.hulls),
                                 16 * len(own.words) + len(own_hulls))
    apply_reply_records(topo, spec, own.words, own.uids)
    for hull in deserialize_hulls(own_hulls):
        topo.register_with_uid(hull)
    for w in workers:
        box = outboxes[w]
        yield ("send", w, Channel.UPDATE_QUERIES, pack_words(box.words))
        yield ("send", w, Channel.NEW_UIDS, pack_words(box.uids))
        yield ("send", w, Channel.MIGRATION_GRIDS, serialize_hulls(box.hulls))
    for gid, _dest in plan:
        topo.remove_grid(gid)
    for gid in deleted:
        topo.remove_grid(gid)
    topo.rebuild_remote_ranks()


def run_central_round(topos: dict, manager: CentralManager, spec: DomainSpec,
                      transport: Transport, batches: dict | None = None,
                      plans: dict | None = None) -> None:
    """One round through the manager; same batch semantics as the protocol."""
    batches = batches or {}
    plans = {r: list(p) for r, p in (plans or {}).items() if p}
    intents = {}
    plan_of = {}
    deleted_of = {}
    for rank in sorted(topos):
        plan_of[rank] = plans.get(rank, [])
        intents[rank], deleted_of[rank] = worker_local_phase(
            topos[rank], spec, batches.get(rank, []), plan_of[rank])
    procs = {}
    for rank in sorted(topos):
        if rank == MANAGER_RANK:
            procs[rank] = _manager_proc(manager, topos[rank], spec, transport,
                                        intents, plan_of[rank], deleted_of[rank])
        else:
            procs[rank] = _worker_proc(topos[rank], spec, intents[rank],
                                       plan_of[rank], deleted_of[rank])
    run_ranks(transport, procs, "central")
