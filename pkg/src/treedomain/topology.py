"""One rank's local-only view of the domain.

A RankTopology owns a registry of grid hulls keyed by per-rank GID, the
sorted list of peer ranks it shares links with, and the per-peer query
vectors that accumulate protocol tasks between communication cycles.
Nothing here ever looks at another rank's state; all cross-rank effects
travel as messages.
"""

from __future__ import annotations

from . import codec, spacetree
from .errors import CapacityError, LinkError, StateError
from .spacetree import GridHull, RefinementFactor


class RankTopology:
    def __init__(self, rank: int):
        self.rank = rank
        self.registry: dict[int, GridHull] = {}
        self.next_gid = 0
        self.remote_ranks: list[int] = []
        self.query_vectors: dict[int, list[int]] = {}
        # neighbourVector entries sent per peer in the current exchange,
        # kept so the converse message can be applied positionally.
        self.pending_neighbour_vectors: dict[int, list] = {}
        # old gid -> new uid for grids migrated away, kept for one round.
        self.tombstones: dict[int, int] = {}

    # -- registry ----------------------------------------------------------

    def hull(self, gid: int) -> GridHull:
        return self.registry[gid]

    def register_grid(self, hull: GridHull) -> int:
        """Store a hull under a fresh GID; the hash is preserved."""
        if self.next_gid >= codec.GID_LIMIT:
            raise CapacityError(f"rank {self.rank} exhausted its 23-bit gid space")
        uid = codec.encode_uid(self.rank, self.next_gid, codec.uid_hash(hull.uid))
        self.next_gid += 1
        hull.uid = uid
        self.registry[codec.uid_gid(uid)] = hull
        return uid

    def register_with_uid(self, hull: GridHull) -> int:
        """Store a hull under a UID assigned elsewhere (central baseline)."""
        uid = hull.uid
        if codec.uid_rank(uid) != self.rank:
            raise StateError(f"uid {spacetree.format_uid(uid)} does not belong to rank {self.rank}")
        gid = codec.uid_gid(uid)
        if gid in self.registry:
            raise StateError(f"gid {gid} already registered on rank {self.rank}")
        self.registry[gid] = hull
        self.next_gid = max(self.next_gid, gid + 1)
        return uid

    def remove_grid(self, gid: int) -> GridHull:
        return self.registry.pop(gid)

    def subdivide_register(self, gid: int, factor: RefinementFactor) -> list[int]:
        """Refine a local grid; children get fresh local GIDs and sibling links."""
        parent = self.registry[gid]

        def uid_for(slot, hash_code):
            if self.next_gid >= codec.GID_LIMIT:
                raise CapacityError(f"rank {self.rank} exhausted its 23-bit gid space")
            uid = codec.encode_uid(self.rank, self.next_gid, hash_code)
            self.next_gid += 1
            return uid

        children = spacetree.subdivide(parent, factor, uid_for)
        for hull in children:
            self.registry[codec.uid_gid(hull.uid)] = hull
        return [codec.uid_gid(h.uid) for h in children]

    def clear_child_slot(self, gid: int, hash_code: int, factor: RefinementFactor) -> None:
        """Erase one child reference; dropping the last one unrefines the grid."""
        hull = self.registry[gid]
        slot = spacetree.hash_slot(factor, hash_code)
        if hull.children is None or hull.children[slot] is None:
            raise StateError(f"grid {gid} on rank {self.rank} has no child at hash {hash_code}")
        hull.children[slot] = None
        if all(c is None for c in hull.children):
            hull.children = None

    # -- communication bookkeeping ------------------------------------------

    def enqueue_query(self, peer: int, word: int) -> None:
        """Append a packed query to a peer's vector (FIFO, self allowed)."""
        if peer != self.rank and peer not in self.remote_ranks:
            raise LinkError(f"rank {self.rank} has no link to rank {peer}")
        self.query_vectors.setdefault(peer, []).append(word)

    def rebuild_remote_ranks(self) -> list[int]:
        """Recompute the peer list from scratch by scanning all local links."""
        ranks: set[int] = set()
        for hull in self.registry.values():
            for uid in hull.neighbors:
                if uid is not None:
                    ranks.add(codec.uid_rank(uid))
            if hull.parent is not None:
                ranks.add(codec.uid_rank(hull.parent))
            if hull.children is not None:
                for uid in hull.children:
                    if uid is not None:
                        ranks.add(codec.uid_rank(uid))
        ranks.discard(self.rank)
        self.remote_ranks = sorted(ranks)
        return self.remote_ranks

    # -- dumps ---------------------------------------------------------------

    def dump_lines(self) -> list[str]:
        remote = ",".join(str(r) for r in self.remote_ranks) or "-"
        lines = [f"rank {self.rank} next_gid={self.next_gid} remote={remote}"]
        for gid in sorted(self.registry):
            lines.append(spacetree.format_grid_record(self.registry[gid]))
        return lines

    def clone(self) -> "RankTopology":
        other = RankTopology(self.rank)
        other.next_gid = self.next_gid
        other.remote_ranks = list(self.remote_ranks)
        other.registry = {gid: hull.clone() for gid, hull in self.registry.items()}
        return other
