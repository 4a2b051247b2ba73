import pytest

from treedomain import codec
from treedomain.errors import CapacityError, LinkError, StateError
from treedomain.spacetree import BISECTION, GridHull
from treedomain.topology import RankTopology

from conftest import make_world


def fresh_hull(hash_code=0):
    return GridHull(codec.encode_uid(0, 0, hash_code), 0, (0, 0, 0))


def test_register_grid_counts_up_and_keeps_hash():
    topo = RankTopology(3)
    first = topo.register_grid(fresh_hull(hash_code=65))
    second = topo.register_grid(fresh_hull())
    assert codec.decode_uid(first) == (3, 0, 65)
    assert codec.decode_uid(second) == (3, 1, 0)
    assert topo.next_gid == 2


def test_register_grid_capacity():
    topo = RankTopology(0)
    topo.next_gid = codec.GID_LIMIT
    with pytest.raises(CapacityError):
        topo.register_grid(fresh_hull())


def test_register_with_uid_bumps_counter():
    topo = RankTopology(2)
    hull = GridHull(codec.encode_uid(2, 9, 0), 0, (0, 0, 0))
    topo.register_with_uid(hull)
    assert topo.next_gid == 10
    with pytest.raises(StateError):
        topo.register_with_uid(GridHull(codec.encode_uid(1, 0, 0), 0, (0, 0, 0)))


def test_enqueue_query_checks_links():
    topo = RankTopology(1)
    topo.remote_ranks = [0, 2]
    topo.enqueue_query(2, 17)
    topo.enqueue_query(2, 23)
    topo.enqueue_query(1, 3)  # self is always allowed
    assert topo.query_vectors[2] == [17, 23]  # FIFO
    with pytest.raises(LinkError):
        topo.enqueue_query(5, 1)


def test_rebuild_remote_ranks_empty_for_single_rank():
    _spec, topos = make_world(2, 1)
    assert topos[0].rebuild_remote_ranks() == []


def test_rebuild_remote_ranks_two_rank_split():
    _spec, topos = make_world(1, 2)
    assert topos[0].rebuild_remote_ranks() == [1]
    assert topos[1].rebuild_remote_ranks() == [0]


def test_rebuild_drops_stale_peer_after_links_go():
    _spec, topos = make_world(1, 2)
    topo = topos[0]
    for hull in topo.registry.values():
        hull.neighbors = [None if (u is not None and codec.uid_rank(u) != 0) else u
                          for u in hull.neighbors]
        if hull.children is not None:
            hull.children = [None if (u is not None and codec.uid_rank(u) != 0) else u
                             for u in hull.children]
        if hull.parent is not None and codec.uid_rank(hull.parent) != 0:
            hull.parent = None
    assert topo.rebuild_remote_ranks() == []


def test_subdivide_register_assigns_sequential_gids():
    _spec, topos = make_world(0, 1, max_depth=1)
    children = topos[0].subdivide_register(0, BISECTION)
    assert children == list(range(1, 9))
    assert topos[0].registry[0].refined


def test_clear_child_slot_drops_empty_array():
    spec, topos = make_world(1, 1)
    topo = topos[0]
    root_gid = next(g for g, h in topo.registry.items() if h.depth == 0)
    child_hashes = [codec.uid_hash(u) for u in topo.registry[root_gid].children]
    for h in child_hashes[:-1]:
        topo.clear_child_slot(root_gid, h, spec.factor)
        assert topo.registry[root_gid].refined
    topo.clear_child_slot(root_gid, child_hashes[-1], spec.factor)
    assert not topo.registry[root_gid].refined
    with pytest.raises(StateError):
        topo.clear_child_slot(root_gid, child_hashes[0], spec.factor)


def test_dump_lines_shape():
    _spec, topos = make_world(1, 2)
    lines = topos[0].dump_lines()
    assert lines[0].startswith("rank 0 next_gid=5 remote=1")
    assert all(line.startswith("grid ") for line in lines[1:])
    assert len(lines) == 1 + len(topos[0].registry)


def test_clone_is_deep_for_links():
    _spec, topos = make_world(1, 1)
    clone = topos[0].clone()
    original = topos[0].registry[0]
    clone.registry[0].neighbors[0] = 12345
    assert original.neighbors[0] != 12345 or original.neighbors[0] is None
