import pytest

from treedomain import codec
from treedomain.harness import check_consistency, dump_topologies, initial_distribute
from treedomain.spacetree import BISECTION, DomainSpec


def make_world(depth, nranks, max_depth=None, factor=BISECTION, cells=2):
    spec = DomainSpec(factor=factor,
                      max_depth=depth + 2 if max_depth is None else max_depth,
                      cells_per_grid=cells)
    return spec, initial_distribute(spec, depth, nranks)


def find_grid(topos, depth, cell):
    """(rank, gid) of the grid at a lattice position."""
    for rank, topo in topos.items():
        for gid, hull in topo.registry.items():
            if hull.depth == depth and hull.cell == cell:
                return rank, gid
    raise AssertionError(f"no grid at depth {depth} cell {cell}")


def hull_at(topos, depth, cell):
    rank, gid = find_grid(topos, depth, cell)
    return topos[rank].registry[gid]


def assert_consistent(spec, topos):
    report = check_consistency(dump_topologies(spec, topos))
    assert report.ok, "\n".join(report.violations[:12])


def cross_rank_adjacent_pair(topos, depth):
    """Two same-depth face-adjacent grids on different ranks."""
    for rank, topo in sorted(topos.items()):
        for gid, hull in sorted(topo.registry.items()):
            if hull.depth != depth:
                continue
            for nb in hull.neighbors:
                if nb is not None and codec.uid_rank(nb) != rank:
                    return (rank, gid), (codec.uid_rank(nb), codec.uid_gid(nb))
    raise AssertionError(f"no cross-rank adjacency at depth {depth}")


@pytest.fixture
def depth1_two_ranks():
    return make_world(1, 2)


@pytest.fixture
def depth2_four_ranks():
    return make_world(2, 4)
