"""Acceptance suite.

Each test prints one PASS/FAIL line (visible with ``pytest -v -s`` or in
failure reports) and enforces its runtime budget where one is stated.
"""

import random
import time
from contextlib import contextmanager

import pytest

from treedomain import codec
from treedomain.codec import TASK_REFINE
from treedomain.errors import DeadlockError
from treedomain.harness import (bench_refine, check_consistency, dump_topologies,
                                fuzz, initial_distribute, run_script)
from treedomain.protocol import run_full_round
from treedomain.schedule import (all_pairs, build_pattern, join_stages,
                                 regular_stages, render_stage_table)
from treedomain.spacetree import BISECTION, DomainSpec, SpaceTree, uniform_grid_count
from treedomain.transport import Transport, run_cycle

from conftest import cross_rank_adjacent_pair, find_grid, make_world


@contextmanager
def criterion(number, name):
    start = time.time()
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {number} {name}: FAIL ({time.time() - start:.1f}s)",
              flush=True)
        raise
    print(f"ACCEPTANCE {number} {name}: PASS ({time.time() - start:.1f}s)",
          flush=True)


def test_criterion_1_codec_exactness():
    with criterion(1, "codec exactness"):
        start = time.time()
        # fixed vectors against the independent bit-arithmetic oracle
        assert codec.encode_uid(0, 0, 0) == 0
        assert codec.encode_uid(1, 0, 0) == 1 * 2**32
        assert codec.encode_uid(0, 1, 0) == 1 * 2**9
        assert codec.encode_query(codec.TASK_REFINE, 0, 0, 0) == 0
        assert (codec.encode_query(codec.TASK_DELETE, 6, 3, 65)
                == 1 * 2**35 + 6 * 2**32 + 3 * 2**9 + 65)
        assert (codec.encode_query(codec.TASK_MIGRATE, 7, 2**23 - 1, 511)
                == 2 * 2**35 + 7 * 2**32 + (2**23 - 1) * 2**9 + 511)
        rng = random.Random(2024)
        for _ in range(50_000):
            rank = rng.getrandbits(32)
            gid = rng.getrandbits(23)
            hash_code = rng.getrandbits(9)
            uid = codec.decode_uid(codec.encode_uid(rank, gid, hash_code))
            assert (uid.rank, uid.gid, uid.hash) == (rank, gid, hash_code)
        for _ in range(50_000):
            task = rng.randrange(3)
            if task == codec.TASK_REFINE:
                direction, hash_code = rng.randrange(6), 0
            elif task == codec.TASK_DELETE:
                direction = rng.randrange(7)
                hash_code = rng.getrandbits(9) if direction == 6 else 0
            else:
                direction = rng.randrange(8)
                hash_code = rng.getrandbits(9) if direction >= 6 else 0
            gid = rng.getrandbits(23)
            query = codec.decode_query(
                codec.encode_query(task, direction, gid, hash_code))
            assert query == (task, direction, gid, hash_code)
        assert time.time() - start < 1.0, "codec roundtrips exceeded 1 s"


def test_criterion_2_grid_count_reproduction():
    with criterion(2, "grid counts 585/4681/37449/299593"):
        expected = {3: 585, 4: 4681, 5: 37449, 6: 299593}
        spec = DomainSpec(max_depth=6)
        for depth, count in expected.items():
            tree = SpaceTree.build_uniform(spec, depth)
            assert tree.grid_count() == count
            assert uniform_grid_count(BISECTION, depth) == count


TABLE_I = """\
stage,0,1,2,3,4,5
1,1,0,-,-,-,-
2,2,-,0,-,-,-
3,3,2,1,0,-,-
4,4,3,-,1,0,-
5,5,4,3,2,1,0
6,-,5,4,-,2,1
7,-,-,5,4,3,2
8,-,-,-,5,-,3
9,-,-,-,-,5,4
"""

TABLE_II = """\
stage,0,1,2,3,4,5
1 & 7,1,0,5,4,3,2
2 & 8,2,-,0,5,-,3
3 & 9,3,2,1,0,5,4
4,4,3,-,1,0,-
5,5,4,3,2,1,0
6,-,5,4,-,2,1
"""


def test_criterion_3_pattern_golden_tables():
    with criterion(3, "pattern tables"):
        ranks = list(range(6))
        pairs = all_pairs(ranks)
        assert render_stage_table(regular_stages(pairs), ranks) == TABLE_I
        joined = join_stages(pairs)
        assert render_stage_table(joined, ranks) == TABLE_II
        assert [s.label for s in joined[:3]] == ["1 & 7", "2 & 8", "3 & 9"]


def test_criterion_4_deadlock_freedom():
    with criterion(4, "deadlock freedom over 1000 random pair sets"):
        start = time.time()
        rng = random.Random(1)
        for _ in range(1000):
            nranks = rng.randint(2, 32)
            density = rng.uniform(0.1, 1.0)
            pairs = [p for p in all_pairs(range(nranks)) if rng.random() < density]
            peers = {r: sorted({b for a, b in pairs if a == r}
                               | {a for a, b in pairs if b == r})
                     for r in range(nranks)}
            schedules = {r: build_pattern(r, peers[r]) for r in range(nranks)}
            run_cycle(Transport(), schedules)  # raises DeadlockError on failure
        from treedomain.schedule import SEND, RECV, CommSchedule, CommStep
        adversarial = {
            0: CommSchedule(0, [CommStep(SEND, 1), CommStep(RECV, 1)]),
            1: CommSchedule(1, [CommStep(SEND, 0), CommStep(RECV, 0)]),
        }
        with pytest.raises(DeadlockError):
            run_cycle(Transport(), adversarial)
        assert time.time() - start < 60.0


FUZZ_CONFIGS = [
    (1, 2, 1, 3), (2, 3, 2, 3), (3, 4, 2, 3), (4, 4, 2, 4), (5, 6, 2, 4),
    (6, 8, 2, 3), (7, 8, 2, 4), (8, 12, 2, 4), (9, 16, 2, 4), (10, 16, 2, 3),
    (11, 5, 2, 4), (12, 2, 2, 4), (13, 7, 2, 3), (14, 9, 2, 4), (15, 10, 2, 3),
    (16, 3, 1, 4), (17, 4, 1, 3), (18, 6, 1, 4), (19, 4, 3, 4), (20, 8, 3, 4),
]


def _bilateral_refinement_scenario():
    spec, topos = make_world(1, 2)
    (rank_a, gid_a), (rank_b, gid_b) = cross_rank_adjacent_pair(topos, 1)
    result = run_full_round(topos, spec, Transport(),
                            {rank_a: [(TASK_REFINE, gid_a)],
                             rank_b: [(TASK_REFINE, gid_b)]})
    assert all(count == 1 for ctx in result.contexts.values()
               for count in ctx.link_writes.values())
    return check_consistency(dump_topologies(spec, topos))


def _multi_grid_migration_scenario():
    spec, topos = make_world(1, 4)
    origin, gid_a = find_grid(topos, 1, (0, 0, 0))
    _, gid_b = find_grid(topos, 1, (1, 0, 0))
    peers = sorted(topos[origin].remote_ranks)
    # same-origin pair to two different targets plus a same-target pair later
    run_full_round(topos, spec, Transport(),
                   plans={origin: [(gid_a, peers[0]), (gid_b, peers[1])]})
    first = check_consistency(dump_topologies(spec, topos))
    origin2, gid_c = find_grid(topos, 1, (0, 1, 0))
    _, gid_d = find_grid(topos, 1, (1, 1, 0))
    target = sorted(topos[origin2].remote_ranks)[-1]
    run_full_round(topos, spec, Transport(),
                   plans={origin2: [(gid_c, target), (gid_d, target)]})
    second = check_consistency(dump_topologies(spec, topos))
    return first, second


def test_criterion_5_oracle_consistency_fuzz():
    with criterion(5, "oracle consistency, 20 seeds x 100 rounds"):
        start = time.time()
        for seed, nranks, depth, max_depth in FUZZ_CONFIGS:
            result = fuzz(seed=seed, rounds=100, nranks=nranks, depth=depth,
                          max_depth=max_depth)
            assert result.passed, (
                f"seed {seed}: round {result.rounds_completed} violations: "
                + "; ".join(result.violations[:5]))
        report = _bilateral_refinement_scenario()
        assert report.ok, report.violations[:5]
        first, second = _multi_grid_migration_scenario()
        assert first.ok, first.violations[:5]
        assert second.ok, second.violations[:5]
        assert time.time() - start < 300.0


def test_criterion_6_scaling_trends():
    with criterion(6, "scaling trends depth 4->5"):
        start = time.time()
        rank_counts = [4, 8, 16, 32]
        decentral = [bench_refine(4, 5, n, "decentral") for n in rank_counts]
        central = [bench_refine(4, 5, n, "central") for n in rank_counts]
        dec_max = [r.max_rank_msgs for r in decentral]
        for before, after in zip(dec_max, dec_max[1:]):
            assert after <= before, f"decentral trend broken: {dec_max}"
        mgr = [r.manager_msgs for r in central]
        for before, after in zip(mgr, mgr[1:]):
            assert after > before, f"central trend broken: {mgr}"
        assert time.time() - start < 120.0


def test_criterion_7_mode_equivalence():
    with criterion(7, "decentral/central byte-identical dumps"):
        for seed in range(101, 111):
            nranks = 2 + (seed % 5)
            result = fuzz(seed=seed, rounds=30, nranks=nranks, depth=2,
                          max_depth=3)
            assert result.passed
            central_topos, _ = run_script(result.script, mode="central")
            central_dump = dump_topologies(result.script.spec, central_topos)
            assert central_dump == result.final_dump, f"seed {seed} dumps differ"


def test_criterion_8_bounded_fanout():
    with criterion(8, "bounded per-operation fan-out"):
        bound_children = 6 + 1 + BISECTION.count
        for seed in (41, 42, 43):
            result = fuzz(seed=seed, rounds=40, nranks=6, depth=2, max_depth=4)
            assert result.passed
            script = result.script
            topos = initial_distribute(script.spec, script.depth, script.nranks)
            transport = Transport()
            for rnd in script.rounds:
                round_result = run_full_round(topos, script.spec, transport,
                                              rnd.batches, plans=rnd.plans)
                for ctx in round_result.contexts.values():
                    assert all(n <= 6 for n in ctx.refine_fanout)
                    assert all(n <= 7 for n in ctx.delete_fanout)
                    assert all(n <= bound_children for n in ctx.migrate_fanout)
