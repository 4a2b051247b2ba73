import random

import pytest

from treedomain import codec
from treedomain.errors import (BufferOverflowError, DeadlockError, ShutdownError,
                               StateError)
from treedomain.schedule import (CommSchedule, CommStep, RECV, SEND, all_pairs,
                                 build_pattern)
from treedomain.spacetree import DomainSpec, SpaceTree
from treedomain.transport import (Channel, Transport, deserialize_hulls,
                                  pack_pairs, pack_words, payload_records,
                                  run_cycle, run_ranks, run_ranks_threaded,
                                  serialize_hulls, unpack_pairs, unpack_words)


def q_word():
    return codec.encode_query(codec.TASK_REFINE, codec.EAST, 7)


def test_matched_send_recv_delivers_verbatim():
    payload = pack_words([q_word()])

    def sender():
        yield ("send", 1, Channel.QUERY_VECTOR, payload)

    def receiver():
        data = yield ("recv", 0, Channel.QUERY_VECTOR)
        assert data == payload

    transport = Transport()
    run_ranks(transport, {0: sender(), 1: receiver()})
    cycle = transport.stats.cycles[0]
    # one 8-byte query: +1 msg / +8 bytes on both sides
    assert cycle.per_rank[0].msgs_sent == 1
    assert cycle.per_rank[0].bytes_sent == 8
    assert cycle.per_rank[1].msgs_recv == 1
    assert cycle.per_rank[1].bytes_recv == 8


def test_fifo_between_fixed_endpoints():
    def sender():
        yield ("send", 1, Channel.QUERY_VECTOR, b"11111111")
        yield ("send", 1, Channel.QUERY_VECTOR, b"22222222")

    def receiver():
        first = yield ("recv", 0, Channel.QUERY_VECTOR)
        second = yield ("recv", 0, Channel.QUERY_VECTOR)
        assert (first, second) == (b"11111111", b"22222222")

    run_ranks(Transport(), {0: sender(), 1: receiver()})


def test_unmatched_send_deadlocks_with_cycle():
    def sender():
        yield ("send", 1, Channel.QUERY_VECTOR, b"")

    def other():
        yield ("send", 0, Channel.QUERY_VECTOR, b"")

    with pytest.raises(DeadlockError) as err:
        run_ranks(Transport(), {0: sender(), 1: other()})
    assert err.value.cycle == [0, 1]


def test_run_cycle_all_pairs_counts():
    ranks = list(range(6))
    peers = {r: [p for p in ranks if p != r] for r in ranks}
    transport = Transport()
    cycle = run_cycle(transport, {r: build_pattern(r, peers[r]) for r in ranks})
    # two envelopes per pair, one per direction, on the single channel
    assert all(n == 2 for n in cycle.pair_envelopes.values())
    assert len(cycle.pair_envelopes) == len(all_pairs(ranks))


def test_single_rank_completes_with_zero_traffic():
    transport = Transport()
    cycle = run_cycle(transport, {0: build_pattern(0, [])})
    assert cycle.per_rank == {}


def test_randomized_pairs_never_deadlock():
    rng = random.Random(123)
    for _ in range(100):
        n = rng.randint(2, 32)
        pairs = [p for p in all_pairs(range(n)) if rng.random() < 0.35]
        peers = {r: sorted({b for a, b in pairs if a == r}
                           | {a for a, b in pairs if b == r}) for r in range(n)}
        run_cycle(Transport(), {r: build_pattern(r, peers[r]) for r in range(n)})


def test_buffered_mode_decouples_send():
    adversarial = {
        0: CommSchedule(0, [CommStep(SEND, 1), CommStep(RECV, 1)]),
        1: CommSchedule(1, [CommStep(SEND, 0), CommStep(RECV, 0)]),
    }
    with pytest.raises(DeadlockError):
        run_cycle(Transport(), dict(adversarial))
    run_cycle(Transport("buffered", 1 << 16), dict(adversarial))


def test_buffered_budget_zero_is_rendezvous():
    adversarial = {
        0: CommSchedule(0, [CommStep(SEND, 1), CommStep(RECV, 1)]),
        1: CommSchedule(1, [CommStep(SEND, 0), CommStep(RECV, 0)]),
    }
    with pytest.raises(DeadlockError):
        run_cycle(Transport("buffered", 0), adversarial)


def test_buffered_overflow():
    def sender():
        yield ("send", 1, Channel.QUERY_VECTOR, bytes(8 * 100))

    def receiver():
        if False:
            yield

    with pytest.raises(BufferOverflowError):
        run_ranks(Transport("buffered", 64), {0: sender(), 1: receiver()})


def test_set_mode_guard_and_shutdown():
    transport = Transport()
    transport.set_mode("buffered", 128)
    assert transport.effective_mode == "buffered"
    transport.close()
    with pytest.raises(ShutdownError):
        run_ranks(transport, {0: iter(())})
    with pytest.raises(StateError):
        Transport("bogus")


def test_conservation_per_channel():
    spec = DomainSpec(max_depth=2)
    topos_words = [q_word()] * 5

    def a():
        yield ("send", 1, Channel.QUERY_VECTOR, pack_words(topos_words))
        yield ("recv", 1, Channel.NEIGHBOUR_VECTOR)

    def b():
        yield ("recv", 0, Channel.QUERY_VECTOR)
        yield ("send", 0, Channel.NEIGHBOUR_VECTOR, pack_pairs([(0, 1), (1, 2)]))

    transport = Transport()
    run_ranks(transport, {0: a(), 1: b()})
    transport.stats.assert_conserved()
    cycle = transport.stats.cycles[0]
    assert cycle.channel_sent[Channel.QUERY_VECTOR] == 5
    assert cycle.channel_sent[Channel.NEIGHBOUR_VECTOR] == 2


def test_payload_records():
    assert payload_records(Channel.QUERY_VECTOR, bytes(40)) == 5
    assert payload_records(Channel.NEIGHBOUR_VECTOR, bytes(32)) == 2
    assert payload_records(Channel.MIGRATION_GRIDS, b"") == 0
    with pytest.raises(StateError):
        payload_records(Channel.NEW_UIDS, bytes(7))


def test_word_and_pair_packing_roundtrip():
    words = [0, 1, 2**64 - 1, 42]
    assert unpack_words(pack_words(words)) == words
    pairs = [(3, 99), (0, 2**63)]
    assert unpack_pairs(pack_pairs(pairs)) == pairs


def test_hull_serialization_roundtrip():
    tree = SpaceTree.build_uniform(DomainSpec(max_depth=2), 2)
    hulls = list(tree.grids.values())[:20]
    for hull in hulls:
        hull.payload = bytes(range(16))
    data = serialize_hulls(hulls)
    assert payload_records(Channel.MIGRATION_GRIDS, data) == len(hulls)
    back = deserialize_hulls(data)
    for original, copy in zip(hulls, back):
        assert copy.uid == original.uid
        assert copy.depth == original.depth
        assert copy.cell == original.cell
        assert copy.parent == original.parent
        assert copy.neighbors == original.neighbors
        assert copy.children == original.children
        assert copy.payload == original.payload


def test_determinism_of_round_based_runner():
    def run_once():
        rng = random.Random(5)
        n = 8
        pairs = [p for p in all_pairs(range(n)) if rng.random() < 0.5]
        peers = {r: sorted({b for a, b in pairs if a == r}
                           | {a for a, b in pairs if b == r}) for r in range(n)}
        transport = Transport()
        run_cycle(transport, {r: build_pattern(r, peers[r]) for r in range(n)})
        return transport.stats.to_csv()

    assert run_once() == run_once()


def test_threaded_runner_matches_contract():
    def ping(rank, other):
        if rank == 0:
            yield ("send", other, Channel.QUERY_VECTOR, b"abcdefgh")
            data = yield ("recv", other, Channel.QUERY_VECTOR)
            assert data == b"hgfedcba"
        else:
            data = yield ("recv", other, Channel.QUERY_VECTOR)
            yield ("send", other, Channel.QUERY_VECTOR, data[::-1])

    for _ in range(50):
        transport = Transport()
        run_ranks_threaded(transport, {0: ping(0, 1), 1: ping(1, 0)})
        assert transport.stats.cycles[0].per_rank[0].msgs_sent == 1


def test_threaded_runner_detects_deadlock():
    def allsend(rank, other):
        yield ("send", other, Channel.QUERY_VECTOR, b"")
        yield ("recv", other, Channel.QUERY_VECTOR)

    with pytest.raises(DeadlockError):
        run_ranks_threaded(Transport(), {0: allsend(0, 1), 1: allsend(1, 0)})


def test_csv_header_marks_modeled_time_synthetic():
    transport = Transport()
    run_cycle(transport, {0: build_pattern(0, [])})
    csv_text = transport.stats.to_csv()
    assert "synthetic" in csv_text.splitlines()[0]
