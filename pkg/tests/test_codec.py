import pytest
from hypothesis import given, settings, strategies as st

from treedomain import codec
from treedomain.errors import FieldRangeError, MalformedQueryError

# independent bit-arithmetic oracle for the fixed vectors
def pack_uid_oracle(rank, gid, hash_code):
    return rank * 2**32 + gid * 2**9 + hash_code


def pack_query_oracle(task, direction, gid, hash_code):
    return task * 2**35 + direction * 2**32 + gid * 2**9 + hash_code


def test_uid_fixed_vectors():
    assert codec.encode_uid(0, 0, 0) == 0
    assert codec.encode_uid(1, 0, 0) == 4294967296 == pack_uid_oracle(1, 0, 0)
    assert codec.encode_uid(0, 1, 0) == 512 == pack_uid_oracle(0, 1, 0)


def test_uid_decode_vectors():
    assert codec.decode_uid(0) == (0, 0, 0)
    assert codec.decode_uid(4294967296) == (1, 0, 0)
    assert codec.decode_uid(513) == (0, 1, 1)


def test_position_hash_vectors():
    assert codec.encode_position_hash(0, 0, 0) == 0
    # p_k is most significant: 1*64 + 0*8 + 1
    assert codec.encode_position_hash(1, 0, 1) == 65
    assert codec.encode_position_hash(7, 7, 7) == 511
    assert codec.decode_position_hash(65) == (1, 0, 1)


def test_query_fixed_vectors():
    assert codec.encode_query(codec.TASK_REFINE, codec.EAST, 0, 0) == 0
    word = codec.encode_query(codec.TASK_DELETE, 6, 3, 65)
    assert word == pack_query_oracle(1, 6, 3, 65)
    assert codec.decode_query(word) == (codec.TASK_DELETE, 6, 3, 65)


def test_field_ranges_rejected():
    with pytest.raises(FieldRangeError):
        codec.encode_uid(0, 1 << 23, 0)
    with pytest.raises(FieldRangeError):
        codec.encode_uid(0, 0, 1 << 9)
    with pytest.raises(FieldRangeError):
        codec.encode_uid(1 << 32, 0, 0)
    with pytest.raises(FieldRangeError):
        codec.encode_position_hash(8, 0, 0)


def test_query_task_constraints():
    # refinement only concerns faces and never carries a hash
    with pytest.raises(MalformedQueryError):
        codec.encode_query(codec.TASK_REFINE, codec.DIR_SUBGRID, 1)
    with pytest.raises(MalformedQueryError):
        codec.encode_query(codec.TASK_REFINE, codec.EAST, 1, 5)
    with pytest.raises(MalformedQueryError):
        codec.encode_query(codec.TASK_DELETE, codec.DIR_SUPERGRID, 1)
    with pytest.raises(MalformedQueryError):
        codec.encode_query(codec.TASK_DELETE, codec.NORTH, 1, 3)


def test_decode_rejects_nonzero_unused_bits():
    with pytest.raises(MalformedQueryError):
        codec.decode_query(1 << 37)
    with pytest.raises(MalformedQueryError):
        codec.decode_query((3 << 35) | (1 << 9))  # task code 3 does not exist


def test_disjoint_bit_ranges():
    base = codec.encode_uid(5, 6, 7)
    assert codec.encode_uid(9, 6, 7) ^ base == (5 ^ 9) << 32
    assert codec.encode_uid(5, 21, 7) ^ base == (6 ^ 21) << 9
    assert codec.encode_uid(5, 6, 1) ^ base == 7 ^ 1


def test_total_widths():
    assert codec.RANK_BITS + codec.GID_BITS + codec.HASH_BITS == 64
    assert (codec.QUERY_UNUSED_BITS + codec.TASK_BITS + codec.DIRECTION_BITS
            + codec.GID_BITS + codec.HASH_BITS) == 64


def test_opposite_directions():
    assert codec.opposite(codec.EAST) == codec.WEST
    assert codec.opposite(codec.NORTH) == codec.SOUTH
    assert codec.opposite(codec.BOTTOM) == codec.TOP
    with pytest.raises(FieldRangeError):
        codec.opposite(codec.DIR_SUBGRID)


@given(rank=st.integers(0, 2**32 - 1), gid=st.integers(0, 2**23 - 1),
       hash_code=st.integers(0, 2**9 - 1))
def test_uid_roundtrip(rank, gid, hash_code):
    uid = codec.encode_uid(rank, gid, hash_code)
    assert codec.decode_uid(uid) == (rank, gid, hash_code)
    assert codec.uid_rank(uid) == rank
    assert codec.uid_gid(uid) == gid
    assert codec.uid_hash(uid) == hash_code


@st.composite
def valid_queries(draw):
    task = draw(st.sampled_from((codec.TASK_REFINE, codec.TASK_DELETE,
                                 codec.TASK_MIGRATE)))
    if task == codec.TASK_REFINE:
        direction = draw(st.integers(0, 5))
        hash_code = 0
    elif task == codec.TASK_DELETE:
        direction = draw(st.integers(0, 6))
        hash_code = draw(st.integers(0, 511)) if direction == 6 else 0
    else:
        direction = draw(st.integers(0, 7))
        hash_code = draw(st.integers(0, 511)) if direction >= 6 else 0
    return task, direction, draw(st.integers(0, 2**23 - 1)), hash_code


@settings(max_examples=300)
@given(valid_queries())
def test_query_roundtrip(query):
    task, direction, gid, hash_code = query
    word = codec.encode_query(task, direction, gid, hash_code)
    assert word >> 37 == 0
    assert codec.decode_query(word) == (task, direction, gid, hash_code)


@given(st.integers(0, 2**64 - 1))
def test_uid_encode_decode_is_identity_on_words(word):
    rank, gid, hash_code = codec.decode_uid(word)
    assert codec.encode_uid(rank, gid, hash_code) == word
