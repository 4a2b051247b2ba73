"""Bit-exact packing of grid UIDs and protocol queries.

Both wire words are 64 bits. A grid UID is

    rank(63..32) | gid(31..9) | hash(8..0)

where the 9-bit hash is the grid's position inside its super-grid,
three bits per axis with p_k most significant:

    hash = p_k * 64 + p_j * 8 + p_i

A task query is

    zero(63..37) | task(36..35) | direction(34..32) | gid(31..9) | hash(8..0)

The direction stores where the issuing grid lies as seen from the
receiving grid; 0..5 are the face directions below, 6 names a subgrid
(hash selects which) and 7 a supergrid.
"""

from __future__ import annotations

from typing import NamedTuple

from .errors import FieldRangeError, MalformedQueryError

RANK_BITS = 32
GID_BITS = 23
HASH_BITS = 9
TASK_BITS = 2
DIRECTION_BITS = 3
QUERY_UNUSED_BITS = 27

assert RANK_BITS + GID_BITS + HASH_BITS == 64
assert QUERY_UNUSED_BITS + TASK_BITS + DIRECTION_BITS + GID_BITS + HASH_BITS == 64

GID_LIMIT = 1 << GID_BITS
HASH_LIMIT = 1 << HASH_BITS
RANK_LIMIT = 1 << RANK_BITS
POS_LIMIT = 8  # three bits per axis

TASK_REFINE = 0
TASK_DELETE = 1
TASK_MIGRATE = 2
TASK_NAMES = ("refine", "delete", "migrate")

EAST, WEST, NORTH, SOUTH, TOP, BOTTOM = range(6)
DIR_SUBGRID = 6
DIR_SUPERGRID = 7
FACE_DIRECTIONS = (EAST, WEST, NORTH, SOUTH, TOP, BOTTOM)
DIRECTION_NAMES = ("east", "west", "north", "south", "top", "bottom",
                   "subgrid", "supergrid")

# (east,west), (north,south), (top,bottom) are adjacent codes, so the
# opposite face is a single bit flip.
DIRECTION_OFFSETS = ((1, 0, 0), (-1, 0, 0), (0, 1, 0),
                     (0, -1, 0), (0, 0, 1), (0, 0, -1))


def opposite(direction: int) -> int:
    """Opposite face direction (east<->west, north<->south, top<->bottom)."""
    if direction not in FACE_DIRECTIONS:
        raise FieldRangeError(f"direction {direction} has no opposite face")
    return direction ^ 1


class GridUid(NamedTuple):
    rank: int
    gid: int
    hash: int


class Query(NamedTuple):
    task: int
    direction: int
    gid: int
    hash: int


def encode_position_hash(p_i: int, p_j: int, p_k: int) -> int:
    """Pack per-axis positions (each 0..7) into the 9-bit hash."""
    if not (0 <= p_i < POS_LIMIT and 0 <= p_j < POS_LIMIT and 0 <= p_k < POS_LIMIT):
        raise FieldRangeError(f"position ({p_i},{p_j},{p_k}) out of 0..7")
    return (p_k << 6) | (p_j << 3) | p_i


def decode_position_hash(hash_code: int) -> tuple[int, int, int]:
    """Unpack a 9-bit hash into (p_i, p_j, p_k)."""
    if not 0 <= hash_code < HASH_LIMIT:
        raise FieldRangeError(f"hash {hash_code} out of 9-bit range")
    return hash_code & 7, (hash_code >> 3) & 7, (hash_code >> 6) & 7


def encode_uid(rank: int, gid: int, hash: int) -> int:
    if not 0 <= rank < RANK_LIMIT:
        raise FieldRangeError(f"rank {rank} out of 32-bit range")
    if not 0 <= gid < GID_LIMIT:
        raise FieldRangeError(f"gid {gid} out of 23-bit range")
    if not 0 <= hash < HASH_LIMIT:
        raise FieldRangeError(f"hash {hash} out of 9-bit range")
    return (rank << 32) | (gid << 9) | hash


def decode_uid(word: int) -> GridUid:
    return GridUid(word >> 32, (word >> 9) & (GID_LIMIT - 1), word & (HASH_LIMIT - 1))


def uid_rank(word: int) -> int:
    return word >> 32


def uid_gid(word: int) -> int:
    return (word >> 9) & (GID_LIMIT - 1)


def uid_hash(word: int) -> int:
    return word & (HASH_LIMIT - 1)


def _check_query_fields(task: int, direction: int, gid: int, hash: int) -> None:
    if not 0 <= task <= TASK_MIGRATE:
        raise FieldRangeError(f"task {task} out of range 0..2")
    if not 0 <= direction < 8:
        raise FieldRangeError(f"direction {direction} out of range 0..7")
    if not 0 <= gid < GID_LIMIT:
        raise FieldRangeError(f"gid {gid} out of 23-bit range")
    if not 0 <= hash < HASH_LIMIT:
        raise FieldRangeError(f"hash {hash} out of 9-bit range")
    if task == TASK_REFINE:
        # Refinement only concerns same-depth faces; the hash is unused.
        if direction not in FACE_DIRECTIONS:
            raise MalformedQueryError(f"refine query with direction {direction}")
        if hash != 0:
            raise MalformedQueryError("refine query carries a nonzero hash")
    elif task == TASK_DELETE:
        if direction == DIR_SUPERGRID:
            raise MalformedQueryError("delete query may not name a supergrid")
        if direction != DIR_SUBGRID and hash != 0:
            raise MalformedQueryError("delete hash is only used with direction 6")


def encode_query(task: int, direction: int, gid: int, hash: int = 0) -> int:
    _check_query_fields(task, direction, gid, hash)
    return (task << 35) | (direction << 32) | (gid << 9) | hash


def decode_query(word: int) -> Query:
    if word >> 37:
        raise MalformedQueryError(f"query word {word:#x} has nonzero unused bits")
    task = (word >> 35) & 3
    if task > TASK_MIGRATE:
        raise MalformedQueryError(f"query word {word:#x} has task code 3")
    direction = (word >> 32) & 7
    gid = (word >> 9) & (GID_LIMIT - 1)
    hash_code = word & (HASH_LIMIT - 1)
    _check_query_fields(task, direction, gid, hash_code)
    return Query(task, direction, gid, hash_code)
