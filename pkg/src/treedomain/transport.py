"""Simulated message-passing substrate.

Logical ranks are generator coroutines yielding transport operations:

    payload = yield ("recv", src, channel)
    yield ("send", dst, channel, payload)

The canonical runner interleaves all ranks deterministically in rank
order and enforces rendezvous semantics: a send completes only when the
matching receive is posted. A buffered mode decouples the two up to a
per-destination byte budget. A threaded runner executes one OS thread
per rank against the same contract for stress testing.

Traffic accounting: an envelope carrying N payload records counts as
max(1, N) messages; a record is one 64-bit word on word channels, one
16-byte (query index, uid) pair on the neighbour-vector channel and one
hull on the migration channel. Rank-local vector deliveries (the
queryVector a rank keeps for itself) are booked through record_local.
The modeled time written to CSV is synthetic: alpha per remote envelope
plus beta per payload byte.
"""

from __future__ import annotations

import struct
import threading
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, NamedTuple

from .errors import (BufferOverflowError, DeadlockError, ShutdownError,
                     StateError)
from .spacetree import GridHull


class Channel(IntEnum):
    QUERY_VECTOR = 0
    NEIGHBOUR_VECTOR = 1
    MIGRATION_GRIDS = 2
    NEW_UIDS = 3
    UPDATE_QUERIES = 4


WORD_CHANNELS = {Channel.QUERY_VECTOR, Channel.NEW_UIDS, Channel.UPDATE_QUERIES}


class Envelope(NamedTuple):
    src: int
    dst: int
    tag: Channel
    payload: bytes


def payload_records(tag: Channel, payload: bytes) -> int:
    if tag in WORD_CHANNELS:
        if len(payload) % 8:
            raise StateError(f"word channel payload of {len(payload)} bytes")
        return len(payload) // 8
    if tag == Channel.NEIGHBOUR_VECTOR:
        if len(payload) % 16:
            raise StateError(f"pair channel payload of {len(payload)} bytes")
        return len(payload) // 16
    # migration grids: leading u32 hull count
    if not payload:
        return 0
    return struct.unpack_from("<I", payload)[0]


# -- word / pair / hull serialization ---------------------------------------

def pack_words(words: Iterable[int]) -> bytes:
    ws = list(words)
    return struct.pack(f"<{len(ws)}Q", *ws)


def unpack_words(data: bytes) -> list[int]:
    return list(struct.unpack(f"<{len(data) // 8}Q", data))


def pack_pairs(pairs: Iterable[tuple[int, int]]) -> bytes:
    flat = []
    for a, b in pairs:
        flat.append(a)
        flat.append(b)
    return struct.pack(f"<{len(flat)}Q", *flat)


def unpack_pairs(data: bytes) -> list[tuple[int, int]]:
    flat = struct.unpack(f"<{len(data) // 8}Q", data)
    return [(flat[i], flat[i + 1]) for i in range(0, len(flat), 2)]


NONE_UID = (1 << 64) - 1


def _word_or_none(uid):
    return NONE_UID if uid is None else uid


def _none_or_word(word):
    return None if word == NONE_UID else word


def serialize_hulls(hulls: Iterable[GridHull]) -> bytes:
    """Fixed-layout little-endian hull records behind a u32 count."""
    hulls = list(hulls)
    out = [struct.pack("<I", len(hulls))]
    for h in hulls:
        nchildren = 0 if h.children is None else len(h.children)
        out.append(struct.pack(
            "<QI3QQ6QI", h.uid, h.depth, *h.cell, _word_or_none(h.parent),
            *(_word_or_none(u) for u in h.neighbors), nchildren))
        if nchildren:
            out.append(struct.pack(f"<{nchildren}Q",
                                   *(_word_or_none(u) for u in h.children)))
        out.append(struct.pack("<I", len(h.payload)))
        out.append(h.payload)
    return b"".join(out)


def deserialize_hulls(data: bytes) -> list[GridHull]:
    if not data:
        return []
    count = struct.unpack_from("<I", data)[0]
    offset = 4
    head = struct.Struct("<QI3QQ6QI")
    hulls = []
    for _ in range(count):
        (uid, depth, cx, cy, cz, parent, n0, n1, n2, n3, n4, n5,
         nchildren) = head.unpack_from(data, offset)
        offset += head.size
        children = None
        if nchildren:
            children = [_none_or_word(w) for w in
                        struct.unpack_from(f"<{nchildren}Q", data, offset)]
            offset += 8 * nchildren
        (blob_len,) = struct.unpack_from("<I", data, offset)
        offset += 4
        payload = data[offset:offset + blob_len]
        offset += blob_len
        hulls.append(GridHull(uid, depth, (cx, cy, cz),
                              parent=_none_or_word(parent), children=children,
                              neighbors=[_none_or_word(w) for w in (n0, n1, n2, n3, n4, n5)],
                              payload=payload))
    return hulls


# -- traffic accounting ------------------------------------------------------

@dataclass
class Counters:
    msgs_sent: int = 0
    msgs_recv: int = 0
    bytes_sent: int = 0
    bytes_recv: int = 0
    envs_sent: int = 0
    envs_recv: int = 0

    def add(self, other: "Counters") -> None:
        self.msgs_sent += other.msgs_sent
        self.msgs_recv += other.msgs_recv
        self.bytes_sent += other.bytes_sent
        self.bytes_recv += other.bytes_recv
        self.envs_sent += other.envs_sent
        self.envs_recv += other.envs_recv

    @property
    def msgs_total(self) -> int:
        return self.msgs_sent + self.msgs_recv


@dataclass
class CycleStats:
    label: str
    per_rank: dict = field(default_factory=dict)
    channel_sent: dict = field(default_factory=dict)
    channel_recv: dict = field(default_factory=dict)
    pair_envelopes: dict = field(default_factory=dict)

    def rank(self, r: int) -> Counters:
        return self.per_rank.setdefault(r, Counters())


class TrafficStats:
    def __init__(self):
        self.cycles: list[CycleStats] = []

    def begin_cycle(self, label: str) -> CycleStats:
        cycle = CycleStats(label)
        self.cycles.append(cycle)
        return cycle

    @property
    def current(self) -> CycleStats:
        if not self.cycles:
            self.begin_cycle("default")
        return self.cycles[-1]

    def record_send(self, env: Envelope) -> None:
        records = payload_records(env.tag, env.payload)
        msgs = max(1, records)
        c = self.current.rank(env.src)
        c.msgs_sent += msgs
        c.bytes_sent += len(env.payload)
        c.envs_sent += 1
        self.current.channel_sent[env.tag] = self.current.channel_sent.get(env.tag, 0) + msgs
        key = (min(env.src, env.dst), max(env.src, env.dst), env.tag)
        self.current.pair_envelopes[key] = self.current.pair_envelopes.get(key, 0) + 1

    def record_recv(self, env: Envelope) -> None:
        records = payload_records(env.tag, env.payload)
        msgs = max(1, records)
        c = self.current.rank(env.dst)
        c.msgs_recv += msgs
        c.bytes_recv += len(env.payload)
        c.envs_recv += 1
        self.current.channel_recv[env.tag] = self.current.channel_recv.get(env.tag, 0) + msgs

    def record_local(self, rank: int, records: int, nbytes: int) -> None:
        c = self.current.rank(rank)
        c.msgs_sent += records
        c.msgs_recv += records
        c.bytes_sent += nbytes
        c.bytes_recv += nbytes

    def per_rank_totals(self) -> dict[int, Counters]:
        totals: dict[int, Counters] = {}
        for cycle in self.cycles:
            for r, c in cycle.per_rank.items():
                totals.setdefault(r, Counters()).add(c)
        return totals

    def assert_conserved(self) -> None:
        for cycle in self.cycles:
            if cycle.channel_sent != cycle.channel_recv:
                raise StateError(f"cycle {cycle.label}: sent {cycle.channel_sent} "
                                 f"!= received {cycle.channel_recv}")

    def to_csv(self, alpha: float = 1e-6, beta: float = 1e-9) -> str:
        lines = [
            "# modeled_time is synthetic: alpha*envelopes_sent + beta*bytes_sent "
            f"(alpha={alpha!r}, beta={beta!r})",
            "# msgs count payload records, floor one per envelope; "
            "rank-local vector deliveries included",
            "cycle,rank,msgs_sent,msgs_recv,bytes_sent,bytes_recv,modeled_time",
        ]
        for cycle in self.cycles:
            for r in sorted(cycle.per_rank):
                c = cycle.per_rank[r]
                modeled = alpha * c.envs_sent + beta * c.bytes_sent
                lines.append(f"{cycle.label},{r},{c.msgs_sent},{c.msgs_recv},"
                             f"{c.bytes_sent},{c.bytes_recv},{modeled:.9f}")
        return "\n".join(lines) + "\n"


# -- the transport ------------------------------------------------------------

RENDEZVOUS = "rendezvous"
BUFFERED = "buffered"


class Transport:
    """Shared substrate; owns mode, buffers and statistics."""

    def __init__(self, mode: str = RENDEZVOUS, buffer_budget: int = 0):
        if mode not in (RENDEZVOUS, BUFFERED):
            raise StateError(f"unknown transport mode {mode!r}")
        self.mode = mode
        self.buffer_budget = buffer_budget
        self.stats = TrafficStats()
        self.closed = False
        self._in_flight = False
        self._queues: dict[tuple, deque] = {}
        self._buffered_bytes: dict[int, int] = {}

    def set_mode(self, mode: str, buffer_budget: int | None = None) -> None:
        if self._in_flight:
            raise StateError("cannot switch transport mode mid-cycle")
        if mode not in (RENDEZVOUS, BUFFERED):
            raise StateError(f"unknown transport mode {mode!r}")
        self.mode = mode
        if buffer_budget is not None:
            self.buffer_budget = buffer_budget

    def close(self) -> None:
        self.closed = True

    @property
    def effective_mode(self) -> str:
        # A zero budget degenerates buffered mode to strict rendezvous.
        if self.mode == BUFFERED and self.buffer_budget <= 0:
            return RENDEZVOUS
        return self.mode


def _find_cycle(waits: dict[int, int]) -> list[int] | None:
    for start in sorted(waits):
        seen = {}
        node = start
        step = 0
        while node in waits and node not in seen:
            seen[node] = step
            step += 1
            node = waits[node]
        if node in seen:
            cycle = [r for r, s in sorted(seen.items(), key=lambda kv: kv[1])
                     if s >= seen[node]]
            return cycle
    return None


def run_ranks(transport: Transport, procs: dict, label: str = "cycle") -> CycleStats:
    """Drive all rank coroutines to completion, deterministically.

    Ranks are scanned in ascending order; a send completes against the
    peer's posted receive (rendezvous) or the buffer (buffered mode).
    Raises DeadlockError when no rank can progress.
    """
    if transport.closed:
        raise ShutdownError("transport is closed")
    cycle = transport.stats.begin_cycle(label)
    transport._in_flight = True
    state: dict[int, tuple | None] = {}

    def advance(rank, value=None):
        gen = procs[rank]
        try:
            op = gen.send(value)
        except StopIteration:
            state[rank] = None
            return
        if op[0] == "send":
            _, dst, tag, payload = op
            if dst == rank:
                raise StateError(f"rank {rank} sending to itself")
        elif op[0] == "recv":
            if transport.closed:
                raise ShutdownError("recv on closed transport")
        else:
            raise StateError(f"unknown transport op {op!r}")
        state[rank] = op

    order = sorted(procs)
    for r in order:
        advance(r)

    try:
        while True:
            progressed = False
            for r in order:
                op = state[r]
                if op is None:
                    continue
                if op[0] == "send":
                    _, dst, tag, payload = op
                    env = Envelope(r, dst, tag, payload)
                    peer_op = state.get(dst)
                    recv_posted = (peer_op is not None and peer_op[0] == "recv"
                                   and peer_op[1] == r and peer_op[2] == tag)
                    if transport.effective_mode == RENDEZVOUS:
                        if recv_posted:
                            transport.stats.record_send(env)
                            transport.stats.record_recv(env)
                            advance(dst, payload)
                            advance(r)
                            progressed = True
                    else:
                        pending = transport._buffered_bytes.get(dst, 0)
                        queued_here = transport._queues.get((r, dst, tag))
                        if pending + len(payload) <= transport.buffer_budget:
                            transport._queues.setdefault((r, dst, tag), deque()).append(payload)
                            transport._buffered_bytes[dst] = pending + len(payload)
                            transport.stats.record_send(env)
                            advance(r)
                            progressed = True
                        elif recv_posted and not queued_here:
                            # direct hand-off; FIFO-safe only with an empty queue
                            transport.stats.record_send(env)
                            transport.stats.record_recv(env)
                            advance(dst, payload)
                            advance(r)
                            progressed = True
                        elif recv_posted:
                            pass  # the posted recv must drain the queue first
                        else:
                            raise BufferOverflowError(
                                f"{len(payload)} bytes for rank {dst} exceed the "
                                f"{transport.buffer_budget} byte budget "
                                f"({pending} already queued)")
                elif op[0] == "recv":
                    _, src, tag = op
                    queue = transport._queues.get((src, r, tag))
                    if queue:
                        payload = queue.popleft()
                        transport._buffered_bytes[r] -= len(payload)
                        transport.stats.record_recv(Envelope(src, r, tag, payload))
                        advance(r, payload)
                        progressed = True
            if all(s is None for s in state.values()):
                break
            if not progressed:
                blocked = {r: s for r, s in state.items() if s is not None}
                waits = {r: (s[1]) for r, s in blocked.items()}
                cycle_ranks = _find_cycle(waits)
                detail = ", ".join(f"rank {r} {s[0]} {s[1]}" for r, s in sorted(blocked.items()))
                if cycle_ranks:
                    raise DeadlockError(
                        f"wait-for cycle {cycle_ranks} with no progress ({detail})",
                        cycle=cycle_ranks)
                raise DeadlockError(f"ranks stuck with no wait cycle ({detail})",
                                    cycle=None)
    finally:
        transport._in_flight = False
    leftovers = {k: len(q) for k, q in transport._queues.items() if q}
    if leftovers:
        raise StateError(f"undelivered buffered messages at cycle end: {leftovers}")
    return cycle


def run_cycle(transport: Transport, schedules: dict, label: str = "raw") -> CycleStats:
    """Execute literal send/recv schedules with empty payloads."""

    def proc(sched):
        for step in sched.steps:
            if step.op == "send":
                yield ("send", step.peer, Channel.QUERY_VECTOR, b"")
            elif step.op == "recv":
                yield ("recv", step.peer, Channel.QUERY_VECTOR)

    return run_ranks(transport, {r: proc(s) for r, s in schedules.items()}, label)


# -- threaded stress runner ----------------------------------------------------

class _ThreadedRendezvous:
    def __init__(self, transport: Transport, nranks: int):
        self.transport = transport
        self.lock = threading.Lock()
        self.cond = threading.Condition(self.lock)
        self.sends: dict[tuple, bytes] = {}
        self.taken: set[tuple] = set()
        self.waiting: dict[int, tuple] = {}
        self.alive = nranks
        self.panic: DeadlockError | None = None

    def _wake_condition(self, rank, op) -> bool:
        if op[0] == "send":
            return (rank, op[1], op[2]) in self.taken
        return (op[1], rank, op[2]) in self.sends

    def _check_stuck(self):
        if self.panic is None and self.alive > 0 and len(self.waiting) == self.alive:
            if not any(self._wake_condition(r, op) for r, op in self.waiting.items()):
                waits = {r: op[1] for r, op in self.waiting.items()}
                self.panic = DeadlockError(
                    f"all threads blocked: {sorted(self.waiting.items())}",
                    cycle=_find_cycle(waits))
                self.cond.notify_all()

    def send(self, src, dst, tag, payload):
        key = (src, dst, tag)
        env = Envelope(src, dst, tag, payload)
        with self.cond:
            self.sends[key] = payload
            self.transport.stats.record_send(env)
            self.cond.notify_all()
            self.waiting[src] = ("send", dst, tag)
            self._check_stuck()
            while key not in self.taken and self.panic is None:
                self.cond.wait()
            self.waiting.pop(src, None)
            if self.panic:
                raise self.panic
            self.taken.discard(key)

    def recv(self, dst, src, tag):
        key = (src, dst, tag)
        with self.cond:
            self.waiting[dst] = ("recv", src, tag)
            self._check_stuck()
            while key not in self.sends and self.panic is None:
                self.cond.wait()
            self.waiting.pop(dst, None)
            if self.panic:
                raise self.panic
            payload = self.sends.pop(key)
            self.taken.add(key)
            self.transport.stats.record_recv(Envelope(src, dst, tag, payload))
            self.cond.notify_all()
            return payload

    def finished(self):
        with self.cond:
            self.alive -= 1
            self._check_stuck()
            self.cond.notify_all()


def run_ranks_threaded(transport: Transport, procs: dict, label: str = "cycle") -> CycleStats:
    """One thread per rank; rendezvous semantics only. Stress mode."""
    if transport.effective_mode != RENDEZVOUS:
        raise StateError("threaded runner supports rendezvous mode only")
    cycle = transport.stats.begin_cycle(label)
    hub = _ThreadedRendezvous(transport, len(procs))
    errors: dict[int, BaseException] = {}

    def drive(rank, gen):
        try:
            value = None
            while True:
                try:
                    op = gen.send(value)
                except StopIteration:
                    break
                if op[0] == "send":
                    hub.send(rank, op[1], op[2], op[3])
                    value = None
                else:
                    value = hub.recv(rank, op[1], op[2])
        except BaseException as exc:  # surfaced to the caller below
            errors[rank] = exc
        finally:
            hub.finished()

    threads = [threading.Thread(target=drive, args=(r, g), daemon=True)
               for r, g in sorted(procs.items())]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors:
        raise errors[min(errors)]
    return cycle
