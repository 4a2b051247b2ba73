"""Construction of the structured pairwise communication pattern.

Every rank walks its sorted remote-rank list: peers below its own id are
served receive-first (in ascending order), then local updates, then
peers above send-first (ascending). Matched orientations across the
rank order make the pattern deadlock-free under rendezvous semantics.

Stages are derived by simulating the rendezvous meetings; the optimised
variant greedily merges a later stage into the earliest stage whose
participants are all idle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

from .errors import ConfigurationError, DeadlockError

SEND = "send"
RECV = "recv"
LOCAL = "local"


@dataclass(frozen=True)
class CommStep:
    op: str
    peer: int | None = None
    stage: int | None = None


@dataclass
class CommSchedule:
    rank: int
    steps: list[CommStep]

    def exchange_sequence(self):
        """Steps grouped per peer: ('local', None, False) or (op, peer, recv_first)."""
        out = []
        i = 0
        while i < len(self.steps):
            step = self.steps[i]
            if step.op == LOCAL:
                out.append(("local", None, False))
                i += 1
                continue
            nxt = self.steps[i + 1]
            assert nxt.peer == step.peer, "send/recv steps must pair up per peer"
            out.append(("exchange", step.peer, step.op == RECV))
            i += 2
        return out


def exchange_order(rank: int, peers: Sequence[int]) -> list[int]:
    """Peer visiting order of the pattern (smaller ascending, then larger)."""
    return [p for p in peers if p < rank] + [p for p in peers if p > rank]


def build_pattern(rank: int, remote_ranks: Sequence[int]) -> CommSchedule:
    """One rank's ordered send/recv schedule for a communication cycle."""
    if list(remote_ranks) != sorted(set(remote_ranks)):
        raise ConfigurationError(f"remote ranks {remote_ranks!r} must be sorted and unique")
    if rank in remote_ranks:
        raise ConfigurationError("remote ranks must not contain the rank itself")
    steps = []
    for peer in remote_ranks:
        if peer < rank:
            steps.append(CommStep(RECV, peer))
            steps.append(CommStep(SEND, peer))
    steps.append(CommStep(LOCAL))
    for peer in remote_ranks:
        if peer > rank:
            steps.append(CommStep(SEND, peer))
            steps.append(CommStep(RECV, peer))
    return CommSchedule(rank, steps)


class Stage(NamedTuple):
    label: str
    pairs: tuple


def _normalize_pairs(pairs: Iterable) -> list[tuple[int, int]]:
    seen = set()
    for a, b in pairs:
        if a == b:
            raise ConfigurationError("a rank cannot pair with itself")
        seen.add((min(a, b), max(a, b)))
    return sorted(seen)


def regular_stages(pairs: Iterable) -> list[Stage]:
    """Stage sequence of the plain pattern, via rendezvous-meeting simulation."""
    pair_list = _normalize_pairs(pairs)
    peers: dict[int, list[int]] = {}
    for a, b in pair_list:
        peers.setdefault(a, []).append(b)
        peers.setdefault(b, []).append(a)
    order = {r: exchange_order(r, sorted(ps)) for r, ps in peers.items()}
    ranks = sorted(order)
    idx = {r: 0 for r in ranks}
    stages = []
    remaining = sum(len(v) for v in order.values()) // 2
    while remaining:
        heads = {r: order[r][idx[r]] for r in ranks if idx[r] < len(order[r])}
        busy: set[int] = set()
        matched = []
        for r in ranks:
            if r in busy or r not in heads:
                continue
            q = heads[r]
            if q not in busy and heads.get(q) == r:
                matched.append((min(r, q), max(r, q)))
                busy.add(r)
                busy.add(q)
        if not matched:
            raise DeadlockError(f"pattern stalled with heads {heads!r}")
        for a, b in matched:
            idx[a] += 1
            idx[b] += 1
        remaining -= len(matched)
        stages.append(Stage(str(len(stages) + 1), tuple(matched)))
    return stages


def join_stages(pairs: Iterable) -> list[Stage]:
    """Greedy stage packing: each stage merges into the earliest stage
    where all of its participating ranks are idle."""
    merged: list[tuple[list[str], list, set]] = []
    for stage in regular_stages(pairs):
        participants = {r for pair in stage.pairs for r in pair}
        for labels, pair_acc, busy in merged:
            if not busy & participants:
                labels.append(stage.label)
                pair_acc.extend(stage.pairs)
                busy |= participants
                break
        else:
            merged.append(([stage.label], list(stage.pairs), set(participants)))
    return [Stage(" & ".join(labels), tuple(pair_acc))
            for labels, pair_acc, busy in merged]


def staged_schedules(stages: Sequence[Stage], ranks: Sequence[int]) -> dict[int, CommSchedule]:
    """Per-rank schedules executing a staged pattern in stage order."""
    schedules = {r: [] for r in ranks}
    for stage_index, stage in enumerate(stages):
        for a, b in stage.pairs:
            schedules[a].append(CommStep(SEND, b, stage_index))
            schedules[a].append(CommStep(RECV, b, stage_index))
            schedules[b].append(CommStep(RECV, a, stage_index))
            schedules[b].append(CommStep(SEND, a, stage_index))
    return {r: CommSchedule(r, steps) for r, steps in schedules.items()}


def render_stage_table(stages: Sequence[Stage], ranks: Sequence[int]) -> str:
    """CSV of the pattern: ranks as columns, stages as rows, '-' for idle."""
    lines = ["stage," + ",".join(str(r) for r in ranks)]
    for stage in stages:
        cell = {r: "-" for r in ranks}
        for a, b in stage.pairs:
            cell[a] = str(b)
            cell[b] = str(a)
        lines.append(stage.label + "," + ",".join(cell[r] for r in ranks))
    return "\n".join(lines) + "\n"


def all_pairs(ranks: Sequence[int]) -> list[tuple[int, int]]:
    rs = sorted(ranks)
    return [(rs[i], rs[j]) for i in range(len(rs)) for j in range(i + 1, len(rs))]


def arrival_order(dest: int, origins: Iterable[int]) -> list[int]:
    """Order in which ``dest`` meets origin ranks in one pattern cycle."""
    srt = sorted(set(origins))
    return [o for o in srt if o < dest] + [o for o in srt if o > dest]
