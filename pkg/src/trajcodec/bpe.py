"""Byte-pair encoding over integer token streams.

Merges are learned greedily on a corpus of streams: the most frequent
adjacent pair becomes a new token id, ties broken by the lexicographically
smaller pair so training is platform-independent. Streams are hard merge
barriers (one stream per chunk), pairs never form across them. Encoding
applies merges in learned order; decoding expands merged ids back to
primitives, making the round trip lossless.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass


@dataclass(frozen=True)
class MergeTable:
    """Ordered merge rules over a primitive alphabet of ``base_vocab`` ids.

    Merge ``i`` rewrites the pair ``merges[i]`` to id ``base_vocab + i``.
    """

    base_vocab: int
    merges: tuple[tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        if self.base_vocab < 1:
            raise ValueError("base_vocab must be >= 1")
        for i, (left, right) in enumerate(self.merges):
            new_id = self.base_vocab + i
            if left >= new_id or right >= new_id or left < 0 or right < 0:
                raise ValueError(f"merge {i} references id >= its own new id {new_id}")

    @property
    def vocab_size(self) -> int:
        return self.base_vocab + len(self.merges)

    def ranks(self) -> dict[tuple[int, int], int]:
        return {pair: i for i, pair in enumerate(self.merges)}


def _pair_counts(stream: list[int]) -> dict[tuple[int, int], int]:
    counts: dict[tuple[int, int], int] = {}
    for pair in zip(stream, stream[1:]):
        counts[pair] = counts.get(pair, 0) + 1
    return counts


def _merge_stream(stream: list[int], pair: tuple[int, int], new_id: int) -> list[int]:
    out: list[int] = []
    i = 0
    n = len(stream)
    while i < n:
        if i < n - 1 and stream[i] == pair[0] and stream[i + 1] == pair[1]:
            out.append(new_id)
            i += 2
        else:
            out.append(stream[i])
            i += 1
    return out


def train_merges(
    corpus, base_vocab: int, max_merges: int = 2048, min_count: int = 2
) -> MergeTable:
    """Learn merge rules from a corpus of primitive-id streams.

    Stops when ``max_merges`` rules exist or no pair occurs ``min_count``
    times. Pair statistics are maintained incrementally, so only streams
    containing the merged pair are rewritten per step.
    """
    streams = [list(s) for s in corpus]
    if not streams:
        raise ValueError("empty corpus")
    for si, stream in enumerate(streams):
        for tok in stream:
            if not 0 <= tok < base_vocab:
                raise ValueError(f"stream {si} contains id {tok} outside [0, {base_vocab})")

    counts: dict[tuple[int, int], int] = {}
    where: dict[tuple[int, int], set[int]] = {}
    for si, stream in enumerate(streams):
        for pair, c in _pair_counts(stream).items():
            counts[pair] = counts.get(pair, 0) + c
            where.setdefault(pair, set()).add(si)

    # Lazy max-heap: stale entries are skipped when their count has changed.
    heap = [(-c, pair) for pair, c in counts.items()]
    heapq.heapify(heap)
    merges: list[tuple[int, int]] = []

    while len(merges) < max_merges and heap:
        neg, pair = heapq.heappop(heap)
        if counts.get(pair, 0) != -neg:
            continue
        if -neg < min_count:
            break
        new_id = base_vocab + len(merges)
        merges.append(pair)
        for si in sorted(where.get(pair, ())):
            stream = streams[si]
            before = _pair_counts(stream)
            rewritten = _merge_stream(stream, pair, new_id)
            after = _pair_counts(rewritten)
            streams[si] = rewritten
            for p in before.keys() | after.keys():
                delta = after.get(p, 0) - before.get(p, 0)
                if delta:
                    c = counts.get(p, 0) + delta
                    if c > 0:
                        counts[p] = c
                        heapq.heappush(heap, (-c, p))
                    else:
                        counts.pop(p, None)
                if after.get(p, 0) == 0:
                    bucket = where.get(p)
                    if bucket is not None:
                        bucket.discard(si)
                else:
                    where.setdefault(p, set()).add(si)
        counts.pop(pair, None)
        where.pop(pair, None)

    return MergeTable(base_vocab=base_vocab, merges=tuple(merges))


def bpe_encode(table: MergeTable, stream) -> list[int]:
    """Apply merges exhaustively in learned order; deterministic."""
    tokens = list(stream)
    for tok in tokens:
        if not 0 <= tok < table.base_vocab:
            raise ValueError(f"id {tok} outside primitive alphabet [0, {table.base_vocab})")
    ranks = table.ranks()
    while len(tokens) >= 2:
        best_rank = None
        for pair in zip(tokens, tokens[1:]):
            rank = ranks.get(pair)
            if rank is not None and (best_rank is None or rank < best_rank):
                best_rank = rank
        if best_rank is None:
            break
        tokens = _merge_stream(tokens, table.merges[best_rank], table.base_vocab + best_rank)
    return tokens


def bpe_decode(table: MergeTable, ids) -> list[int]:
    """Expand merged ids back to primitives; exact inverse of encoding."""
    out: list[int] = []
    for tok in ids:
        if not 0 <= tok < table.vocab_size:
            raise ValueError(f"unknown id {tok} (vocab size {table.vocab_size})")
        stack = [tok]
        while stack:
            t = stack.pop()
            if t < table.base_vocab:
                out.append(t)
            else:
                left, right = table.merges[t - table.base_vocab]
                stack.append(right)
                stack.append(left)
    return out
