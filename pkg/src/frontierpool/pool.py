"""Bounded prompt pool with a cold queue and score-ordered heap partitions.

Scored records are totally ordered by ``(pool_stat, id)``. In the default
two-partition layout the low partition holds the ``ceil(alpha * S)`` smallest
scored records and the high partition the rest; the boundary between them is
where batches are drawn from. Fixed-edge layouts generalise this to ``H``
bins with ``H - 1`` gaps.
"""

from __future__ import annotations

import bisect
import heapq
import itertools
import math
import operator
from collections import Counter, OrderedDict
from collections.abc import Callable, Iterable, Iterator
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CapacityExceeded, InsufficientItems, LayoutError, NotCold
from .records import QueryRecord, RecordState, read_jsonl, write_jsonl

ANCHOR_WIDTH = 0.05

# bins anchored at the (-1 end, +1 end) per heap count; the remaining bins
# split the interior evenly.
DEFAULT_ANCHORS: dict[int, tuple[int, int]] = {
    5: (1, 0),
    10: (2, 2),
    15: (5, 0),
    20: (7, 1),
}


@dataclass(frozen=True)
class PartitionLayout:
    """How scored records are split into bins.

    ``edges=None`` is the adaptive two-bin layout balanced by ``alpha``.
    Otherwise ``edges`` are the strictly increasing interior boundaries; a
    value equal to an edge belongs to the bin above it.
    """

    edges: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.edges is None:
            return
        edges = tuple(float(e) for e in self.edges)
        object.__setattr__(self, "edges", edges)
        if not edges:
            raise LayoutError("fixed layout needs at least one edge")
        for e in edges:
            if not -1.0 < e < 1.0:
                raise LayoutError(f"edge {e} outside (-1, 1)")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise LayoutError("edges must be strictly increasing")

    @property
    def num_bins(self) -> int:
        return 2 if self.edges is None else len(self.edges) + 1

    @property
    def adaptive(self) -> bool:
        return self.edges is None

    def bin_of(self, stat: float) -> int:
        assert self.edges is not None
        return bisect.bisect_right(self.edges, stat)

    @classmethod
    def from_scheme(
        cls,
        num_bins: int,
        anchored_low: int = 0,
        anchored_high: int = 0,
        anchor_width: float = ANCHOR_WIDTH,
    ) -> PartitionLayout:
        """Anchored bins of ``anchor_width`` at each end, equal-width bins between."""
        if num_bins < 2:
            raise LayoutError("need at least two bins")
        interior = num_bins - anchored_low - anchored_high
        if anchored_low < 0 or anchored_high < 0 or interior < 1:
            raise LayoutError(
                f"{anchored_low} low + {anchored_high} high anchors leave no interior bin of {num_bins}"
            )
        lo = -1.0 + anchor_width * anchored_low
        hi = 1.0 - anchor_width * anchored_high
        if hi <= lo:
            raise LayoutError("anchored bins overlap")
        edges = [-1.0 + anchor_width * j for j in range(1, anchored_low + 1)]
        step = (hi - lo) / interior
        edges += [lo + step * j for j in range(1, interior)]
        edges += [1.0 - anchor_width * j for j in range(anchored_high, 0, -1)]
        return cls(tuple(edges))

    @classmethod
    def for_heaps(cls, num_bins: int) -> PartitionLayout:
        if num_bins == 2:
            return cls()
        low, high = DEFAULT_ANCHORS.get(num_bins, (0, 0))
        return cls.from_scheme(num_bins, low, high)


class _Bin:
    """Double-ended priority queue over records keyed by ``(pool_stat, id)``.

    Two heaps with lazy deletion; an entry is live only while its push token
    is the current one for that id.
    """

    __slots__ = ("_min", "_max", "_live", "_tokens")

    def __init__(self, tokens: Iterator[int]) -> None:
        self._min: list[tuple[float, int, int]] = []
        self._max: list[tuple[float, int, int]] = []
        self._live: dict[int, tuple[int, QueryRecord]] = {}
        self._tokens = tokens

    def __len__(self) -> int:
        return len(self._live)

    def __bool__(self) -> bool:
        return bool(self._live)

    def __contains__(self, rid: int) -> bool:
        return rid in self._live

    def records(self) -> Iterator[QueryRecord]:
        for _, rec in self._live.values():
            yield rec

    def push(self, rec: QueryRecord) -> None:
        token = next(self._tokens)
        self._live[rec.id] = (token, rec)
        stat = rec.pool_stat
        heapq.heappush(self._min, (stat, rec.id, token))
        heapq.heappush(self._max, (-stat, -rec.id, token))

    def _clean(self, heap: list[tuple[float, int, int]], sign: int) -> None:
        live = self._live
        while heap:
            _, rid, token = heap[0]
            entry = live.get(rid * sign)
            if entry is not None and entry[0] == token:
                return
            heapq.heappop(heap)

    def peek_min(self) -> QueryRecord:
        self._clean(self._min, 1)
        return self._live[self._min[0][1]][1]

    def peek_max(self) -> QueryRecord:
        self._clean(self._max, -1)
        return self._live[-self._max[0][1]][1]

    def pop_min(self) -> QueryRecord:
        heap = self._min
        self._clean(heap, 1)
        rid = heapq.heappop(heap)[1]
        live = self._live
        rec = live.pop(rid)[1]
        limit = 2 * len(live) + 64
        if len(self._min) > limit or len(self._max) > limit:
            self._compact()
        return rec

    def pop_max(self) -> QueryRecord:
        heap = self._max
        self._clean(heap, -1)
        rid = heapq.heappop(heap)[1]
        live = self._live
        rec = live.pop(-rid)[1]
        limit = 2 * len(live) + 64
        if len(self._min) > limit or len(self._max) > limit:
            self._compact()
        return rec

    def discard(self, rid: int) -> QueryRecord:
        rec = self._live.pop(rid)[1]
        self._maybe_compact()
        return rec

    def _maybe_compact(self) -> None:
        limit = 2 * len(self._live) + 64
        if len(self._min) > limit or len(self._max) > limit:
            self._compact()

    def _compact(self) -> None:
        self._min = [(r.pool_stat, r.id, t) for t, r in self._live.values()]
        self._max = [(-r.pool_stat, -r.id, t) for t, r in self._live.values()]
        heapq.heapify(self._min)
        heapq.heapify(self._max)

    def copy(self, records: dict[int, QueryRecord], tokens: Iterator[int]) -> _Bin:
        out = _Bin(tokens)
        out._min = list(self._min)
        out._max = list(self._max)
        out._live = {rid: (t, records[rid]) for rid, (t, _) in self._live.items()}
        return out


class PromptPool:
    """Active query pool: cold FIFO queue plus scored partitions.

    Sampled records leave the containers and wait in ``sampled`` until the
    training loop releases them; they do not count toward capacity.
    """

    def __init__(
        self,
        capacity: int,
        alpha: float = 0.5,
        mix_easy_fraction: float = 0.0,
        layout: PartitionLayout | None = None,
    ) -> None:
        if capacity < 1:
            raise ValueError("capacity must be positive")
        if not 0.0 < alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0.0 <= mix_easy_fraction < 1.0:
            raise ValueError("mix_easy_fraction must lie in [0, 1)")
        self.capacity = capacity
        self.alpha = alpha
        self.mix_easy_fraction = mix_easy_fraction
        self.layout = layout or PartitionLayout()
        self.cold: OrderedDict[int, QueryRecord] = OrderedDict()
        self._tokens = itertools.count()
        self.bins = [_Bin(self._tokens) for _ in range(self.layout.num_bins)]
        self.records: dict[int, QueryRecord] = {}
        self.sampled: dict[int, QueryRecord] = {}

    # -- size / membership -------------------------------------------------

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, rid: int) -> bool:
        return rid in self.records

    @property
    def num_bins(self) -> int:
        return len(self.bins)

    @property
    def num_scored(self) -> int:
        return len(self.records) - len(self.cold)

    @property
    def low(self) -> _Bin:
        return self.bins[0]

    @property
    def high(self) -> _Bin:
        return self.bins[-1]

    def is_full(self) -> bool:
        return len(self.records) >= self.capacity

    def bin_sizes(self) -> list[int]:
        return [len(b) for b in self.bins]

    # -- insertion ---------------------------------------------------------

    def insert_cold(self, record: QueryRecord) -> int:
        if record.pool_stat is not None:
            raise ValueError("cold records must not carry a pool statistic")
        self._check_room(record)
        record.state = RecordState.COLD
        record.bin = None
        self.cold[record.id] = record
        self.records[record.id] = record
        return record.id

    def insert_scored(self, record: QueryRecord) -> int:
        if record.pool_stat is None:
            raise ValueError("scored records need a pool statistic")
        self._check_room(record)
        self.records[record.id] = record
        self._place(record)
        if self.layout.adaptive:
            self.rebalance()
        return record.id

    def insert_scored_many(self, records: Iterable[QueryRecord]) -> int:
        """Insert several scored records with a single rebalance at the end."""
        count = 0
        for record in records:
            if record.pool_stat is None:
                raise ValueError("scored records need a pool statistic")
            self._check_room(record)
            self.records[record.id] = record
            self._place(record)
            count += 1
        if count and self.layout.adaptive:
            self.rebalance()
        return count

    def promote(self, record_id: int, first_group_mean: float) -> None:
        if record_id not in self.cold:
            raise NotCold(f"record {record_id} is not in the cold queue")
        if not -1.0 <= first_group_mean <= 1.0:
            raise ValueError("group mean outside [-1, 1]")
        record = self.cold.pop(record_id)
        record.pool_stat = float(first_group_mean)
        self._place(record)
        if self.layout.adaptive:
            self.rebalance()

    def _check_room(self, record: QueryRecord) -> None:
        if record.id in self.records or record.id in self.sampled:
            raise ValueError(f"record {record.id} already in pool")
        if len(self.records) >= self.capacity:
            raise CapacityExceeded(f"pool at capacity {self.capacity}")

    def _place(self, record: QueryRecord) -> None:
        record.state = RecordState.SCORED
        if self.layout.adaptive:
            low = self.bins[0]
            idx = 0 if low and record.sort_key() < low.peek_max().sort_key() else 1
            if not low and not self.bins[1]:
                idx = 0
        else:
            idx = self.layout.bin_of(record.pool_stat)
        record.bin = idx
        self.bins[idx].push(record)

    def low_target(self, scored: int | None = None) -> int:
        s = self.num_scored if scored is None else scored
        # tolerance keeps e.g. 0.3 * 10 from rounding up to 4
        return min(s, math.ceil(self.alpha * s - 1e-9))

    def rebalance(self) -> int:
        """Restore the alpha split and boundary order; returns records moved."""
        if not self.layout.adaptive:
            raise LayoutError("rebalance applies only to the adaptive two-bin layout")
        low, high = self.bins
        target = self.low_target()
        moves = 0
        while len(low) > target:
            self._move(low.pop_max(), 1)
            moves += 1
        while len(low) < target:
            self._move(high.pop_min(), 0)
            moves += 1
        while low and high and low.peek_max().sort_key() > high.peek_min().sort_key():
            a, b = low.pop_max(), high.pop_min()
            self._move(a, 1)
            self._move(b, 0)
            moves += 2
        return moves

    def _move(self, record: QueryRecord, idx: int) -> None:
        record.bin = idx
        self.bins[idx].push(record)

    # -- sampling ----------------------------------------------------------

    def _take(self, record: QueryRecord) -> int:
        record.state = RecordState.SAMPLED
        record.bin = None
        del self.records[record.id]
        self.sampled[record.id] = record
        return record.id

    def _take_cold(self) -> int:
        _, record = self.cold.popitem(last=False)
        return self._take(record)

    def release(self, record_id: int) -> QueryRecord:
        """Hand a sampled record back to the caller (e.g. for archiving)."""
        return self.sampled.pop(record_id)

    def restore(self, record_ids: Iterable[int]) -> None:
        """Undo a draw: sampled cold records go back to the queue head in order, scored ones to their bins."""
        recs = [self.sampled.pop(rid) for rid in record_ids]
        for rec in reversed([r for r in recs if r.pool_stat is None]):
            rec.state = RecordState.COLD
            self.records[rec.id] = rec
            self.cold[rec.id] = rec
            self.cold.move_to_end(rec.id, last=False)
        for rec in recs:
            if rec.pool_stat is not None:
                self.records[rec.id] = rec
                self._place(rec)
        if self.layout.adaptive:
            self.rebalance()

    def remove(self, record_id: int) -> QueryRecord:
        """Take an arbitrary active record out of its container."""
        record = self.records[record_id]
        if record_id in self.cold:
            del self.cold[record_id]
        else:
            self.bins[record.bin].discard(record_id)
        self._take(record)
        return record

    def draw(self, batch_size: int, rng: np.random.Generator) -> list[int]:
        """Cold-first boundary draw over whatever layout this pool has."""
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if len(self.records) < batch_size:
            raise InsufficientItems(batch_size, len(self.records))
        cold_empty = not self.cold
        batch: list[int] = []
        while self.cold and len(batch) < batch_size:
            batch.append(self._take_cold())
        need = batch_size - len(batch)
        if need and self.mix_easy_fraction > 0.0:
            top = self.bins[-1]
            for _ in range(min(need, int(self.mix_easy_fraction * batch_size))):
                if not top:
                    break
                batch.append(self._take(top.pop_max()))
            need = batch_size - len(batch)
        if need:
            nonempty = [i for i, b in enumerate(self.bins) if b]
            last = len(self.bins) - 1
            if cold_empty and len(nonempty) == 1 and nonempty[0] in (0, last):
                b = self.bins[nonempty[0]]
                pop = b.pop_max if nonempty[0] == 0 else b.pop_min
                batch.extend(self._take(pop()) for _ in range(need))
            else:
                batch.extend(self._boundary_band(need, 2 * batch_size, rng))
        if self.layout.adaptive:
            self.rebalance()
        return batch

    def gap_candidates(self, limit: int) -> list[QueryRecord]:
        """Pop up to ``limit`` records nearest the bin gaps, round-robin.

        At each gap the upper bin's minimum is taken before the lower bin's
        maximum; gaps with both sides empty are skipped.
        """
        out: list[QueryRecord] = []
        gaps = range(len(self.bins) - 1)
        while len(out) < limit:
            progressed = False
            for g in gaps:
                upper, lower = self.bins[g + 1], self.bins[g]
                if upper and len(out) < limit:
                    out.append(upper.pop_min())
                    progressed = True
                if lower and len(out) < limit:
                    out.append(lower.pop_max())
                    progressed = True
            if not progressed:
                break
        return out

    def _boundary_band(self, need: int, limit: int, rng: np.random.Generator) -> list[int]:
        cands = self.gap_candidates(max(limit, need))
        if len(cands) < need:  # pragma: no cover - guarded by the size check
            raise InsufficientItems(need, len(cands))
        chosen = set(rng.choice(len(cands), size=need, replace=False).tolist())
        picked: list[int] = []
        for i, rec in enumerate(cands):
            if i in chosen:
                picked.append(self._take(rec))
            else:
                self.bins[rec.bin].push(rec)
        return picked

    # -- snapshots ---------------------------------------------------------

    def copy(self) -> PromptPool:
        """Deep copy; sampling the copy leaves this pool untouched."""
        out = PromptPool.__new__(PromptPool)
        out.capacity = self.capacity
        out.alpha = self.alpha
        out.mix_easy_fraction = self.mix_easy_fraction
        out.layout = self.layout
        out._tokens = itertools.count(next(self._tokens))
        out.records = {rid: rec.copy() for rid, rec in self.records.items()}
        out.cold = OrderedDict((rid, out.records[rid]) for rid in self.cold)
        out.bins = [b.copy(out.records, out._tokens) for b in self.bins]
        out.sampled = {rid: rec.copy() for rid, rec in self.sampled.items()}
        return out

    def iter_records(self) -> Iterator[QueryRecord]:
        """Active records in id order."""
        for rid in sorted(self.records):
            yield self.records[rid]

    def save(self, path: str | Path) -> None:
        write_jsonl(self.iter_records(), path)

    @classmethod
    def from_records(
        cls,
        records: Iterable[QueryRecord],
        capacity: int | None = None,
        **kwargs,
    ) -> PromptPool:
        """Rebuild a pool; partitions follow from pool_stat and the layout."""
        records = sorted(records, key=lambda r: r.id)
        pool = cls(capacity=capacity or max(len(records), 1), **kwargs)
        for rec in records:
            if rec.state is RecordState.COLD:
                pool.insert_cold(rec)
            elif rec.state is RecordState.SCORED:
                pool._check_room(rec)
                pool.records[rec.id] = rec
                pool._place(rec)
            else:
                raise ValueError(f"record {rec.id} in state {rec.state.value} cannot be pooled")
        if pool.layout.adaptive:
            pool.rebalance()
        return pool

    @classmethod
    def load(cls, path: str | Path, capacity: int | None = None, **kwargs) -> PromptPool:
        return cls.from_records(read_jsonl(path), capacity=capacity, **kwargs)


_STAT = operator.attrgetter("pool_stat")

Sampler = Callable[[PromptPool, int, np.random.Generator], list[int]]


def boundary_sample(pool: PromptPool, batch_size: int, rng: np.random.Generator) -> list[int]:
    """Cold items first, then a uniform pick from the band around the low/high split."""
    if pool.num_bins != 2:
        raise LayoutError("boundary_sample needs a two-bin pool; use multiheap_sample")
    return pool.draw(batch_size, rng)


def multiheap_sample(pool: PromptPool, batch_size: int, rng: np.random.Generator) -> list[int]:
    """Cold items first, then candidates gathered round-robin around every bin gap."""
    return pool.draw(batch_size, rng)


def uniform_sample(pool: PromptPool, batch_size: int, rng: np.random.Generator) -> list[int]:
    """Uniform without replacement over all active records, cold or scored."""
    if len(pool) < batch_size:
        raise InsufficientItems(batch_size, len(pool))
    ids = list(pool.records)
    picks = rng.choice(len(ids), size=batch_size, replace=False)
    out = [pool.remove(ids[i]).id for i in picks.tolist()]
    if pool.layout.adaptive:
        pool.rebalance()
    return out


def prioritized_sample(pool: PromptPool, batch_size: int, rng: np.random.Generator) -> list[int]:
    """Cold first, then scored records with probability proportional to 1 - (r + 1) / 2."""
    if len(pool) < batch_size:
        raise InsufficientItems(batch_size, len(pool))
    batch: list[int] = []
    while pool.cold and len(batch) < batch_size:
        batch.append(pool._take_cold())
    need = batch_size - len(batch)
    if need:
        # the cold queue is empty here, so every active record is scored
        scored = list(pool.records.values())
        stats = np.fromiter(map(_STAT, scored), dtype=float, count=len(scored))
        weights = (1.0 - stats) / 2.0
        positive = int(np.count_nonzero(weights > 0))
        take = min(need, positive)
        picks: list[int] = []
        if take:
            picks = rng.choice(len(scored), size=take, replace=False, p=weights / weights.sum()).tolist()
        if take < need:
            rest = np.flatnonzero(weights <= 0).tolist()
            picks += [rest[i] for i in rng.choice(len(rest), size=need - take, replace=False).tolist()]
        batch.extend(pool.remove(scored[i].id).id for i in picks)
    if pool.layout.adaptive:
        pool.rebalance()
    return batch


SAMPLERS: dict[str, Sampler] = {
    "boundary": boundary_sample,
    "multiheap": multiheap_sample,
    "uniform": uniform_sample,
    "prioritized": prioritized_sample,
}


def estimate_sampling_distribution(
    pool: PromptPool,
    batch_size: int,
    trials: int,
    rng: np.random.Generator,
    sampler: Sampler = boundary_sample,
) -> Counter[int]:
    """Empirical selection counts per record id over ``trials`` independent draws.

    Each draw starts from the same state: a private copy is drawn from and
    then restored, so ``pool`` itself is never touched.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    work = pool.copy()
    counts: Counter[int] = Counter()
    for _ in range(trials):
        ids = sampler(work, batch_size, rng)
        counts.update(ids)
        work.restore(ids)
    return counts
