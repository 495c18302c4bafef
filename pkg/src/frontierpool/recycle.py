"""Archive of trained records and their bounded reinsertion into the pool."""

from __future__ import annotations

from collections import OrderedDict
from collections.abc import Iterator, Mapping

from .errors import ContractViolation
from .pool import PromptPool
from .records import QueryRecord, RecordState, write_jsonl


class Archive:
    """FIFO of trained records awaiting recycling."""

    def __init__(self, size_threshold: int, reinsert_batch_size: int) -> None:
        if size_threshold < 1 or reinsert_batch_size < 1:
            raise ValueError("archive thresholds must be positive")
        self.size_threshold = size_threshold
        self.reinsert_batch_size = reinsert_batch_size
        self.entries: OrderedDict[int, QueryRecord] = OrderedDict()

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, rid: int) -> bool:
        return rid in self.entries

    def __iter__(self) -> Iterator[QueryRecord]:
        return iter(self.entries.values())

    def head(self, k: int) -> list[QueryRecord]:
        out = []
        for rec in self.entries.values():
            if len(out) == k:
                break
            out.append(rec)
        return out

    def save(self, path) -> None:
        write_jsonl(self.entries.values(), path)


def archive_record(archive: Archive, record: QueryRecord) -> None:
    """Append a just-trained record; its pool_stat must already be updated."""
    if record.last_group_mean is None:
        raise ContractViolation(f"record {record.id} has not been trained")
    if record.pool_stat is None:
        raise ContractViolation(f"record {record.id} has no pool statistic")
    if record.id in archive.entries:
        raise ContractViolation(f"record {record.id} already archived")
    record.state = RecordState.ARCHIVED
    record.bin = None
    archive.entries[record.id] = record


def should_recycle(pool: PromptPool, archive: Archive, batch_size: int) -> bool:
    return len(pool) < batch_size or len(archive) >= archive.size_threshold


def reinsert_batched(
    pool: PromptPool,
    archive: Archive,
    refreshed_stats: Mapping[int, float | None] | None = None,
) -> int:
    """Move up to ``reinsert_batch_size`` oldest entries back as scored records.

    Stops at pool capacity without popping further entries, so nothing is
    lost and FIFO order is kept.
    """
    refreshed_stats = refreshed_stats or {}
    room = pool.capacity - len(pool)
    batch = []
    while archive.entries and len(batch) < min(archive.reinsert_batch_size, room):
        rid, record = archive.entries.popitem(last=False)
        value = refreshed_stats.get(rid)
        if value is not None:
            record.pool_stat = float(value)
        batch.append(record)
    return pool.insert_scored_many(batch)
