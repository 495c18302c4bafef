"""Query-lifecycle management for group-based RL with verifiable rewards.

A bounded prompt pool that keeps training batches near the policy's
capability frontier, grows itself with verified on-policy augmentations,
and recycles trained queries after refreshing their statistics through the
augmentation lineage.
"""

from __future__ import annotations

from .errors import FrontierPoolError
from .grouprl import RolloutGroup, make_group
from .lineage import AggMode, LineageGraph, RefreshReport, refresh_pass
from .pool import PartitionLayout, PromptPool, boundary_sample, multiheap_sample
from .records import QueryRecord, RecordState
from .recycle import Archive, archive_record, reinsert_batched

__version__ = "0.1.0"

__all__ = [
    "AggMode",
    "Archive",
    "FrontierPoolError",
    "LineageGraph",
    "PartitionLayout",
    "PromptPool",
    "QueryRecord",
    "RecordState",
    "RefreshReport",
    "RolloutGroup",
    "archive_record",
    "boundary_sample",
    "make_group",
    "multiheap_sample",
    "refresh_pass",
    "reinsert_batched",
]
