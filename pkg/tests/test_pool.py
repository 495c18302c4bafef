from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from frontierpool.errors import CapacityExceeded, InsufficientItems, LayoutError, NotCold
from frontierpool.pool import (
    PartitionLayout,
    PromptPool,
    boundary_sample,
    estimate_sampling_distribution,
    multiheap_sample,
    prioritized_sample,
    uniform_sample,
)
from frontierpool.records import QueryRecord, RecordState


def rec(i: int, stat: float | None = None) -> QueryRecord:
    state = RecordState.COLD if stat is None else RecordState.SCORED
    return QueryRecord(i, f"Compute {i} * 2 + 1.", str(2 * i + 1), pool_stat=stat, state=state)


def scored_pool(stats, capacity=None, **kw) -> PromptPool:
    return PromptPool.from_records([rec(i, s) for i, s in enumerate(stats)], capacity=capacity, **kw)


def low_stats(pool):
    return sorted(r.pool_stat for r in pool.low.records())


def high_stats(pool):
    return sorted(r.pool_stat for r in pool.high.records())


# -- insert / promote -------------------------------------------------------------


def test_insert_cold_first_insert():
    pool = PromptPool(capacity=3)
    assert pool.insert_cold(rec(1)) == 1
    assert list(pool.cold) == [1]
    assert len(pool) == 1
    assert pool.records[1].state is RecordState.COLD


def test_insert_cold_keeps_fifo_order():
    pool = PromptPool(capacity=3)
    for i in (1, 2, 3):
        pool.insert_cold(rec(i))
    assert list(pool.cold) == [1, 2, 3]


def test_insert_at_capacity_is_rejected():
    pool = PromptPool(capacity=100_000)
    for i in range(100_000):
        pool.insert_cold(rec(i))
    with pytest.raises(CapacityExceeded):
        pool.insert_cold(rec(100_000))
    assert len(pool) == 100_000


def test_insert_scored_respects_capacity():
    pool = scored_pool([0.1, 0.2], capacity=2)
    with pytest.raises(CapacityExceeded):
        pool.insert_scored(rec(9, 0.0))


def test_insert_cold_needs_unscored_record():
    with pytest.raises(ValueError):
        PromptPool(capacity=2).insert_cold(rec(1, 0.5))


def test_promote_single_item_goes_low():
    pool = PromptPool(capacity=3)
    pool.insert_cold(rec(1))
    pool.promote(1, -0.8)
    assert 1 in pool.low
    assert pool.records[1].pool_stat == -0.8
    assert pool.records[1].state is RecordState.SCORED


def test_promote_non_cold_raises():
    pool = scored_pool([0.3])
    with pytest.raises(NotCold):
        pool.promote(0, 0.1)


def test_promote_pair_split_by_order():
    pool = PromptPool(capacity=3)
    pool.insert_cold(rec(1))
    pool.insert_cold(rec(2))
    pool.promote(1, 1.0)
    pool.promote(2, -1.0)
    assert 2 in pool.low and 1 in pool.high


def test_promote_rejects_out_of_range_mean():
    pool = PromptPool(capacity=3)
    pool.insert_cold(rec(1))
    with pytest.raises(ValueError):
        pool.promote(1, 1.5)


# -- rebalance -------------------------------------------------------------------


def test_rebalance_splits_at_alpha():
    pool = scored_pool([-0.9, -0.1, 0.3, 0.8], alpha=0.5)
    assert low_stats(pool) == [-0.9, -0.1]
    assert high_stats(pool) == [0.3, 0.8]


def test_rebalance_is_a_fixed_point():
    pool = scored_pool([-0.9, -0.1, 0.3, 0.8])
    assert pool.rebalance() == 0


def test_rebalance_ties_break_by_id():
    pool = scored_pool([0.0, 0.0, 0.0, 0.0])
    assert sorted(r.id for r in pool.low.records()) == [0, 1]


def test_rebalance_rejected_on_fixed_layout():
    pool = scored_pool([0.1, 0.6], layout=PartitionLayout((0.0, 0.5)))
    with pytest.raises(LayoutError):
        pool.rebalance()


@settings(max_examples=60, deadline=None)
@given(
    stats=st.lists(st.sampled_from([-1.0, -0.5, 0.0, 0.25, 0.5, 1.0]) | st.floats(-1, 1), min_size=1, max_size=60),
    alpha=st.floats(0.05, 0.95),
)
def test_rebalance_matches_sort_oracle(stats, alpha):
    pool = scored_pool(stats, alpha=alpha)
    order = sorted(range(len(stats)), key=lambda i: (stats[i], i))
    k = min(len(stats), math.ceil(alpha * len(stats) - 1e-9))
    assert {r.id for r in pool.low.records()} == set(order[:k])
    assert {r.id for r in pool.high.records()} == set(order[k:])


@settings(max_examples=40, deadline=None)
@given(stats=st.lists(st.floats(-1, 1), min_size=1, max_size=200))
def test_heap_pop_order_matches_sort(stats):
    pool = scored_pool(stats, layout=PartitionLayout((0.999,)))
    low = pool.low
    popped = []
    while low:
        r = low.pop_min()
        popped.append((r.pool_stat, r.id))
    assert popped == sorted((s, i) for i, s in enumerate(stats) if s < 0.999)


def test_heap_pop_order_large_pool():
    rng = np.random.default_rng(0)
    stats = np.round(rng.uniform(-1, 1, 10_000), 2).tolist()  # many ties
    pool = scored_pool(stats, layout=PartitionLayout((0.9999,)))
    got = []
    while pool.low:
        r = pool.low.pop_max()
        got.append((r.pool_stat, r.id))
    assert got == sorted(((s, i) for i, s in enumerate(stats) if s < 0.9999), reverse=True)


# -- sampling ---------------------------------------------------------------------


def test_cold_items_come_first():
    pool = scored_pool([-0.5, -0.2, 0.1, 0.4, 0.9], capacity=10)
    for i in (10, 11, 12):
        pool.insert_cold(rec(i))
    batch = boundary_sample(pool, 4, np.random.default_rng(0))
    assert batch[:3] == [10, 11, 12]
    assert batch[3] in {0, 1, 2, 3, 4}


def test_single_partition_falls_back_to_boundary_end():
    pool = scored_pool([-0.9, -0.5, -0.1], layout=PartitionLayout((0.5,)))
    assert not pool.high
    assert boundary_sample(pool, 2, np.random.default_rng(0)) == [2, 1]


def test_too_few_records_raises():
    pool = scored_pool([0.1, 0.2], capacity=5)
    with pytest.raises(InsufficientItems):
        boundary_sample(pool, 5, np.random.default_rng(0))


def test_batch_size_must_be_positive():
    with pytest.raises(ValueError):
        boundary_sample(scored_pool([0.0]), 0, np.random.default_rng(0))


def test_candidates_alternate_high_first():
    pool = scored_pool([-0.8, -0.4, -0.2, 0.1, 0.3, 0.7])
    cands = pool.gap_candidates(4)
    assert [r.pool_stat for r in cands] == [0.1, -0.2, 0.3, -0.4]


def test_candidates_continue_from_other_side():
    # alpha 0.25 of 8 puts {-0.8, -0.4} low; once low runs dry the high side continues alone
    pool = scored_pool([-0.8, -0.4, -0.2, 0.1, 0.3, 0.7, 0.8, 0.9], alpha=0.25)
    cands = pool.gap_candidates(8)
    assert [r.pool_stat for r in cands] == [-0.2, -0.4, 0.1, -0.8, 0.3, 0.7, 0.8, 0.9]


def test_easy_mix_takes_from_top():
    stats = [i / 20 - 0.5 for i in range(20)]
    pool = scored_pool(stats, mix_easy_fraction=0.25)
    batch = boundary_sample(pool, 8, np.random.default_rng(0))
    top = sorted(range(20), key=lambda i: stats[i])[-2:]
    assert batch[:2] == top[::-1]


@settings(max_examples=40, deadline=None)
@given(
    stats=st.lists(st.floats(-1, 1), min_size=4, max_size=80),
    cold=st.integers(0, 10),
    b=st.integers(1, 16),
    seed=st.integers(0, 2**16),
)
def test_draw_conserves_records(stats, cold, b, seed):
    pool = scored_pool(stats, capacity=len(stats) + cold)
    for i in range(cold):
        pool.insert_cold(rec(1000 + i))
    b = min(b, len(pool))
    before = {rid: (r.pool_stat, r.state) for rid, r in pool.records.items()}
    cold_ids = list(pool.cold)
    batch = boundary_sample(pool, b, np.random.default_rng(seed))
    assert len(batch) == len(set(batch)) == b
    assert batch[: min(b, cold)] == cold_ids[: min(b, cold)]
    assert set(batch) == set(pool.sampled)
    assert set(before) == set(pool.records) | set(batch)
    for rid, r in pool.records.items():
        assert r.pool_stat == before[rid][0]
        assert r.state is before[rid][1]
    if pool.num_scored and pool.low and pool.high:
        assert pool.low.peek_max().sort_key() < pool.high.peek_min().sort_key()


def test_cold_only_batch_when_backlog_is_large():
    pool = PromptPool(capacity=20)
    for i in range(10):
        pool.insert_cold(rec(i))
    pool.insert_scored(rec(50, 0.0))
    assert boundary_sample(pool, 6, np.random.default_rng(0)) == list(range(6))


def test_draw_is_deterministic():
    stats = np.random.default_rng(1).uniform(-1, 1, 300).tolist()
    a = boundary_sample(scored_pool(stats), 32, np.random.default_rng(7))
    b = boundary_sample(scored_pool(stats), 32, np.random.default_rng(7))
    assert a == b


def test_restore_undoes_a_draw():
    pool = scored_pool([-0.5, 0.0, 0.5, 0.9], capacity=8)
    pool.insert_cold(rec(10))
    snapshot = {rid: (r.pool_stat, r.state, r.bin) for rid, r in pool.records.items()}
    ids = boundary_sample(pool, 3, np.random.default_rng(0))
    pool.restore(ids)
    assert {rid: (r.pool_stat, r.state, r.bin) for rid, r in pool.records.items()} == snapshot
    assert list(pool.cold) == [10]
    assert not pool.sampled


def test_remove_and_release():
    pool = scored_pool([0.1, 0.2, 0.3])
    r = pool.remove(1)
    assert r.state is RecordState.SAMPLED and 1 not in pool
    assert pool.release(1) is r and not pool.sampled


# -- sampling distribution ------------------------------------------------------


def test_singleton_gets_all_mass():
    counts = estimate_sampling_distribution(scored_pool([0.3]), 1, 50, np.random.default_rng(0))
    assert counts == {0: 50}


def test_distribution_leaves_pool_untouched():
    pool = scored_pool(np.linspace(-1, 1, 50).tolist())
    before = [(r.id, r.pool_stat, r.bin) for r in pool.iter_records()]
    counts = estimate_sampling_distribution(pool, 8, 200, np.random.default_rng(0))
    assert sum(counts.values()) == 8 * 200
    assert [(r.id, r.pool_stat, r.bin) for r in pool.iter_records()] == before


def test_distribution_rejects_zero_trials():
    with pytest.raises(ValueError):
        estimate_sampling_distribution(scored_pool([0.1]), 1, 0, np.random.default_rng(0))


def test_symmetric_pool_has_symmetric_inner_mass():
    stats = [-0.9, -0.6, -0.3, -0.1, 0.1, 0.3, 0.6, 0.9]
    trials = 20_000
    counts = estimate_sampling_distribution(scored_pool(stats), 1, trials, np.random.default_rng(3))
    # B = 1: the candidate set is the two innermost items, one picked uniformly
    assert counts[3] + counts[4] == trials
    assert abs(counts[3] - trials / 2) <= 3 * math.sqrt(trials * 0.25)


def test_uniform_sampler_is_flat():
    n, b, trials = 40, 4, 5_000
    counts = estimate_sampling_distribution(scored_pool(np.linspace(-1, 1, n).tolist()), b, trials, np.random.default_rng(4), uniform_sample)
    p = b / n
    sd = math.sqrt(trials * p * (1 - p))
    assert all(abs(counts[i] - trials * p) <= 4 * sd for i in range(n))


def test_boundary_mass_concentrates_around_alpha_quantile():
    rng = np.random.default_rng(5)
    stats = rng.uniform(-1, 1, 400).tolist()
    pool = scored_pool(stats, alpha=0.5)
    q = float(np.quantile(stats, 0.5))
    trials, b = 10_000, 8
    inside = lambda c: sum(n for i, n in c.items() if q - 0.15 <= stats[i] <= q + 0.15)  # noqa: E731
    pb = inside(estimate_sampling_distribution(pool, b, trials, rng)) / (trials * b)
    pu = inside(estimate_sampling_distribution(pool, b, trials, rng, uniform_sample)) / (trials * b)
    m = trials * b
    assert pb - pu > 3 * math.sqrt(pb * (1 - pb) / m + pu * (1 - pu) / m)


def test_prioritized_prefers_low_statistics():
    stats = [-1.0] * 10 + [0.9] * 10
    counts = estimate_sampling_distribution(scored_pool(stats), 2, 2_000, np.random.default_rng(6), prioritized_sample)
    low = sum(counts[i] for i in range(10))
    assert low > 3 * sum(counts[i] for i in range(10, 20))


def test_prioritized_handles_all_zero_weights():
    batch = prioritized_sample(scored_pool([1.0, 1.0, 1.0]), 2, np.random.default_rng(0))
    assert len(set(batch)) == 2


# -- multi-heap ----------------------------------------------------------------------


def test_two_heap_multiheap_matches_boundary():
    stats = np.random.default_rng(8).uniform(-1, 1, 200).tolist()
    a = boundary_sample(scored_pool(stats), 16, np.random.default_rng(9))
    b = multiheap_sample(scored_pool(stats, layout=PartitionLayout.for_heaps(2)), 16, np.random.default_rng(9))
    assert a == b


def test_multiheap_items_in_lowest_bin_only():
    layout = PartitionLayout((-0.5, 0.0, 0.5))
    stats = [-0.9, -0.8, -0.7, -0.6]
    pool = scored_pool(stats, layout=layout)
    cands = pool.gap_candidates(8)
    assert [r.pool_stat for r in cands] == [-0.6, -0.7, -0.8, -0.9]


def test_boundary_sample_needs_two_bins():
    pool = scored_pool([0.0, 0.5], layout=PartitionLayout((0.0, 0.4)))
    with pytest.raises(LayoutError):
        boundary_sample(pool, 1, np.random.default_rng(0))


def test_anchored_low_scheme_places_gaps_near_minus_one():
    layout = PartitionLayout.from_scheme(6, anchored_low=3)
    assert layout.num_bins == 6
    assert sum(1 for e in layout.edges if -1.0 <= e <= -0.5) >= 2
    assert layout.edges[:3] == pytest.approx((-0.95, -0.9, -0.85))


def test_layout_validation():
    with pytest.raises(LayoutError):
        PartitionLayout((0.2, 0.1))
    with pytest.raises(LayoutError):
        PartitionLayout((1.0,))
    with pytest.raises(LayoutError):
        PartitionLayout.from_scheme(3, anchored_low=2, anchored_high=1)


def test_layout_edge_value_goes_to_upper_bin():
    layout = PartitionLayout((0.0,))
    assert layout.bin_of(0.0) == 1 and layout.bin_of(-1e-12) == 0


@pytest.mark.parametrize("heaps", [5, 10, 15, 20])
def test_default_layouts_are_valid(heaps):
    layout = PartitionLayout.for_heaps(heaps)
    assert layout.num_bins == heaps
    assert all(-1 < e < 1 for e in layout.edges)


def test_fixed_layout_bins_follow_edges():
    layout = PartitionLayout((-0.5, 0.5))
    pool = scored_pool([-0.9, -0.5, 0.0, 0.5, 0.9], layout=layout)
    assert [sorted(r.pool_stat for r in b.records()) for b in pool.bins] == [[-0.9], [-0.5, 0.0], [0.5, 0.9]]


# -- snapshots ---------------------------------------------------------------------


def test_snapshot_round_trip(tmp_path):
    pool = scored_pool([-0.4, 0.2, 0.7], capacity=5)
    pool.insert_cold(rec(9))
    path = tmp_path / "pool.jsonl"
    pool.save(path)
    again = PromptPool.load(path, capacity=5)
    assert [r.to_dict() for r in again.iter_records()] == [r.to_dict() for r in pool.iter_records()]
    assert list(again.cold) == [9]
    assert low_stats(again) == low_stats(pool)
    path2 = tmp_path / "pool2.jsonl"
    again.save(path2)
    assert path.read_bytes() == path2.read_bytes()


def test_from_records_rejects_archived_state():
    r = rec(1, 0.2)
    r.state = RecordState.ARCHIVED
    with pytest.raises(ValueError):
        PromptPool.from_records([r])


def test_pool_constructor_validation():
    with pytest.raises(ValueError):
        PromptPool(capacity=0)
    with pytest.raises(ValueError):
        PromptPool(capacity=5, alpha=1.0)
    with pytest.raises(ValueError):
        PromptPool(capacity=5, mix_easy_fraction=1.0)
