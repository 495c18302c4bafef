"""Run metrics and the frozen-policy reward landscape of a sampler."""

from __future__ import annotations

import csv
import io
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from ..pool import SAMPLERS, PromptPool, Sampler, estimate_sampling_distribution
from ..records import QueryRecord, RecordState
from .loop import RunLog
from .policy import SyntheticPolicy, make_item

DEFAULT_BANDS = (-1.0, 0.0, 0.25, 0.5, 0.75, 1.0)


def moving_average(values: Sequence[float | None], window: int) -> list[float | None]:
    """Trailing mean over up to ``window`` points; skipped entries (None) are ignored."""
    out: list[float | None] = []
    buf: list[float] = []
    for v in values:
        if v is not None:
            buf.append(v)
            if len(buf) > window:
                buf.pop(0)
        out.append(sum(buf) / len(buf) if buf else None)
    return out


def steps_to_target(
    run_log: RunLog,
    target: float,
    metric: str = "train_reward",
    window: int | None = None,
) -> int | None:
    """First step whose moving-average metric reaches ``target``; None if never."""
    w = window or run_log.config.run.target_window
    for step, v in enumerate(moving_average(run_log.series(metric), w)):
        if v is not None and v >= target:
            return step
    return None


def compute_to_target(
    run_log: RunLog,
    target: float,
    metric: str = "train_reward",
    window: int | None = None,
) -> int | None:
    """Rollout tokens spent up to and including the step that reaches ``target``."""
    step = steps_to_target(run_log, target, metric, window)
    if step is None:
        return None
    return run_log.steps[step]["rollouts"] * run_log.config.cost.tokens_per_rollout


# -- frozen landscape -----------------------------------------------------------


@dataclass
class Landscape:
    """Frozen mean rewards of every sampled query, one entry per draw."""

    rewards: np.ndarray
    bands: tuple[float, ...] = DEFAULT_BANDS
    skipped: int = 0

    @property
    def total(self) -> int:
        return int(self.rewards.size)

    def mass_in(self, lo: float, hi: float) -> float:
        """Fraction of draws with frozen reward in the closed interval [lo, hi]."""
        if not self.total:
            return 0.0
        return float(np.count_nonzero((self.rewards >= lo) & (self.rewards <= hi))) / self.total

    def histogram(self) -> list[tuple[float, float, float]]:
        """``(band_low, band_high, mass)`` rows; bands are half-open except the last."""
        edges = np.asarray(self.bands, dtype=float)
        counts = np.zeros(len(edges) - 1, dtype=np.int64)
        if self.total:
            idx = np.searchsorted(edges, self.rewards, side="right") - 1
            idx = np.clip(idx, 0, len(counts) - 1)
            inside = (self.rewards >= edges[0]) & (self.rewards <= edges[-1])
            counts = np.bincount(idx[inside], minlength=len(counts))
        total = max(self.total, 1)
        return [(float(edges[i]), float(edges[i + 1]), float(counts[i]) / total) for i in range(len(counts))]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["band_low", "band_high", "mass"])
        for lo, hi, m in self.histogram():
            w.writerow([repr(lo), repr(hi), repr(m)])
        return buf.getvalue()


def frozen_reward(record: QueryRecord, policy: SyntheticPolicy | None) -> float | None:
    """Exact expected reward when the latent difficulty is known, else the stored statistic."""
    if policy is not None and record.latent_difficulty is not None:
        return float(policy.expected_reward(record.latent_difficulty))
    return record.pool_stat


def frozen_landscape_eval(
    pool: PromptPool,
    policy: SyntheticPolicy | None,
    sampler: Sampler | str,
    trials: int,
    rng: np.random.Generator,
    batch_size: int = 64,
    bands: Sequence[float] = DEFAULT_BANDS,
) -> Landscape:
    """Sample ``trials`` batches from fresh copies of ``pool`` and collect frozen rewards."""
    if isinstance(sampler, str):
        sampler = SAMPLERS[sampler]
    batch_size = min(batch_size, len(pool))
    counts = estimate_sampling_distribution(pool, batch_size, trials, rng, sampler)
    values, weights, skipped = [], [], 0
    for rid in sorted(counts):
        r = frozen_reward(pool.records[rid], policy)
        if r is None:
            skipped += counts[rid]
            continue
        values.append(r)
        weights.append(counts[rid])
    rewards = np.repeat(np.asarray(values, dtype=float), np.asarray(weights, dtype=np.int64))
    return Landscape(rewards, tuple(float(b) for b in bands), skipped)


def frozen_pool(
    num: int,
    policy: SyntheticPolicy,
    rng: np.random.Generator,
    difficulty_low: float,
    difficulty_high: float,
    group_size: int = 16,
    alpha: float = 0.5,
    layout=None,
) -> PromptPool:
    """Scored pool with uniform latent difficulty; statistics are one simulated group mean each."""
    latents = rng.uniform(difficulty_low, difficulty_high, size=num)
    rewards = policy.rollout_rewards(latents, group_size, rng)
    records = []
    for i, b in enumerate(latents.tolist()):
        prompt, answer = make_item(rng)
        records.append(
            QueryRecord(
                i,
                prompt,
                answer,
                pool_stat=float(rewards[i].mean()),
                state=RecordState.SCORED,
                latent_difficulty=b,
            )
        )
    return PromptPool.from_records(records, capacity=num, alpha=alpha, layout=layout)
