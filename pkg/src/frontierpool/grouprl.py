"""Group-relative reward arithmetic: baselines, advantages, clipped surrogate terms."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import BadReward, DegenerateLikelihood

REWARDS = (-1, 0, 1)


@dataclass(frozen=True)
class RolloutGroup:
    query_id: int | None
    rewards: tuple[int, ...]
    baseline: float
    advantages: tuple[float, ...]

    @property
    def group_mean(self) -> float:
        return self.baseline

    @property
    def mean_abs_advantage(self) -> float:
        return sum(abs(a) for a in self.advantages) / len(self.advantages)

    @property
    def degenerate(self) -> bool:
        return all(a == 0.0 for a in self.advantages)

    def log_line(self, step: int, source: str) -> dict:
        return {
            "step": step,
            "query_id": self.query_id,
            "source": source,
            "rewards": list(self.rewards),
            "baseline": self.baseline,
            "advantages": list(self.advantages),
        }


def make_group(rewards: Sequence[int], query_id: int | None = None) -> RolloutGroup:
    rewards = tuple(rewards)
    if len(rewards) < 2:
        raise ValueError("a group needs at least two rollouts")
    if all(r.__class__ is int for r in rewards):
        bad = [r for r in rewards if r not in REWARDS]
    else:
        bad = [r for r in rewards if isinstance(r, bool) or r not in REWARDS]
        rewards = tuple(int(r) for r in rewards) if not bad else rewards
    if bad:
        raise BadReward(f"reward {bad[0]!r} not in {{-1, 0, 1}}")
    baseline = sum(rewards) / len(rewards)
    return RolloutGroup(query_id, rewards, baseline, tuple([r - baseline for r in rewards]))


def make_groups(rewards: np.ndarray, query_ids: Sequence[int | None]) -> list[RolloutGroup]:
    """``make_group`` over the rows of an integer reward matrix, validated in one pass."""
    m = np.asarray(rewards)
    if m.ndim != 2 or m.shape[0] != len(query_ids):
        raise ValueError("need one reward row per query id")
    if m.shape[1] < 2:
        raise ValueError("a group needs at least two rollouts")
    if m.size and (m.dtype.kind not in "iu" or not np.isin(m, REWARDS).all()):
        for row, qid in zip(m.tolist(), query_ids):
            make_group(row, qid)  # raises with the offending value
    baselines = m.sum(axis=1) / m.shape[1]
    advantages = (m - baselines[:, None]).tolist()
    return [
        RolloutGroup(qid, tuple(row), b, tuple(adv))
        for qid, row, b, adv in zip(query_ids, m.tolist(), baselines.tolist(), advantages)
    ]


@dataclass(frozen=True)
class ObjectiveTerm:
    ratio: float
    clipped_ratio: float
    advantage: float
    term_value: float
    epsilon: float


def clipped_term(p_new: float, p_old: float, advantage: float, epsilon: float) -> ObjectiveTerm:
    """One summand of the PPO-style clipped surrogate, from sequence likelihoods."""
    if p_old == 0:
        raise DegenerateLikelihood("old-policy likelihood is zero")
    if p_new <= 0 or p_old < 0:
        raise ValueError("likelihoods must be positive")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    ratio = p_new / p_old
    clipped = min(max(ratio, 1.0 - epsilon), 1.0 + epsilon)
    return ObjectiveTerm(ratio, clipped, advantage, min(ratio * advantage, clipped * advantage), epsilon)


def clipped_objective(terms: Sequence[ObjectiveTerm]) -> float:
    return sum(t.term_value for t in terms) / len(terms)


def pool_statistic_update(prev: float | None, group_mean: float, ema_coeff: float = 1.0) -> float:
    """Next pool statistic: the group mean, optionally averaged with the previous value."""
    if not -1.0 <= group_mean <= 1.0:
        raise ValueError("group mean outside [-1, 1]")
    if not 0.0 <= ema_coeff <= 1.0:
        raise ValueError("ema_coeff outside [0, 1]")
    if prev is None or ema_coeff == 1.0:
        return group_mean
    return ema_coeff * group_mean + (1.0 - ema_coeff) * prev
