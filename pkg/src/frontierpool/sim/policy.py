"""Item-response policy and synthetic arithmetic queries.

A query with latent difficulty ``b`` is solved with probability
``sigmoid(slope * (ability - b))``; independently, each rollout is invalid
(reward -1) with probability ``invalid_rate``.
"""

from __future__ import annotations

import ast
import operator
import re
from dataclasses import dataclass

import numpy as np

from ..grouprl import RolloutGroup, make_group
from ..textproto import render_augment_output

_ITEM_RE = re.compile(r"\ACompute (.+)\.\Z")
_NUM_RE = re.compile(r"\d+")
_SIMPLE_RE = re.compile(r"([1-9]\d*) \* ([1-9]\d*) ([+-]) ([1-9]\d*)")
_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul}


@dataclass
class SyntheticPolicy:
    ability: float = 0.0
    slope: float = 3.0
    invalid_rate: float = 0.02
    ability_gain: float = 0.004

    def solve_prob(self, difficulty):
        # logistic written through tanh, which cannot overflow for far-off items
        return 0.5 + 0.5 * np.tanh(0.5 * self.slope * (self.ability - np.asarray(difficulty, dtype=float)))

    def expected_reward(self, difficulty):
        """Mean verifier reward under this policy (invalid = -1, wrong = 0, right = 1)."""
        p = self.solve_prob(difficulty)
        return (1.0 - self.invalid_rate) * p - self.invalid_rate

    def rollout_rewards(self, difficulties: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
        """Reward matrix of shape (len(difficulties), n)."""
        p = self.solve_prob(difficulties)[:, None]
        shape = (len(difficulties), n)
        invalid = rng.random(shape) < self.invalid_rate
        correct = rng.random(shape) < p
        return np.where(invalid, -1, correct.astype(np.int64))

    def learn(self, mean_abs_advantage: float) -> None:
        self.ability += self.ability_gain * mean_abs_advantage


def simulate_group(
    policy: SyntheticPolicy,
    difficulty: float,
    n: int,
    rng: np.random.Generator,
    query_id: int | None = None,
) -> RolloutGroup:
    if n < 2:
        raise ValueError("group size must be >= 2")
    rewards = policy.rollout_rewards(np.array([difficulty]), n, rng)[0]
    return make_group(rewards.tolist(), query_id)


# -- arithmetic items ---------------------------------------------------------


def make_item(rng: np.random.Generator) -> tuple[str, str]:
    a, b, c = (int(x) for x in rng.integers(2, 60, size=3))
    op = "+" if rng.random() < 0.5 else "-"
    expr = f"{a} * {b} {op} {c}"
    return f"Compute {expr}.", str(a * b + c if op == "+" else a * b - c)


def _eval(node: ast.AST) -> int:
    if isinstance(node, ast.Expression):
        return _eval(node.body)
    if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
        return _OPS[type(node.op)](_eval(node.left), _eval(node.right))
    if isinstance(node, ast.Constant) and type(node.value) is int:
        return node.value
    raise ValueError("unsupported expression")


def solve_item(problem: str) -> str | None:
    """Exact answer of a well-formed arithmetic item, or None."""
    m = _ITEM_RE.match(problem.strip())
    if not m:
        return None
    fast = _SIMPLE_RE.fullmatch(m.group(1))
    if fast:  # the shape make_item and perturb_item produce
        a, b, op, c = fast.groups()
        ab = int(a) * int(b)
        return str(ab + int(c) if op == "+" else ab - int(c))
    try:
        return str(_eval(ast.parse(m.group(1), mode="eval")))
    except (SyntaxError, ValueError):
        return None


def perturb_item(problem: str, rng: np.random.Generator) -> str:
    """Shift every constant by a small nonzero amount, keeping it positive."""

    def shift(m: re.Match) -> str:
        v = int(m.group(0))
        delta = int(rng.integers(1, 4)) * (1 if rng.random() < 0.5 else -1)
        return str(v + delta if v + delta >= 1 else v - delta)

    return _NUM_RE.sub(shift, problem)


_WRAPPERS = (
    lambda s: f"Question: {s}",
    lambda s: f"Assistant: {s}",
    lambda s: f"```\n{s}\n```",
    lambda s: f"{s}\nAnswer: 0",
)


def _malformed(original: str, new: str, diff: float, rng: np.random.Generator) -> str:
    kind = int(rng.integers(0, 3))
    text = render_augment_output(original, new, diff)
    if kind == 0:
        return text.replace("<END>", "")
    if kind == 1:
        return render_augment_output(original, "  ", diff)
    return text.replace(f"\n{diff!r}\n", "\nabout one\n")


def synth_augment(
    parent_problem: str,
    parent_difficulty: float,
    n_aug: int,
    rng: np.random.Generator,
    diff_low: float = 0.9,
    diff_high: float = 1.3,
    malformed_fraction: float = 0.0,
    wrapper_fraction: float = 0.0,
) -> list[tuple[str, float]]:
    """Raw augmentation outputs in the tagged layout, each with the child's latent difficulty.

    The child's latent difficulty is the parent's scaled by the emitted
    relative-difficulty value.
    """
    if n_aug < 1:
        raise ValueError("n_aug must be >= 1")
    out = []
    for _ in range(n_aug):
        new = perturb_item(parent_problem, rng)
        diff = round(float(rng.uniform(diff_low, diff_high)), 3)
        if rng.random() < wrapper_fraction:
            new = _WRAPPERS[int(rng.integers(0, len(_WRAPPERS)))](new)
        if rng.random() < malformed_fraction:
            text = _malformed(parent_problem, new, diff, rng)
        else:
            text = render_augment_output(parent_problem, new, diff)
        out.append((text, parent_difficulty * diff))
    return out
