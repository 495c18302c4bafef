"""Run configuration: nested sections addressed by dotted keys.

The on-disk format is one ``section.key = <json value>`` per line; blank
lines and ``#`` comments are ignored. Command-line flags use the same
dotted names.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ..errors import ConfigInvalid

FORMAT_VERSION = "frontierpool-run/1"
SAMPLERS = ("uniform", "prioritized", "boundary", "multiheap")
AGGREGATIONS = ("child", "path", "softmax")


@dataclass
class PoolConfig:
    capacity: int = 10_000
    alpha: float = 0.5
    mix_easy_fraction: float = 0.0
    sampler: str = "boundary"
    heaps: int = 2
    # None -> per-H defaults from the layout table
    anchored_low: int | None = None
    anchored_high: int | None = None


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 64
    group_size: int = 16
    ema_coeff: float = 1.0


@dataclass
class RecycleConfig:
    enabled: bool = True
    # None -> 2 * batch_size and batch_size
    size_threshold: int | None = None
    reinsert_batch_size: int | None = None


@dataclass
class LineageConfig:
    refresh: bool = True
    aggregation: str = "path"
    temperature: float = 1.0


@dataclass
class PolicyConfig:
    ability: float = 2.5
    slope: float = 3.0
    invalid_rate: float = 0.02
    ability_gain: float = 0.004


@dataclass
class DataConfig:
    num_seeds: int = 2000
    difficulty_low: float = 0.5
    difficulty_high: float = 4.5
    num_eval: int = 500


@dataclass
class AugmentConfig:
    enabled: bool = True
    n_aug: int = 2
    every_k_steps: int = 1
    diff_low: float = 0.9
    diff_high: float = 1.3
    malformed_fraction: float = 0.05
    wrapper_fraction: float = 0.1


@dataclass
class TeacherConfig:
    latency_steps: int = 3
    accept_rate: float = 0.9
    error_rate: float = 0.0


@dataclass
class CostConfig:
    rollout_ms: float = 1.0
    tokens_per_rollout: int = 1024


@dataclass
class RunSection:
    seed: int = 0
    target_window: int = 20
    targets: list[float] = field(default_factory=lambda: [0.5, 0.6, 0.7, 0.8])
    log_groups: bool = True
    check_invariants: bool = False
    warm_start: bool = False


@dataclass
class RunConfig:
    pool: PoolConfig = field(default_factory=PoolConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    recycle: RecycleConfig = field(default_factory=RecycleConfig)
    lineage: LineageConfig = field(default_factory=LineageConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    data: DataConfig = field(default_factory=DataConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    cost: CostConfig = field(default_factory=CostConfig)
    run: RunSection = field(default_factory=RunSection)

    # -- resolved defaults ---------------------------------------------------

    @property
    def size_threshold(self) -> int:
        return self.recycle.size_threshold or 2 * self.train.batch_size

    @property
    def reinsert_batch_size(self) -> int:
        return self.recycle.reinsert_batch_size or self.train.batch_size

    # -- flat view -------------------------------------------------------------

    def flat(self) -> dict[str, Any]:
        out = {}
        for sec in dataclasses.fields(self):
            section = getattr(self, sec.name)
            for f in dataclasses.fields(section):
                out[f"{sec.name}.{f.name}"] = getattr(section, f.name)
        return out

    def set(self, key: str, value: Any) -> None:
        sec, _, name = key.partition(".")
        section = getattr(self, sec, None)
        if section is None or not dataclasses.is_dataclass(section) or name not in {
            f.name for f in dataclasses.fields(section)
        }:
            raise ConfigInvalid(key, "unknown config key")
        setattr(section, name, value)

    def replace(self, **updates: Any) -> RunConfig:
        """Copy with dotted-key updates, e.g. ``replace(**{"pool.sampler": "uniform"})``."""
        out = RunConfig.from_flat(self.flat())
        for key, value in updates.items():
            out.set(key, value)
        return out

    @classmethod
    def from_flat(cls, values: dict[str, Any]) -> RunConfig:
        cfg = cls()
        for key, value in values.items():
            cfg.set(key, list(value) if isinstance(value, list) else value)
        return cfg

    def dumps(self) -> str:
        return "".join(f"{k} = {json.dumps(v)}\n" for k, v in self.flat().items())

    @classmethod
    def loads(cls, text: str) -> RunConfig:
        cfg = cls()
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigInvalid(f"line {line_no}", "expected 'key = value'")
            try:
                parsed = json.loads(value.strip())
            except json.JSONDecodeError:
                raise ConfigInvalid(key.strip(), f"value on line {line_no} is not JSON") from None
            cfg.set(key.strip(), parsed)
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        return cls.loads(Path(path).read_text(encoding="utf-8"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    # -- validation ------------------------------------------------------------

    def validate(self) -> RunConfig:
        defaults = RunConfig().flat()
        for key, value in self.flat().items():
            ref = defaults[key]
            if value is None:
                if ref is None:
                    continue
                raise ConfigInvalid(key, "must not be null")
            if isinstance(ref, bool) and not isinstance(value, bool):
                raise ConfigInvalid(key, "expected true or false")
            if isinstance(ref, int) and not isinstance(ref, bool) and (
                isinstance(value, bool) or not isinstance(value, int)
            ):
                raise ConfigInvalid(key, "expected an integer")
            if isinstance(ref, float) and (isinstance(value, bool) or not isinstance(value, (int, float))):
                raise ConfigInvalid(key, "expected a number")
            if ref is None and key.endswith(("anchored_low", "anchored_high", "size_threshold", "reinsert_batch_size")):
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ConfigInvalid(key, "expected an integer or null")

        def need(cond: bool, key: str, msg: str) -> None:
            if not cond:
                raise ConfigInvalid(key, msg)

        p, t, pol = self.pool, self.train, self.policy
        need(p.capacity >= 1, "pool.capacity", "must be >= 1")
        need(0.0 < p.alpha < 1.0, "pool.alpha", "must lie in (0, 1)")
        need(0.0 <= p.mix_easy_fraction < 1.0, "pool.mix_easy_fraction", "must lie in [0, 1)")
        need(p.sampler in SAMPLERS, "pool.sampler", f"must be one of {SAMPLERS}")
        need(p.heaps >= 2, "pool.heaps", "must be >= 2")
        need(p.sampler == "multiheap" or p.heaps == 2, "pool.heaps", "only the multiheap sampler takes heaps > 2")
        for key in ("anchored_low", "anchored_high"):
            v = getattr(p, key)
            need(v is None or v >= 0, f"pool.{key}", "must be >= 0")
        need(t.steps >= 1, "train.steps", "must be >= 1")
        need(t.batch_size >= 1, "train.batch_size", "must be >= 1")
        need(t.batch_size <= p.capacity, "train.batch_size", "must not exceed pool.capacity")
        need(t.group_size >= 2, "train.group_size", "must be >= 2")
        need(0.0 <= t.ema_coeff <= 1.0, "train.ema_coeff", "must lie in [0, 1]")
        for key in ("size_threshold", "reinsert_batch_size"):
            v = getattr(self.recycle, key)
            need(v is None or v >= 1, f"recycle.{key}", "must be >= 1")
        need(self.lineage.aggregation in AGGREGATIONS, "lineage.aggregation", f"must be one of {AGGREGATIONS}")
        need(self.lineage.temperature > 0, "lineage.temperature", "must be > 0")
        need(pol.slope > 0, "policy.slope", "must be > 0")
        need(0.0 <= pol.invalid_rate <= 1.0, "policy.invalid_rate", "must lie in [0, 1]")
        need(pol.ability_gain >= 0, "policy.ability_gain", "must be >= 0")
        d = self.data
        need(d.num_seeds >= 1, "data.num_seeds", "must be >= 1")
        need(d.difficulty_low > 0, "data.difficulty_low", "must be > 0")
        need(d.difficulty_low <= d.difficulty_high, "data.difficulty_high", "must be >= data.difficulty_low")
        need(d.num_eval >= 1, "data.num_eval", "must be >= 1")
        a = self.augment
        need(a.n_aug >= 1, "augment.n_aug", "must be >= 1")
        need(a.every_k_steps >= 1, "augment.every_k_steps", "must be >= 1")
        need(0.75 <= a.diff_low <= a.diff_high <= 1.33, "augment.diff_high", "need 0.75 <= diff_low <= diff_high <= 1.33")
        need(0.0 <= a.malformed_fraction <= 1.0, "augment.malformed_fraction", "must lie in [0, 1]")
        need(0.0 <= a.wrapper_fraction <= 1.0, "augment.wrapper_fraction", "must lie in [0, 1]")
        te = self.teacher
        need(te.latency_steps >= 0, "teacher.latency_steps", "must be >= 0")
        need(0.0 <= te.accept_rate <= 1.0, "teacher.accept_rate", "must lie in [0, 1]")
        need(0.0 <= te.error_rate <= 1.0, "teacher.error_rate", "must lie in [0, 1]")
        need(self.cost.rollout_ms >= 0, "cost.rollout_ms", "must be >= 0")
        need(self.cost.tokens_per_rollout >= 1, "cost.tokens_per_rollout", "must be >= 1")
        need(self.run.target_window >= 1, "run.target_window", "must be >= 1")
        need(
            isinstance(self.run.targets, list) and all(isinstance(x, (int, float)) for x in self.run.targets),
            "run.targets",
            "must be a list of numbers",
        )
        return self


def reference_scenario(**overrides: Any) -> RunConfig:
    """Desk-scale scenario used by the comparison experiments: the CI-scale defaults."""
    cfg = RunConfig()
    for key, value in overrides.items():
        cfg.set(key, value)
    return cfg.validate()
