"""Query records, their lifecycle states, and the JSONL snapshot format."""

from __future__ import annotations

import enum
import json
import math
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .errors import SnapshotError

D_MIN = 0.75
D_MAX = 1.33

SNAPSHOT_KEYS = (
    "id",
    "prompt",
    "answer",
    "pool_stat",
    "difficulty",
    "parent_id",
    "state",
    "times_trained",
)
# Simulator-only extension; written only when set.
LATENT_KEY = "latent_difficulty"


class RecordState(str, enum.Enum):
    COLD = "cold"
    SCORED = "scored"
    SAMPLED = "sampled"
    ARCHIVED = "archived"
    PENDING = "pending"


@dataclass(slots=True)
class QueryRecord:
    id: int
    prompt: str
    answer: str
    pool_stat: float | None = None
    difficulty: float = 1.0
    parent_id: int | None = None
    state: RecordState = RecordState.COLD
    times_trained: int = 0
    last_group_mean: float | None = None
    # partition index while SCORED; rebuilt from pool_stat on load
    bin: int | None = None
    latent_difficulty: float | None = None

    def sort_key(self) -> tuple[float, int]:
        return (self.pool_stat, self.id)  # type: ignore[return-value]

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "id": self.id,
            "prompt": self.prompt,
            "answer": self.answer,
            "pool_stat": self.pool_stat,
            "difficulty": self.difficulty,
            "parent_id": self.parent_id,
            "state": self.state.value,
            "times_trained": self.times_trained,
        }
        if self.latent_difficulty is not None:
            out[LATENT_KEY] = self.latent_difficulty
        return out

    def copy(self) -> QueryRecord:
        return QueryRecord(
            self.id,
            self.prompt,
            self.answer,
            self.pool_stat,
            self.difficulty,
            self.parent_id,
            self.state,
            self.times_trained,
            self.last_group_mean,
            self.bin,
            self.latent_difficulty,
        )


def record_from_dict(data: Any, line_no: int = 0) -> QueryRecord:
    if not isinstance(data, dict):
        raise SnapshotError(line_no, "expected a JSON object")
    missing = [k for k in SNAPSHOT_KEYS if k not in data]
    if missing:
        raise SnapshotError(line_no, f"missing keys {missing}")
    extra = set(data) - set(SNAPSHOT_KEYS) - {LATENT_KEY}
    if extra:
        raise SnapshotError(line_no, f"unexpected keys {sorted(extra)}")

    def _int(name: str, allow_none: bool = False) -> int | None:
        value = data[name]
        if value is None and allow_none:
            return None
        if isinstance(value, bool) or not isinstance(value, int):
            raise SnapshotError(line_no, f"{name} must be an integer")
        return value

    def _real(name: str, allow_none: bool = False) -> float | None:
        value = data.get(name)
        if value is None and allow_none:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise SnapshotError(line_no, f"{name} must be a finite number")
        return float(value)

    if not isinstance(data["prompt"], str) or not isinstance(data["answer"], str):
        raise SnapshotError(line_no, "prompt and answer must be strings")
    try:
        state = RecordState(data["state"])
    except ValueError:
        raise SnapshotError(line_no, f"unknown state {data['state']!r}") from None

    rec = QueryRecord(
        id=_int("id"),
        prompt=data["prompt"],
        answer=data["answer"],
        pool_stat=_real("pool_stat", allow_none=True),
        difficulty=_real("difficulty"),
        parent_id=_int("parent_id", allow_none=True),
        state=state,
        times_trained=_int("times_trained"),
        latent_difficulty=_real(LATENT_KEY, allow_none=True),
    )
    if rec.pool_stat is not None and not -1.0 <= rec.pool_stat <= 1.0:
        raise SnapshotError(line_no, "pool_stat outside [-1, 1]")
    if not D_MIN <= rec.difficulty <= D_MAX:
        raise SnapshotError(line_no, "difficulty outside clamp range")
    if rec.parent_id is not None and rec.parent_id >= rec.id:
        raise SnapshotError(line_no, "parent_id must be smaller than id")
    if state in (RecordState.SCORED, RecordState.ARCHIVED) and rec.pool_stat is None:
        raise SnapshotError(line_no, f"{state.value} record without pool_stat")
    if state in (RecordState.COLD, RecordState.PENDING) and rec.pool_stat is not None:
        raise SnapshotError(line_no, f"{state.value} record with pool_stat")
    if rec.times_trained < 0:
        raise SnapshotError(line_no, "times_trained must be >= 0")
    return rec


def dumps_records(records: Iterable[QueryRecord]) -> str:
    return "".join(json.dumps(r.to_dict(), ensure_ascii=False) + "\n" for r in records)


def write_jsonl(records: Iterable[QueryRecord], path: str | Path) -> None:
    Path(path).write_text(dumps_records(records), encoding="utf-8")


def read_jsonl(path: str | Path) -> list[QueryRecord]:
    out: list[QueryRecord] = []
    seen: set[int] = set()
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SnapshotError(line_no, f"invalid JSON ({exc.msg})") from None
            rec = record_from_dict(data, line_no)
            if rec.id in seen:
                raise SnapshotError(line_no, f"duplicate id {rec.id}")
            seen.add(rec.id)
            out.append(rec)
    return out
