"""Prompt templates and the strict parsers for rollout, augmentation and teacher text."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from enum import Enum
from functools import cache
from importlib import resources

from .errors import EmptyProblem, NonNumeric
from .lineage import clamp_difficulty

NUMBER_RE = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?")
ANSWER_PREFIX = "Answer:"
MAX_PROMPT_CHARS = 2048 * 4  # ~2,048 tokens at four characters per token

PROBLEM_MARK = "<PROBLEM_STATEMENT>"
ORIG_MARK = "<ORIGINAL_PROBLEM_TEXT_ONLY>"
TEACHER_ORIG_MARK = "<ORIGINAL>"
TEACHER_GEN_MARK = "<GENERATION>"

TAGS = ("<ORIG>", "<NEW>", "<DIFF>", "<END>")


@cache
def template(name: str) -> str:
    return resources.files("frontierpool").joinpath(f"templates/{name}.txt").read_text(encoding="utf-8")


def _fill(text: str, values: dict[str, str]) -> str:
    # single pass so substituted text is never re-scanned for markers
    pattern = re.compile("|".join(re.escape(k) for k in values))
    return pattern.sub(lambda m: values[m.group(0)], text)


def _require(text: str) -> str:
    if not text or not text.strip():
        raise EmptyProblem("problem text is empty")
    return text


def render_rollout_prompt(problem: str) -> str:
    return _fill(template("rollout"), {PROBLEM_MARK: _require(problem)})


def render_augment_prompt(original_problem: str) -> str:
    return _fill(template("augment"), {ORIG_MARK: _require(original_problem)})


def render_teacher_prompt(original: str, generation: str) -> str:
    return _fill(
        template("teacher"),
        {TEACHER_ORIG_MARK: _require(original), TEACHER_GEN_MARK: _require(generation)},
    )


# -- answers ---------------------------------------------------------------


def is_number(text: str) -> bool:
    return NUMBER_RE.fullmatch(text) is not None


def extract_final_answer(rollout_text: str) -> str | None:
    """Numeric string on the last non-empty line after ``Answer:``; None if invalid."""
    lines = [ln for ln in rollout_text.splitlines() if ln.strip()]
    if not lines:
        return None
    last = lines[-1].strip()
    if not last.startswith(ANSWER_PREFIX):
        return None
    value = last[len(ANSWER_PREFIX):].strip()
    return value if is_number(value) else None


def _decimal(text: str) -> Decimal:
    if not is_number(text.strip()):
        raise NonNumeric(f"not a number: {text!r}")
    try:
        return Decimal(text.strip())
    except InvalidOperation:  # pragma: no cover - regex already guards this
        raise NonNumeric(f"not a number: {text!r}") from None


def strict_match(pred: str, gold: str) -> bool:
    """Exact equality of the decimal values, so "42.0" matches "42"."""
    return _decimal(pred) == _decimal(gold)


def verify(rollout_text: str, gold: str) -> int:
    """Verifier reward: 1 exact match, 0 wrong answer, -1 no parsable answer line."""
    pred = extract_final_answer(rollout_text)
    if pred is None:
        return -1
    return 1 if strict_match(pred, gold) else 0


# -- augmentation output -----------------------------------------------------


class RejectReason(str, Enum):
    MISSING_TAG = "MissingTag"
    EMPTY_NEW = "EmptyNew"
    UNPARSEABLE_DIFF = "UnparseableDiff"
    MALFORMED_JSON = "MalformedJson"
    EXTRA_KEYS = "ExtraKeys"
    CASE_VIOLATION = "CaseViolation"
    NON_NUMERIC_ANSWER = "NonNumericAnswer"
    INCONSISTENT = "Inconsistent"


@dataclass(frozen=True)
class Reject:
    reason: RejectReason
    detail: str = ""

    def __bool__(self) -> bool:
        return False


@dataclass(frozen=True)
class AugmentCandidate:
    new_problem: str
    diff_raw: float
    diff: float
    parent_id: int | None = None


_FENCE_RE = re.compile(r"\A```[^\n]*\n(.*?)\n?```\Z", re.S)
_LEAD_RE = re.compile(r"\A(?:Question|Assistant):[ \t]*", re.I)
_TRAIL_ANSWER_RE = re.compile(r"\n[ \t]*Answer:.*\Z", re.S)


def strip_wrappers(text: str) -> str:
    """Remove code fences, leading Question:/Assistant: markers and a trailing Answer: block.

    Applied to a fixed point, so stripping twice changes nothing.
    """
    prev = None
    text = text.strip()
    while text != prev:
        prev = text
        m = _FENCE_RE.match(text)
        if m:
            text = m.group(1).strip()
        text = _LEAD_RE.sub("", text).strip()
        text = _TRAIL_ANSWER_RE.sub("", text).strip()
    return text


def render_augment_output(original: str, new_problem: str, diff: float) -> str:
    """Text in the exact tagged layout the augmentation prompt asks for."""
    return f"<ORIG>\n{original}\n\n<NEW>\n{new_problem}\n\n<DIFF>\n{diff!r}\n\n<END>\n"


def parse_augment_output(text: str, parent_id: int | None = None) -> AugmentCandidate | Reject:
    positions = []
    for tag in TAGS:
        if text.count(tag) != 1:
            return Reject(RejectReason.MISSING_TAG, tag)
        positions.append(text.index(tag))
    if positions != sorted(positions):
        return Reject(RejectReason.MISSING_TAG, "tags out of order")
    new_body = text[positions[1] + len("<NEW>"):positions[2]]
    diff_body = text[positions[2] + len("<DIFF>"):positions[3]].strip()
    new_problem = strip_wrappers(new_body)
    if not new_problem:
        return Reject(RejectReason.EMPTY_NEW)
    if not is_number(diff_body):
        return Reject(RejectReason.UNPARSEABLE_DIFF, diff_body[:40])
    diff_raw = float(diff_body)
    return AugmentCandidate(new_problem, diff_raw, clamp_difficulty(diff_raw), parent_id)


def passes_dataset_filters(problem: str, answer: str) -> bool:
    return 0 < len(problem) <= MAX_PROMPT_CHARS and is_number(answer)


# -- teacher verdicts --------------------------------------------------------


@dataclass(frozen=True)
class TeacherVerdict:
    solvable: bool
    answer: str | None = None


_LITERAL_RE = re.compile(r'"(?:[^"\\]|\\.)*"|\b(true|false|null)\b', re.I)


def _case_violation(line: str) -> bool:
    for m in _LITERAL_RE.finditer(line):
        word = m.group(1)
        if word is not None and word != word.lower():
            return True
    return False


def _no_duplicates(pairs):
    keys = [k for k, _ in pairs]
    if len(keys) != len(set(keys)):
        raise ValueError("duplicate key")
    return dict(pairs)


def render_teacher_json(verdict: TeacherVerdict) -> str:
    return json.dumps({"solvable": verdict.solvable, "answer": verdict.answer}, separators=(",", ":"))


def parse_teacher_json(line: str) -> TeacherVerdict | Reject:
    """Accept exactly one single-line object ``{"solvable": bool, "answer": str|null}``."""
    body = line[:-1] if line.endswith("\n") else line
    if "\n" in body or "\r" in body:
        return Reject(RejectReason.MALFORMED_JSON, "not a single line")
    if _case_violation(body):
        return Reject(RejectReason.CASE_VIOLATION)
    try:
        data = json.loads(body, object_pairs_hook=_no_duplicates)
    except ValueError as exc:
        return Reject(RejectReason.MALFORMED_JSON, str(exc)[:60])
    if not isinstance(data, dict):
        return Reject(RejectReason.MALFORMED_JSON, "not an object")
    if set(data) - {"solvable", "answer"}:
        return Reject(RejectReason.EXTRA_KEYS, ",".join(sorted(set(data) - {"solvable", "answer"})))
    if set(data) != {"solvable", "answer"}:
        return Reject(RejectReason.MALFORMED_JSON, "missing key")
    solvable, answer = data["solvable"], data["answer"]
    if not isinstance(solvable, bool):
        return Reject(RejectReason.MALFORMED_JSON, "solvable must be true or false")
    if not solvable:
        if answer is not None:
            return Reject(RejectReason.INCONSISTENT, "unsolvable with an answer")
        return TeacherVerdict(False, None)
    if answer is None:
        return Reject(RejectReason.INCONSISTENT, "solvable without an answer")
    if not isinstance(answer, str) or not is_number(answer):
        return Reject(RejectReason.NON_NUMERIC_ANSWER, repr(answer)[:40])
    return TeacherVerdict(True, answer)
