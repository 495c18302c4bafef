from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from frontierpool.errors import EmptyProblem, NonNumeric
from frontierpool.textproto import (
    AugmentCandidate,
    Reject,
    RejectReason,
    TeacherVerdict,
    extract_final_answer,
    parse_augment_output,
    parse_teacher_json,
    passes_dataset_filters,
    render_augment_output,
    render_augment_prompt,
    render_rollout_prompt,
    render_teacher_json,
    render_teacher_prompt,
    strict_match,
    strip_wrappers,
    verify,
)

from .golden_cases import GOLDEN_INPUTS, TEACHER_ACCEPT, VERIFIER_CASES, golden_path, teacher_mutations

# printable problem text without the template markers or tag sentinels
problem_text = st.text(
    alphabet=st.characters(codec="utf-8", categories=("L", "N", "P", "Zs"), exclude_characters="<>`"),
    min_size=1,
    max_size=200,
).filter(lambda s: s.strip() and not s.strip().lower().startswith(("question:", "assistant:")))


# -- rendering -----------------------------------------------------------------------


def test_rollout_prompt_keeps_answer_line():
    assert "Answer: $Answer (without quotes)" in render_rollout_prompt("2+2=?")


def test_render_is_deterministic():
    assert render_rollout_prompt("2+2=?") == render_rollout_prompt("2+2=?")
    assert render_augment_prompt("x") == render_augment_prompt("x")


@pytest.mark.parametrize("render", [render_rollout_prompt, render_augment_prompt])
@pytest.mark.parametrize("empty", ["", "   \n"])
def test_empty_problem_rejected(render, empty):
    with pytest.raises(EmptyProblem):
        render(empty)


def test_teacher_prompt_rejects_empty_generation():
    with pytest.raises(EmptyProblem):
        render_teacher_prompt("orig", "")


def test_augment_prompt_ends_with_end_section():
    assert render_augment_prompt("Compute 3 + 4.").rstrip().endswith("<END>")


def test_teacher_prompt_orders_sections():
    text = render_teacher_prompt("first text", "second text")
    assert text.index("ORIGINAL:") < text.index("GENERATION:")
    assert text.index("first text") < text.index("second text")


@pytest.mark.parametrize("name", ["rollout", "augment"])
def test_renders_match_golden_files(name):
    render = {"rollout": render_rollout_prompt, "augment": render_augment_prompt}[name]
    assert render(GOLDEN_INPUTS[name]).encode() == golden_path(name).read_bytes()


def test_teacher_render_matches_golden_file():
    assert render_teacher_prompt(*GOLDEN_INPUTS["teacher"]).encode() == golden_path("teacher").read_bytes()


def test_substituted_text_is_not_rescanned():
    text = render_teacher_prompt("<GENERATION>", "gen")
    assert text.count("gen") >= 1 and "<GENERATION>" in text


# -- answers and verifier ---------------------------------------------------------


def test_extract_answer_after_steps():
    assert extract_final_answer("...steps...\nAnswer: 42") == "42"


def test_no_answer_line_is_invalid():
    assert extract_final_answer("I think it is 42") is None
    assert verify("I think it is 42", "42") == -1


def test_trailing_blank_lines_ignored():
    assert extract_final_answer("Answer: 42\n\n") == "42"


@pytest.mark.parametrize("pred, gold, want", [("42", "42", True), ("42.0", "42", True), ("41", "42", False)])
def test_strict_match_examples(pred, gold, want):
    assert strict_match(pred, gold) is want


def test_strict_match_rejects_non_numeric():
    with pytest.raises(NonNumeric):
        strict_match("forty-two", "42")


@pytest.mark.parametrize("text, gold, want", VERIFIER_CASES)
def test_verifier_cases(text, gold, want):
    assert verify(text, gold) == want


@given(n=st.integers(-10**12, 10**12), pad=st.text(alphabet=" \n", max_size=4))
def test_integer_answers_round_trip(n, pad):
    assert verify(f"work\nAnswer: {n}{pad}", str(n)) == 1
    assert verify(f"work\nAnswer: {n + 1}", str(n)) == 0


# -- augmentation output ------------------------------------------------------------


def test_parse_well_formed_candidate():
    got = parse_augment_output(render_augment_output("old", "Compute 5 * 6.", 1.1), parent_id=3)
    assert got == AugmentCandidate("Compute 5 * 6.", 1.1, 1.1, 3)


def test_diff_is_clamped():
    got = parse_augment_output(render_augment_output("old", "new", 2.0))
    assert got.diff_raw == 2.0 and got.diff == 1.33


def test_missing_end_tag_rejected():
    text = render_augment_output("old", "new", 1.0).replace("<END>", "")
    got = parse_augment_output(text)
    assert isinstance(got, Reject) and got.reason is RejectReason.MISSING_TAG
    assert not got


@pytest.mark.parametrize(
    "text, reason",
    [
        ("<ORIG>\na\n<NEW>\n\n<DIFF>\n1.0\n<END>", RejectReason.EMPTY_NEW),
        ("<ORIG>\na\n<NEW>\nb\n<DIFF>\nhard\n<END>", RejectReason.UNPARSEABLE_DIFF),
        ("<NEW>\nb\n<ORIG>\na\n<DIFF>\n1.0\n<END>", RejectReason.MISSING_TAG),
        ("<ORIG>\na\n<NEW>\nb\n<NEW>\nc\n<DIFF>\n1.0\n<END>", RejectReason.MISSING_TAG),
    ],
)
def test_augment_rejects(text, reason):
    got = parse_augment_output(text)
    assert isinstance(got, Reject) and got.reason is reason


def test_wrappers_are_stripped_from_new_problem():
    body = "```\nQuestion: Compute 2 + 3.\nAnswer: 5\n```"
    got = parse_augment_output(render_augment_output("old", body, 0.9))
    assert got.new_problem == "Compute 2 + 3."


@given(text=st.text(alphabet=st.sampled_from(list("ab \n`QuestionAswr:")), max_size=60))
def test_strip_is_idempotent(text):
    once = strip_wrappers(text)
    assert strip_wrappers(once) == once


@given(new=problem_text, diff=st.floats(0.75, 1.33))
def test_augment_round_trip(new, diff):
    got = parse_augment_output(render_augment_output("orig", new, diff))
    assert got.new_problem == new.strip()
    assert got.diff_raw == diff and got.diff == diff


def test_dataset_filters():
    assert passes_dataset_filters("Compute 1 + 1.", "2")
    assert not passes_dataset_filters("", "2")
    assert not passes_dataset_filters("x" * (2048 * 4 + 1), "2")
    assert not passes_dataset_filters("Compute 1 + 1.", "two")


# -- teacher JSON -----------------------------------------------------------------------


def test_teacher_examples():
    assert parse_teacher_json('{"solvable":true,"answer":"7"}') == TeacherVerdict(True, "7")
    assert parse_teacher_json('{"solvable":false,"answer":null}') == TeacherVerdict(False, None)
    got = parse_teacher_json('{"solvable":true,"answer":"seven"}')
    assert isinstance(got, Reject) and got.reason is RejectReason.NON_NUMERIC_ANSWER


@pytest.mark.parametrize(
    "line, reason",
    [
        ('{"solvable":true,"answer":"7","why":"x"}', RejectReason.EXTRA_KEYS),
        ('{"solvable":True,"answer":"7"}', RejectReason.CASE_VIOLATION),
        ('{"solvable":true,"answer":null}', RejectReason.INCONSISTENT),
        ('{"solvable":false,"answer":"7"}', RejectReason.INCONSISTENT),
        ('{"solvable":true,\n"answer":"7"}', RejectReason.MALFORMED_JSON),
        ('{"solvable":true}', RejectReason.MALFORMED_JSON),
        ('{"solvable":"true","answer":"7"}', RejectReason.MALFORMED_JSON),
    ],
)
def test_teacher_reject_reasons(line, reason):
    got = parse_teacher_json(line)
    assert isinstance(got, Reject) and got.reason is reason


def test_case_inside_string_values_is_allowed():
    assert parse_teacher_json('{"solvable":true,"answer":"1E3"}') == TeacherVerdict(True, "1E3")


@pytest.mark.parametrize("line", TEACHER_ACCEPT)
def test_teacher_accept_corpus(line):
    assert isinstance(parse_teacher_json(line), TeacherVerdict)


def test_teacher_mutations_rejected():
    for line in teacher_mutations(np.random.default_rng(1), 180):
        assert isinstance(parse_teacher_json(line), Reject), line


@given(answer=st.one_of(st.none(), st.integers(-10**6, 10**6).map(str)))
def test_teacher_render_round_trip(answer):
    verdict = TeacherVerdict(answer is not None, answer)
    line = render_teacher_json(verdict)
    assert json.loads(line) == {"solvable": verdict.solvable, "answer": answer}
    assert parse_teacher_json(line) == verdict
