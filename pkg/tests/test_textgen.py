import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from statecontrast.textgen import (
    MISORDERED,
    MISSING_STEP,
    CountMismatch,
    DuplicateCF,
    EmptyInput,
    EmptyNarration,
    MissingField,
    ParsedClipStates,
    ParsedVideoCFs,
    WrongKindLabels,
    build_clip_prompt,
    build_video_prompt,
    parse_clip_response,
    parse_video_response,
    render_clip_states,
    render_video_cfs,
)

EXEMPLAR_NARRATION = "#C C picks a bag of clothes from the floor."

# Worked clip response, wrapped across lines the way real generations arrive.
LIFTS_THE_PAPER_RESPONSE = """\
Before: The paper lies flat
on a table, surrounded by
other papers and office supplies.

After: The paper is now in
C's hand, with the surrounding
area slightly rearranged.

CF 1: The paper remains flat
on the table, untouched.

CF 2: A corner of the paper
is folded up, but the rest remains flat.

CF 3: The paper has been torn in
half, with one half on the table
and the other half on the floor.
"""


# ---------------------------------------------------------------------------
# Prompt builders


def test_clip_prompt_embeds_worked_example():
    pair = build_clip_prompt(EXEMPLAR_NARRATION)
    assert "[Before]: The floor is cluttered with clothes." in pair.request
    assert "[SC-CF 1]: Clothes remain scattered on the floor." in pair.request
    assert EXEMPLAR_NARRATION in pair.request


def test_clip_prompt_context_carries_instructions_and_safety_note():
    pair = build_clip_prompt("#C C pours water")
    assert "[Before]" in pair.context and "[After]" in pair.context
    assert "[CF 1], [CF 2], and [CF 3]" in pair.context
    assert "must be a typo" in pair.context


def test_clip_prompt_deterministic():
    a = build_clip_prompt("#C C stirs the pot")
    b = build_clip_prompt("#C C stirs the pot")
    assert a == b


def test_clip_prompt_empty_narration():
    with pytest.raises(EmptyNarration):
        build_clip_prompt("")
    with pytest.raises(EmptyNarration):
        build_clip_prompt("   ")


def test_video_prompt_missing_step_format_line():
    pair = build_video_prompt(["n1", "n2"], "summary text", MISSING_STEP)
    assert "[K-CF 1]: ..." in pair.context
    assert "10 distinct counterfactual summaries" in pair.context
    assert "taking out some critical narrations" in pair.context
    assert "summary text" in pair.request
    assert "n1" in pair.request and "n2" in pair.request


def test_video_prompt_misordered_format_line():
    pair = build_video_prompt(["n1"], "s", MISORDERED)
    assert "[M-CF 1]: ..." in pair.context
    assert "perturbing the order of narrations" in pair.context


def test_video_prompt_empty_inputs():
    with pytest.raises(EmptyInput):
        build_video_prompt([], "s", MISSING_STEP)
    with pytest.raises(EmptyInput):
        build_video_prompt(["n"], "", MISORDERED)
    with pytest.raises(EmptyInput):
        build_video_prompt(["n", " "], "s", MISSING_STEP)


# ---------------------------------------------------------------------------
# Clip response parsing


def test_parse_worked_clip_response_field_for_field():
    parsed = parse_clip_response(LIFTS_THE_PAPER_RESPONSE, expected_cfs=3)
    assert parsed.before == (
        "The paper lies flat on a table, surrounded by other papers and office supplies."
    )
    assert parsed.after.startswith("The paper is now in C's hand")
    assert parsed.sc_cf[2] == (
        "The paper has been torn in half, with one half on the table and the other half on the floor."
    )


def test_parse_accepts_all_three_cf_label_styles():
    for label in ("[SC-CF {n}]", "[CF {n}]", "CF {n}"):
        lines = ["[Before]: b state.", "[After]: a state."]
        lines += [f"{label.format(n=i)}: cf number {i}" for i in (1, 2, 3)]
        parsed = parse_clip_response("\n".join(lines), expected_cfs=3)
        assert parsed.sc_cf == ("cf number 1", "cf number 2", "cf number 3")


def test_parse_missing_after_field():
    text = "Before: something\nCF 1: a\nCF 2: b\nCF 3: c"
    with pytest.raises(MissingField) as exc:
        parse_clip_response(text)
    assert exc.value.name == "after"


def test_parse_count_mismatch():
    text = "[Before]: b\n[After]: a\n[SC-CF 1]: one\n[SC-CF 2]: two"
    with pytest.raises(CountMismatch) as exc:
        parse_clip_response(text, expected_cfs=3)
    assert (exc.value.found, exc.value.expected) == (2, 3)


def test_parse_duplicate_cf():
    text = "[Before]: b\n[After]: a\n[CF 1]: same\n[CF 2]: same\n[CF 3]: other"
    with pytest.raises(DuplicateCF):
        parse_clip_response(text)


def test_parse_ignores_preamble_and_trailing_commentary():
    text = (
        "Sure! Here are the descriptions:\n\n"
        "[Before]: clean state\n\n[After]: changed state\n\n"
        "[SC-CF 1]: x\n[SC-CF 2]: y\n[SC-CF 3]: z\n\n"
        "Hope this helps!"
    )
    parsed = parse_clip_response(text)
    assert parsed.before == "clean state"
    assert parsed.sc_cf == ("x", "y", "z")


# ---------------------------------------------------------------------------
# Video response parsing

K_CF_RESPONSE = """\
[K-CF 1]: C was in a room. C constructed a new structure with the paperwork pieces.
[K-CF 2]: C was in a room. C removed small pieces from a paperwork with a tool. #summary
[K-CF 3]: filler three
[K-CF 4]: filler four
[K-CF 5]: filler five
[K-CF 6]: filler six
[K-CF 7]: filler seven
[K-CF 8]: filler eight
[K-CF 9]: filler nine
[K-CF 10]: filler ten
"""


def test_parse_video_worked_example_and_noise_stripping():
    parsed = parse_video_response(K_CF_RESPONSE, MISSING_STEP, expected=10)
    assert parsed.cfs[0] == "C was in a room. C constructed a new structure with the paperwork pieces."
    assert parsed.cfs[1] == "C was in a room. C removed small pieces from a paperwork with a tool."
    assert len(parsed.cfs) == 10


def test_parse_video_wrong_kind_labels():
    with pytest.raises(WrongKindLabels):
        parse_video_response(K_CF_RESPONSE, MISORDERED, expected=10)


def test_parse_video_mixed_kinds_takes_requested():
    text = "[K-CF 1]: keep me\n[M-CF 1]: not this kind\n[K-CF 2]: also keep\n"
    parsed = parse_video_response(text, MISSING_STEP, expected=2)
    assert parsed.cfs == ("keep me", "also keep")
    parsed_m = parse_video_response(text, MISORDERED, expected=1)
    assert parsed_m.cfs == ("not this kind",)


def test_parse_video_count_mismatch():
    text = "[M-CF 1]: one\n[M-CF 2]: two\n"
    with pytest.raises(CountMismatch) as exc:
        parse_video_response(text, MISORDERED, expected=10)
    assert exc.value.found == 2


def test_parse_video_multiline_continuation():
    text = "[M-CF 1]: C was in a room.\nC constructed first.\n\n[M-CF 2]: another one\n"
    parsed = parse_video_response(text, MISORDERED, expected=2)
    assert parsed.cfs[0] == "C was in a room. C constructed first."


# ---------------------------------------------------------------------------
# Round-trip through the canonical renderer

_field_text = st.text(
    alphabet=st.characters(
        min_codepoint=32, max_codepoint=126, blacklist_characters="[]#"
    ),
    min_size=1,
    max_size=60,
).map(str.strip).filter(lambda s: s and not s.startswith(("Before", "After", "CF", "SC-CF")))


@given(
    before=_field_text,
    after=_field_text,
    cfs=st.lists(_field_text, min_size=3, max_size=3, unique=True),
)
@settings(max_examples=200, deadline=None)
def test_clip_states_round_trip(before, after, cfs):
    states = ParsedClipStates(before=before, after=after, sc_cf=tuple(cfs))
    assert parse_clip_response(render_clip_states(states), expected_cfs=3) == states


@given(
    kind=st.sampled_from([MISSING_STEP, MISORDERED]),
    cfs=st.lists(_field_text.filter(lambda s: not s.endswith("#summary")), min_size=1, max_size=10, unique=True),
)
@settings(max_examples=200, deadline=None)
def test_video_cfs_round_trip(kind, cfs):
    parsed = ParsedVideoCFs(kind=kind, cfs=tuple(cfs))
    rendered = render_video_cfs(parsed)
    assert parse_video_response(rendered, kind, expected=len(cfs)) == parsed
