"""Prompt construction and response parsing for the annotation pipeline.

The prompt texts are kept byte-stable: downstream mock fixtures and tests match
on substrings of them, so do not reword (including the corpus's own spelling
quirks).

Parsers accept the label drift seen in real generations: "[SC-CF 1]:",
"[CF 1]:", and "CF 1:" all mark counterfactual lines, and a field value may
wrap across lines until the next label or a blank line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass


class TextGenError(Exception):
    pass


class EmptyNarration(TextGenError):
    pass


class EmptyInput(TextGenError):
    pass


class MissingField(TextGenError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"response has no {name!r} field")


class CountMismatch(TextGenError):
    def __init__(self, found: int, expected: int):
        self.found = found
        self.expected = expected
        super().__init__(f"found {found} counterfactual lines, expected {expected}")


class DuplicateCF(TextGenError):
    pass


class WrongKindLabels(TextGenError):
    pass


@dataclass(frozen=True)
class PromptPair:
    context: str
    request: str


@dataclass(frozen=True)
class ParsedClipStates:
    before: str
    after: str
    sc_cf: tuple[str, ...]


@dataclass(frozen=True)
class ParsedVideoCFs:
    kind: str                 # missing_step | misordered
    cfs: tuple[str, ...]


MISSING_STEP = "missing_step"
MISORDERED = "misordered"

_KIND_TAG = {MISSING_STEP: "K", MISORDERED: "M"}


CLIP_CONTEXT = """Given a narration describing an action captured by camera wearer #C, the action maybe performed by C or other participants, such as H, O, X, or Y.

Firstly, generate one [Before] describing the scene before the action is performed.

Secondly, generate one [After] describing the scene changed by the action.

Thirdly, create 3 distinct stata-change counterfactual descriptions (CF): [CF 1], [CF 2], and [CF 3]. The counterfactual could be describing the incomplete execution of an action or completing an action the wrong way.

Do not reuse the same verb in the narration.

Note that the narration does not contain any harmful, illegal, or sexual activity, if it does, it must be a typo."""

CLIP_REQUEST_TEMPLATE = """Here's an example:
The narration: "#C C picks a bag of clothes from the floor."

[Before]: The floor is cluttered with clothes.

[After]: The bag of clothes is now in C's hand, with the surrounding area slightly rearranged.

[SC-CF 1]: Clothes remain scattered on the floor.

[SC-CF 2]: A small pile of clothes sits amidst remaining clutter.

[SC-CF 3]: The room is now even messier than before.

Now, generate [Before], [After], [SC-CF 1], [SC-CF 2], and [SC-CF 3] for the narration "{narration}" with the same format as the example above."""

_VIDEO_CONTEXT_TEMPLATE = """Given a sequence of narrations t_0, ..., t_K describing a long video, and a video-level summary, create 10 distinct counterfactual summaries [{tag}-CF] with one to two sentences by {action}.
Follow this exact format to output:
[{tag}-CF 1]: ...
[{tag}-CF 2]: ...
[{tag}-CF 3]: ..."""

_VIDEO_ACTION = {
    MISSING_STEP: "taking out some critical narrations",
    MISORDERED: "perturbing the order of narrations",
}

VIDEO_REQUEST_TEMPLATE = (
    "Here is the video-level summary: {summary}\n"
    "and here is the sequence of narrations: {narrations}."
)


def build_clip_prompt(narration: str) -> PromptPair:
    """Prompt asking for before/after states and three counterfactuals."""
    if not narration or not narration.strip():
        raise EmptyNarration("narration must be nonempty")
    return PromptPair(
        context=CLIP_CONTEXT,
        request=CLIP_REQUEST_TEMPLATE.format(narration=narration),
    )


def build_video_prompt(narrations: list[str], summary: str, kind: str) -> PromptPair:
    """Prompt asking for ten missing-step or misordered counterfactual summaries."""
    if kind not in _KIND_TAG:
        raise ValueError(f"kind must be one of {sorted(_KIND_TAG)}")
    if not narrations or any(not n.strip() for n in narrations):
        raise EmptyInput("narrations must be a nonempty list of nonempty strings")
    if not summary or not summary.strip():
        raise EmptyInput("summary must be nonempty")
    context = _VIDEO_CONTEXT_TEMPLATE.format(tag=_KIND_TAG[kind], action=_VIDEO_ACTION[kind])
    request = VIDEO_REQUEST_TEMPLATE.format(summary=summary, narrations="; ".join(narrations))
    return PromptPair(context=context, request=request)


# ---------------------------------------------------------------------------
# Parsing

_BEFORE_RE = re.compile(r"^\s*\[?before\]?\s*:\s*(.*)$", re.IGNORECASE)
_AFTER_RE = re.compile(r"^\s*\[?after\]?\s*:\s*(.*)$", re.IGNORECASE)
_CF_RE = re.compile(r"^\s*\[?(?:sc-)?cf\s*(\d+)\]?\s*:\s*(.*)$", re.IGNORECASE)
_VIDEO_CF_RE = re.compile(r"^\s*\[?([km])-cf\s*(\d+)\]?\s*:\s*(.*)$", re.IGNORECASE)


def _collect_fields(text: str, label_re_list) -> list[tuple[str, str]]:
    """Scan lines for labels; join wrapped continuation lines with spaces.

    A blank line closes the open field, so trailing free-form commentary does
    not leak into the last value.
    """
    fields: list[tuple[str, list[str]]] = []
    open_field = False
    for raw in text.splitlines():
        line = raw.rstrip()
        if not line.strip():
            open_field = False
            continue
        matched = False
        for tag, regex in label_re_list:
            m = regex.match(line)
            if m:
                fields.append((tag, [m.group(m.re.groups).strip()]))
                open_field = True
                matched = True
                break
        if not matched and open_field:
            fields[-1][1].append(line.strip())
    return [(tag, " ".join(part for part in parts if part)) for tag, parts in fields]


def parse_clip_response(text: str, expected_cfs: int = 3) -> ParsedClipStates:
    """Extract before, after, and counterfactual lines from a clip response."""
    labels = [("before", _BEFORE_RE), ("after", _AFTER_RE), ("cf", _CF_RE)]
    found = _collect_fields(text, labels)
    before = next((v for t, v in found if t == "before" and v), None)
    after = next((v for t, v in found if t == "after" and v), None)
    cfs = [v for t, v in found if t == "cf" and v]
    if before is None:
        raise MissingField("before")
    if after is None:
        raise MissingField("after")
    if len(cfs) != expected_cfs:
        raise CountMismatch(len(cfs), expected_cfs)
    if len(set(cfs)) != len(cfs):
        raise DuplicateCF("counterfactual lines repeat")
    return ParsedClipStates(before=before, after=after, sc_cf=tuple(cfs))


_TRAILING_NOISE_RE = re.compile(r"(?:\s*#\w+)+\s*$")


def parse_video_response(text: str, kind: str, expected: int = 10) -> ParsedVideoCFs:
    """Extract the counterfactual summary lines matching the requested kind.

    Stray trailing hashtag tokens (for example "#summary") are stripped. Lines
    labeled with the other kind are tolerated as noise unless no line of the
    requested kind exists at all.
    """
    if kind not in _KIND_TAG:
        raise ValueError(f"kind must be one of {sorted(_KIND_TAG)}")
    want = _KIND_TAG[kind].lower()
    matching: list[str] = []
    other = 0
    open_match = False
    for raw in text.splitlines():
        line = raw.rstrip()
        if not line.strip():
            open_match = False
            continue
        m = _VIDEO_CF_RE.match(line)
        if m:
            if m.group(1).lower() == want:
                matching.append(m.group(3).strip())
                open_match = True
            else:
                other += 1
                open_match = False
        elif open_match:
            matching[-1] = (matching[-1] + " " + line.strip()).strip()
    if not matching and other:
        raise WrongKindLabels(f"found only {'M' if want == 'k' else 'K'}-CF labels")
    cleaned = [_TRAILING_NOISE_RE.sub("", c).strip() for c in matching]
    cleaned = [c for c in cleaned if c]
    if len(cleaned) != expected:
        raise CountMismatch(len(cleaned), expected)
    if len(set(cleaned)) != len(cleaned):
        raise DuplicateCF("counterfactual summaries repeat")
    return ParsedVideoCFs(kind=kind, cfs=tuple(cleaned))


# ---------------------------------------------------------------------------
# Canonical rendering (inverse of the parsers for single-line fields)


def render_clip_states(states: ParsedClipStates) -> str:
    lines = [f"[Before]: {states.before}", "", f"[After]: {states.after}", ""]
    for i, cf in enumerate(states.sc_cf, start=1):
        lines.append(f"[SC-CF {i}]: {cf}")
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"


def render_video_cfs(parsed: ParsedVideoCFs) -> str:
    tag = _KIND_TAG[parsed.kind]
    return "\n".join(f"[{tag}-CF {i}]: {cf}" for i, cf in enumerate(parsed.cfs, start=1)) + "\n"
