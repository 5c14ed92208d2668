"""Chat-completion client, corpus annotation pipeline, and quality judging.

The wire protocol is a plain chat-completions POST with two messages (context,
request). A mock client backed by substring-match fixtures stands in for any
real endpoint; the pipeline behaves identically either way. Requests may run
with bounded parallelism, but results are committed in corpus order, so output
never depends on completion order. The API key is never written to logs,
reports, or output files.
"""

from __future__ import annotations

import json
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from .corpus import Corpus
from .textgen import (
    MISORDERED,
    MISSING_STEP,
    ParsedClipStates,
    ParsedVideoCFs,
    PromptPair,
    TextGenError,
    build_clip_prompt,
    build_video_prompt,
    parse_clip_response,
    parse_video_response,
)

logger = logging.getLogger(__name__)

ENV_API_BASE = "LLM_API_BASE"
ENV_API_KEY = "LLM_API_KEY"
ENV_MODEL = "LLM_MODEL"

MAX_PARALLEL_CAP = 64


class LlmError(Exception):
    pass


class EndpointUnreachable(LlmError):
    pass


class AuthFailure(LlmError):
    pass


class UnparsableJudgeOutput(LlmError):
    pass


class OutOfRangeScore(LlmError):
    pass


@dataclass
class LlmClientConfig:
    api_base: str = ""
    api_key: str = field(default="", repr=False)
    model: str = ""
    max_parallel: int = 4
    timeout: float = 30.0
    mock_fixtures: str | None = None
    retries: int = 2
    temperature: float | None = None    # pass-through; endpoint default when None

    def __post_init__(self):
        if not (1 <= self.max_parallel <= MAX_PARALLEL_CAP):
            raise ValueError(f"max_parallel must be in 1..{MAX_PARALLEL_CAP}")

    @staticmethod
    def from_env(mock_fixtures: str | None = None, **overrides) -> "LlmClientConfig":
        return LlmClientConfig(
            api_base=os.environ.get(ENV_API_BASE, ""),
            api_key=os.environ.get(ENV_API_KEY, ""),
            model=os.environ.get(ENV_MODEL, ""),
            mock_fixtures=mock_fixtures,
            **overrides,
        )


@dataclass(frozen=True)
class QualityScore:
    relevance: int
    plausibility: int


@dataclass(frozen=True)
class Failure:
    record_id: str
    stage: str
    cause: str

    def to_json(self) -> dict:
        return {"id": self.record_id, "stage": self.stage, "cause": self.cause}


# ---------------------------------------------------------------------------
# Clients


class MockClient:
    """Fixture-driven stand-in: first fixture whose match is a substring wins.

    Matching runs over context + "\\n" + request, so fixtures may key on either
    message.
    """

    def __init__(self, fixtures_path: str | Path):
        self.fixtures: list[tuple[str, str]] = []
        with open(fixtures_path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                self.fixtures.append((obj["match"], obj["response"]))

    def complete(self, prompt: PromptPair) -> str:
        haystack = prompt.context + "\n" + prompt.request
        for match, response in self.fixtures:
            if match in haystack:
                return response
        raise LlmError("no mock fixture matches the prompt")


class HttpClient:
    """Minimal chat-completions client over HTTP."""

    def __init__(self, cfg: LlmClientConfig):
        if not cfg.api_base:
            raise EndpointUnreachable(f"no endpoint configured (set {ENV_API_BASE} or use mock fixtures)")
        self.cfg = cfg

    def complete(self, prompt: PromptPair) -> str:
        import requests

        body: dict = {
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": prompt.context},
                {"role": "user", "content": prompt.request},
            ],
        }
        if self.cfg.temperature is not None:
            body["temperature"] = self.cfg.temperature
        headers = {"Content-Type": "application/json"}
        if self.cfg.api_key:
            headers["Authorization"] = f"Bearer {self.cfg.api_key}"
        url = self.cfg.api_base.rstrip("/") + "/chat/completions"
        try:
            resp = requests.post(url, json=body, headers=headers, timeout=self.cfg.timeout)
        except requests.RequestException as exc:
            raise EndpointUnreachable(f"cannot reach {url}: {exc.__class__.__name__}") from exc
        if resp.status_code in (401, 403):
            raise AuthFailure(f"endpoint rejected credentials (HTTP {resp.status_code})")
        if resp.status_code >= 400:
            raise LlmError(f"endpoint error HTTP {resp.status_code}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise LlmError(f"malformed endpoint response: {exc.__class__.__name__}") from exc


def make_client(cfg: LlmClientConfig):
    if cfg.mock_fixtures:
        return MockClient(cfg.mock_fixtures)
    return HttpClient(cfg)


# ---------------------------------------------------------------------------
# Annotation pipeline


def _attempt(client, prompt: PromptPair, parse, retries: int):
    last: Exception | None = None
    for _ in range(retries + 1):
        try:
            return parse(client.complete(prompt)), None
        except (LlmError, TextGenError) as exc:
            if isinstance(exc, (EndpointUnreachable, AuthFailure)):
                raise
            last = exc
    return None, last


def generate_annotations(
    corpus: Corpus,
    cfg: LlmClientConfig,
    expected_cfs: int = 3,
    expected_video_cfs: int = 10,
) -> tuple[Corpus, list[Failure]]:
    """Annotate every clip and video through the configured endpoint.

    Each clip issues one prompt; each video issues one per counterfactual kind.
    A record whose responses still fail parsing after the configured retries is
    left unannotated and reported. The output corpus is independent of request
    completion order.
    """
    client = make_client(cfg)
    clip_ids = sorted(corpus.clips)
    video_ids = sorted(corpus.videos)

    jobs: list[tuple[str, str, PromptPair, object]] = []
    for cid in clip_ids:
        prompt = build_clip_prompt(corpus.clips[cid].narration)
        jobs.append((cid, "clip_states", prompt, lambda t: parse_clip_response(t, expected_cfs)))
    for vid in video_ids:
        narrations = [c.narration for c in corpus.clips_of(vid)]
        summary = corpus.videos[vid].summary
        for kind, stage in ((MISSING_STEP, "video_k_cf"), (MISORDERED, "video_m_cf")):
            prompt = build_video_prompt(narrations, summary, kind)
            jobs.append(
                (vid, stage, prompt, lambda t, k=kind: parse_video_response(t, k, expected_video_cfs))
            )

    def run_job(job):
        _, _, prompt, parse = job
        return _attempt(client, prompt, parse, cfg.retries)

    if cfg.max_parallel > 1 and jobs:
        with ThreadPoolExecutor(max_workers=cfg.max_parallel) as pool:
            outcomes = list(pool.map(run_job, jobs))
    else:
        outcomes = [run_job(j) for j in jobs]

    clips = dict(corpus.clips)
    videos = dict(corpus.videos)
    failures: list[Failure] = []
    for (rid, stage, _, _), (parsed, err) in zip(jobs, outcomes):
        if parsed is None:
            failures.append(Failure(rid, stage, str(err)))
            logger.warning("annotation failed for %s at %s: %s", rid, stage, err)
            continue
        if isinstance(parsed, ParsedClipStates):
            clips[rid] = replace(
                clips[rid], before=parsed.before, after=parsed.after, sc_cf=list(parsed.sc_cf)
            )
        elif isinstance(parsed, ParsedVideoCFs):
            if parsed.kind == MISSING_STEP:
                videos[rid] = replace(videos[rid], k_cf=list(parsed.cfs))
            else:
                videos[rid] = replace(videos[rid], m_cf=list(parsed.cfs))
    return Corpus(clips=clips, videos=videos, d_in=corpus.d_in), failures


def write_failure_report(failures: list[Failure], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in failures:
            fh.write(json.dumps(f.to_json()) + "\n")


# ---------------------------------------------------------------------------
# Likert quality judging

JUDGE_CONTEXT = """You are rating a generated description against its source text.
Score two aspects on a 1 to 5 Likert scale: Relevance (does the description fit the source?) and Plausibility (could the described outcome occur?).
Respond with exactly two lines and nothing else:
R: <integer 1-5>
P: <integer 1-5>"""

JUDGE_REQUEST_TEMPLATE = "Source: {source}\nGenerated: {generated}"

_JUDGE_R_RE = re.compile(r"^\s*R\s*:\s*(-?\d+)\s*$", re.IGNORECASE | re.MULTILINE)
_JUDGE_P_RE = re.compile(r"^\s*P\s*:\s*(-?\d+)\s*$", re.IGNORECASE | re.MULTILINE)


def build_judge_prompt(source: str, generated: str) -> PromptPair:
    return PromptPair(
        context=JUDGE_CONTEXT,
        request=JUDGE_REQUEST_TEMPLATE.format(source=source, generated=generated),
    )


def parse_judge_response(text: str) -> QualityScore:
    rm = _JUDGE_R_RE.search(text)
    pm = _JUDGE_P_RE.search(text)
    if rm is None or pm is None:
        raise UnparsableJudgeOutput("expected 'R: n' and 'P: n' lines")
    r, p = int(rm.group(1)), int(pm.group(1))
    for v in (r, p):
        if not 1 <= v <= 5:
            raise OutOfRangeScore(f"score {v} outside 1..5")
    return QualityScore(relevance=r, plausibility=p)


def judge_quality(source: str, generated: str, cfg: LlmClientConfig) -> QualityScore:
    """Ask the endpoint to Likert-score one (source, generated) pair."""
    client = make_client(cfg)
    return parse_judge_response(client.complete(build_judge_prompt(source, generated)))


@dataclass(frozen=True)
class JudgedItem:
    record_id: str
    kind: str                 # sc | cf
    score: QualityScore

    def to_json(self) -> dict:
        return {
            "id": self.record_id,
            "kind": self.kind,
            "relevance": self.score.relevance,
            "plausibility": self.score.plausibility,
        }


def judge_corpus(corpus: Corpus, cfg: LlmClientConfig) -> list[JudgedItem]:
    """Judge every annotated clip: its state pair and each counterfactual."""
    client = make_client(cfg)
    items: list[JudgedItem] = []
    for cid in sorted(corpus.clips):
        clip = corpus.clips[cid]
        if clip.before is None or clip.after is None:
            continue
        pairs = [("sc", f"{clip.before} {clip.after}")] + [("cf", cf) for cf in clip.sc_cf]
        for kind, generated in pairs:
            prompt = build_judge_prompt(clip.narration, generated)
            score = parse_judge_response(client.complete(prompt))
            items.append(JudgedItem(cid, kind, score))
    return items


def aggregate_scores(items: list[JudgedItem]) -> dict:
    """Mean relevance/plausibility per item kind."""
    out: dict = {"n": len(items)}
    for kind in ("sc", "cf"):
        scores = [i.score for i in items if i.kind == kind]
        if scores:
            out[f"{kind}_relevance"] = sum(s.relevance for s in scores) / len(scores)
            out[f"{kind}_plausibility"] = sum(s.plausibility for s in scores) / len(scores)
    return out
