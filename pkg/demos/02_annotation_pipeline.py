"""Run the annotation pipeline end to end against a mock endpoint.

Shows the prompt pair sent per clip, annotates a stripped corpus through
fixture-driven responses, and Likert-scores the results with a mock judge.
"""

import json
import tempfile
from pathlib import Path

from statecontrast.corpus import SynthSpec, strip_annotations, synthesize_corpus
from statecontrast.llm import (
    LlmClientConfig,
    aggregate_scores,
    generate_annotations,
    judge_corpus,
)
from statecontrast.textgen import (
    MISORDERED,
    MISSING_STEP,
    ParsedClipStates,
    ParsedVideoCFs,
    build_clip_prompt,
    render_clip_states,
    render_video_cfs,
)

corpus, _ = synthesize_corpus(SynthSpec(n_videos=2, clips_per_video=3, d_in=8, noise_sigma=0.0, seed=3))
bare = strip_annotations(corpus)

# what one clip prompt looks like
first = bare.clips[sorted(bare.clips)[0]]
pair = build_clip_prompt(first.narration)
print("=== context message (truncated) ===")
print(pair.context[:200], "...\n")
print("=== request message (truncated) ===")
print(pair.request[:200], "...\n")

# mock fixtures: video fixtures first, since video requests embed narrations
rows = []
for video in bare.videos.values():
    k = ParsedVideoCFs(MISSING_STEP, tuple(f"{video.video_id} skips part {i}" for i in range(10)))
    m = ParsedVideoCFs(MISORDERED, tuple(f"{video.video_id} reorders part {i}" for i in range(10)))
    rows.append({"match": video.summary, "response": render_video_cfs(k) + render_video_cfs(m)})
for clip in bare.clips.values():
    states = ParsedClipStates(
        before=f"the bench is clear before {clip.clip_id}",
        after=f"the work is visible after {clip.clip_id}",
        sc_cf=tuple(f"{clip.clip_id} slips in manner {i}" for i in (1, 2, 3)),
    )
    rows.append({"match": clip.narration, "response": render_clip_states(states)})

tmp = Path(tempfile.mkdtemp())
fixtures = tmp / "fixtures.jsonl"
with open(fixtures, "w") as fh:
    for row in rows:
        fh.write(json.dumps(row) + "\n")

cfg = LlmClientConfig(mock_fixtures=str(fixtures), max_parallel=4)
annotated, failures = generate_annotations(bare, cfg)
print(f"annotated {sum(c.annotated for c in annotated.clips.values())}/{len(annotated.clips)} clips, "
      f"{len(failures)} failures")
print("example before:", annotated.clips[first.clip_id].before)

# a judge that always answers R: 5, P: 4
judge_fixtures = tmp / "judge.jsonl"
judge_fixtures.write_text(json.dumps({"match": "Source:", "response": "R: 5\nP: 4"}) + "\n")
items = judge_corpus(annotated, LlmClientConfig(mock_fixtures=str(judge_fixtures)))
print("judge summary:", aggregate_scores(items))
