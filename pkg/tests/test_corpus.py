import json

import numpy as np
import pytest

from statecontrast.corpus import (
    ClipRecord,
    Corpus,
    DanglingReference,
    DimensionMismatch,
    MalformedLine,
    SynthSpec,
    VideoRecord,
    load_corpus,
    load_corpus_dir,
    nearest_latent_accuracy,
    save_corpus_dir,
    synthesize_corpus,
    validate_corpus,
)

CLIP_LINE = {
    "clip_id": "c1",
    "video_id": "v1",
    "t_start": 0.0,
    "t_end": 5.0,
    "narration": "#C C pours water",
    "frame_features": [[0.1, 0.2, 0.3, 0.4]] * 4,
}
VIDEO_LINE = {"video_id": "v1", "summary": "C makes tea", "clip_ids": ["c1"]}


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def test_load_minimal_pair(tmp_path):
    write_jsonl(tmp_path / "clips.jsonl", [CLIP_LINE])
    write_jsonl(tmp_path / "videos.jsonl", [VIDEO_LINE])
    corpus = load_corpus(tmp_path / "clips.jsonl", tmp_path / "videos.jsonl")
    assert len(corpus.clips) == 1 and len(corpus.videos) == 1
    assert corpus.d_in == 4
    assert corpus.clips["c1"].narration == "#C C pours water"


def test_load_rejects_wrong_frame_count(tmp_path):
    bad = dict(CLIP_LINE, frame_features=[[0.1, 0.2, 0.3, 0.4]] * 3)
    write_jsonl(tmp_path / "clips.jsonl", [bad])
    write_jsonl(tmp_path / "videos.jsonl", [VIDEO_LINE])
    with pytest.raises(DimensionMismatch):
        load_corpus(tmp_path / "clips.jsonl", tmp_path / "videos.jsonl")


def test_load_rejects_unknown_clip_reference(tmp_path):
    write_jsonl(tmp_path / "clips.jsonl", [CLIP_LINE])
    write_jsonl(tmp_path / "videos.jsonl", [dict(VIDEO_LINE, clip_ids=["c1", "x9"])])
    with pytest.raises(DanglingReference) as exc:
        load_corpus(tmp_path / "clips.jsonl", tmp_path / "videos.jsonl")
    assert exc.value.ref_id == "x9"


def test_load_reports_line_number_for_bad_json(tmp_path):
    with open(tmp_path / "clips.jsonl", "w") as fh:
        fh.write(json.dumps(CLIP_LINE) + "\n")
        fh.write("{not json\n")
    write_jsonl(tmp_path / "videos.jsonl", [VIDEO_LINE])
    with pytest.raises(MalformedLine) as exc:
        load_corpus(tmp_path / "clips.jsonl", tmp_path / "videos.jsonl")
    assert exc.value.line == 2


def test_validate_clean_corpus_is_empty(small_corpus):
    corpus, _ = small_corpus
    assert validate_corpus(corpus).ok


def test_validate_unpaired_state_change():
    clip = ClipRecord(
        clip_id="c1", video_id="v1", t_start=0.0, t_end=1.0, narration="n",
        before="something", after=None, frame_features=[[0.0, 0.0, 0.0, 1.0]] * 4,
    )
    video = VideoRecord(video_id="v1", summary="s", clip_ids=["c1"])
    report = validate_corpus(Corpus(clips={"c1": clip}, videos={"v1": video}, d_in=4))
    assert [v.message for v in report.violations] == ["unpaired state change"]


def test_validate_negative_duration():
    clip = ClipRecord(
        clip_id="c1", video_id="v1", t_start=5.0, t_end=3.0, narration="n",
        frame_features=[[0.0, 0.0, 0.0, 1.0]] * 4,
    )
    video = VideoRecord(video_id="v1", summary="s", clip_ids=["c1"])
    report = validate_corpus(Corpus(clips={"c1": clip}, videos={"v1": video}, d_in=4))
    assert [v.message for v in report.violations] == ["negative duration"]


def test_save_load_round_trip(tmp_path, seed7_corpus):
    corpus, _ = seed7_corpus
    save_corpus_dir(corpus, tmp_path)
    loaded = load_corpus_dir(tmp_path)
    assert loaded.d_in == corpus.d_in
    assert set(loaded.clips) == set(corpus.clips)
    assert set(loaded.videos) == set(corpus.videos)
    for cid, clip in corpus.clips.items():
        assert loaded.clips[cid] == clip
    for vid, video in corpus.videos.items():
        assert loaded.videos[vid] == video


def test_synthesis_deterministic_bytes(tmp_path):
    spec = SynthSpec(n_videos=2, clips_per_video=3, d_in=8, noise_sigma=0.0, seed=7)
    for sub in ("a", "b"):
        corpus, _ = synthesize_corpus(spec)
        (tmp_path / sub).mkdir()
        save_corpus_dir(corpus, tmp_path / sub)
    for name in ("clips.jsonl", "videos.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_synthesis_pure_function_of_spec():
    spec = SynthSpec(n_videos=2, clips_per_video=2, d_in=8, noise_sigma=0.05, seed=3)
    c1, o1 = synthesize_corpus(spec)
    c2, o2 = synthesize_corpus(spec)
    assert c1.clips == c2.clips and c1.videos == c2.videos
    for a, b in zip(o1.videos, o2.videos):
        assert np.array_equal(a.states, b.states)


def test_zero_noise_interpolation_endpoints():
    spec = SynthSpec(n_videos=2, clips_per_video=3, d_in=8, noise_sigma=0.0, seed=7)
    corpus, oracle = synthesize_corpus(spec)
    for latents in oracle.videos:
        for j, cid in enumerate(corpus.videos[latents.video_id].clip_ids, start=1):
            feats = corpus.clips[cid].frames_array()
            assert np.array_equal(feats[0], latents.states[j - 1])
            assert np.array_equal(feats[-1], latents.states[j])


def test_frame_norm_bound():
    spec = SynthSpec(n_videos=4, clips_per_video=4, d_in=24, noise_sigma=0.1, seed=5)
    corpus, _ = synthesize_corpus(spec)
    bound = 1.0 + 4 * 0.1 + 1e-12
    for clip in corpus.clips.values():
        assert np.linalg.norm(clip.frames_array(), axis=1).max() <= bound


def test_nearest_latent_oracle_recovery(seed7_corpus):
    # Observed 1.0 on the committed generator output; the contract is >= 0.99.
    corpus, oracle = seed7_corpus
    acc = nearest_latent_accuracy(corpus, oracle)
    assert acc >= 0.99
    assert acc == 1.0


def test_oracle_round_trip(tmp_path, small_corpus):
    _, oracle = small_corpus
    oracle.save(tmp_path / "oracle.jsonl")
    from statecontrast.corpus import SynthOracle

    loaded = SynthOracle.load(tmp_path / "oracle.jsonl")
    assert [v.video_id for v in loaded.videos] == [v.video_id for v in oracle.videos]
    for a, b in zip(loaded.videos, oracle.videos):
        assert np.array_equal(a.states, b.states)
        assert a.frame_state_index == b.frame_state_index


def test_synth_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(n_videos=0, clips_per_video=1, d_in=8, noise_sigma=0.0, seed=1).validate()
    with pytest.raises(ValueError):
        SynthSpec(n_videos=1, clips_per_video=1, d_in=3, noise_sigma=0.0, seed=1).validate()
    with pytest.raises(ValueError):
        SynthSpec(n_videos=1, clips_per_video=1, d_in=8, noise_sigma=-0.1, seed=1).validate()
