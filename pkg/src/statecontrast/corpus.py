"""Annotated corpus data model, JSONL persistence, validation, and a synthetic generator.

The corpus is the unit of exchange for the whole pipeline: short clips carry a
narration, optional before/after state texts with state-change counterfactuals,
and a fixed number of precomputed frame feature vectors; videos carry a summary,
the ordered clip list, and optional missing-step / misordered counterfactual
summaries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

DEFAULT_FRAMES_PER_CLIP = 4


class CorpusError(Exception):
    """Base class for corpus loading and validation failures."""


class MalformedLine(CorpusError):
    def __init__(self, path: str, line: int, cause: str):
        self.path = path
        self.line = line
        self.cause = cause
        super().__init__(f"{path}:{line}: {cause}")


class DanglingReference(CorpusError):
    def __init__(self, ref_id: str, context: str = ""):
        self.ref_id = ref_id
        super().__init__(f"dangling reference {ref_id!r}" + (f" ({context})" if context else ""))


class DimensionMismatch(CorpusError):
    def __init__(self, clip_id: str, detail: str):
        self.clip_id = clip_id
        super().__init__(f"clip {clip_id!r}: {detail}")


@dataclass
class ClipRecord:
    """One short clip: narration, optional state annotations, frame features."""

    clip_id: str
    video_id: str
    t_start: float
    t_end: float
    narration: str
    before: str | None = None
    after: str | None = None
    sc_cf: list[str] = field(default_factory=list)
    frame_features: list[list[float]] = field(default_factory=list)

    @property
    def annotated(self) -> bool:
        return self.before is not None and self.after is not None and len(self.sc_cf) > 0

    def frames_array(self) -> np.ndarray:
        return np.asarray(self.frame_features, dtype=np.float64)


@dataclass
class VideoRecord:
    """One long video: summary, its ordered clips, and summary counterfactuals."""

    video_id: str
    summary: str
    clip_ids: list[str] = field(default_factory=list)
    k_cf: list[str] = field(default_factory=list)
    m_cf: list[str] = field(default_factory=list)


@dataclass
class Corpus:
    clips: dict[str, ClipRecord]
    videos: dict[str, VideoRecord]
    d_in: int

    def clips_of(self, video_id: str) -> list[ClipRecord]:
        return [self.clips[cid] for cid in self.videos[video_id].clip_ids]

    def all_texts(self) -> list[tuple[str, str]]:
        """Every text field present, as (owner id, text), in a stable order."""
        out: list[tuple[str, str]] = []
        for cid in sorted(self.clips):
            c = self.clips[cid]
            out.append((cid, c.narration))
            if c.before is not None:
                out.append((cid, c.before))
            if c.after is not None:
                out.append((cid, c.after))
            for t in c.sc_cf:
                out.append((cid, t))
        for vid in sorted(self.videos):
            v = self.videos[vid]
            out.append((vid, v.summary))
            for t in v.k_cf + v.m_cf:
                out.append((vid, t))
        return out


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic corpus generator."""

    n_videos: int
    clips_per_video: int
    d_in: int
    noise_sigma: float
    seed: int
    frames_per_clip: int = DEFAULT_FRAMES_PER_CLIP

    def validate(self) -> None:
        if self.n_videos < 1 or self.clips_per_video < 1 or self.frames_per_clip < 1:
            raise ValueError("all counts must be >= 1")
        if self.d_in < 4:
            raise ValueError("d_in must be >= 4")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")


@dataclass
class Violation:
    record_id: str
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation]

    def __bool__(self) -> bool:
        return len(self.violations) == 0

    @property
    def ok(self) -> bool:
        return len(self.violations) == 0


# ---------------------------------------------------------------------------
# JSONL persistence


def _read_jsonl(path: str | Path) -> list[tuple[int, dict]]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedLine(str(path), lineno, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise MalformedLine(str(path), lineno, "expected a JSON object")
            rows.append((lineno, obj))
    return rows


def _require(obj: dict, key: str, path: str, lineno: int):
    if key not in obj:
        raise MalformedLine(path, lineno, f"missing field {key!r}")
    return obj[key]


def load_corpus(
    clips_path: str | Path,
    videos_path: str | Path,
    frames_per_clip: int = DEFAULT_FRAMES_PER_CLIP,
) -> Corpus:
    """Load and fully validate a corpus from its two JSONL files.

    Raises MalformedLine, DimensionMismatch, or DanglingReference on the first
    record that breaks the schema; a loaded Corpus always passes validate_corpus.
    """
    clips: dict[str, ClipRecord] = {}
    d_in: int | None = None
    for lineno, obj in _read_jsonl(clips_path):
        cid = _require(obj, "clip_id", str(clips_path), lineno)
        rec = ClipRecord(
            clip_id=cid,
            video_id=_require(obj, "video_id", str(clips_path), lineno),
            t_start=float(_require(obj, "t_start", str(clips_path), lineno)),
            t_end=float(_require(obj, "t_end", str(clips_path), lineno)),
            narration=_require(obj, "narration", str(clips_path), lineno),
            before=obj.get("before"),
            after=obj.get("after"),
            sc_cf=list(obj.get("sc_cf") or []),
            frame_features=[list(map(float, v)) for v in _require(obj, "frame_features", str(clips_path), lineno)],
        )
        if cid in clips:
            raise MalformedLine(str(clips_path), lineno, f"duplicate clip_id {cid!r}")
        if len(rec.frame_features) != frames_per_clip:
            raise DimensionMismatch(cid, f"expected {frames_per_clip} frame vectors, got {len(rec.frame_features)}")
        for vec in rec.frame_features:
            if d_in is None:
                d_in = len(vec)
            if len(vec) != d_in:
                raise DimensionMismatch(cid, f"frame vector of dimension {len(vec)}, expected {d_in}")
        clips[cid] = rec

    videos: dict[str, VideoRecord] = {}
    for lineno, obj in _read_jsonl(videos_path):
        vid = _require(obj, "video_id", str(videos_path), lineno)
        rec = VideoRecord(
            video_id=vid,
            summary=_require(obj, "summary", str(videos_path), lineno),
            clip_ids=list(_require(obj, "clip_ids", str(videos_path), lineno)),
            k_cf=list(obj.get("k_cf") or []),
            m_cf=list(obj.get("m_cf") or []),
        )
        if vid in videos:
            raise MalformedLine(str(videos_path), lineno, f"duplicate video_id {vid!r}")
        videos[vid] = rec

    for vid, vrec in videos.items():
        for cid in vrec.clip_ids:
            if cid not in clips:
                raise DanglingReference(cid, f"video {vid} references unknown clip")
    for cid, crec in clips.items():
        if crec.video_id not in videos:
            raise DanglingReference(crec.video_id, f"clip {cid} names unknown video")
        if cid not in videos[crec.video_id].clip_ids:
            raise DanglingReference(cid, f"clip not listed by its video {crec.video_id}")

    corpus = Corpus(clips=clips, videos=videos, d_in=d_in or 0)
    report = validate_corpus(corpus, frames_per_clip=frames_per_clip)
    if not report.ok:
        v = report.violations[0]
        raise MalformedLine(str(clips_path), 0, f"{v.record_id}: {v.message}")
    return corpus


def save_corpus(corpus: Corpus, clips_path: str | Path, videos_path: str | Path) -> None:
    """Write the two JSONL files; field order and float formatting are stable."""
    with open(clips_path, "w", encoding="utf-8") as fh:
        for cid in sorted(corpus.clips):
            c = corpus.clips[cid]
            obj: dict = {
                "clip_id": c.clip_id,
                "video_id": c.video_id,
                "t_start": c.t_start,
                "t_end": c.t_end,
                "narration": c.narration,
            }
            if c.before is not None:
                obj["before"] = c.before
            if c.after is not None:
                obj["after"] = c.after
            if c.sc_cf:
                obj["sc_cf"] = c.sc_cf
            obj["frame_features"] = c.frame_features
            fh.write(json.dumps(obj) + "\n")
    with open(videos_path, "w", encoding="utf-8") as fh:
        for vid in sorted(corpus.videos):
            v = corpus.videos[vid]
            obj = {"video_id": v.video_id, "summary": v.summary, "clip_ids": v.clip_ids}
            if v.k_cf:
                obj["k_cf"] = v.k_cf
            if v.m_cf:
                obj["m_cf"] = v.m_cf
            fh.write(json.dumps(obj) + "\n")


def load_corpus_dir(directory: str | Path, frames_per_clip: int = DEFAULT_FRAMES_PER_CLIP) -> Corpus:
    d = Path(directory)
    return load_corpus(d / "clips.jsonl", d / "videos.jsonl", frames_per_clip=frames_per_clip)


def save_corpus_dir(corpus: Corpus, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_corpus(corpus, d / "clips.jsonl", d / "videos.jsonl")


# ---------------------------------------------------------------------------
# Validation


def validate_corpus(corpus: Corpus, frames_per_clip: int = DEFAULT_FRAMES_PER_CLIP) -> ValidationReport:
    """Check every record invariant; violations are data, not exceptions.

    The report is deterministic and ordered by record id.
    """
    violations: list[Violation] = []

    for cid in sorted(corpus.clips):
        c = corpus.clips[cid]
        if not (c.t_start < c.t_end):
            violations.append(Violation(cid, "negative duration"))
        if not c.narration:
            violations.append(Violation(cid, "empty narration"))
        if (c.before is None) != (c.after is None):
            violations.append(Violation(cid, "unpaired state change"))
        if len(set(c.sc_cf)) != len(c.sc_cf):
            violations.append(Violation(cid, "duplicate sc_cf entries"))
        if len(c.frame_features) != frames_per_clip:
            violations.append(Violation(cid, f"expected {frames_per_clip} frame vectors, got {len(c.frame_features)}"))
        for vec in c.frame_features:
            if len(vec) != corpus.d_in:
                violations.append(Violation(cid, f"frame vector dimension {len(vec)} != {corpus.d_in}"))
                break
        if c.video_id not in corpus.videos:
            violations.append(Violation(cid, f"unknown video {c.video_id!r}"))
        elif cid not in corpus.videos[c.video_id].clip_ids:
            violations.append(Violation(cid, "orphan clip: not listed by its video"))

    for vid in sorted(corpus.videos):
        v = corpus.videos[vid]
        if not v.summary:
            violations.append(Violation(vid, "empty summary"))
        if not v.clip_ids:
            violations.append(Violation(vid, "video has no clips"))
        if len(set(v.k_cf)) != len(v.k_cf):
            violations.append(Violation(vid, "duplicate k_cf entries"))
        if len(set(v.m_cf)) != len(v.m_cf):
            violations.append(Violation(vid, "duplicate m_cf entries"))
        last_start = None
        for cid in v.clip_ids:
            c = corpus.clips.get(cid)
            if c is None:
                violations.append(Violation(vid, f"unknown clip {cid!r}"))
                continue
            if c.video_id != vid:
                violations.append(Violation(vid, f"clip {cid!r} belongs to video {c.video_id!r}"))
            if last_start is not None and c.t_start < last_start:
                violations.append(Violation(vid, "clips out of temporal order"))
            last_start = c.t_start

    violations.sort(key=lambda v: (v.record_id, v.message))
    return ValidationReport(violations)


# ---------------------------------------------------------------------------
# Synthetic corpus with a known latent procedure structure


@dataclass
class VideoLatents:
    """Ground truth for one synthetic video: the latent state chain."""

    video_id: str
    states: np.ndarray          # (clips_per_video + 1, d_in), unit rows
    frame_state_index: dict[str, list[int]]  # clip_id -> nearest-state index per frame


@dataclass
class SynthOracle:
    spec: SynthSpec
    videos: list[VideoLatents]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for v in self.videos:
                obj = {
                    "video_id": v.video_id,
                    "states": [list(row) for row in v.states.tolist()],
                    "frame_state_index": v.frame_state_index,
                }
                fh.write(json.dumps(obj) + "\n")

    @staticmethod
    def load(path: str | Path, spec: SynthSpec | None = None) -> "SynthOracle":
        videos = []
        for _, obj in _read_jsonl(path):
            videos.append(
                VideoLatents(
                    video_id=obj["video_id"],
                    states=np.asarray(obj["states"], dtype=np.float64),
                    frame_state_index={k: list(v) for k, v in obj["frame_state_index"].items()},
                )
            )
        return SynthOracle(spec=spec, videos=videos)


def _unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _clip_texts(vi: int, j: int) -> tuple[str, str, str, list[str]]:
    """Template texts for clip j (1-based) of video vi.

    Before/after name the latent states, so the after text of step j equals the
    before text of step j+1: adjacent clips agree on the shared state. The
    narration references both endpoint states (as a real narration would), which
    keeps pooled clip embeddings rankable against narrations even while the
    frame losses pin the first/last frames to the state texts.
    """
    narration = (
        f"#C C performs step{j} of task{vi} "
        f"from stage{j - 1} mark{vi}x{j - 1} to stage{j} mark{vi}x{j}"
    )
    before = _state_text(vi, j - 1)
    after = _state_text(vi, j)
    cfs = [f"step{j} of task{vi} goes wrong leaving fault{vi}x{j}x{c}" for c in (1, 2, 3)]
    return narration, before, after, cfs


def _state_text(vi: int, s: int) -> str:
    return f"task{vi} stands at stage{s} mark{vi}x{s}"


def _video_texts(vi: int, n_clips: int) -> tuple[str, list[str], list[str]]:
    summary = f"C carries task{vi} through every stage in order reaching finale{vi}"
    k_cf = [f"C performs task{vi} but leaves out step{k} gap{vi}x{k}" for k in range(1, n_clips + 1)]
    m_cf = [
        f"C performs task{vi} doing step{k + 1} before step{k} twist{vi}x{k}"
        for k in range(1, n_clips)
    ]
    return summary, k_cf, m_cf


def synthesize_corpus(spec: SynthSpec) -> tuple[Corpus, SynthOracle]:
    """Generate a corpus whose frame features follow a known latent procedure.

    Each video is a chain of unit latent states s_0..s_M; clip j interpolates
    s_{j-1} -> s_j across its frames and adds Gaussian noise whose norm is
    capped at 4*sigma, so feature norms stay <= 1 + 4*sigma. Texts are
    deterministic templates naming the task and step. Pure function of spec.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    M, K = spec.clips_per_video, spec.frames_per_clip
    clips: dict[str, ClipRecord] = {}
    videos: dict[str, VideoRecord] = {}
    latents: list[VideoLatents] = []

    alphas = np.linspace(0.0, 1.0, K) if K > 1 else np.array([1.0])
    for vi in range(spec.n_videos):
        video_id = f"v{vi:03d}"
        states = _unit_rows(rng, M + 1, spec.d_in)
        clip_ids = []
        frame_state_index: dict[str, list[int]] = {}
        for j in range(1, M + 1):
            clip_id = f"{video_id}c{j:02d}"
            feats = np.outer(1.0 - alphas, states[j - 1]) + np.outer(alphas, states[j])
            if spec.noise_sigma > 0:
                noise = rng.standard_normal((K, spec.d_in)) * spec.noise_sigma
                norms = np.linalg.norm(noise, axis=1, keepdims=True)
                cap = 4.0 * spec.noise_sigma
                noise *= np.minimum(1.0, cap / np.maximum(norms, 1e-300))
                feats = feats + noise
            narration, before, after, cfs = _clip_texts(vi, j)
            clips[clip_id] = ClipRecord(
                clip_id=clip_id,
                video_id=video_id,
                t_start=(j - 1) * 5.0,
                t_end=j * 5.0,
                narration=narration,
                before=before,
                after=after,
                sc_cf=cfs,
                frame_features=[list(row) for row in feats.tolist()],
            )
            clip_ids.append(clip_id)
            frame_state_index[clip_id] = [(j - 1) if a < 0.5 else j for a in alphas]
        summary, k_cf, m_cf = _video_texts(vi, M)
        videos[video_id] = VideoRecord(
            video_id=video_id, summary=summary, clip_ids=clip_ids, k_cf=k_cf, m_cf=m_cf
        )
        latents.append(VideoLatents(video_id=video_id, states=states, frame_state_index=frame_state_index))

    corpus = Corpus(clips=clips, videos=videos, d_in=spec.d_in)
    return corpus, SynthOracle(spec=spec, videos=latents)


def nearest_latent_accuracy(corpus: Corpus, oracle: SynthOracle) -> float:
    """Fraction of frames whose nearest latent state matches the intended label.

    Brute-force nearest neighbour against the owning video's full state chain.
    """
    total = 0
    hits = 0
    by_video = {v.video_id: v for v in oracle.videos}
    for cid in sorted(corpus.clips):
        clip = corpus.clips[cid]
        v = by_video[clip.video_id]
        feats = clip.frames_array()
        d2 = ((feats[:, None, :] - v.states[None, :, :]) ** 2).sum(axis=2)
        pred = d2.argmin(axis=1)
        truth = v.frame_state_index[cid]
        hits += int((pred == np.asarray(truth)).sum())
        total += len(truth)
    return hits / total if total else 0.0


def strip_annotations(corpus: Corpus) -> Corpus:
    """Copy of the corpus with all generated annotations removed."""
    clips = {
        cid: replace(c, before=None, after=None, sc_cf=[])
        for cid, c in corpus.clips.items()
    }
    videos = {vid: replace(v, k_cf=[], m_cf=[]) for vid, v in corpus.videos.items()}
    return Corpus(clips=clips, videos=videos, d_in=corpus.d_in)
