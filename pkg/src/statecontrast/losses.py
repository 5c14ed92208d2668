"""Contrastive objectives over frames, clips, and videos, with analytic gradients.

Three losses share one temperature:
  * frame-level state losses: the first frame is pulled toward its neighbour and
    the before-state text, pushed from the last frame, the after-state text, and
    every state-change counterfactual; the last frame symmetrically. The
    denominator ranges over negatives only, so per-anchor terms may go negative.
  * clip-level alignment: softmax contrast of clip embeddings against the batch
    of narration embeddings, positives inside the log.
  * video-level alignment: video embeddings against batch summaries plus the
    video's own counterfactual summaries as extra hard negatives; summed, not
    averaged, over the batch.

Text embeddings are frozen everywhere: their gradient entries are exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import ClipRecord
from .embed import EmbeddingTable, tokenize
from .model import (
    Gradients,
    ModelParams,
    clip_embedding,
    clip_embedding_backward,
    encode_frames,
    encode_frames_backward,
)

KIND_FRAME = "frame"
KIND_BEFORE = "before_text"
KIND_AFTER = "after_text"
KIND_CF = "cf_text"

TEXT_KINDS = {KIND_BEFORE, KIND_AFTER, KIND_CF}


class LossError(Exception):
    pass


class MissingAnnotation(LossError):
    def __init__(self, clip_id: str):
        self.clip_id = clip_id
        super().__init__(f"clip {clip_id!r} lacks before/after/counterfactual annotations")


class EmptyNegatives(LossError):
    pass


class EmptyDenominator(LossError):
    pass


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.05
    lam: float = 1.0
    frame_batch_negatives: bool = True
    mining: str = "self_only"            # self_only | token_overlap
    parent_positive_in_denominator: bool = True
    parent_cf_scope: str = "own"         # own | batch
    w_cap: int = 4

    def __post_init__(self):
        if not (0.0 < self.tau <= 10.0):
            raise ValueError("tau must lie in (0, 10]")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.mining not in ("self_only", "token_overlap"):
            raise ValueError(f"unknown mining mode {self.mining!r}")
        if self.w_cap < 0:
            raise ValueError("w_cap must be nonnegative")


def _logsumexp(x: np.ndarray) -> float:
    m = float(x.max())
    return m + float(np.log(np.exp(x - m).sum()))


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max())
    return e / e.sum()


# ---------------------------------------------------------------------------
# Positive mining over narrations


def narration_token_roles(narration: str) -> tuple[set, set]:
    """Split tokens into verb-like and noun-like sets.

    Position-based heuristic: any token that directly follows the actor token
    "c" counts as a verb; remaining non-actor tokens count as nouns.
    """
    toks = tokenize(narration)
    verbs = {toks[i + 1] for i in range(len(toks) - 1) if toks[i] == "c" and toks[i + 1] != "c"}
    nouns = {t for t in toks if t != "c" and t not in verbs}
    return verbs, nouns


def mine_positive_sets(texts: Sequence[str] | None, n: int, mining: str) -> list[list[int]]:
    """Positive index sets P(i) over a batch; item i is always its own positive."""
    if mining == "self_only" or texts is None:
        return [[i] for i in range(n)]
    roles = [narration_token_roles(t) for t in texts]
    out = []
    for i in range(n):
        vi, ni = roles[i]
        pos = [i]
        for j in range(n):
            if j == i:
                continue
            vj, nj = roles[j]
            if (vi & vj) and (ni & nj):
                pos.append(j)
        out.append(sorted(pos))
    return out


# ---------------------------------------------------------------------------
# Frame-level batch assembly


@dataclass(frozen=True)
class ArenaEntry:
    kind: str
    clip_id: str
    slot: int = 0


@dataclass
class BatchAssembly:
    """Explicit positive/negative index sets over a flat embedding arena."""

    entries: list[ArenaEntry]
    anchors: list[int]
    anchor_family: list[str]             # before | after, parallel to anchors
    positives: list[list[int]]
    negatives: list[list[int]]

    def check(self) -> None:
        for p, n in zip(self.positives, self.negatives):
            if not p:
                raise ValueError("empty positive set")
            if set(p) & set(n):
                raise ValueError("positive and negative sets overlap")


def assemble_frame_sets(clips: Sequence[ClipRecord], cfg: LossConfig) -> BatchAssembly:
    """Build the state-loss anchors for a batch of annotated clips.

    For each clip with K frames: the first frame anchors the before loss with
    positives {f1, before-text} and negatives {f_last, after-text, all
    counterfactual texts}; the last frame anchors the after loss symmetrically.
    With batch negatives on, the first/last frames and all state texts of every
    other clip join the negative set.
    """
    entries: list[ArenaEntry] = []
    index: dict[tuple[str, str, int], int] = {}

    def put(kind: str, clip_id: str, slot: int = 0) -> int:
        key = (kind, clip_id, slot)
        if key not in index:
            index[key] = len(entries)
            entries.append(ArenaEntry(kind, clip_id, slot))
        return index[key]

    per_clip: list[dict] = []
    for clip in clips:
        if clip.before is None or clip.after is None or not clip.sc_cf:
            raise MissingAnnotation(clip.clip_id)
        k = len(clip.frame_features)
        if k < 3:
            raise ValueError(f"clip {clip.clip_id!r}: state losses need at least 3 frames")
        frames = [put(KIND_FRAME, clip.clip_id, f) for f in range(k)]
        per_clip.append(
            {
                "frames": frames,
                "before": put(KIND_BEFORE, clip.clip_id),
                "after": put(KIND_AFTER, clip.clip_id),
                "cfs": [put(KIND_CF, clip.clip_id, c) for c in range(len(clip.sc_cf))],
            }
        )

    anchors, families, positives, negatives = [], [], [], []
    for ci, info in enumerate(per_clip):
        fr = info["frames"]
        extras: list[int] = []
        if cfg.frame_batch_negatives:
            for cj, other in enumerate(per_clip):
                if cj == ci:
                    continue
                extras += [other["frames"][0], other["frames"][-1], other["before"], other["after"]]
                extras += other["cfs"]

        anchors.append(fr[0])
        families.append("before")
        positives.append([fr[1], info["before"]])
        negatives.append([fr[-1], info["after"]] + info["cfs"] + extras)

        anchors.append(fr[-1])
        families.append("after")
        positives.append([fr[-2], info["after"]])
        negatives.append([fr[0], info["before"]] + info["cfs"] + extras)

    asm = BatchAssembly(entries, anchors, families, positives, negatives)
    asm.check()
    return asm


def arena_embeddings(
    assembly: BatchAssembly,
    frame_embeddings: dict[str, np.ndarray],
    clips_by_id: dict[str, ClipRecord],
    table: EmbeddingTable,
) -> np.ndarray:
    """Materialize the arena: frame rows from the encoder, text rows frozen."""
    d = next(iter(frame_embeddings.values())).shape[1]
    out = np.zeros((len(assembly.entries), d))
    for i, e in enumerate(assembly.entries):
        if e.kind == KIND_FRAME:
            out[i] = frame_embeddings[e.clip_id][e.slot]
        else:
            clip = clips_by_id[e.clip_id]
            text = {KIND_BEFORE: clip.before, KIND_AFTER: clip.after}.get(e.kind)
            if e.kind == KIND_CF:
                text = clip.sc_cf[e.slot]
            out[i] = table.vector(text)
    return out


def frame_anchor_term(pos_logits: np.ndarray, neg_logits: np.ndarray) -> float:
    """One anchor's contribution: mean positive logit against the negative log-partition."""
    if neg_logits.size == 0:
        raise EmptyNegatives("anchor has no negatives")
    return float(_logsumexp(neg_logits) - pos_logits.mean())


@dataclass
class FrameLossResult:
    total: float
    before: float
    after: float
    grads: np.ndarray   # (n_entries, d); exactly zero on text rows


def frame_state_loss(assembly: BatchAssembly, embeddings: np.ndarray, cfg: LossConfig) -> FrameLossResult:
    """Before + after state losses over the assembled anchors.

    Each family is averaged over its anchors. Gradients flow to frame rows only.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    grads = np.zeros_like(emb)
    fam_values = {"before": 0.0, "after": 0.0}
    fam_counts = {"before": 0, "after": 0}
    for anchor, fam, _, _ in zip(assembly.anchors, assembly.anchor_family, assembly.positives, assembly.negatives):
        fam_counts[fam] += 1

    frame_rows = np.array([e.kind == KIND_FRAME for e in assembly.entries])

    for anchor, fam, pos, neg in zip(
        assembly.anchors, assembly.anchor_family, assembly.positives, assembly.negatives
    ):
        fa = emb[anchor]
        pos_logits = emb[pos] @ fa / cfg.tau
        neg_logits = emb[neg] @ fa / cfg.tau
        fam_values[fam] += frame_anchor_term(pos_logits, neg_logits)

        scale = 1.0 / fam_counts[fam]
        q = _softmax(neg_logits)
        danchor = np.zeros_like(fa)
        coeff_p = -1.0 / (len(pos) * cfg.tau)
        for p in pos:
            danchor += coeff_p * emb[p]
            if frame_rows[p]:
                grads[p] += scale * coeff_p * fa
        for qn, n in zip(q, neg):
            c = qn / cfg.tau
            danchor += c * emb[n]
            if frame_rows[n]:
                grads[n] += scale * c * fa
        grads[anchor] += scale * danchor

    before = fam_values["before"] / max(fam_counts["before"], 1)
    after = fam_values["after"] / max(fam_counts["after"], 1)
    return FrameLossResult(total=before + after, before=before, after=after, grads=grads)


# ---------------------------------------------------------------------------
# Clip-level alignment


def clip_alignment_loss(
    v: np.ndarray,
    t: np.ndarray,
    cfg: LossConfig,
    narrations: Sequence[str] | None = None,
) -> tuple[float, np.ndarray]:
    """Softmax contrast of clip embeddings against batch narration embeddings.

    Returns the loss and its gradient with respect to v; narration embeddings
    are frozen.
    """
    v = np.asarray(v, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if v.shape != t.shape or v.ndim != 2 or v.shape[0] < 1:
        raise ValueError("v and t must be matching (B, d) batches with B >= 1")
    b = v.shape[0]
    pos_sets = mine_positive_sets(narrations, b, cfg.mining)
    sim = v @ t.T / cfg.tau
    loss = 0.0
    dsim = np.zeros_like(sim)
    for i in range(b):
        p = pos_sets[i]
        loss -= (_logsumexp(sim[i, p]) - _logsumexp(sim[i])) / b
        dsim[i, p] -= _softmax(sim[i, p]) / b
        dsim[i] += _softmax(sim[i]) / b
    dv = dsim @ t / cfg.tau
    return loss, dv


# ---------------------------------------------------------------------------
# Child objective through the encoder


@dataclass
class ChildLossResult:
    total: float
    v2t: float
    before: float
    after: float
    grads: Gradients


def child_loss(
    params: ModelParams,
    clips: Sequence[ClipRecord],
    table: EmbeddingTable,
    cfg: LossConfig,
    pool: str = "mean",
) -> ChildLossResult:
    """Clip alignment plus weighted state losses, backpropagated into the model.

    Clips without state annotations still join the alignment term but are
    excluded from the frame-level losses.
    """
    if not clips:
        raise ValueError("empty clip batch")
    grads = params.zeros_like()

    frame_embs: dict[str, np.ndarray] = {}
    traces = {}
    pool_traces = {}
    v_rows = []
    t_rows = []
    for clip in clips:
        f, tr = encode_frames(params, clip.frames_array())
        frame_embs[clip.clip_id] = f
        traces[clip.clip_id] = tr
        cv, ptr = clip_embedding(f, pool=pool)
        pool_traces[clip.clip_id] = ptr
        v_rows.append(cv)
        t_rows.append(table.vector(clip.narration))

    v2t, dv = clip_alignment_loss(
        np.stack(v_rows), np.stack(t_rows), cfg, narrations=[c.narration for c in clips]
    )

    df_total = {c.clip_id: clip_embedding_backward(pool_traces[c.clip_id], dv[i]) for i, c in enumerate(clips)}

    annotated = [c for c in clips if c.annotated]
    before = after = 0.0
    if annotated and cfg.lam != 0.0:
        assembly = assemble_frame_sets(annotated, cfg)
        arena = arena_embeddings(assembly, frame_embs, {c.clip_id: c for c in annotated}, table)
        fres = frame_state_loss(assembly, arena, cfg)
        before, after = fres.before, fres.after
        for row, entry in zip(fres.grads, assembly.entries):
            if entry.kind == KIND_FRAME:
                df_total[entry.clip_id][entry.slot] += cfg.lam * row

    for clip in clips:
        encode_frames_backward(params, traces[clip.clip_id], df_total[clip.clip_id], grads)

    total = v2t + cfg.lam * (before + after)
    return ChildLossResult(total=total, v2t=v2t, before=before, after=after, grads=grads)


# ---------------------------------------------------------------------------
# Video-level alignment with counterfactual hard negatives


def parent_loss(
    v: np.ndarray,
    s: np.ndarray,
    cf: Sequence[np.ndarray],
    cfg: LossConfig,
    summaries: Sequence[str] | None = None,
) -> tuple[float, np.ndarray, list[np.ndarray]]:
    """Video-to-summary contrast with counterfactual summaries in the denominator.

    cf[i] holds the counterfactual embeddings attached to video i (possibly
    empty). Summed over the batch, not averaged. Returns (loss, dV, dcf) where
    dcf entries are zero arrays (counterfactual texts are frozen); they are
    returned so callers can assert the frozen contract.
    """
    v = np.asarray(v, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if v.shape != s.shape or v.ndim != 2 or v.shape[0] < 1:
        raise ValueError("V and S must be matching (B, d) batches with B >= 1")
    b = v.shape[0]
    cf = [np.asarray(c, dtype=np.float64).reshape(-1, v.shape[1]) for c in cf]
    if len(cf) != b:
        raise ValueError("one counterfactual list per video required")
    pos_sets = mine_positive_sets(summaries, b, cfg.mining)

    sim = v @ s.T / cfg.tau
    loss = 0.0
    dv = np.zeros_like(v)
    dcf = [np.zeros_like(c) for c in cf]
    for i in range(b):
        p = pos_sets[i]
        if cfg.parent_positive_in_denominator:
            denom_idx = list(range(b))
        else:
            denom_idx = [j for j in range(b) if j not in p]
        if cfg.parent_cf_scope == "batch":
            cf_block = np.concatenate(cf, axis=0) if any(len(c) for c in cf) else np.zeros((0, v.shape[1]))
        else:
            cf_block = cf[i]
        cf_logits = cf_block @ v[i] / cfg.tau
        denom_logits = np.concatenate([sim[i, denom_idx], cf_logits])
        if denom_logits.size == 0:
            raise EmptyDenominator(f"video {i}: nothing in the denominator")
        loss -= _logsumexp(sim[i, p]) - _logsumexp(denom_logits)

        wpos = _softmax(sim[i, p])
        wden = _softmax(denom_logits)
        dv[i] -= (wpos[:, None] * s[p]).sum(axis=0) / cfg.tau
        k = len(denom_idx)
        if k:
            dv[i] += (wden[:k, None] * s[denom_idx]).sum(axis=0) / cfg.tau
        if cf_block.shape[0]:
            dv[i] += (wden[k:, None] * cf_block).sum(axis=0) / cfg.tau
    return loss, dv, dcf


def counterfactual_margin(
    v: np.ndarray, s: np.ndarray, cf: Sequence[np.ndarray]
) -> list[float | None]:
    """Per video: similarity to its own summary minus its best counterfactual.

    None marks a video without counterfactuals (vacuous max).
    """
    v = np.asarray(v, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    out: list[float | None] = []
    for i in range(v.shape[0]):
        ci = np.asarray(cf[i], dtype=np.float64).reshape(-1, v.shape[1])
        if ci.shape[0] == 0:
            out.append(None)
        else:
            out.append(float(v[i] @ s[i] - (ci @ v[i]).max()))
    return out
