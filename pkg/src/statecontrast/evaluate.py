"""Desk-scale probes of procedure awareness.

Three measurements against a corpus with known pairings:
  * retrieval: rank narration (or summary) texts by dot product per visual item,
  * phase probe: classify first/last frames against before/after state texts,
  * margin: similarity to the true summary minus the best counterfactual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus
from .embed import EmbeddingTable
from .losses import counterfactual_margin
from .model import ModelParams, aggregate, clip_embedding, encode_frames
from .trainer import TrainConfig


@dataclass
class RetrievalReport:
    recall_at_1: float
    recall_at_5: float
    mean_rank: float
    n_queries: int
    n_candidates: int

    def to_json(self) -> dict:
        return {
            "recall_at_1": self.recall_at_1,
            "recall_at_5": self.recall_at_5,
            "mean_rank": self.mean_rank,
            "n_queries": self.n_queries,
            "n_candidates": self.n_candidates,
        }


@dataclass
class PhaseReport:
    accuracy: float
    confusion: list[list[int]]   # rows: true before/after; cols: predicted
    n: int

    def to_json(self) -> dict:
        return {"accuracy": self.accuracy, "confusion": self.confusion, "n": self.n}


@dataclass
class MarginReport:
    mean: float | None
    minimum: float | None
    fraction_positive: float | None
    n: int

    def to_json(self) -> dict:
        return {
            "mean": self.mean,
            "min": self.minimum,
            "fraction_positive": self.fraction_positive,
            "n": self.n,
        }


def rank_retrieval(visuals: dict[str, np.ndarray], texts: dict[str, np.ndarray]) -> RetrievalReport:
    """Rank every candidate text per visual item; the matching id is the target.

    Ties break toward the smaller text id, so reports are deterministic even
    when scores coincide.
    """
    text_ids = sorted(texts)
    t_mat = np.stack([texts[i] for i in text_ids])
    ranks = []
    for qid in sorted(visuals):
        scores = t_mat @ visuals[qid]
        order = sorted(range(len(text_ids)), key=lambda j: (-scores[j], text_ids[j]))
        rank = order.index(text_ids.index(qid)) + 1
        ranks.append(rank)
    ranks = np.asarray(ranks)
    return RetrievalReport(
        recall_at_1=float((ranks == 1).mean()),
        recall_at_5=float((ranks <= 5).mean()),
        mean_rank=float(ranks.mean()),
        n_queries=len(ranks),
        n_candidates=len(text_ids),
    )


def _clip_visuals(params: ModelParams, corpus: Corpus, cfg: TrainConfig) -> dict[str, np.ndarray]:
    out = {}
    for cid in sorted(corpus.clips):
        f, _ = encode_frames(params, corpus.clips[cid].frames_array())
        v, _ = clip_embedding(f, pool=cfg.pool)
        out[cid] = v
    return out


def _video_visuals(params: ModelParams, corpus: Corpus, cfg: TrainConfig) -> dict[str, np.ndarray]:
    out = {}
    for vid in sorted(corpus.videos):
        rows = []
        for clip in corpus.clips_of(vid):
            f, _ = encode_frames(params, clip.frames_array())
            v, _ = clip_embedding(f, pool=cfg.pool)
            rows.append(v)
        big_v, _ = aggregate(params, np.stack(rows), positional=cfg.positional)
        out[vid] = big_v
    return out


def retrieval_eval(
    params: ModelParams,
    corpus: Corpus,
    table: EmbeddingTable,
    cfg: TrainConfig,
    level: str = "clip",
) -> RetrievalReport:
    """Clip-to-narration or video-to-summary retrieval over the whole corpus."""
    if level == "clip":
        visuals = _clip_visuals(params, corpus, cfg)
        texts = {cid: table.vector(corpus.clips[cid].narration) for cid in corpus.clips}
    elif level == "video":
        visuals = _video_visuals(params, corpus, cfg)
        texts = {vid: table.vector(corpus.videos[vid].summary) for vid in corpus.videos}
    else:
        raise ValueError(f"unknown retrieval level {level!r}")
    return rank_retrieval(visuals, texts)


def phase_probe(
    params: ModelParams, corpus: Corpus, table: EmbeddingTable, cfg: TrainConfig
) -> PhaseReport:
    """Classify first/last frame embeddings against the clip's state texts.

    Correct means the first frame lands nearer the before text and the last
    frame nearer the after text. Clips without state annotations are skipped.
    """
    confusion = [[0, 0], [0, 0]]
    for cid in sorted(corpus.clips):
        clip = corpus.clips[cid]
        if clip.before is None or clip.after is None:
            continue
        f, _ = encode_frames(params, clip.frames_array())
        tb = table.vector(clip.before)
        ta = table.vector(clip.after)
        for true_idx, frame in ((0, f[0]), (1, f[-1])):
            pred = 0 if frame @ tb >= frame @ ta else 1
            confusion[true_idx][pred] += 1
    n = sum(sum(row) for row in confusion)
    acc = (confusion[0][0] + confusion[1][1]) / n if n else 0.0
    return PhaseReport(accuracy=acc, confusion=confusion, n=n)


def margin_eval(
    params: ModelParams, corpus: Corpus, table: EmbeddingTable, cfg: TrainConfig
) -> MarginReport:
    """Aggregate counterfactual margins over every video that carries them."""
    visuals = _video_visuals(params, corpus, cfg)
    vids = [vid for vid in sorted(corpus.videos) if corpus.videos[vid].k_cf or corpus.videos[vid].m_cf]
    if not vids:
        return MarginReport(mean=None, minimum=None, fraction_positive=None, n=0)
    v = np.stack([visuals[vid] for vid in vids])
    s = np.stack([table.vector(corpus.videos[vid].summary) for vid in vids])
    cf = [
        np.stack([table.vector(t) for t in corpus.videos[vid].k_cf + corpus.videos[vid].m_cf])
        for vid in vids
    ]
    margins = [m for m in counterfactual_margin(v, s, cf) if m is not None]
    arr = np.asarray(margins)
    return MarginReport(
        mean=float(arr.mean()),
        minimum=float(arr.min()),
        fraction_positive=float((arr > 0).mean()),
        n=len(margins),
    )
