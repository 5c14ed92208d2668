"""Alternating clip-level / video-level training loop.

The schedule interleaves one video-level (parent) step after every
child_steps_per_parent clip-level (child) steps. Child steps optimize clip
alignment plus the frame state losses; parent steps push video embeddings
toward their summary and away from sampled counterfactual summaries, with
gradients flowing through the aggregator and, by default, the encoder.
Everything is deterministic given (corpus, config).
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Corpus
from .embed import EmbeddingTable, HashEmbedderConfig, embed_corpus
from .losses import LossConfig, child_loss, parent_loss
from .model import (
    Gradients,
    ModelParams,
    aggregate,
    aggregate_backward,
    clip_embedding,
    clip_embedding_backward,
    encode_frames,
    encode_frames_backward,
    init_params,
)

CHECKPOINT_VERSION = "scp-ckpt-1"


class TrainerError(Exception):
    pass


class EmptyCorpus(TrainerError):
    pass


class NonFiniteGradient(TrainerError):
    pass


class ShapeMismatch(TrainerError):
    pass


class VersionMismatch(TrainerError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    d_in: int = 16
    d_h: int = 32
    d: int = 32
    frames_per_clip: int = 4
    batch_size: int = 8
    video_batch: int = 4
    child_steps_per_parent: int = 5
    epochs: int = 1
    lr: float = 1e-5
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    seed: int = 0
    hash_seed: int = 2024
    pool: str = "mean"                 # mean | last
    positional: bool = False
    parent_grads_to_encoder: bool = True
    loss: LossConfig = field(default_factory=LossConfig)

    def embedder(self) -> HashEmbedderConfig:
        return HashEmbedderConfig(d=self.d, hash_seed=self.hash_seed)

    def to_json(self) -> dict:
        obj = asdict(self)
        loss = obj.pop("loss")
        loss["lambda"] = loss.pop("lam")
        obj["loss"] = loss
        return obj

    @staticmethod
    def from_json(obj: dict) -> "TrainConfig":
        obj = dict(obj)
        loss = dict(obj.pop("loss", {}))
        if "lambda" in loss:
            loss["lam"] = loss.pop("lambda")
        return TrainConfig(loss=LossConfig(**loss), **obj)

    @staticmethod
    def load(path: str | Path) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            return TrainConfig.from_json(json.load(fh))


@dataclass
class OptimizerState:
    m: ModelParams
    v: ModelParams
    step: int = 0

    @staticmethod
    def fresh(p: ModelParams) -> "OptimizerState":
        return OptimizerState(m=p.zeros_like(), v=p.zeros_like(), step=0)


@dataclass
class StepRecord:
    step: int
    kind: str                    # child | parent
    loss: float
    components: dict[str, float]
    grad_norm: float
    wall_ms: float


@dataclass
class MetricsLog:
    records: list[StepRecord] = field(default_factory=list)

    def append(self, rec: StepRecord) -> None:
        if self.records and rec.step <= self.records[-1].step:
            raise ValueError("steps must be strictly increasing")
        self.records.append(rec)

    def write_jsonl(self, path: str | Path, include_wall_time: bool = False) -> None:
        # Wall time is excluded by default so the file is run-to-run identical.
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                obj = {
                    "step": r.step,
                    "kind": r.kind,
                    "loss": r.loss,
                    "components": r.components,
                    "grad_norm": r.grad_norm,
                }
                if include_wall_time:
                    obj["wall_ms"] = r.wall_ms
                fh.write(json.dumps(obj) + "\n")


# ---------------------------------------------------------------------------
# Schedule


@dataclass(frozen=True)
class ScheduleStep:
    epoch: int
    kind: str            # child | parent
    ids: tuple[str, ...]


def make_schedule(corpus: Corpus, cfg: TrainConfig) -> list[ScheduleStep]:
    """Deterministic alternating schedule over all epochs.

    Per epoch: clips are shuffled and batched; after every
    child_steps_per_parent child steps one parent step is inserted, its videos
    taken from an independently shuffled, cycling video order. Leftover clips
    form a final short child batch.
    """
    clip_ids = sorted(corpus.clips)
    video_ids = sorted(corpus.videos)
    if not clip_ids or not video_ids:
        raise EmptyCorpus("schedule needs at least one clip and one video")
    steps: list[ScheduleStep] = []
    vb = min(cfg.video_batch, len(video_ids))
    for epoch in range(cfg.epochs):
        crng = np.random.default_rng([cfg.seed, epoch, 101])
        vrng = np.random.default_rng([cfg.seed, epoch, 202])
        cids = [clip_ids[i] for i in crng.permutation(len(clip_ids))]
        vids = [video_ids[i] for i in vrng.permutation(len(video_ids))]
        child_batches = [cids[i : i + cfg.batch_size] for i in range(0, len(cids), cfg.batch_size)]
        vcursor = 0
        for bi, batch in enumerate(child_batches, start=1):
            steps.append(ScheduleStep(epoch, "child", tuple(batch)))
            if bi % cfg.child_steps_per_parent == 0:
                vbatch = [vids[(vcursor + k) % len(vids)] for k in range(vb)]
                vcursor += vb
                steps.append(ScheduleStep(epoch, "parent", tuple(vbatch)))
    return steps


# ---------------------------------------------------------------------------
# Optimizer


def adamw_step(
    p: ModelParams, g: Gradients, s: OptimizerState, cfg: TrainConfig
) -> tuple[ModelParams, OptimizerState]:
    """One decoupled-weight-decay update. Returns new params and state."""
    if not g.allfinite():
        raise NonFiniteGradient("gradient contains non-finite entries")
    t = s.step + 1
    new_p, new_m, new_v = {}, {}, {}
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    for (name, theta), (_, grad), (_, m), (_, v) in zip(
        p.named_arrays(), g.named_arrays(), s.m.named_arrays(), s.v.named_arrays()
    ):
        m_new = cfg.beta1 * m + (1.0 - cfg.beta1) * grad
        v_new = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad
        m_hat = m_new / c1
        v_hat = v_new / c2
        theta_new = theta - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps_adam) - cfg.lr * cfg.weight_decay * theta
        new_p[name] = theta_new
        new_m[name] = m_new
        new_v[name] = v_new
    return ModelParams(**new_p), OptimizerState(m=ModelParams(**new_m), v=ModelParams(**new_v), step=t)


# ---------------------------------------------------------------------------
# Parent objective through aggregator and encoder


def pick_counterfactuals(video, w_cap: int, rng: np.random.Generator) -> list[str]:
    """Up to w_cap texts drawn without replacement from k_cf + m_cf."""
    pool = list(video.k_cf) + list(video.m_cf)
    if not pool or w_cap == 0:
        return []
    take = min(w_cap, len(pool))
    idx = rng.choice(len(pool), size=take, replace=False)
    return [pool[i] for i in sorted(idx)]


@dataclass
class ParentLossResult:
    total: float
    grads: Gradients
    margins: list[float | None]


def parent_objective(
    params: ModelParams,
    corpus: Corpus,
    video_ids: Sequence[str],
    table: EmbeddingTable,
    cfg: TrainConfig,
    cf_texts: Sequence[Sequence[str]],
) -> ParentLossResult:
    """Video-level loss for one batch, backpropagated through the full model."""
    grads = params.zeros_like()
    v_rows, s_rows, cf_blocks = [], [], []
    enc_traces, pool_traces, agg_traces = [], [], []
    for vid, cfs in zip(video_ids, cf_texts):
        video = corpus.videos[vid]
        clip_list = corpus.clips_of(vid)
        per_clip = []
        ptl = []
        rows = []
        for clip in clip_list:
            f, tr = encode_frames(params, clip.frames_array())
            cv, ptr = clip_embedding(f, pool=cfg.pool)
            per_clip.append(tr)
            ptl.append(ptr)
            rows.append(cv)
        x = np.stack(rows)
        big_v, atr = aggregate(params, x, positional=cfg.positional)
        v_rows.append(big_v)
        s_rows.append(table.vector(video.summary))
        cf_blocks.append(
            np.stack([table.vector(t) for t in cfs]) if cfs else np.zeros((0, params.d))
        )
        enc_traces.append(per_clip)
        pool_traces.append(ptl)
        agg_traces.append(atr)

    v_mat = np.stack(v_rows)
    s_mat = np.stack(s_rows)
    loss, dv, _ = parent_loss(v_mat, s_mat, cf_blocks, cfg.loss)
    from .losses import counterfactual_margin

    margins = counterfactual_margin(v_mat, s_mat, cf_blocks)

    for i, vid in enumerate(video_ids):
        dx = aggregate_backward(params, agg_traces[i], dv[i], grads)
        if cfg.parent_grads_to_encoder:
            for j, (tr, ptr) in enumerate(zip(enc_traces[i], pool_traces[i])):
                df = clip_embedding_backward(ptr, dx[j])
                encode_frames_backward(params, tr, df, grads)
    return ParentLossResult(total=loss, grads=grads, margins=margins)


# ---------------------------------------------------------------------------
# Training loop


def train(
    corpus: Corpus, cfg: TrainConfig, table: EmbeddingTable | None = None
) -> tuple[ModelParams, MetricsLog]:
    """Run the full alternating schedule; deterministic for a fixed config."""
    if not corpus.clips:
        raise EmptyCorpus("no clips to train on")
    if corpus.d_in != cfg.d_in:
        raise ShapeMismatch(f"corpus d_in {corpus.d_in} != config d_in {cfg.d_in}")
    if table is None:
        table = embed_corpus(cfg.embedder(), corpus)
    params = init_params(cfg.d_in, cfg.d_h, cfg.d, cfg.seed)
    state = OptimizerState.fresh(params)
    log = MetricsLog()
    schedule = make_schedule(corpus, cfg)
    cf_rng = np.random.default_rng([cfg.seed, 303])

    for step_no, step in enumerate(schedule, start=1):
        t0 = time.perf_counter()
        if step.kind == "child":
            clips = [corpus.clips[cid] for cid in step.ids]
            res = child_loss(params, clips, table, cfg.loss, pool=cfg.pool)
            loss_val = res.total
            components = {"v2t": res.v2t, "before": res.before, "after": res.after}
            grads = res.grads
        else:
            cf_texts = [
                pick_counterfactuals(corpus.videos[vid], cfg.loss.w_cap, cf_rng)
                for vid in step.ids
            ]
            pres = parent_objective(params, corpus, step.ids, table, cfg, cf_texts)
            loss_val = pres.total
            components = {"parent": pres.total}
            grads = pres.grads
        params, state = adamw_step(params, grads, state, cfg)
        log.append(
            StepRecord(
                step=step_no,
                kind=step.kind,
                loss=loss_val,
                components=components,
                grad_norm=grads.global_norm(),
                wall_ms=(time.perf_counter() - t0) * 1e3,
            )
        )
    return params, log


# ---------------------------------------------------------------------------
# Gradient verification driver


def run_gradcheck(
    cfg: TrainConfig,
    seed: int = 0,
    eps: float = 3e-5,
    n_clips: int = 2,
    n_videos: int = 3,
    clips_per_video: int = 3,
    atol: float = 2e-6,
) -> dict:
    """Check both full closures against central finite differences.

    Builds a small synthetic batch at the config's dimensions and a random
    parameter point, resampled whenever a ReLU pre-activation magnitude falls
    within 10*eps of the kink. The comparison floors its denominator at atol,
    the resolution limit of the difference quotient at these loss magnitudes
    (|loss|*ulp/eps plus rounding in the forward pass puts the quotient's
    absolute noise around 1e-10); gradient entries below that limit cannot be
    certified relatively, only for absolute agreement, which the floored ratio
    does. Returns the max relative error per closure.
    """
    from .corpus import SynthSpec, synthesize_corpus
    from .losses import child_loss
    from .model import grad_check, min_preactivation_gap, random_params

    spec = SynthSpec(
        n_videos=n_videos,
        clips_per_video=clips_per_video,
        d_in=cfg.d_in,
        noise_sigma=0.05,
        seed=seed,
        frames_per_clip=cfg.frames_per_clip,
    )
    corpus, _ = synthesize_corpus(spec)
    table = embed_corpus(cfg.embedder(), corpus)
    all_frames = np.concatenate([c.frames_array() for c in corpus.clips.values()])

    clips = [corpus.clips[cid] for cid in sorted(corpus.clips)[:n_clips]]
    video_ids = sorted(corpus.videos)
    rng = np.random.default_rng([seed, 404])
    cf_texts = [pick_counterfactuals(corpus.videos[v], cfg.loss.w_cap, rng) for v in video_ids]

    def child_closure(p):
        res = child_loss(p, clips, table, cfg.loss, pool=cfg.pool)
        return res.total, res.grads

    def parent_closure(p):
        res = parent_objective(p, corpus, video_ids, table, cfg, cf_texts)
        return res.total, res.grads

    pseed = seed
    while True:
        params = random_params(cfg.d_in, cfg.d_h, cfg.d, pseed)
        if min_preactivation_gap(params, all_frames) > 10.0 * eps:
            break
        pseed += 7919

    child_err = grad_check(child_closure, params, eps, atol=atol)
    parent_err = grad_check(parent_closure, params, eps, atol=atol)
    return {
        "seed": seed,
        "param_seed": pseed,
        "eps": eps,
        "child_max_rel_err": child_err,
        "parent_max_rel_err": parent_err,
    }


# ---------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(
    path: str | Path,
    params: ModelParams,
    state: OptimizerState | None,
    cfg: TrainConfig,
    step: int,
) -> None:
    doc: dict = {
        "version": CHECKPOINT_VERSION,
        "config": cfg.to_json(),
        "step": step,
        "params": {},
    }
    for name, arr in params.named_arrays():
        doc["params"][name] = {"shape": list(arr.shape), "data": arr.ravel().tolist()}
    if state is not None:
        doc["optimizer"] = {"step": state.step, "m": {}, "v": {}}
        for name, arr in state.m.named_arrays():
            doc["optimizer"]["m"][name] = {"shape": list(arr.shape), "data": arr.ravel().tolist()}
        for name, arr in state.v.named_arrays():
            doc["optimizer"]["v"][name] = {"shape": list(arr.shape), "data": arr.ravel().tolist()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def _expected_shapes(cfg: TrainConfig) -> dict[str, tuple[int, ...]]:
    return {
        "w1": (cfg.d_h, cfg.d_in),
        "b1": (cfg.d_h,),
        "w2": (cfg.d, cfg.d_h),
        "b2": (cfg.d,),
        "wq": (cfg.d, cfg.d),
        "wk": (cfg.d, cfg.d),
        "wv": (cfg.d, cfg.d),
        "wo": (cfg.d, cfg.d),
    }


def _tensor_from(doc: dict, name: str, expected: tuple[int, ...]) -> np.ndarray:
    entry = doc.get(name)
    if entry is None:
        raise ShapeMismatch(f"missing tensor {name!r}")
    shape = tuple(entry["shape"])
    if shape != expected:
        raise ShapeMismatch(f"tensor {name!r}: shape {shape} != expected {expected}")
    arr = np.asarray(entry["data"], dtype=np.float64)
    if arr.size != int(np.prod(shape)):
        raise ShapeMismatch(f"tensor {name!r}: data length {arr.size} != shape {shape}")
    return arr.reshape(shape)


def load_checkpoint(path: str | Path) -> tuple[ModelParams, OptimizerState | None, TrainConfig, int]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint version {doc.get('version')!r}, expected {CHECKPOINT_VERSION!r}")
    cfg = TrainConfig.from_json(doc["config"])
    shapes = _expected_shapes(cfg)
    params = ModelParams(**{n: _tensor_from(doc["params"], n, shapes[n]) for n in shapes})
    state = None
    if "optimizer" in doc:
        opt = doc["optimizer"]
        state = OptimizerState(
            m=ModelParams(**{n: _tensor_from(opt["m"], n, shapes[n]) for n in shapes}),
            v=ModelParams(**{n: _tensor_from(opt["v"], n, shapes[n]) for n in shapes}),
            step=int(opt["step"]),
        )
    return params, state, cfg, int(doc["step"])
