"""Trainable model pieces with analytic forward and backward passes.

Three maps, all ending in L2 normalization:
  * frame encoder: two-layer ReLU MLP from raw frame features to unit vectors,
  * frame -> clip pooling: normalized mean (or last frame),
  * clip -> video aggregator: one residual self-attention block, mean-pooled.

Backward passes are hand-derived and validated against central finite
differences by grad_check.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable

import numpy as np

NORM_FLOOR = 1e-8


class ModelError(Exception):
    pass


class DegenerateNorm(ModelError):
    def __init__(self, where: str):
        super().__init__(f"{where}: pre-normalization norm below {NORM_FLOOR}")


class NonFiniteLoss(ModelError):
    pass


@dataclass
class ModelParams:
    """Encoder and aggregator weights. Gradients share this exact shape."""

    w1: np.ndarray  # (d_h, d_in)
    b1: np.ndarray  # (d_h,)
    w2: np.ndarray  # (d, d_h)
    b2: np.ndarray  # (d,)
    wq: np.ndarray  # (d, d)
    wk: np.ndarray  # (d, d)
    wv: np.ndarray  # (d, d)
    wo: np.ndarray  # (d, d)

    def named_arrays(self) -> list[tuple[str, np.ndarray]]:
        return [(f.name, getattr(self, f.name)) for f in fields(self)]

    def copy(self) -> "ModelParams":
        return ModelParams(**{n: a.copy() for n, a in self.named_arrays()})

    def zeros_like(self) -> "ModelParams":
        return ModelParams(**{n: np.zeros_like(a) for n, a in self.named_arrays()})

    def add_(self, other: "ModelParams", scale: float = 1.0) -> None:
        for (n, a), (_, b) in zip(self.named_arrays(), other.named_arrays()):
            a += scale * b

    def allfinite(self) -> bool:
        return all(np.isfinite(a).all() for _, a in self.named_arrays())

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float((a * a).sum()) for _, a in self.named_arrays())))

    @property
    def d_in(self) -> int:
        return self.w1.shape[1]

    @property
    def d_h(self) -> int:
        return self.w1.shape[0]

    @property
    def d(self) -> int:
        return self.w2.shape[0]


Gradients = ModelParams  # same container, different role


def init_params(d_in: int, d_h: int, d: int, seed: int) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases.

    Aggregator weights are scaled by 0.1 so the attention path starts close to
    the residual identity.
    """
    rng = np.random.default_rng(seed)

    def u(rows, cols, fan_in, scale=1.0):
        b = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-b, b, size=(rows, cols)) * scale

    return ModelParams(
        w1=u(d_h, d_in, d_in),
        b1=np.zeros(d_h),
        w2=u(d, d_h, d_h),
        b2=np.zeros(d),
        wq=u(d, d, d, 0.1),
        wk=u(d, d, d, 0.1),
        wv=u(d, d, d, 0.1),
        wo=u(d, d, d, 0.1),
    )


def random_params(d_in: int, d_h: int, d: int, seed: int) -> ModelParams:
    """Generic random point for gradient verification.

    Unlike init_params, attention weights are unscaled and biases nonzero, so
    no gradient is artificially close to the finite-difference noise floor.
    """
    rng = np.random.default_rng(seed)

    def u(*shape):
        fan_in = shape[-1]
        b = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-b, b, size=shape)

    return ModelParams(
        w1=u(d_h, d_in),
        b1=rng.uniform(-0.5, 0.5, size=d_h),
        w2=u(d, d_h),
        b2=rng.uniform(-0.5, 0.5, size=d),
        wq=u(d, d),
        wk=u(d, d),
        wv=u(d, d),
        wo=u(d, d),
    )


def _normalize_rows(y: np.ndarray, where: str) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(y, axis=-1, keepdims=True)
    if np.any(norms < NORM_FLOOR):
        raise DegenerateNorm(where)
    return y / norms, norms


def _normalize_backward(grad_out: np.ndarray, unit: np.ndarray, norms: np.ndarray) -> np.ndarray:
    # d(y/|y|)/dy applied to grad_out: (g - u (u.g)) / |y|, rowwise
    proj = (unit * grad_out).sum(axis=-1, keepdims=True)
    return (grad_out - unit * proj) / norms


# ---------------------------------------------------------------------------
# Frame encoder


@dataclass
class EncodeTrace:
    x: np.ndarray       # (K, d_in)
    h_pre: np.ndarray   # (K, d_h)
    h: np.ndarray       # (K, d_h)
    f: np.ndarray       # (K, d), unit rows
    norms: np.ndarray   # (K, 1)
    consumed: bool = False

    def mark_consumed(self):
        if self.consumed:
            raise RuntimeError("forward trace already consumed by a backward pass")
        self.consumed = True


def encode_frames(p: ModelParams, x: np.ndarray) -> tuple[np.ndarray, EncodeTrace]:
    """Map K raw frame vectors to K unit-norm embeddings."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    h_pre = x @ p.w1.T + p.b1
    h = np.maximum(h_pre, 0.0)
    y = h @ p.w2.T + p.b2
    f, norms = _normalize_rows(y, "encode_frames")
    return f, EncodeTrace(x=x, h_pre=h_pre, h=h, f=f, norms=norms)


def encode_frames_backward(p: ModelParams, trace: EncodeTrace, df: np.ndarray, grads: Gradients) -> None:
    """Accumulate dL/dparams given dL/df for one clip's frames."""
    trace.mark_consumed()
    dy = _normalize_backward(df, trace.f, trace.norms)
    grads.w2 += dy.T @ trace.h
    grads.b2 += dy.sum(axis=0)
    dh = dy @ p.w2
    dh_pre = dh * (trace.h_pre > 0)
    grads.w1 += dh_pre.T @ trace.x
    grads.b1 += dh_pre.sum(axis=0)


def min_preactivation_gap(p: ModelParams, x: np.ndarray) -> float:
    """Smallest |pre-activation| over the batch; used to dodge ReLU kinks."""
    x = np.asarray(x, dtype=np.float64)
    h_pre = x @ p.w1.T + p.b1
    return float(np.abs(h_pre).min()) if h_pre.size else np.inf


# ---------------------------------------------------------------------------
# Frame -> clip pooling


@dataclass
class PoolTrace:
    kind: str
    k: int
    v: np.ndarray
    norm: np.ndarray | None
    consumed: bool = False

    def mark_consumed(self):
        if self.consumed:
            raise RuntimeError("forward trace already consumed by a backward pass")
        self.consumed = True


def clip_embedding(f: np.ndarray, pool: str = "mean") -> tuple[np.ndarray, PoolTrace]:
    """Pool K unit frame embeddings into one unit clip embedding."""
    if f.shape[0] < 1:
        raise ValueError("need at least one frame")
    if pool == "last":
        v = f[-1]
        return v, PoolTrace(kind="last", k=f.shape[0], v=v, norm=None)
    m = f.mean(axis=0)
    v, norm = _normalize_rows(m[None, :], "clip_embedding")
    v = v[0]
    return v, PoolTrace(kind="mean", k=f.shape[0], v=v, norm=norm)


def clip_embedding_backward(trace: PoolTrace, dv: np.ndarray) -> np.ndarray:
    """Return dL/df (K, d) given dL/dv."""
    trace.mark_consumed()
    if trace.kind == "last":
        df = np.zeros((trace.k, dv.shape[-1]))
        df[-1] = dv
        return df
    dm = _normalize_backward(dv[None, :], trace.v[None, :], trace.norm)[0]
    return np.tile(dm / trace.k, (trace.k, 1))


# ---------------------------------------------------------------------------
# Clip -> video aggregator (one residual self-attention block)


def sinusoidal_positions(m: int, d: int) -> np.ndarray:
    pos = np.arange(m)[:, None].astype(np.float64)
    i = np.arange(d)[None, :]
    angles = pos / np.power(10000.0, (2 * (i // 2)) / d)
    pe = np.where(i % 2 == 0, np.sin(angles), np.cos(angles))
    return pe


@dataclass
class AggTrace:
    x: np.ndarray     # (M, d) block input (positions already added if enabled)
    q: np.ndarray
    k: np.ndarray
    vv: np.ndarray
    a: np.ndarray     # (M, M) attention rows
    c: np.ndarray     # (M, d) attention output before Wo
    u: np.ndarray     # (d,) mean of residual rows
    big_v: np.ndarray # (d,) unit output
    norm: np.ndarray
    consumed: bool = False

    def mark_consumed(self):
        if self.consumed:
            raise RuntimeError("forward trace already consumed by a backward pass")
        self.consumed = True


def aggregate(p: ModelParams, clips: np.ndarray, positional: bool = False) -> tuple[np.ndarray, AggTrace]:
    """Self-attention over M clip embeddings, residual, mean pool, normalize."""
    x = np.asarray(clips, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("clips must be (M, d) with M >= 1")
    if positional:
        x = x + sinusoidal_positions(x.shape[0], x.shape[1])
    d = x.shape[1]
    q = x @ p.wq
    k = x @ p.wk
    vv = x @ p.wv
    scores = q @ k.T / np.sqrt(d)
    scores = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(scores)
    a = e / e.sum(axis=1, keepdims=True)
    c = a @ vv
    h = x + c @ p.wo
    u = h.mean(axis=0)
    big_v, norm = _normalize_rows(u[None, :], "aggregate")
    big_v = big_v[0]
    return big_v, AggTrace(x=x, q=q, k=k, vv=vv, a=a, c=c, u=u, big_v=big_v, norm=norm)


def aggregate_backward(p: ModelParams, trace: AggTrace, dV: np.ndarray, grads: Gradients) -> np.ndarray:
    """Accumulate aggregator weight grads; return dL/dclips (M, d)."""
    trace.mark_consumed()
    x, a, c, vv, q, k = trace.x, trace.a, trace.c, trace.vv, trace.q, trace.k
    m, d = x.shape
    du = _normalize_backward(dV[None, :], trace.big_v[None, :], trace.norm)[0]
    dh = np.tile(du / m, (m, 1))
    dx = dh.copy()
    do = dh
    grads.wo += c.T @ do
    dc = do @ p.wo.T
    da = dc @ vv.T
    dvv = a.T @ dc
    # softmax rows: ds = a * (da - sum(a*da))
    ds = a * (da - (a * da).sum(axis=1, keepdims=True))
    dq = ds @ k / np.sqrt(d)
    dk = ds.T @ q / np.sqrt(d)
    grads.wq += x.T @ dq
    grads.wk += x.T @ dk
    grads.wv += x.T @ dvv
    dx += dq @ p.wq.T + dk @ p.wk.T + dvv @ p.wv.T
    return dx


# ---------------------------------------------------------------------------
# Finite-difference gradient verification

LossClosure = Callable[[ModelParams], tuple[float, Gradients]]


def grad_check(loss_closure: LossClosure, p: ModelParams, eps: float = 1e-5, atol: float = 0.0) -> float:
    """Max relative error between analytic and central-difference gradients.

    The closure must be deterministic and must not mutate its argument. The
    relative error denominator is max(|analytic|, |numeric|, atol, 1e-12).
    atol > 0 acknowledges the resolution limit of the difference quotient,
    roughly |loss| * ulp / eps in absolute terms: an entry whose analytic and
    numeric values both sit below atol is agreement, not signal, while a wrong
    analytic value above atol still drives the ratio toward 1.
    """
    loss0, analytic = loss_closure(p)
    if not np.isfinite(loss0):
        raise NonFiniteLoss(f"loss at base point is {loss0}")
    worst = 0.0
    for (name, arr), (_, g) in zip(p.named_arrays(), analytic.named_arrays()):
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + eps
            lp, _ = loss_closure(p)
            arr[idx] = orig - eps
            lm, _ = loss_closure(p)
            arr[idx] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise NonFiniteLoss(f"loss non-finite while perturbing {name}{idx}")
            numeric = (lp - lm) / (2.0 * eps)
            ana = float(g[idx])
            rel = abs(ana - numeric) / max(abs(ana), abs(numeric), atol, 1e-12)
            worst = max(worst, rel)
    return worst
