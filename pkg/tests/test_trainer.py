import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from statecontrast.corpus import SynthSpec, synthesize_corpus
from statecontrast.embed import embed_corpus
from statecontrast.losses import LossConfig
from statecontrast.model import ModelParams
from statecontrast.trainer import (
    EmptyCorpus,
    MetricsLog,
    NonFiniteGradient,
    OptimizerState,
    ShapeMismatch,
    StepRecord,
    TrainConfig,
    VersionMismatch,
    adamw_step,
    load_checkpoint,
    make_schedule,
    run_gradcheck,
    save_checkpoint,
    train,
)


def scalar_params(value=1.0):
    return ModelParams(
        w1=np.array([[value]]), b1=np.zeros(1), w2=np.zeros((1, 1)), b2=np.zeros(1),
        wq=np.zeros((1, 1)), wk=np.zeros((1, 1)), wv=np.zeros((1, 1)), wo=np.zeros((1, 1)),
    )


# ---------------------------------------------------------------------------
# Schedule


def test_schedule_thirty_batches_six_parents():
    corpus, _ = synthesize_corpus(SynthSpec(n_videos=10, clips_per_video=6, d_in=4, noise_sigma=0.0, seed=1))
    cfg = TrainConfig(d_in=4, batch_size=2, video_batch=2, epochs=1)  # 60 clips -> 30 batches
    steps = make_schedule(corpus, cfg)
    assert sum(1 for s in steps if s.kind == "parent") == 6
    assert sum(1 for s in steps if s.kind == "child") == 30


def test_schedule_three_batches_no_parent():
    corpus, _ = synthesize_corpus(SynthSpec(n_videos=2, clips_per_video=3, d_in=4, noise_sigma=0.0, seed=1))
    cfg = TrainConfig(d_in=4, batch_size=2, video_batch=1, epochs=1)  # 6 clips -> 3 batches
    steps = make_schedule(corpus, cfg)
    assert sum(1 for s in steps if s.kind == "parent") == 0


def test_schedule_deterministic():
    corpus, _ = synthesize_corpus(SynthSpec(n_videos=3, clips_per_video=4, d_in=4, noise_sigma=0.0, seed=2))
    cfg = TrainConfig(d_in=4, batch_size=3, video_batch=2, epochs=2, seed=5)
    assert make_schedule(corpus, cfg) == make_schedule(corpus, cfg)


def test_schedule_leftover_forms_short_batch():
    corpus, _ = synthesize_corpus(SynthSpec(n_videos=1, clips_per_video=7, d_in=4, noise_sigma=0.0, seed=3))
    cfg = TrainConfig(d_in=4, batch_size=3, video_batch=1, epochs=1)
    child_sizes = [len(s.ids) for s in make_schedule(corpus, cfg) if s.kind == "child"]
    assert sorted(child_sizes) == [1, 3, 3]


def test_schedule_covers_every_clip_once_per_epoch():
    corpus, _ = synthesize_corpus(SynthSpec(n_videos=3, clips_per_video=5, d_in=4, noise_sigma=0.0, seed=4))
    cfg = TrainConfig(d_in=4, batch_size=4, video_batch=2, epochs=1)
    seen = [cid for s in make_schedule(corpus, cfg) if s.kind == "child" for cid in s.ids]
    assert sorted(seen) == sorted(corpus.clips)


@given(st.integers(min_value=1, max_value=12), st.integers(min_value=1, max_value=8),
       st.integers(min_value=1, max_value=40), st.integers(min_value=0, max_value=10_000))
@settings(max_examples=20, deadline=None)
def test_schedule_law_property(n_videos, clips_per_video, batch_size, seed):
    corpus, _ = synthesize_corpus(
        SynthSpec(n_videos=n_videos, clips_per_video=clips_per_video, d_in=4, noise_sigma=0.0, seed=seed)
    )
    cfg = TrainConfig(d_in=4, batch_size=batch_size, video_batch=2, epochs=1, seed=seed)
    steps = make_schedule(corpus, cfg)
    n_child = sum(1 for s in steps if s.kind == "child")
    n_parent = sum(1 for s in steps if s.kind == "parent")
    assert n_parent == n_child // cfg.child_steps_per_parent
    # prefix law: one parent after every full block of child steps
    c = p = 0
    for s in steps:
        if s.kind == "child":
            c += 1
        else:
            p += 1
        assert p == min(c // cfg.child_steps_per_parent, p)


def test_schedule_empty_corpus():
    from statecontrast.corpus import Corpus

    with pytest.raises(EmptyCorpus):
        make_schedule(Corpus(clips={}, videos={}, d_in=4), TrainConfig(d_in=4))


# ---------------------------------------------------------------------------
# AdamW


def test_adamw_hand_computed_first_step():
    # theta=1, g=0.5, lr=0.01, wd=0.1, fresh state: update = 0.01 * 0.5/0.5,
    # decay = 0.001; theta' = 0.9890 to 4 dp.
    cfg = TrainConfig(d_in=1, d_h=1, d=1, lr=0.01, weight_decay=0.1)
    p = scalar_params(1.0)
    g = p.zeros_like()
    g.w1[0, 0] = 0.5
    p2, s2 = adamw_step(p, g, OptimizerState.fresh(p), cfg)
    assert p2.w1[0, 0] == pytest.approx(0.9890, abs=5e-5)
    assert s2.step == 1


def test_adamw_zero_gradient_zero_decay_is_identity():
    cfg = TrainConfig(d_in=1, d_h=1, d=1, lr=0.01, weight_decay=0.0)
    p = scalar_params(1.37)
    p2, _ = adamw_step(p, p.zeros_like(), OptimizerState.fresh(p), cfg)
    for (_, a), (_, b) in zip(p.named_arrays(), p2.named_arrays()):
        assert np.array_equal(a, b)


def test_adamw_rejects_nan_gradient():
    cfg = TrainConfig(d_in=1, d_h=1, d=1)
    p = scalar_params()
    g = p.zeros_like()
    g.w1[0, 0] = float("nan")
    with pytest.raises(NonFiniteGradient):
        adamw_step(p, g, OptimizerState.fresh(p), cfg)


def test_adamw_weight_decay_applied_once_per_step():
    # two steps with zero gradients: theta shrinks by (1 - lr*wd) each step
    cfg = TrainConfig(d_in=1, d_h=1, d=1, lr=0.1, weight_decay=0.5)
    p = scalar_params(1.0)
    s = OptimizerState.fresh(p)
    p, s = adamw_step(p, p.zeros_like(), s, cfg)
    assert p.w1[0, 0] == pytest.approx(0.95, abs=1e-12)
    p, s = adamw_step(p, p.zeros_like(), s, cfg)
    assert p.w1[0, 0] == pytest.approx(0.95 * 0.95, abs=1e-12)
    assert s.step == 2


# ---------------------------------------------------------------------------
# Training loop


def test_train_zero_epochs_returns_initial(small_corpus):
    corpus, _ = small_corpus
    cfg = TrainConfig(d_in=6, d_h=8, d=8, epochs=0)
    from statecontrast.model import init_params

    params, log = train(corpus, cfg)
    assert log.records == []
    expected = init_params(6, 8, 8, cfg.seed)
    for (_, a), (_, b) in zip(params.named_arrays(), expected.named_arrays()):
        assert np.array_equal(a, b)


def test_train_two_runs_bitwise_identical(small_corpus):
    corpus, _ = small_corpus
    cfg = TrainConfig(d_in=6, d_h=8, d=8, epochs=3, batch_size=4, video_batch=2, lr=1e-3, seed=9)
    p1, l1 = train(corpus, cfg)
    p2, l2 = train(corpus, cfg)
    for (_, a), (_, b) in zip(p1.named_arrays(), p2.named_arrays()):
        assert np.array_equal(a, b)
    assert [r.loss for r in l1.records] == [r.loss for r in l2.records]


def test_train_optimizer_steps_match_schedule(small_corpus):
    corpus, _ = small_corpus
    cfg = TrainConfig(d_in=6, d_h=8, d=8, epochs=2, batch_size=4, video_batch=2, lr=1e-3)
    _, log = train(corpus, cfg)
    assert len(log.records) == len(make_schedule(corpus, cfg))
    assert [r.step for r in log.records] == list(range(1, len(log.records) + 1))


def test_train_frozen_table_unchanged(small_corpus, small_cfg):
    corpus, _ = small_corpus
    table = embed_corpus(small_cfg.embedder(), corpus)
    digest = table.digest()
    cfg = TrainConfig(d_in=6, d_h=8, d=8, epochs=2, batch_size=4, video_batch=2, lr=1e-3)
    train(corpus, cfg, table=table)
    assert table.digest() == digest


def test_train_rejects_wrong_dims(small_corpus):
    corpus, _ = small_corpus
    with pytest.raises(ShapeMismatch):
        train(corpus, TrainConfig(d_in=12, d_h=8, d=8, epochs=1))


def test_metrics_log_monotone_steps():
    log = MetricsLog()
    log.append(StepRecord(1, "child", 1.0, {}, 0.1, 2.0))
    with pytest.raises(ValueError):
        log.append(StepRecord(1, "child", 1.0, {}, 0.1, 2.0))


def test_metrics_jsonl_excludes_wall_time(tmp_path):
    log = MetricsLog()
    log.append(StepRecord(1, "child", 1.5, {"v2t": 1.5}, 0.2, 3.25))
    log.write_jsonl(tmp_path / "metrics.jsonl")
    row = json.loads((tmp_path / "metrics.jsonl").read_text().splitlines()[0])
    assert "wall_ms" not in row
    assert row == {"step": 1, "kind": "child", "loss": 1.5, "components": {"v2t": 1.5}, "grad_norm": 0.2}


# ---------------------------------------------------------------------------
# Checkpoints


def test_checkpoint_round_trip_bitwise(tmp_path, small_corpus):
    corpus, _ = small_corpus
    cfg = TrainConfig(d_in=6, d_h=8, d=8, epochs=1, batch_size=4, video_batch=2, lr=1e-3)
    params, log = train(corpus, cfg)
    path = tmp_path / "ckpt.json"
    save_checkpoint(path, params, None, cfg, step=len(log.records))
    loaded, state, cfg2, step = load_checkpoint(path)
    assert state is None and step == len(log.records) and cfg2 == cfg
    for (_, a), (_, b) in zip(params.named_arrays(), loaded.named_arrays()):
        assert np.array_equal(a, b)


def test_checkpoint_round_trips_optimizer_state(tmp_path):
    cfg = TrainConfig(d_in=1, d_h=1, d=1, lr=0.01)
    p = scalar_params(0.5)
    g = p.zeros_like()
    g.w1[0, 0] = 0.25
    p2, s2 = adamw_step(p, g, OptimizerState.fresh(p), cfg)
    save_checkpoint(tmp_path / "c.json", p2, s2, cfg, step=1)
    _, state, _, _ = load_checkpoint(tmp_path / "c.json")
    assert state.step == 1
    assert np.array_equal(state.m.w1, s2.m.w1)
    assert np.array_equal(state.v.w1, s2.v.w1)


def test_checkpoint_tampered_shape_rejected(tmp_path):
    cfg = TrainConfig(d_in=1, d_h=1, d=1)
    save_checkpoint(tmp_path / "c.json", scalar_params(), None, cfg, step=0)
    doc = json.loads((tmp_path / "c.json").read_text())
    doc["params"]["w1"]["shape"] = [2, 1]
    (tmp_path / "c.json").write_text(json.dumps(doc))
    with pytest.raises(ShapeMismatch):
        load_checkpoint(tmp_path / "c.json")


def test_checkpoint_config_dim_mismatch_rejected(tmp_path):
    cfg = TrainConfig(d_in=1, d_h=1, d=1)
    save_checkpoint(tmp_path / "c.json", scalar_params(), None, cfg, step=0)
    doc = json.loads((tmp_path / "c.json").read_text())
    doc["config"]["d"] = 32
    (tmp_path / "c.json").write_text(json.dumps(doc))
    with pytest.raises(ShapeMismatch):
        load_checkpoint(tmp_path / "c.json")


def test_checkpoint_version_mismatch(tmp_path):
    cfg = TrainConfig(d_in=1, d_h=1, d=1)
    save_checkpoint(tmp_path / "c.json", scalar_params(), None, cfg, step=0)
    doc = json.loads((tmp_path / "c.json").read_text())
    doc["version"] = "scp-ckpt-0"
    (tmp_path / "c.json").write_text(json.dumps(doc))
    with pytest.raises(VersionMismatch):
        load_checkpoint(tmp_path / "c.json")


def test_train_config_json_round_trip():
    cfg = TrainConfig(d_in=6, d_h=8, d=8, lr=2e-3, loss=LossConfig(tau=0.07, lam=0.5, w_cap=2))
    obj = cfg.to_json()
    assert obj["loss"]["lambda"] == 0.5 and "lam" not in obj["loss"]
    assert TrainConfig.from_json(json.loads(json.dumps(obj))) == cfg


# ---------------------------------------------------------------------------
# Gradcheck driver


def test_run_gradcheck_small_dims_passes():
    cfg = TrainConfig(d_in=6, d_h=8, d=8, loss=LossConfig(tau=0.1))
    report = run_gradcheck(cfg, seed=3)
    assert report["child_max_rel_err"] < 1e-4
    assert report["parent_max_rel_err"] < 1e-4
