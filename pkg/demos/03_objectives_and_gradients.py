"""The three contrastive objectives on crafted embeddings, plus gradient checks.

Reproduces the closed-form values (ln 2, ln 5, ln 3) on uniform-similarity
fixtures and verifies the analytic backward passes against central finite
differences.
"""

import math

import numpy as np

from statecontrast.corpus import ClipRecord
from statecontrast.losses import (
    LossConfig,
    assemble_frame_sets,
    clip_alignment_loss,
    counterfactual_margin,
    frame_state_loss,
    parent_loss,
)
from statecontrast.trainer import TrainConfig, run_gradcheck

u = np.zeros(8)
u[0] = 1.0

# clip alignment: two identical pairs -> every similarity equal -> ln 2
v = np.stack([u, u])
loss, _ = clip_alignment_loss(v, v.copy(), LossConfig(tau=0.07))
print(f"clip alignment, |B|=2 uniform: {loss:.9f}  (ln 2 = {math.log(2):.9f})")

# frame state loss: one clip, three counterfactuals, all vectors identical
clip = ClipRecord(
    clip_id="c", video_id="v", t_start=0.0, t_end=1.0,
    narration="#C C works", before="b", after="a",
    sc_cf=["w1", "w2", "w3"],
    frame_features=[[0.0] * 6] * 4,
)
asm = assemble_frame_sets([clip], LossConfig(frame_batch_negatives=False))
emb = np.tile(u, (len(asm.entries), 1))
res = frame_state_loss(asm, emb, LossConfig(tau=0.1, frame_batch_negatives=False))
print(f"frame state loss per family:   {res.before:.9f}  (ln 5 = {math.log(5):.9f})")

# parent loss: one video, two counterfactuals, uniform similarities -> ln 3
loss, _, _ = parent_loss(u[None, :], u[None, :].copy(), [np.stack([u, u])], LossConfig(tau=0.05))
print(f"parent loss, |B|=1 W=2:        {loss:.9f}  (ln 3 = {math.log(3):.9f})")

# counterfactual margin: aligned summary, orthogonal counterfactual
w = np.zeros(8)
w[1] = 1.0
margin = counterfactual_margin(u[None, :], u[None, :].copy(), [w[None, :]])
print(f"margin with orthogonal cf:     {margin[0]:.3f}")

# finite-difference verification of both full closures
cfg = TrainConfig(d_in=6, d_h=8, d=8, loss=LossConfig(tau=0.1))
report = run_gradcheck(cfg, seed=0)
print(f"\ngradient check (eps={report['eps']}):")
print(f"  child closure max rel err:  {report['child_max_rel_err']:.2e}")
print(f"  parent closure max rel err: {report['parent_max_rel_err']:.2e}")
