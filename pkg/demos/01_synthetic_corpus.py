"""Build a synthetic corpus with known latent structure and poke at it.

Each video is a chain of latent unit vectors; each clip's frames walk from one
state to the next with a little noise. Texts are templates naming the task and
step, so every record has a known retrieval target.
"""

import numpy as np

from statecontrast.corpus import (
    SynthSpec,
    nearest_latent_accuracy,
    save_corpus_dir,
    synthesize_corpus,
    validate_corpus,
)

spec = SynthSpec(n_videos=4, clips_per_video=5, d_in=16, noise_sigma=0.05, seed=7)
corpus, oracle = synthesize_corpus(spec)

print(f"corpus: {len(corpus.clips)} clips across {len(corpus.videos)} videos, d_in={corpus.d_in}")

report = validate_corpus(corpus)
print(f"validation violations: {len(report.violations)}")

clip = corpus.clips[sorted(corpus.clips)[0]]
print("\nfirst clip:")
print("  narration:", clip.narration)
print("  before:   ", clip.before)
print("  after:    ", clip.after)
print("  sc_cf[0]: ", clip.sc_cf[0])

video = corpus.videos[clip.video_id]
print("\nits video:")
print("  summary:", video.summary)
print("  k_cf[0]:", video.k_cf[0])
print("  m_cf[0]:", video.m_cf[0])

# frames interpolate between consecutive latent states
latents = oracle.videos[0]
feats = clip.frames_array()
d_first = np.linalg.norm(feats[0] - latents.states[0])
d_last = np.linalg.norm(feats[-1] - latents.states[1])
print(f"\nframe 0 distance to state 0: {d_first:.3f} (noise scale {spec.noise_sigma})")
print(f"frame K-1 distance to state 1: {d_last:.3f}")

acc = nearest_latent_accuracy(corpus, oracle)
print(f"nearest-latent step recovery: {acc:.3f}")

save_corpus_dir(corpus, "/tmp/statecontrast_demo_corpus")
oracle.save("/tmp/statecontrast_demo_corpus/oracle.jsonl")
print("\nwrote /tmp/statecontrast_demo_corpus/{clips,videos,oracle}.jsonl")
