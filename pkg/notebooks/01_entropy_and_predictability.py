"""
How predictable is a user?
==========================

Walk through the LZ entropy estimator on toy sequences, then on a synthetic
population, and turn entropy into a ceiling on next-location accuracy.
Run with ``python notebooks/01_entropy_and_predictability.py``.
"""

import numpy as np

from mobcurriculum.entropy import entropy_histogram, fano_max_accuracy, lz_entropy, lz_parse, normalized_entropy
from mobcurriculum.synth import SynthConfig, synth_generate, synth_entropy_sweep

# The parser cuts a sequence into the shortest phrases it has not produced yet.
for seq in ([7] * 6, [1, 2, 1, 1, 2, 2], [1, 2, 1]):
    p = lz_parse(seq)
    print(seq, "->", list(p.phrases), "mean phrase length", p.mean_phrase_len)

# Long repetitive sequences get long phrases, hence low entropy.
print("constant, N=5050:", normalized_entropy([0] * 5050))
print("alternating, N=2000:", round(normalized_entropy([0, 1] * 1000), 4))
rng = np.random.default_rng(0)
print("iid over 40000 symbols, N=10000:", round(normalized_entropy(rng.integers(0, 40_000, 10_000)), 4))
# with a small alphabet the same iid draw reads as fairly regular: phrases grow like log N / log |alphabet|
print("iid over 100 symbols, N=10000:", round(normalized_entropy(rng.integers(0, 100, 10_000)), 4))

# A synthetic city: commuters, explorers and random walkers.
res = synth_generate(SynthConfig(num_users=60, seed=1))
hist = entropy_histogram(res.dataset, bins=10)
for lo, hi, c in zip(hist.edges[:-1], hist.edges[1:], hist.counts):
    print(f"[{lo:.1f}, {hi:.1f})  {'#' * int(c)}")

# More detours make commuters less predictable.
for noise, h in synth_entropy_sweep(SynthConfig(num_users=20, seed=2), [0.0, 0.05, 0.2, 0.5]):
    print(f"noise {noise:4.2f} -> mean H_norm {h:.3f}")

# Fano: with H bits of uncertainty over Q places, no predictor beats phi.
q = 400
for bits in (0.5, 2.0, 5.0, np.log2(q)):
    print(f"H={bits:5.2f} bits, Q={q}: max accuracy {fano_max_accuracy(bits, q):.3f}")

traj = res.dataset.trajectories["0"]
print("user 0 LZ entropy rate (bits):", round(lz_entropy(lz_parse(traj.x * 200 + traj.y)), 3))
