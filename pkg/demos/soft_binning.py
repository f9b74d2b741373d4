"""
Soft-binned regression targets
==============================

Instead of regressing a motion score directly, the network predicts a
probability distribution over 40 score bins and is trained with a KL
divergence against a soft label: a Gaussian bump centered on the true
score.  This shows the encode/decode pair and why the soft target is
kinder to optimization than a one-hot.
"""

import numpy as np

from headmotion import BinGrid, decode, encode, kl_loss

grid = BinGrid()  # 40 bins over [0, 3.12] mm/s
print(f"grid: {grid.count} bins of width {grid.width:.4f} over "
      f"[{grid.vmin}, {grid.vmax}] mm/s")

# Encoding places a Gaussian (sigma = bin width by default) on the score
# and renormalizes over the bins.
label = encode(0.8, grid)
top = np.argsort(label.probabilities)[::-1][:3]
print(f"\nencode(0.8): mass concentrates near bin centers "
      f"{[round(float(grid.centers[i]), 3) for i in top]}")
print(f"probabilities sum to {label.probabilities.sum():.12f}")

# Decoding is the probability-weighted mean of bin centers, so a round
# trip lands within a fraction of a bin of where it started.
for score in (0.1, 0.8, 1.5, 2.9):
    back = decode(encode(score, grid).probabilities, grid)
    print(f"  {score:.2f} -> decode(encode) = {back:.4f}")

# A wider sigma admits more neighbor bins; labels get smoother.
for sigma in (0.5 * grid.width, grid.width, 3 * grid.width):
    lab = encode(0.8, grid, sigma=sigma)
    nonzero = np.sum(lab.probabilities > 1e-6)
    print(f"sigma {sigma:.3f}: {nonzero} bins carry visible mass")

# KL against the soft target falls smoothly as a prediction approaches
# the truth, unlike an all-or-nothing hit on the right bin.  (kl_loss
# also hands back the gradient w.r.t. pre-softmax logits, p - t, which
# is what the trainer backpropagates.)
target = encode(0.8, grid).probabilities
print("\nKL(target || prediction centered at s):")
for s in (0.2, 0.5, 0.7, 0.8):
    pred = encode(s, grid).probabilities
    loss, _grad = kl_loss(target, pred)
    print(f"  s={s:.1f}: {loss:8.4f}")

# Uniform prediction decodes to mid-grid: maximal ignorance, mid answer.
uniform = np.full(grid.count, 1.0 / grid.count)
print(f"\nuniform prediction decodes to {decode(uniform, grid):.4f} "
      f"(grid midpoint {0.5 * (grid.vmin + grid.vmax):.4f})")
