"""The joint objective: cross-entropy plus a weighted Barlow Twins term.

Run with ``python demos/barlow_twins_loss.py``.
"""
import numpy as np

from dalbt.cli import toy_gradcheck
from dalbt.losses import LossWeights, barlow_twins_terms, cross_correlation, joint_loss, softmax

rng = np.random.default_rng(0)

# Two embeddings of the same batch. When the second view is a noisy copy of
# the first, the cross-correlation matrix is close to the identity.
z1 = rng.normal(size=(32, 4))
z2 = z1 + 0.1 * rng.normal(size=z1.shape)
c = cross_correlation(z1, z2)
print("C for near-identical views:\n", c.round(3))

inv, red = barlow_twins_terms(c, lambda_bt=0.005)
print(f"invariance {inv:.4f}  weighted redundancy {red:.6f}")

# Unrelated views decorrelate the diagonal and the invariance term grows.
c_far = cross_correlation(z1, rng.normal(size=z1.shape))
print(f"invariance for unrelated views {barlow_twins_terms(c_far, 0.005)[0]:.3f}")

# The classifier term is ordinary cross-entropy on the undistorted input.
probs = softmax(rng.normal(size=(32, 3)))
labels = rng.integers(0, 3, 32)
for gamma in (0.0, 0.001, 0.1):
    total, parts = joint_loss(probs, labels, c_far, LossWeights(gamma=gamma))
    print(f"gamma={gamma:<6} total {total:.4f}  (cross-entropy {parts.ce_term:.4f})")

# Every gradient is hand-written, so check it against central differences.
print(f"toy model gradient check: max relative error {toy_gradcheck():.2e}")
