"""The safety metrics on inputs small enough to check in your head.

Run:  python demos/01_metrics_by_hand.py
"""
import numpy as np

from skelsafe.safety import auroc, ece, risk_coverage

# Four predictions, most confident first. Two are wrong.
conf = np.array([0.9, 0.8, 0.7, 0.6])
correct = np.array([True, False, True, False])
curve = risk_coverage(conf, correct, grid=[0.25, 0.5, 0.75, 1.0])
for k, r, w in zip(curve.kappa, curve.risk, curve.wsr):
    print(f"coverage {k:.2f}: risk {r:.3f}  wrong-spoke rate {w:.3f}")

# A detector that puts every OOD sample above every ID sample scores 1.
print("separable AUROC:", auroc([0.1, 0.2, 0.3], [0.4, 0.5]))
# Ties count one half.
print("all-tied AUROC:", auroc([0.5, 0.5], [0.5, 0.5, 0.5]))

# Always 90% sure, right half the time: a gap of 0.4 in the one occupied bin.
b = ece(np.full(1000, 0.9), np.arange(1000) % 2 == 0, bins=15)
print(f"ECE of the overconfident predictor: {b.ece:.3f}")

# Sampling correctness from the stated confidence gives a calibrated predictor.
rng = np.random.default_rng(0)
c = rng.uniform(size=100_000)
print(f"ECE of a calibrated predictor: {ece(c, rng.random(c.size) < c).ece:.4f}")
