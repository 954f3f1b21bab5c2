"""Train on 3D skeletons, test on camera-projected 2D ones, and compare
what the OOD detectors see with what selective prediction does.

The detectors separate the shifted domain well, yet abstaining on the least
confident half barely lowers the error: the model is wrong with high confidence.

Run:  python demos/02_dissociation.py      (one or two minutes on a laptop)
"""
import numpy as np

from skelsafe.model import ModelConfig, TrainHyper, forward, train
from skelsafe.numerics import SeededRng
from skelsafe.safety import auroc, risk_coverage
from skelsafe.skeldata import generate_domain, source_spec, style_shift_spec
from skelsafe.uq import build_score_table, confidence, fit_mahalanobis, fit_temperature, ood_score

rng = SeededRng(0)
src = source_spec(n_classes=8, frames=8, seed=1)
shifted = style_shift_spec(src, seed=2)
train_set = generate_domain(src, 320, rng.child("train"))
source_test = generate_domain(src, 160, rng.child("test"), "test")
target_test = generate_domain(shifted, 160, rng.child("target"), "test")

state, log = train(ModelConfig(), train_set, TrainHyper(epochs=15, seed=3))
print(f"source train accuracy after {len(log)} epochs: {log[-1]['train_acc']:.2f}")

z, logits = forward(state, train_set.coords)
kw = dict(temperature=fit_temperature(logits, train_set.labels),
          mahalanobis=fit_mahalanobis(z, train_set.labels, 8),
          scores=("msp", "msp_temp", "energy", "mahalanobis"))
tables = {name: build_score_table(state, b, **kw) for name, b in
          [("source", source_test), ("target", target_test)]}

t = tables["target"]
print(f"\ntarget accuracy {np.mean(t.correct):.3f} (chance 0.125), "
      f"mean MSP {np.mean(t.scores['msp']):.3f}")
print(f"{'score':<12}{'AUROC':>8}{'risk@50%':>10}{'risk@100%':>11}")
for s in kw["scores"]:
    a = auroc(ood_score(s, tables["source"].scores[s]), ood_score(s, t.scores[s]))
    c = risk_coverage(confidence(s, t.scores[s]), t.correct, [0.5, 1.0])
    print(f"{s:<12}{a:8.3f}{c.risk[0]:10.3f}{c.risk[1]:11.3f}")
