"""The full experiment from Python: generate data, train, evaluate, adapt,
sweep corruptions and ablate MC passes, then print the headline numbers.

Run:  python demos/03_pipeline.py runs/demo           (about 13 minutes)
      python demos/03_pipeline.py runs/demo --toy     (seconds, toy sizes)

The same steps are available one at a time from the shell:
      skelsafe gen --config cfg.json --out runs/demo
"""
import argparse
import json

from skelsafe import experiment as ex
from skelsafe.config import ExperimentConfig, config_from_dict

TOY = {"data": {"n_classes": 4, "frames": 4,
                "sizes": {"source_train": 48, "source_val": 16, "source_test": 24, "style_shift": 40,
                          "semantic_shift": 16}},
       "model": {"d_joint": 4, "d_model": 8, "layers": 1},
       "train": {"epochs": 2},
       "adapt": {"n_labeled": 24, "epochs": 2, "seeds": 2, "val_fraction": 0.25},
       "uq": {"mc_passes": 3, "ablation_passes": [1, 2, 3], "ensemble_k": 2},
       "corruption": {"sigmas": [0.0, 0.1], "drops": [0, 2]}}

p = argparse.ArgumentParser()
p.add_argument("out")
p.add_argument("--toy", action="store_true")
args = p.parse_args()

cfg = config_from_dict({**TOY, "out": args.out}) if args.toy else ExperimentConfig(out=args.out)
r = ex.run_all(cfg, force=True)

style = r["eval"]["domains"]["style_shift"]
print(json.dumps({
    "style_shift_accuracy": style["accuracy"],
    "style_shift_mean_msp": style["mean_msp"],
    "energy_auroc": r["eval"]["auroc"]["style_shift"]["energy"]["auroc"],
    "msp_risk@50": style["risk_coverage"]["msp"]["risk@50"],
    "msp_risk@100": style["risk_coverage"]["msp"]["risk@100"],
    "finetuned_accuracy_change": r["adapt_finetuned"]["accuracy_change"],
    "finetuned_wsr@50_change": r["adapt_finetuned"]["wsr@50_change"],
    "frozen_accuracy_change": r["adapt_frozen"]["accuracy_change"],
    "mc_risk@50_range": r["ablate_mc"]["risk@50_range"],
}, indent=2))
print(f"reports and plots under {args.out}")
