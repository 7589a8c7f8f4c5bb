"""Active learning on synthetic blobs with out-of-distribution samples mixed in.

Compares Weibull-max, min-confidence and random acquisition and shows how
the oracle's rejections are accounted for.
Run with ``python demos/mixed_pool_loop.py``.
"""
from dalbt.active_loop import run_experiment
from dalbt.config import config_from_dict

base = {
    "dataset": {"kind": "synth_blobs", "num_classes": 4, "dim": 8, "per_class": 80, "test_per_class": 40,
                "noise_sigma": 0.12},
    "ood": [{"kind": "synth_blobs", "count": 80, "noise_sigma": 0.12}],
    "arch": {"hidden": [32], "latent_dim": 16, "projector": [16]},
    "train": {"epochs": 10, "batch_size": 16, "learning_rate": 0.01},
    "splits": {"initial_labeled": 12},
    "stages": 4,
    "budget": 12,
    "seeds": [0, 1, 2],
}

for strategy in ("weibull_max", "min_confidence", "random"):
    res = run_experiment(config_from_dict({**base, "strategy": strategy}))
    print(f"\n{strategy}")
    for row in res.summary:
        print(f"  stage {row['stage']}  labeled {row['labeled_size']:5.1f}  acc {row['mean_acc']:.3f} +/- {row['std_acc']:.3f}")
    first = res.records[0]
    picked = sum(m.selected_count for m in first)
    rejected = sum(m.ood_rejected_count for m in first)
    print(f"  seed 0: selected {picked}, rejected by the oracle {rejected}, labels gained {picked - rejected}")
