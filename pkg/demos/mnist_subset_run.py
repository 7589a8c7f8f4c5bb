"""A short convnet run on real MNIST digits through the command line.

Uses the 5,000-digit MNIST sample shipped with mlxtend (``pip install
mlxtend``), writes it as IDX files, runs ``dalbt run`` for two strategies and
exports the learning curves. Takes a few minutes on one core.
Run with ``python demos/mnist_subset_run.py [workdir]``.
"""
import json
import sys
import tempfile
from pathlib import Path

import numpy as np
from mlxtend.data import mnist_data

from dalbt.cli import main
from dalbt.data_pool import write_idx_images, write_idx_labels

work = Path(sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="dalbt-mnist-"))
work.mkdir(parents=True, exist_ok=True)

x, y = mnist_data()
x = x.reshape(-1, 28, 28).astype(np.uint8)
rng = np.random.default_rng(0)
train, test = [], []
for c in range(10):
    idx = rng.permutation(np.flatnonzero(y == c))
    train += idx[:100].tolist()
    test += idx[100:150].tolist()
for name, ids in (("train", train), ("test", test)):
    write_idx_images(work / f"{name}-images", x[ids])
    write_idx_labels(work / f"{name}-labels", y[ids])

runs = []
for strategy in ("weibull_max", "random"):
    cfg = {
        "dataset": {"kind": "idx", "train_images": str(work / "train-images"), "train_labels": str(work / "train-labels"),
                    "test_images": str(work / "test-images"), "test_labels": str(work / "test-labels")},
        "arch": {"encoder": "convnet", "latent_dim": 32},
        "train": {"epochs": 8, "batch_size": 16},
        "splits": {"initial_labeled": 20},
        "stages": 3,
        "budget": 20,
        "strategy": strategy,
        "seeds": [0, 1],
    }
    path = work / f"{strategy}.json"
    path.write_text(json.dumps(cfg, indent=2))
    out = work / f"run-{strategy}"
    main(["run", "--config", str(path), "--out", str(out)])
    runs.append(str(out))

main(["export-curves", "--runs", *runs, "--out", str(work / "curves.csv")])
print((work / "curves.csv").read_text())
