import os
from pathlib import Path

import numpy as np
import pytest

from dalbt.data_pool import read_idx_images, read_idx_labels, write_idx_images, write_idx_labels

ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def report():
    """Record one verdict line per criterion and assert it."""

    def _report(number, ok, detail):
        ACCEPTANCE_LINES.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        print(ACCEPTANCE_LINES[-1])
        assert ok, detail

    return _report


def _stratified(images, labels, per_class, rng):
    picked = []
    for c in range(10):
        idx = np.flatnonzero(labels == c)
        picked += rng.permutation(idx)[:per_class].tolist()
    picked = rng.permutation(picked)
    return images[picked], labels[picked]


def _mnist_arrays():
    """(train_x, train_y, test_x, test_y) as uint8 arrays, 200 + 100 per class."""
    rng = np.random.default_rng(0)
    root = os.environ.get("DALBT_MNIST_DIR")
    if root:
        root = Path(root)
        tx, ty = read_idx_images(root / "train-images-idx3-ubyte"), read_idx_labels(root / "train-labels-idx1-ubyte")
        vx, vy = read_idx_images(root / "t10k-images-idx3-ubyte"), read_idx_labels(root / "t10k-labels-idx1-ubyte")
        return (*_stratified(tx, ty, 200, rng), *_stratified(vx, vy, 100, rng)), f"MNIST files in {root}"
    mlxtend_data = pytest.importorskip("mlxtend.data", reason="set DALBT_MNIST_DIR or install mlxtend")
    x, y = mlxtend_data.mnist_data()  # 5,000 real MNIST digits, 500 per class
    x = x.reshape(-1, 28, 28).astype(np.uint8)
    y = y.astype(np.uint8)
    train_idx, test_idx = [], []
    for c in range(10):
        idx = rng.permutation(np.flatnonzero(y == c))
        train_idx += idx[:200].tolist()
        test_idx += idx[200:300].tolist()
    train_idx, test_idx = rng.permutation(train_idx), rng.permutation(test_idx)
    return (x[train_idx], y[train_idx], x[test_idx], y[test_idx]), "mlxtend MNIST sample"


@pytest.fixture(scope="session")
def mnist_subset(tmp_path_factory):
    """IDX files holding a class-balanced 2,000 / 1,000 MNIST subset."""
    (tx, ty, vx, vy), source = _mnist_arrays()
    d = tmp_path_factory.mktemp("mnist")
    paths = {k: d / k for k in ("train-images", "train-labels", "test-images", "test-labels")}
    write_idx_images(paths["train-images"], tx)
    write_idx_labels(paths["train-labels"], ty)
    write_idx_images(paths["test-images"], vx)
    write_idx_labels(paths["test-labels"], vy)
    return {k: str(v) for k, v in paths.items()}, source
