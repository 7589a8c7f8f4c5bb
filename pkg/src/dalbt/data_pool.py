"""Dataset ingestion and the labeled/unlabeled pool state machine.

Samples are kept as individual records for loading and bookkeeping; the
training code works on the stacked arrays of a :class:`SampleBank`.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, ConsistencyError, FormatError

IN_DIST = "IN_DIST"

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 32 * 32 * 3


@dataclass
class Sample:
    id: int
    pixels: np.ndarray  # H x W x C, values in [0, 1]
    label: int | None = None
    origin: str = IN_DIST


@dataclass(frozen=True)
class Pool:
    labeled: frozenset
    unlabeled: frozenset
    stage: int = 0
    rejected: frozenset = frozenset()  # ids the oracle has turned down at least once

    def __post_init__(self):
        if self.labeled & self.unlabeled:
            raise ConsistencyError("labeled and unlabeled pools overlap")

    @property
    def size(self) -> int:
        return len(self.labeled) + len(self.unlabeled)

    def selectable(self, exclude_rejected=False) -> list:
        ids = self.unlabeled - self.rejected if exclude_rejected else self.unlabeled
        return sorted(ids)


REJECTED = None  # oracle marker for out-of-distribution queries


@dataclass
class OracleSim:
    """Answers label queries from a ground-truth table; rejects foreign samples."""

    labels: dict
    origins: dict
    in_dist: frozenset = frozenset({IN_DIST})

    @classmethod
    def from_samples(cls, samples: Iterable[Sample]) -> "OracleSim":
        labels, origins = {}, {}
        for s in samples:
            labels[s.id] = s.label
            origins[s.id] = s.origin
        return cls(labels, origins)

    def annotate_one(self, sample_id):
        if sample_id not in self.origins:
            raise ConsistencyError(f"oracle has no record of sample id {sample_id}")
        if self.origins[sample_id] not in self.in_dist:
            return REJECTED
        return self.labels[sample_id]


# ---------------------------------------------------------------------------
# loaders


def _read_idx_header(buf: bytes, magic: int, ndims: int, path) -> tuple:
    size = 4 + 4 * ndims
    if len(buf) < size:
        raise FormatError(f"{path}: file too short for an IDX header")
    found, *dims = struct.unpack(f">{1 + ndims}I", buf[:size])
    if found != magic:
        raise FormatError(f"{path}: bad IDX magic 0x{found:08x}, expected 0x{magic:08x}")
    return tuple(dims), size


def read_idx_images(path) -> np.ndarray:
    """Raw uint8 array of shape (N, rows, cols)."""
    buf = Path(path).read_bytes()
    (n, rows, cols), off = _read_idx_header(buf, IDX_IMAGES_MAGIC, 3, path)
    need = n * rows * cols
    if len(buf) - off < need:
        raise OSError(f"{path}: truncated IDX image file ({len(buf) - off} of {need} payload bytes)")
    return np.frombuffer(buf, dtype=np.uint8, count=need, offset=off).reshape(n, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    (n,), off = _read_idx_header(buf, IDX_LABELS_MAGIC, 1, path)
    if len(buf) - off < n:
        raise OSError(f"{path}: truncated IDX label file ({len(buf) - off} of {n} payload bytes)")
    return np.frombuffer(buf, dtype=np.uint8, count=n, offset=off)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    Path(path).write_bytes(struct.pack(">4I", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">2I", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


def load_idx(images_path, labels_path=None, origin=IN_DIST, id_offset=0) -> list:
    """Load an MNIST-family IDX pair as 28x28x1-style samples scaled by 1/255.

    ``labels_path`` may be omitted for unlabeled (e.g. out-of-distribution)
    image files.
    """
    images = read_idx_images(images_path)
    labels = None
    if labels_path is not None:
        labels = read_idx_labels(labels_path)
        if len(labels) != len(images):
            raise ConsistencyError(
                f"image count {len(images)} does not match label count {len(labels)}"
            )
    pixels = images.astype(np.float64)[..., None] / 255.0
    return [
        Sample(id_offset + i, pixels[i], None if labels is None else int(labels[i]), origin)
        for i in range(len(images))
    ]


def save_idx(samples: Sequence[Sample], images_path, labels_path=None) -> None:
    """Inverse of :func:`load_idx` for single-channel samples."""
    pixels = np.stack([s.pixels[..., 0] for s in samples]) if samples else np.zeros((0, 0, 0))
    write_idx_images(images_path, np.rint(pixels * 255.0))
    if labels_path is not None:
        write_idx_labels(labels_path, [s.label for s in samples])


def load_cifar_binary(paths, origin=IN_DIST, id_offset=0) -> list:
    """CIFAR-10 binary batches: 3073-byte records, label then R, G, B planes."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    samples = []
    next_id = id_offset
    for path in paths:
        buf = Path(path).read_bytes()
        if len(buf) % CIFAR_RECORD:
            raise FormatError(f"{path}: length {len(buf)} is not a multiple of {CIFAR_RECORD}")
        rec = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        imgs = rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1).astype(np.float64) / 255.0
        for label, img in zip(rec[:, 0], imgs):
            samples.append(Sample(next_id, img, int(label), origin))
            next_id += 1
    return samples


def synth_blobs(num_classes, dim, per_class, class_means=None, noise_sigma=0.05, seed=0,
                origin=IN_DIST, id_offset=0, labeled=True) -> list:
    """Gaussian clusters shaped as 1x1xdim images, clipped to [0, 1].

    Without ``class_means`` the centres are drawn uniformly from
    [0.2, 0.8]^dim using ``seed``.
    """
    if num_classes < 1 or (labeled and num_classes < 2):
        raise ConfigurationError("synth_blobs needs at least 2 classes")
    if noise_sigma < 0:
        raise ConfigurationError("noise_sigma must be nonnegative")
    rng = np.random.default_rng(seed)
    if class_means is None:
        means = rng.uniform(0.2, 0.8, size=(num_classes, dim))
    else:
        means = np.asarray(class_means, dtype=np.float64).reshape(num_classes, dim)
    samples = []
    sid = id_offset
    for c in range(num_classes):
        pts = np.clip(means[c] + noise_sigma * rng.standard_normal((per_class, dim)), 0.0, 1.0)
        for p in pts:
            samples.append(Sample(sid, p.reshape(1, 1, dim), c if labeled else None, origin))
            sid += 1
    return samples


@dataclass
class SampleBank:
    """Stacked view of a sample list, indexed by sample id."""

    ids: np.ndarray
    pixels: np.ndarray
    labels: np.ndarray  # -1 where unlabeled
    origins: np.ndarray
    _row: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "SampleBank":
        ids = np.array([s.id for s in samples], dtype=np.int64)
        if len(set(ids.tolist())) != len(ids):
            raise ConsistencyError("duplicate sample ids")
        pixels = np.stack([s.pixels for s in samples]).astype(np.float64)
        labels = np.array([-1 if s.label is None else s.label for s in samples], dtype=np.int64)
        origins = np.array([s.origin for s in samples], dtype=object)
        return cls(ids, pixels, labels, origins, {int(i): r for r, i in enumerate(ids)})

    def rows(self, ids) -> np.ndarray:
        return np.array([self._row[int(i)] for i in ids], dtype=np.int64)

    def take(self, ids):
        r = self.rows(ids)
        return self.pixels[r], self.labels[r]

    def is_ood(self, ids) -> np.ndarray:
        r = self.rows(ids)
        return self.origins[r] != IN_DIST

    def __len__(self):
        return len(self.ids)


# ---------------------------------------------------------------------------
# pool operations


def make_splits(samples: Sequence[Sample], initial_labeled, val_size, seed, stratified=True, test_size=0):
    """Initial labeled pool, unlabeled pool and validation ids from ``samples``.

    When ``test_size`` > 0 a test set is carved from the same samples as
    well; otherwise ``test_ids`` is empty and the caller supplies a separate
    test set. The labeled pool is class-stratified if every sample has a
    label and ``stratified`` is set.
    """
    n = len(samples)
    if initial_labeled < 0 or val_size < 0 or test_size < 0:
        raise ConfigurationError("split sizes must be nonnegative")
    if initial_labeled + val_size + test_size > n:
        raise ConfigurationError(
            f"need {initial_labeled + val_size + test_size} samples for the requested splits, have {n}"
        )
    rng = np.random.default_rng(seed)
    ids = np.array(sorted(s.id for s in samples), dtype=np.int64)
    label_of = {s.id: s.label for s in samples}
    perm = ids[rng.permutation(n)]
    test_ids = perm[:test_size]
    val_ids = perm[test_size:test_size + val_size]
    rest = perm[test_size + val_size:]
    labels = [label_of[int(i)] for i in rest]
    if stratified and initial_labeled and all(lbl is not None for lbl in labels):
        labeled = _stratified_pick(rest, np.array(labels), initial_labeled, rng)
    else:
        labeled = rest[:initial_labeled]
    labeled_set = frozenset(int(i) for i in labeled)
    unlabeled = frozenset(int(i) for i in rest) - labeled_set
    pool = Pool(labeled_set, unlabeled, 0)
    return pool, sorted(int(i) for i in val_ids), sorted(int(i) for i in test_ids)


def _stratified_pick(ids, labels, k, rng):
    classes = np.unique(labels)
    by_class = {c: list(ids[labels == c]) for c in classes}  # already shuffled
    quota = {c: 0 for c in classes}
    base, extra = divmod(k, len(classes))
    for c in classes:
        quota[c] = base
    for c in rng.permutation(classes)[:extra]:
        quota[c] += 1
    picked = []
    short = 0
    for c in classes:
        take = min(quota[c], len(by_class[c]))
        picked += by_class[c][:take]
        short += quota[c] - take
        by_class[c] = by_class[c][take:]
    if short:
        chosen = set(picked)
        leftovers = [i for i in ids if i not in chosen]
        picked += leftovers[:short]
    return np.array(picked, dtype=np.int64)


def inject_ood(pool: Pool, ood_samples: Sequence[Sample]) -> Pool:
    new = []
    for s in ood_samples:
        if s.origin == IN_DIST:
            raise ConsistencyError(f"sample {s.id} is tagged in-distribution")
        new.append(s.id)
    new_set = frozenset(new)
    if len(new_set) != len(new) or new_set & (pool.labeled | pool.unlabeled):
        raise ConsistencyError("out-of-distribution ids collide with existing pool ids")
    return Pool(pool.labeled, pool.unlabeled | new_set, pool.stage, pool.rejected)


def oracle_annotate(oracle: OracleSim, ids, pool: Pool | None = None):
    """Ask the oracle for labels. Returns ``(annotated, rejected)``.

    ``annotated`` is a list of ``(id, label)``; ``rejected`` lists the ids
    the oracle refused (out-of-distribution). Both keep query order.
    """
    annotated, rejected = [], []
    for i in ids:
        i = int(i)
        if pool is not None and i not in pool.unlabeled:
            raise ConsistencyError(f"sample id {i} is not in the unlabeled pool")
        label = oracle.annotate_one(i)
        if label is REJECTED:
            rejected.append(i)
        else:
            annotated.append((i, label))
    return annotated, rejected


def commit_labels(pool: Pool, annotated, rejected) -> Pool:
    moved = frozenset(i for i, _ in annotated)
    if not moved <= pool.unlabeled:
        raise ConsistencyError("annotated ids must come from the unlabeled pool")
    return Pool(
        pool.labeled | moved,
        pool.unlabeled - moved,
        pool.stage + 1,
        pool.rejected | frozenset(rejected),
    )
