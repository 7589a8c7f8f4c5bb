"""Acquisition strategies: Weibull outlier max, minimum confidence, random."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np


@dataclass(frozen=True)
class AcquisitionResult:
    selected_ids: list
    scores: list | None = None  # score of each selected id, same order


def _as_arrays(mapping: Mapping):
    ids = np.fromiter(mapping.keys(), dtype=np.int64, count=len(mapping))
    return ids, mapping.values()


def top_b(ids, values, b, largest=True):
    """Positions of the ``b`` best values; ties go to the smaller id.

    Order is best value first, then ascending id. Uses ``argpartition`` to
    find the cut value, then sorts only the candidates.
    """
    ids = np.asarray(ids, dtype=np.int64)
    key = np.asarray(values, dtype=np.float64)
    if not largest:
        key = -key
    n = len(ids)
    b = max(0, min(int(b), n))
    if b == 0:
        return np.zeros(0, dtype=np.int64)
    if b < n:
        cut = key[np.argpartition(-key, b - 1)[b - 1]]
        cand = np.flatnonzero(key >= cut)
    else:
        cand = np.arange(n)
    order = np.lexsort((ids[cand], -key[cand]))
    return cand[order[:b]]


def select_weibull_max(scores: Mapping, b) -> AcquisitionResult:
    """The ``b`` ids with the largest outlier score."""
    ids, vals = _as_arrays(scores)
    vals = np.fromiter(vals, dtype=np.float64, count=len(ids))
    if not np.all(np.isfinite(vals)):
        raise ValueError("scores must be finite")
    pos = top_b(ids, vals, b, largest=True)
    return AcquisitionResult(ids[pos].tolist(), vals[pos].tolist())


def select_min_confidence(probs: Mapping, b) -> AcquisitionResult:
    """The ``b`` ids whose top class probability is smallest."""
    ids, rows = _as_arrays(probs)
    conf = np.array([np.max(r) for r in rows], dtype=np.float64) if len(ids) else np.zeros(0)
    pos = top_b(ids, conf, b, largest=False)
    return AcquisitionResult(ids[pos].tolist(), conf[pos].tolist())


def select_random(unlabeled_ids, b, rng) -> AcquisitionResult:
    ids = np.array(sorted(unlabeled_ids), dtype=np.int64)
    b = max(0, min(int(b), len(ids)))
    return AcquisitionResult(ids[rng.permutation(len(ids))[:b]].tolist())
