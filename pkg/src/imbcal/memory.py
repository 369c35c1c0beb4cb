"""Bounded exemplar memory with herding selection.

The buffer is a value: admission returns a new buffer. Per class it keeps
a prefix of that class's herded ordering, so shrinking a quota later only
truncates, never reorders. Split flags ride along untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import TEST, DatasetTable
from .errors import ParameterError


@dataclass(frozen=True)
class ExemplarSet:
    """Stored exemplars of one class, in herded order."""

    features: np.ndarray  # (m, d)
    splits: np.ndarray  # (m,)
    source_indices: np.ndarray  # (m,) positions within the admitted class data

    def __len__(self):
        return self.features.shape[0]

    def truncate(self, m):
        return ExemplarSet(self.features[:m], self.splits[:m], self.source_indices[:m])


@dataclass(frozen=True)
class MemoryBuffer:
    capacity: int
    state_index: int
    dim: int | None
    classes: dict  # class id -> ExemplarSet

    @staticmethod
    def empty(capacity):
        if capacity < 0:
            raise ParameterError("capacity must be >= 0")
        return MemoryBuffer(capacity, 0, None, {})

    def total_stored(self):
        return sum(len(s) for s in self.classes.values())


def herd_order(class_features):
    """Greedy running-mean herding order over one class's feature vectors.

    At step t the unchosen sample whose inclusion brings the running mean
    closest (L2) to the class mean is picked; ties break to the lowest
    index.
    """
    feats = np.asarray(class_features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 1:
        raise ParameterError("herd_order needs at least one feature vector")
    n = feats.shape[0]
    mu = feats.mean(axis=0)
    order = np.empty(n, dtype=np.int64)
    running = np.zeros(feats.shape[1])
    available = np.ones(n, dtype=bool)
    for t in range(1, n + 1):
        candidate_means = (running + feats) / t
        dists = np.sqrt(((candidate_means - mu) ** 2).sum(axis=1))
        dists[~available] = np.inf
        pick = int(np.argmin(dists))
        order[t - 1] = pick
        available[pick] = False
        running += feats[pick]
    return order


def class_quotas(capacity, class_ids):
    """floor(B / N) per class, plus one for the first B mod N ids."""
    ids = sorted(class_ids)
    n = len(ids)
    base, extra = divmod(capacity, n)
    return {c: base + (1 if i < extra else 0) for i, c in enumerate(ids)}


def admit_and_rebalance(buffer, new_class_data, n_classes_total):
    """Add new classes and shrink old quotas to fit the capacity.

    Old classes keep a prefix of their stored ordering; new classes are
    herded fresh from the provided records (test rows are ignored).
    """
    keep = new_class_data.splits != TEST
    data = new_class_data.subset(keep)
    new_ids = data.classes()
    if not new_ids:
        raise ParameterError("new_class_data holds no train/val records")
    overlap = set(new_ids) & set(buffer.classes)
    if overlap:
        raise ParameterError(f"classes already stored: {sorted(overlap)}")

    all_ids = sorted(set(buffer.classes) | set(new_ids))
    if len(all_ids) != n_classes_total:
        raise ParameterError(
            f"expected {n_classes_total} classes after admission, have {len(all_ids)}"
        )
    if buffer.dim is not None and data.dim != buffer.dim:
        raise ParameterError("feature dimension mismatch with stored exemplars")

    quotas = class_quotas(buffer.capacity, all_ids)
    classes = {}
    for c in all_ids:
        q = quotas[c]
        if c in buffer.classes:
            classes[c] = buffer.classes[c].truncate(q)
        else:
            idx = np.flatnonzero(data.labels == c)
            order = herd_order(data.features[idx])
            take = order[:q]
            classes[c] = ExemplarSet(
                data.features[idx][take], data.splits[idx][take], take.copy()
            )
    return MemoryBuffer(buffer.capacity, buffer.state_index + 1, data.dim, classes)


def memory_dataset(buffer):
    """All stored exemplars as a DatasetTable, split flags preserved."""
    if not buffer.classes:
        return DatasetTable.empty(buffer.dim or 0)
    feats, labels, splits = [], [], []
    for c in sorted(buffer.classes):
        stored = buffer.classes[c]
        feats.append(stored.features)
        labels.append(np.full(len(stored), c, dtype=np.int64))
        splits.append(stored.splits)
    return DatasetTable(np.concatenate(feats), np.concatenate(labels), np.concatenate(splits))


def snapshot(buffer):
    """JSON-serializable view of what the buffer holds."""
    return {
        "capacity": buffer.capacity,
        "state_index": buffer.state_index,
        "classes": {
            str(c): [int(i) for i in s.source_indices] for c, s in sorted(buffer.classes.items())
        },
    }
