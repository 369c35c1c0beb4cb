"""Dataset construction, imbalancing, state planning and feature-file I/O.

Tables are immutable and numpy-backed: a table is a (n, d) feature matrix
plus parallel label and split arrays. All operations return new tables and
are deterministic given their seeds.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import FormatError, ParameterError

TRAIN = "train"
VAL = "val"
TEST = "test"
SPLITS = (TRAIN, VAL, TEST)

# strong-imbalance recipe: class-group proportions and retention intervals
# (None upper bound means "the class's initial count")
STRONG_PROPORTIONS = (0.30, 0.30, 0.20, 0.20)
STRONG_INTERVALS = ((10, 25), (26, 75), (76, 100), (101, None))
SOFT_MINIMUM = 50


@dataclass(frozen=True)
class FeatureRecord:
    """One sample: a feature vector, its class label and its split flag."""

    features: np.ndarray
    label: int
    split: str


@dataclass(frozen=True)
class ImbalanceProfile:
    kind: str  # "none" | "soft" | "strong"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("none", "soft", "strong"):
            raise ParameterError(f"unknown imbalance kind: {self.kind!r}")


@dataclass(frozen=True)
class StatePlan:
    """Class ordering chunked into incremental states."""

    ordering: tuple
    num_states: int
    classes_per_state: tuple

    def state_classes(self, k):
        """Classes introduced at state k (1-based)."""
        if not 1 <= k <= self.num_states:
            raise ParameterError(f"state index {k} out of range")
        start = sum(self.classes_per_state[: k - 1])
        return self.ordering[start : start + self.classes_per_state[k - 1]]


class DatasetTable:
    """Immutable table of feature records."""

    __slots__ = ("features", "labels", "splits")

    def __init__(self, features, labels, splits):
        features = np.asarray(features, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        splits = np.asarray(splits, dtype="<U5")
        if features.ndim != 2:
            raise ParameterError("features must be a 2-D matrix")
        n = features.shape[0]
        if labels.shape != (n,) or splits.shape != (n,):
            raise ParameterError("features, labels and splits must align")
        bad = set(np.unique(splits)) - set(SPLITS)
        if bad:
            raise ParameterError(f"unknown split flags: {sorted(bad)}")
        features.setflags(write=False)
        labels.setflags(write=False)
        splits.setflags(write=False)
        self.features = features
        self.labels = labels
        self.splits = splits

    def __setattr__(self, name, value):
        if hasattr(self, "splits") and name in self.__slots__:
            raise AttributeError("DatasetTable is immutable")
        super().__setattr__(name, value)

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def census(self):
        """Per-class count of train-split records."""
        mask = self.splits == TRAIN
        labels, counts = np.unique(self.labels[mask], return_counts=True)
        return {int(c): int(n) for c, n in zip(labels, counts)}

    def classes(self):
        return [int(c) for c in np.unique(self.labels)]

    def record(self, i):
        return FeatureRecord(self.features[i], int(self.labels[i]), str(self.splits[i]))

    def records(self):
        for i in range(len(self)):
            yield self.record(i)

    def subset(self, mask):
        mask = np.asarray(mask, dtype=bool)
        return DatasetTable(self.features[mask], self.labels[mask], self.splits[mask])

    def only(self, split=None, classes=None):
        """Restrict to the given split name(s) and/or class ids."""
        mask = np.ones(len(self), dtype=bool)
        if split is not None:
            names = (split,) if isinstance(split, str) else tuple(split)
            mask &= np.isin(self.splits, names)
        if classes is not None:
            mask &= np.isin(self.labels, np.fromiter(classes, dtype=np.int64))
        return self.subset(mask)

    def relabeled(self, mapping):
        """Return a copy with labels passed through ``mapping``."""
        new_labels = np.array([mapping[int(c)] for c in self.labels], dtype=np.int64)
        return DatasetTable(self.features, new_labels, self.splits)

    @staticmethod
    def empty(dim):
        return DatasetTable(
            np.empty((0, dim)), np.empty(0, dtype=np.int64), np.empty(0, dtype="<U5")
        )

    @staticmethod
    def concat(tables):
        tables = list(tables)
        if not tables:
            raise ParameterError("concat needs at least one table")
        dims = {t.dim for t in tables if len(t)}
        if len(dims) > 1:
            raise ParameterError(f"mixed feature dimensions: {sorted(dims)}")
        if dims:
            # zero-row tables may carry a placeholder dimension
            dim = dims.pop()
            tables = [t if len(t) else DatasetTable.empty(dim) for t in tables]
        return DatasetTable(
            np.concatenate([t.features for t in tables]),
            np.concatenate([t.labels for t in tables]),
            np.concatenate([t.splits for t in tables]),
        )


def _centers(generator, num_classes, dim, class_separation):
    centers = generator.normal(size=(num_classes, dim))
    diff = centers[:, None, :] - centers[None, :, :]
    dist = np.sqrt((diff**2).sum(-1))
    dmin = dist[np.triu_indices(num_classes, k=1)].min()
    if dmin > 0:
        centers *= class_separation / dmin
    return centers


def class_centers(num_classes, dim, class_separation, seed):
    """The blob centers generate_synthetic would use, for oracle checks.

    Centers are rescaled so the minimum pairwise distance equals
    ``class_separation`` exactly.
    """
    return _centers(rng.op_rng(seed, rng.SYNTHETIC), num_classes, dim, class_separation)


def generate_synthetic(
    num_classes,
    dim,
    count_per_class,
    class_separation,
    noise_scale,
    seed,
    test_per_class=None,
):
    """Gaussian-blob dataset: one isotropic blob per class.

    Produces ``count_per_class`` train records per class and a balanced
    test set of ``test_per_class`` records per class (defaults to
    ``count_per_class``). Deterministic given ``seed``.
    """
    if num_classes < 2:
        raise ParameterError("num_classes must be >= 2")
    if dim < 2:
        raise ParameterError("dim must be >= 2")
    if count_per_class < 2:
        raise ParameterError("count_per_class must be >= 2")
    if test_per_class is None:
        test_per_class = count_per_class
    if test_per_class < 1:
        raise ParameterError("test_per_class must be >= 1")
    if noise_scale < 0:
        raise ParameterError("noise_scale must be >= 0")

    generator = rng.op_rng(seed, rng.SYNTHETIC)
    centers = _centers(generator, num_classes, dim, class_separation)

    feats, labels, splits = [], [], []
    for c in range(num_classes):
        for count, split in ((count_per_class, TRAIN), (test_per_class, TEST)):
            feats.append(centers[c] + noise_scale * generator.normal(size=(count, dim)))
            labels.append(np.full(count, c, dtype=np.int64))
            splits.append(np.full(count, split, dtype="<U5"))
    return DatasetTable(np.concatenate(feats), np.concatenate(labels), np.concatenate(splits))


def largest_remainder(total, proportions):
    """Integer apportionment of ``total`` by the largest-remainder rule."""
    exact = [p * total for p in proportions]
    base = [math.floor(e) for e in exact]
    leftover = total - sum(base)
    order = sorted(range(len(proportions)), key=lambda i: (-(exact[i] - base[i]), i))
    for i in order[:leftover]:
        base[i] += 1
    return base


def apply_imbalance(table, profile):
    """Randomly discard train records per class according to the profile.

    Test and val records are never touched; retained counts stay within
    the profile's per-group interval, clamped to what is available.
    """
    if profile.kind == "none":
        return table

    generator = rng.op_rng(profile.seed, rng.IMBALANCE)
    census = table.census
    classes = sorted(census)
    targets = {}
    if profile.kind == "soft":
        for c in classes:
            n = census[c]
            lo = min(SOFT_MINIMUM, n)
            targets[c] = int(generator.integers(lo, n + 1))
    else:  # strong
        order = list(classes)
        generator.shuffle(order)
        sizes = largest_remainder(len(order), STRONG_PROPORTIONS)
        pos = 0
        for (lo, hi), size in zip(STRONG_INTERVALS, sizes):
            for c in order[pos : pos + size]:
                n = census[c]
                lo_c = min(lo, n)
                hi_c = n if hi is None else min(hi, n)
                targets[c] = int(generator.integers(lo_c, hi_c + 1))
            pos += size

    keep = np.ones(len(table), dtype=bool)
    for c in classes:
        idx = np.flatnonzero((table.labels == c) & (table.splits == TRAIN))
        u = targets[c]
        if u < len(idx):
            kept = generator.choice(idx, size=u, replace=False)
            keep[np.setdiff1d(idx, kept)] = False
    return table.subset(keep)


def plan_states(table, num_states, seed_or_fixed_order):
    """Chunk the class set into ``num_states`` incremental batches.

    An integer argument seeds a random permutation; a sequence is used as
    the explicit class ordering. Remainder classes go to the earliest
    states.
    """
    classes = table.classes()
    if num_states < 1 or num_states > len(classes):
        raise ParameterError(
            f"num_states must be in [1, {len(classes)}], got {num_states}"
        )
    if isinstance(seed_or_fixed_order, (int, np.integer)) and not isinstance(
        seed_or_fixed_order, bool
    ):
        generator = rng.op_rng(seed_or_fixed_order, rng.PLAN)
        ordering = [classes[i] for i in generator.permutation(len(classes))]
    else:
        ordering = [int(c) for c in seed_or_fixed_order]
        if sorted(ordering) != classes:
            raise ParameterError("fixed order is not a permutation of the class ids")

    base, rem = divmod(len(classes), num_states)
    sizes = [base + 1] * rem + [base] * (num_states - rem)
    return StatePlan(tuple(ordering), num_states, tuple(sizes))


def split_train_val(table, fraction, seed):
    """Re-flag ceil(fraction * n_i) train records per class as validation."""
    if not 0 < fraction < 1:
        raise ParameterError("fraction must be in (0, 1)")
    generator = rng.op_rng(seed, rng.SPLIT)
    splits = table.splits.copy()
    for c in sorted(table.census):
        idx = np.flatnonzero((table.labels == c) & (table.splits == TRAIN))
        n = len(idx)
        if n < 2:
            warnings.warn(f"class {c} has a single train record; no val split for it")
            continue
        k = math.ceil(fraction * n)
        chosen = generator.choice(idx, size=k, replace=False)
        splits[chosen] = VAL
    return DatasetTable(table.features, table.labels, splits)


def census_stats(table):
    """Mean and population standard deviation of per-class train counts."""
    census = table.census
    if not census:
        raise ParameterError("table has no train records")
    counts = np.array(sorted(census.values()), dtype=np.float64)
    return float(counts.mean()), float(counts.std())


def load_features(features_path, manifest_path):
    """Read a feature CSV plus its JSON manifest into a DatasetTable."""
    try:
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: invalid JSON ({exc})") from exc
    for key in ("dim", "classes", "name"):
        if key not in manifest:
            raise FormatError(f"{manifest_path}: missing manifest key {key!r}")
    dim = int(manifest["dim"])
    num_classes = int(manifest["classes"])
    if dim < 1 or num_classes < 1:
        raise FormatError(f"{manifest_path}: dim and classes must be positive")

    feats, labels, splits = [], [], []
    with open(features_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{features_path}: empty file") from None
        expected = ["label", "split"] + [f"f{i}" for i in range(dim)]
        if header != expected:
            raise FormatError(
                f"{features_path}: line 1: bad header, expected {','.join(expected)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if len(row) != dim + 2:
                raise FormatError(
                    f"{features_path}: line {lineno}: expected {dim + 2} fields, got {len(row)}"
                )
            try:
                label = int(row[0])
            except ValueError:
                raise FormatError(
                    f"{features_path}: line {lineno}: non-integer label {row[0]!r}"
                ) from None
            if not 0 <= label < num_classes:
                raise FormatError(
                    f"{features_path}: line {lineno}: label {label} out of [0, {num_classes})"
                )
            if row[1] not in SPLITS:
                raise FormatError(
                    f"{features_path}: line {lineno}: unknown split tag {row[1]!r}"
                )
            try:
                values = [float(v) for v in row[2:]]
            except ValueError:
                raise FormatError(
                    f"{features_path}: line {lineno}: non-numeric feature value"
                ) from None
            labels.append(label)
            splits.append(row[1])
            feats.append(values)
    if not labels:
        raise FormatError(f"{features_path}: no records")

    table = DatasetTable(np.array(feats), np.array(labels), np.array(splits))
    census = table.census
    for c in table.classes():
        if census.get(c, 0) < 1:
            raise FormatError(f"{features_path}: class {c} has no train records")
    return table


def save_features(table, features_path, manifest_path, name="dataset"):
    """Write a table in the feature CSV + manifest format."""
    with open(features_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "split"] + [f"f{i}" for i in range(table.dim)])
        for i in range(len(table)):
            row = [int(table.labels[i]), str(table.splits[i])]
            row += [format(v, ".17g") for v in table.features[i]]
            writer.writerow(row)
    manifest = {"dim": table.dim, "classes": len(table.classes()), "name": name}
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
