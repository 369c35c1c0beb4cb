"""The seven score-calibration methods behind a single fit/apply contract.

Method tags and what they consume:

  iso  per-class isotonic regression on raw scores (one-vs-all)
  pl   per-class Platt scaling on raw scores (one-vs-all)
  th   division of softmax probabilities by the class prior
  nem  nearest mean of stored exemplars in feature space
  bal  classification layer retrained on a balanced exemplar table
  mb   old-class scores rescaled by the new/old mean validation score ratio
  fj   per-cluster rescaling, classes clustered by image count with
       Fisher-Jenks natural breaks

Every ``apply_*`` is a pure function of the fitted state and its input;
the predicted class is always the argmax of the calibrated scores (for
nem the reported score is the inverse distance, so argmax coincides with
the nearest mean).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import backbone
from .breaks import fisher_jenks
from .dataset import TRAIN, DatasetTable
from .errors import ConfigurationError, ParameterError
from .metrics import top1

RAW_SCORES = "raw_scores"
SOFTMAX_PROBS = "softmax_probs"
FEATURES = "features"

METHOD_TAGS = ("iso", "pl", "th", "nem", "bal", "mb", "fj")

NEM_EPSILON = 1e-12
PLATT_MAX_ITER = 100
PLATT_GRAD_TOL = 1e-9


@dataclass(frozen=True)
class CalibContext:
    """Everything a calibrator may fit on at one incremental state.

    Class ids are assumed contiguous 0..N-1 in model-row order;
    ``class_counts[i]`` is the number of train records of class i in the
    current training set.
    """

    train_scores: np.ndarray  # (n, N) raw scores of the training records
    train_labels: np.ndarray
    val_scores: np.ndarray  # (m, N) raw scores of the validation records
    val_labels: np.ndarray
    class_counts: np.ndarray  # (N,)
    old_classes: tuple
    new_classes: tuple
    exemplar_features: dict | None = None  # class id -> (m_i, d) features
    exemplar_splits: dict | None = None  # class id -> (m_i,) split flags
    memory_capacity: int | None = None

    @property
    def num_classes(self):
        return len(self.class_counts)

    @property
    def total_count(self):
        return int(np.sum(self.class_counts))


@dataclass
class CalibratorState:
    method: str
    input_mode: str
    params: dict
    flags: dict = field(default_factory=dict)

    def to_json(self):
        def conv(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, dict):
                return {str(k): conv(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [conv(x) for x in v]
            if isinstance(v, (np.integer, np.floating)):
                return v.item()
            return v

        return {
            "method": self.method,
            "input_mode": self.input_mode,
            "params": conv(self.params),
            "flags": conv(self.flags),
        }


# ---------------------------------------------------------------------------
# isotonic regression


def pava(values, weights=None):
    """Weighted least-squares fit of a non-decreasing sequence.

    Pool-adjacent-violators: merge any decreasing neighbours into their
    weighted mean until the sequence is non-decreasing.
    """
    values = np.asarray(values, dtype=np.float64)
    if weights is None:
        weights = np.ones_like(values)
    weights = np.asarray(weights, dtype=np.float64)
    levels, wsum, counts = [], [], []
    for v, w in zip(values, weights):
        levels.append(v)
        wsum.append(w)
        counts.append(1)
        while len(levels) > 1 and levels[-2] > levels[-1]:
            w_new = wsum[-2] + wsum[-1]
            levels[-2] = (levels[-2] * wsum[-2] + levels[-1] * wsum[-1]) / w_new
            wsum[-2] = w_new
            counts[-2] += counts[-1]
            del levels[-1], wsum[-1], counts[-1]
    return np.repeat(levels, counts)


def fit_step_map(scores, targets):
    """Isotonic step map for one class: (boundaries, levels).

    Equal scores are pooled first (a step function cannot separate them);
    boundaries are midpoints between adjacent distinct scores where the
    fitted level changes.
    """
    scores = np.asarray(scores, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    order = np.argsort(scores, kind="stable")
    xs, ys = scores[order], targets[order]
    ux, start = np.unique(xs, return_index=True)
    pooled = np.add.reduceat(ys, start)
    counts = np.diff(np.concatenate([start, [len(xs)]]))
    fitted = pava(pooled / counts, counts)

    boundaries, levels = [], [float(fitted[0])]
    for g in range(1, len(ux)):
        if fitted[g] != fitted[g - 1]:
            boundaries.append(float((ux[g - 1] + ux[g]) / 2.0))
            levels.append(float(fitted[g]))
    return np.array(boundaries), np.array(levels)


def apply_step_map(boundaries, levels, scores):
    idx = np.searchsorted(boundaries, scores, side="right")
    return levels[idx]


def fit_isotonic(ctx):
    """Per-class one-vs-all isotonic maps fitted on the training scores."""
    n, num_classes = ctx.train_scores.shape
    boundaries, levels = {}, {}
    for c in range(num_classes):
        targets = (ctx.train_labels == c).astype(np.float64)
        positives = targets.sum()
        if positives == 0 or positives == n:
            warnings.warn(f"class {c}: no score overlap to fit; keeping identity map")
            continue
        b, l = fit_step_map(ctx.train_scores[:, c], targets)
        boundaries[c] = b
        levels[c] = l
    return CalibratorState(
        "iso", RAW_SCORES, {"boundaries": boundaries, "levels": levels,
                            "num_classes": num_classes}
    )


def apply_isotonic(state, scores):
    scores = np.asarray(scores, dtype=np.float64)
    out = scores.copy()
    for c, b in state.params["boundaries"].items():
        out[:, c] = apply_step_map(b, state.params["levels"][c], scores[:, c])
    return out


# ---------------------------------------------------------------------------
# Platt scaling


def _platt_nll(s, t, a, c):
    z = np.clip(a * s + c, -500, 500)
    p = np.clip(1.0 / (1.0 + np.exp(z)), 1e-15, 1 - 1e-15)
    return float(-(t * np.log(p) + (1 - t) * np.log(1 - p)).sum())


def platt_fit_binary(scores, positive_mask):
    """Maximum-likelihood sigmoid fit with Platt's target smoothing.

    Newton-Raphson with backtracking, at most PLATT_MAX_ITER iterations;
    returns (A, C, converged), keeping the best iterate on
    non-convergence.
    """
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positive_mask, dtype=bool)
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ParameterError("need at least one positive and one negative sample")
    t = np.where(pos, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))

    a, c = 0.0, float(np.log((n_neg + 1.0) / (n_pos + 1.0)))
    best = (_platt_nll(s, t, a, c), a, c)
    converged = False
    for _ in range(PLATT_MAX_ITER):
        z = np.clip(a * s + c, -500, 500)
        p = 1.0 / (1.0 + np.exp(z))
        grad = np.array([np.sum(s * (t - p)), np.sum(t - p)])
        if np.abs(grad).max() < PLATT_GRAD_TOL:
            converged = True
            break
        w = p * (1.0 - p)
        hess = np.array(
            [[np.sum(s * s * w), np.sum(s * w)], [np.sum(s * w), np.sum(w)]]
        ) + 1e-12 * np.eye(2)
        try:
            delta = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            break
        current = _platt_nll(s, t, a, c)
        step = 1.0
        a2, c2 = a, c
        for _ in range(30):
            a2, c2 = a - step * delta[0], c - step * delta[1]
            if _platt_nll(s, t, a2, c2) <= current + 1e-12:
                break
            step /= 2.0
        a, c = a2, c2
        nll = _platt_nll(s, t, a, c)
        if nll < best[0]:
            best = (nll, a, c)
    if not converged:
        _, a, c = best
    return a, c, converged


def fit_platt(ctx):
    """Per-class one-vs-all Platt parameters (A, C) on the training scores."""
    n, num_classes = ctx.train_scores.shape
    a = np.zeros(num_classes)
    c = np.zeros(num_classes)
    converged = np.zeros(num_classes, dtype=bool)
    for cls in range(num_classes):
        pos = ctx.train_labels == cls
        a[cls], c[cls], converged[cls] = platt_fit_binary(ctx.train_scores[:, cls], pos)
    state = CalibratorState("pl", RAW_SCORES, {"A": a, "C": c})
    state.flags["converged"] = converged
    return state


def apply_platt(state, scores):
    scores = np.asarray(scores, dtype=np.float64)
    z = np.clip(scores * state.params["A"] + state.params["C"], -500, 500)
    return 1.0 / (1.0 + np.exp(z))


# ---------------------------------------------------------------------------
# thresholding


def apply_threshold(ctx, probs):
    """Divide each class's probability by its prior: p_i * (sum n_l) / n_i."""
    probs = np.asarray(probs, dtype=np.float64)
    counts = np.asarray(ctx.class_counts, dtype=np.float64)
    if np.any(counts <= 0):
        raise ParameterError("class counts must be strictly positive")
    return probs * (counts.sum() / counts)


def fit_threshold(ctx):
    """Thresholding has no fitted parameters beyond the class counts."""
    return CalibratorState(
        "th", SOFTMAX_PROBS, {"class_counts": np.asarray(ctx.class_counts, dtype=np.float64)}
    )


# ---------------------------------------------------------------------------
# nearest mean of exemplars


def fit_nem(ctx):
    """Per-class exemplar means, computed after exemplar selection."""
    if not ctx.exemplar_features:
        raise ConfigurationError("nem needs exemplar features for every class")
    rows = []
    for c in range(ctx.num_classes):
        feats = ctx.exemplar_features.get(c)
        if feats is None or len(feats) == 0:
            raise ConfigurationError(f"class {c} has no exemplars in memory")
        rows.append(np.asarray(feats, dtype=np.float64).mean(axis=0))
    means = np.vstack(rows)
    return CalibratorState("nem", FEATURES, {"means": means})


def apply_nem(state, features):
    """Inverse Euclidean distance to each class mean; argmax = nearest mean."""
    features = np.asarray(features, dtype=np.float64)
    means = state.params["means"]
    diff = features[:, None, :] - means[None, :, :]
    dists = np.sqrt((diff**2).sum(axis=2))
    return 1.0 / (dists + NEM_EPSILON)


# ---------------------------------------------------------------------------
# balanced fine tuning


def fit_balanced(ctx, model, config):
    """Retrain a copy of the classification layer on a balanced exemplar table.

    Each class contributes floor(B / N) exemplars, or everything it has
    when fewer are available.
    """
    if not ctx.exemplar_features or ctx.memory_capacity is None:
        raise ConfigurationError("bal needs exemplar features and the memory capacity")
    quota = ctx.memory_capacity // ctx.num_classes
    feats, labels, splits = [], [], []
    used = {}
    for c in range(ctx.num_classes):
        stored = ctx.exemplar_features.get(c)
        if stored is None or len(stored) == 0:
            raise ConfigurationError(f"class {c} has no exemplars in memory")
        take = min(quota, len(stored))
        used[c] = take
        if take == 0:
            continue
        feats.append(np.asarray(stored[:take], dtype=np.float64))
        labels.append(np.full(take, c, dtype=np.int64))
        if ctx.exemplar_splits is not None and c in ctx.exemplar_splits:
            splits.append(np.asarray(ctx.exemplar_splits[c][:take], dtype="<U5"))
        else:
            splits.append(np.full(take, TRAIN, dtype="<U5"))
    if not feats:
        raise ParameterError("balanced table is empty (memory smaller than class count)")
    table = DatasetTable(np.concatenate(feats), np.concatenate(labels), np.concatenate(splits))
    if len(table.only(split=TRAIN)) == 0:
        raise ParameterError("balanced table has no train-split records")
    retrained = backbone.train(model, table, config)
    state = CalibratorState(
        "bal", FEATURES, {"weights": retrained.weights, "biases": retrained.biases}
    )
    state.flags["per_class_used"] = used
    return state


def apply_balanced(state, features):
    features = np.asarray(features, dtype=np.float64)
    return features @ state.params["weights"].T + state.params["biases"]


# ---------------------------------------------------------------------------
# batch mean


def fit_mb(ctx):
    """Scale factor mu_new / mu_old from ground-truth validation scores."""
    flags = {}
    if not ctx.old_classes:
        r = 1.0
        flags["identity"] = "no old classes at the first state"
    else:
        truth = ctx.val_scores[np.arange(len(ctx.val_labels)), ctx.val_labels]
        old_mask = np.isin(ctx.val_labels, np.array(ctx.old_classes, dtype=np.int64))
        new_mask = np.isin(ctx.val_labels, np.array(ctx.new_classes, dtype=np.int64))
        if not old_mask.any() or not new_mask.any():
            r = 1.0
            flags["identity"] = "a class group has no validation samples"
        else:
            mu_old = float(truth[old_mask].mean())
            mu_new = float(truth[new_mask].mean())
            flags["mu_old"], flags["mu_new"] = mu_old, mu_new
            if mu_old <= 0:
                r = 1.0
                flags["identity"] = "non-positive old-class mean score"
            else:
                r = mu_new / mu_old
    return CalibratorState(
        "mb", RAW_SCORES, {"ratio": r, "old_classes": tuple(ctx.old_classes)}, flags
    )


def apply_mb(state, scores):
    scores = np.asarray(scores, dtype=np.float64)
    out = scores.copy()
    old = list(state.params["old_classes"])
    if old:
        out[:, old] = out[:, old] * state.params["ratio"]
    return out


# ---------------------------------------------------------------------------
# Fisher-Jenks


def _fj_factors(ctx, num_clusters):
    counts = np.asarray(ctx.class_counts, dtype=np.float64)
    result = fisher_jenks(counts, num_clusters)
    assignments = result.assignments
    truth = ctx.val_scores[np.arange(len(ctx.val_labels)), ctx.val_labels]
    sample_cluster = assignments[ctx.val_labels]

    cluster_means = np.full(num_clusters, np.nan)
    for cl in range(num_clusters):
        mask = sample_cluster == cl
        if mask.any():
            cluster_means[cl] = truth[mask].mean()

    # clusters are ordered by ascending count, so the last one holds the
    # classes with the largest per-class image counts
    top = num_clusters - 1
    mu_top = cluster_means[top]
    factors = np.ones(ctx.num_classes)
    if np.isfinite(mu_top) and mu_top > 0:
        for cl in range(num_clusters):
            mu = cluster_means[cl]
            if np.isfinite(mu) and mu > 0:
                factors[assignments == cl] = mu_top / mu
    return factors, assignments


def fit_fj(ctx, candidate_cluster_counts=None):
    """Cluster classes by image count; pick the cluster count on validation.

    For each candidate L the class counts are clustered, each class's
    scores are scaled by mu(top cluster) / mu(its cluster), and the L
    with the best validation top-1 wins (ties to the smallest L).
    """
    counts = np.asarray(ctx.class_counts, dtype=np.float64)
    if candidate_cluster_counts is None:
        distinct = len(np.unique(counts))
        candidate_cluster_counts = range(1, min(8, distinct) + 1)
    best = None
    for num_clusters in sorted(set(int(L) for L in candidate_cluster_counts)):
        if not 1 <= num_clusters <= len(counts):
            raise ParameterError(f"cluster count {num_clusters} out of range")
        factors, assignments = _fj_factors(ctx, num_clusters)
        preds = predict(ctx.val_scores * factors)
        acc = top1(preds, ctx.val_labels)
        if best is None or acc > best[0]:
            best = (acc, num_clusters, factors, assignments)
    acc, chosen, factors, assignments = best
    return CalibratorState(
        "fj",
        RAW_SCORES,
        {"factors": factors, "num_clusters": chosen, "assignments": assignments},
        {"val_top1": acc},
    )


def apply_fj(state, scores):
    return np.asarray(scores, dtype=np.float64) * state.params["factors"]


# ---------------------------------------------------------------------------


def predict(calibrated_scores):
    """Argmax with lowest-index tie-break; works on a row or a matrix."""
    scores = np.asarray(calibrated_scores)
    if scores.size == 0:
        raise ParameterError("cannot predict from empty scores")
    return np.argmax(scores, axis=-1)
