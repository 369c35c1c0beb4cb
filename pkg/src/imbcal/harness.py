"""Experiment orchestration: the full incremental protocol over all methods.

One run builds (or loads) a dataset, imbalances and splits it, walks the
incremental states training the classifier on new-class data plus the
exemplar memory, fits every requested calibrator per state, and scores
everything on the balanced test set of the classes seen so far.

Class labels are remapped to introduction order before the loop, so class
id and model row coincide everywhere downstream.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import backbone, calibration, dataset, memory, metrics
from .errors import ConfigurationError, ParameterError
from .rng import derive_seed

ALL_METHODS = ("none",) + calibration.METHOD_TAGS


@dataclass(frozen=True)
class SyntheticSpec:
    classes: int
    dim: int
    per_class: int
    separation: float = 5.0
    noise: float = 1.0
    test_per_class: int | None = None


@dataclass
class ExperimentConfig:
    num_states: int
    memory: int
    synthetic: SyntheticSpec | None = None
    features_path: str | None = None
    manifest_path: str | None = None
    imbalance_kind: str = "none"
    train: backbone.TrainConfig = field(default_factory=backbone.TrainConfig)
    methods: tuple = ALL_METHODS
    val_fraction: float = 0.1
    data_seed: int = 0
    model_seed: int = 0
    protocol_seed: int = 0
    class_order: tuple | None = None
    ece_bins: int = metrics.ECE_BINS_DEFAULT
    output_dir: str | None = None

    def __post_init__(self):
        if (self.synthetic is None) == (self.features_path is None):
            raise ParameterError("configure exactly one of synthetic or feature files")
        unknown = set(self.methods) - set(ALL_METHODS)
        if unknown:
            raise ParameterError(f"unknown calibrator tags: {sorted(unknown)}")
        if self.memory < 0 or self.num_states < 1:
            raise ParameterError("memory must be >= 0 and num_states >= 1")


def config_from_dict(obj):
    """Build an ExperimentConfig from the documented JSON schema."""
    try:
        data = obj["data"]
        synthetic = None
        features_path = manifest_path = None
        if "synthetic" in data:
            s = data["synthetic"]
            synthetic = SyntheticSpec(
                classes=int(s["classes"]),
                dim=int(s["dim"]),
                per_class=int(s["per_class"]),
                separation=float(s.get("separation", 5.0)),
                noise=float(s.get("noise", 1.0)),
                test_per_class=(int(s["test_per_class"]) if "test_per_class" in s else None),
            )
        elif "features" in data:
            features_path = data["features"]["features_path"]
            manifest_path = data["features"]["manifest_path"]
        else:
            raise ParameterError("data must configure 'synthetic' or 'features'")
        t = obj.get("train", {})
        seeds = obj.get("seeds", {})
        return ExperimentConfig(
            num_states=int(obj["num_states"]),
            memory=int(obj["memory"]),
            synthetic=synthetic,
            features_path=features_path,
            manifest_path=manifest_path,
            imbalance_kind=obj.get("imbalance", "none"),
            train=backbone.TrainConfig(
                epochs=int(t.get("epochs", 25)),
                initial_lr=float(t.get("lr", 0.1)),
                plateau_patience=int(t.get("patience", 5)),
                lr_decay=float(t.get("decay", 0.1)),
                batch_size=int(t.get("batch_size", 32)),
            ),
            methods=tuple(obj.get("methods", ALL_METHODS)),
            val_fraction=float(obj.get("val_fraction", 0.1)),
            data_seed=int(seeds.get("data", 0)),
            model_seed=int(seeds.get("model", 0)),
            protocol_seed=int(seeds.get("protocol", 0)),
            class_order=(tuple(obj["class_order"]) if obj.get("class_order") else None),
            ece_bins=int(obj.get("ece_bins", metrics.ECE_BINS_DEFAULT)),
            output_dir=obj.get("output_dir"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ParameterError):
            raise
        raise ParameterError(f"bad experiment config: {exc}") from exc


class StageError(RuntimeError):
    """A module error annotated with the state index and method tag."""


def _build_table(cfg):
    if cfg.synthetic is not None:
        s = cfg.synthetic
        table = dataset.generate_synthetic(
            s.classes, s.dim, s.per_class, s.separation, s.noise,
            cfg.data_seed, test_per_class=s.test_per_class,
        )
    else:
        table = dataset.load_features(cfg.features_path, cfg.manifest_path)
    profile = dataset.ImbalanceProfile(cfg.imbalance_kind, cfg.data_seed)
    table = dataset.apply_imbalance(table, profile)
    return dataset.split_train_val(table, cfg.val_fraction, derive_seed(cfg.data_seed, 1))


def _calibrated_test_scores(method, ctx, model, cfg, state_k, raw, test_features):
    try:
        if method == "none":
            return raw
        if method == "iso":
            return calibration.apply_isotonic(calibration.fit_isotonic(ctx), raw)
        if method == "pl":
            return calibration.apply_platt(calibration.fit_platt(ctx), raw)
        if method == "th":
            return calibration.apply_threshold(ctx, backbone.softmax(raw))
        if method == "nem":
            return calibration.apply_nem(calibration.fit_nem(ctx), test_features)
        if method == "bal":
            bal_config = replace(cfg.train, seed=derive_seed(cfg.model_seed, 2000, state_k))
            state = calibration.fit_balanced(ctx, model, bal_config)
            return calibration.apply_balanced(state, test_features)
        if method == "mb":
            return calibration.apply_mb(calibration.fit_mb(ctx), raw)
        if method == "fj":
            return calibration.apply_fj(calibration.fit_fj(ctx), raw)
    except Exception as exc:
        raise StageError(f"state {state_k}, method {method}: {exc}") from exc
    raise StageError(f"state {state_k}: unknown method {method!r}")


def run_experiment(cfg):
    """Execute the protocol; returns (state reports, summary dict)."""
    table = _build_table(cfg)
    plan = dataset.plan_states(
        table, cfg.num_states,
        cfg.class_order if cfg.class_order is not None else cfg.protocol_seed,
    )
    # remap labels to introduction order: class id == model row
    mapping = {orig: i for i, orig in enumerate(plan.ordering)}
    table = table.relabeled(mapping)

    buffer = memory.MemoryBuffer.empty(cfg.memory)
    model = None
    reports = []
    seen = 0
    for k, batch_size in enumerate(plan.classes_per_state, start=1):
        new_ids = range(seen, seen + batch_size)
        seen += batch_size
        model = backbone.extend_model(
            model, batch_size, table.dim, derive_seed(cfg.model_seed, 1, k)
        )
        new_part = table.only(split=(dataset.TRAIN, dataset.VAL), classes=new_ids)
        current = dataset.DatasetTable.concat([new_part, memory.memory_dataset(buffer)])
        train_config = replace(cfg.train, seed=derive_seed(cfg.model_seed, 1000, k))
        model = backbone.train(model, current, train_config)
        buffer = memory.admit_and_rebalance(buffer, new_part, seen)

        train_part = current.only(split=dataset.TRAIN)
        val_part = current.only(split=dataset.VAL)
        counts = np.bincount(train_part.labels, minlength=seen)
        if np.any(counts == 0):
            raise ConfigurationError(f"state {k}: a class has no train records")
        ctx = calibration.CalibContext(
            train_scores=backbone.scores(model, train_part.features),
            train_labels=train_part.labels,
            val_scores=backbone.scores(model, val_part.features),
            val_labels=val_part.labels,
            class_counts=counts,
            old_classes=tuple(range(seen - batch_size)),
            new_classes=tuple(range(seen - batch_size, seen)),
            exemplar_features={c: s.features for c, s in buffer.classes.items()},
            exemplar_splits={c: s.splits for c, s in buffer.classes.items()},
            memory_capacity=cfg.memory,
        )

        test_part = table.only(split=dataset.TEST, classes=range(seen))
        raw = backbone.scores(model, test_part.features)
        per_method = {}
        for method in cfg.methods:
            calibrated = _calibrated_test_scores(
                method, ctx, model, cfg, k, raw, test_part.features
            )
            preds = calibration.predict(calibrated)
            per_method[method] = metrics.MethodResult(
                top1=metrics.top1(preds, test_part.labels),
                ece=metrics.ece(
                    backbone.softmax(calibrated), preds, test_part.labels, cfg.ece_bins
                ),
            )
        mu_old, mu_new = metrics.group_mean_scores(
            ctx.val_scores, ctx.val_labels, ctx.old_classes, ctx.new_classes
        )
        reports.append(metrics.StateReport(k, mu_old, mu_new, per_method))

    summary = summarize(reports, cfg.methods)
    return reports, summary


def summarize(reports, methods):
    """Per-method averages over states 2..k (the first state is ignored)."""
    summary = {}
    for method in methods:
        summary[method] = {
            "avg_top1": metrics.average_incremental_accuracy(
                [r.per_method[method].top1 for r in reports]
            ),
            "avg_ece": float(np.mean([r.per_method[method].ece for r in reports[1:]])),
        }
    return summary


def _fmt(value):
    return "" if value is None else format(value, ".10g")


def write_outputs(reports, summary, out_dir):
    """Write states.csv, summary.json and figdata.csv into out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "states.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["state", "method", "top1", "ece", "mean_old", "mean_new"])
        for r in reports:
            for method, res in r.per_method.items():
                writer.writerow(
                    [r.state_index, method, _fmt(res.top1), _fmt(res.ece),
                     _fmt(r.mean_score_old), _fmt(r.mean_score_new)]
                )
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "figdata.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["state", "mu_old", "mu_new"])
        for r in reports:
            if r.state_index >= 2:
                writer.writerow(
                    [r.state_index, _fmt(r.mean_score_old), _fmt(r.mean_score_new)]
                )
