"""Command-line entry point.

Subcommands:
  run        execute a full experiment from a JSON config
  gen        write a synthetic feature CSV + manifest
  breaks     Fisher-Jenks natural breaks of a value list, as JSON
  calibrate  fit-and-apply a score-based calibrator to a labeled score CSV

Exit codes: 0 success, 2 configuration/usage error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import backbone, calibration, dataset, harness
from .breaks import fisher_jenks
from .errors import ConfigurationError, FormatError, ParameterError

# calibrators that can be fitted from a labeled score file alone
SCORE_METHODS = ("iso", "pl", "th", "mb", "fj")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="imbcal",
        description="Incremental-learning calibration experiments on feature data",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a full experiment from a JSON config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default=None, help="output directory (default: config output_dir or '.')")

    p_gen = sub.add_parser("gen", help="generate a synthetic feature file")
    p_gen.add_argument("--classes", type=int, required=True)
    p_gen.add_argument("--dim", type=int, required=True)
    p_gen.add_argument("--per-class", type=int, required=True)
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("--out", required=True, help="feature CSV path; manifest goes next to it")
    p_gen.add_argument("--separation", type=float, default=5.0)
    p_gen.add_argument("--noise", type=float, default=1.0)
    p_gen.add_argument("--test-per-class", type=int, default=None)

    p_breaks = sub.add_parser("breaks", help="Fisher-Jenks natural breaks")
    p_breaks.add_argument("--values", required=True, help="comma-separated numbers")
    p_breaks.add_argument("--k", type=int, required=True, help="number of clusters")

    p_cal = sub.add_parser("calibrate", help="fit and apply a calibrator to a score CSV")
    p_cal.add_argument("--method", required=True, choices=SCORE_METHODS)
    p_cal.add_argument("--scores", required=True, help="CSV with header label,s0,...,s{N-1}")
    p_cal.add_argument("--counts", default=None, help="CSV of class,count rows (th, fj)")
    p_cal.add_argument("--old", default=None, help="comma-separated old class ids (mb)")
    p_cal.add_argument("--new", default=None, help="comma-separated new class ids (mb)")
    p_cal.add_argument("--out", default=None, help="output CSV (default: stdout)")
    return parser


def _read_scores(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if not header or header[0] != "label":
            raise FormatError(f"{path}: first column must be 'label'")
        n_cols = len(header) - 1
        if n_cols < 1:
            raise FormatError(f"{path}: no score columns")
        labels, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != n_cols + 1:
                raise FormatError(f"{path}: line {lineno}: expected {n_cols + 1} fields")
            try:
                labels.append(int(row[0]))
                rows.append([float(v) for v in row[1:]])
            except ValueError:
                raise FormatError(f"{path}: line {lineno}: non-numeric value") from None
    if not rows:
        raise FormatError(f"{path}: no records")
    return np.array(rows), np.array(labels, dtype=np.int64)


def _read_counts(path, num_classes):
    counts = np.zeros(num_classes)
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != 2:
                raise FormatError(f"{path}: line {lineno}: expected class,count")
            try:
                c, n = int(row[0]), int(row[1])
            except ValueError:
                raise FormatError(f"{path}: line {lineno}: non-integer value") from None
            if not 0 <= c < num_classes:
                raise FormatError(f"{path}: line {lineno}: class {c} out of range")
            counts[c] = n
    if np.any(counts <= 0):
        raise FormatError(f"{path}: every class needs a positive count")
    return counts


def _parse_ids(text, num_classes, option):
    if text is None:
        raise ParameterError(f"--{option} is required for this method")
    ids = tuple(int(v) for v in text.split(",")) if text else ()
    if any(not 0 <= c < num_classes for c in ids):
        raise ParameterError(f"--{option}: class id out of range")
    return ids


def _cmd_run(args):
    try:
        with open(args.config, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParameterError(f"{args.config}: invalid JSON ({exc})") from exc
    cfg = harness.config_from_dict(obj)
    reports, summary = harness.run_experiment(cfg)
    out_dir = args.out or cfg.output_dir or "."
    harness.write_outputs(reports, summary, out_dir)
    print(f"wrote states.csv, summary.json, figdata.csv to {out_dir}")


def _cmd_gen(args):
    table = dataset.generate_synthetic(
        args.classes, args.dim, args.per_class, args.separation, args.noise,
        args.seed, test_per_class=args.test_per_class,
    )
    manifest = args.out + ".manifest.json"
    dataset.save_features(table, args.out, manifest, name=f"synthetic-{args.seed}")
    print(f"wrote {args.out} and {manifest}")


def _cmd_breaks(args):
    try:
        values = [float(v) for v in args.values.split(",")]
    except ValueError:
        raise ParameterError("--values must be a comma-separated list of numbers") from None
    result = fisher_jenks(values, args.k)
    print(json.dumps({
        "boundaries": list(result.boundaries),
        "ssd": result.ssd,
        "assignments": result.assignments.tolist(),
    }))


def _cmd_calibrate(args):
    scores, labels = _read_scores(args.scores)
    n_classes = scores.shape[1]
    counts = None
    if args.method in ("th", "fj"):
        if args.counts is None:
            raise ParameterError(f"--counts is required for method {args.method}")
        counts = _read_counts(args.counts, n_classes)
    if counts is None:
        # class priors only matter for th/fj; use uniform placeholders
        counts = np.ones(n_classes)
    if args.method == "mb":
        old = _parse_ids(args.old, n_classes, "old")
        new = _parse_ids(args.new, n_classes, "new")
    else:
        old, new = (), tuple(range(n_classes))

    ctx = calibration.CalibContext(
        train_scores=scores, train_labels=labels,
        val_scores=scores, val_labels=labels,
        class_counts=counts, old_classes=old, new_classes=new,
    )
    if args.method == "iso":
        out = calibration.apply_isotonic(calibration.fit_isotonic(ctx), scores)
    elif args.method == "pl":
        out = calibration.apply_platt(calibration.fit_platt(ctx), scores)
    elif args.method == "th":
        out = calibration.apply_threshold(ctx, backbone.softmax(scores))
    elif args.method == "mb":
        out = calibration.apply_mb(calibration.fit_mb(ctx), scores)
    else:  # fj
        out = calibration.apply_fj(calibration.fit_fj(ctx), scores)

    target = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.writer(target)
        writer.writerow(["label"] + [f"s{i}" for i in range(n_classes)])
        for y, row in zip(labels, out):
            writer.writerow([int(y)] + [format(v, ".10g") for v in row])
    finally:
        if args.out:
            target.close()


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "gen": _cmd_gen,
        "breaks": _cmd_breaks,
        "calibrate": _cmd_calibrate,
    }
    try:
        handlers[args.command](args)
    except (ParameterError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
