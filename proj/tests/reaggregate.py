#!/usr/bin/env python3
"""Recompute evaluation records and summaries of a finished run from its saved
soft masks and the cached ground-truth masks, and compare with what the run wrote.

usage: reaggregate.py RUN_DIR CACHE_DIR

Exit status 77 means numpy or Pillow is unavailable.
"""
import csv
import math
import sys
from pathlib import Path

try:
    import numpy as np
    from PIL import Image
except ImportError:
    print("numpy/Pillow not available; skipping")
    sys.exit(77)

RECORD_TOL = 1e-12
SUMMARY_TOL = 1e-9


def scores(truth, pred):
    inter = int(np.logical_and(truth, pred).sum())
    union = int(np.logical_or(truth, pred).sum())
    total = int(truth.sum()) + int(pred.sum())
    iou = 1.0 if union == 0 else inter / union
    f1 = 1.0 if total == 0 else 2.0 * inter / total
    return iou, f1


def pop_std(values):
    m = sum(values) / len(values)
    return math.sqrt(sum((v - m) ** 2 for v in values) / len(values))


def main():
    if len(sys.argv) != 3:
        print(__doc__)
        return 2
    run, cache = Path(sys.argv[1]), Path(sys.argv[2])
    problems = []
    checked = 0
    summaries = {}
    with open(run / "eval" / "summary.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            summaries[row["prompt_mode"]] = row

    for mode_dir in sorted(p for p in (run / "eval").iterdir() if p.is_dir()):
        fold_files = sorted((mode_dir / "records").glob("fold_*.csv"), key=lambda p: int(p.stem.split("_")[1]))
        fold_f1, fold_iou, images = [], [], []
        for fold_file in fold_files:
            f1s, ious = [], []
            with open(fold_file, newline="") as fh:
                for rec in csv.DictReader(fh):
                    probs = np.load(mode_dir / "predictions" / (rec["sample_id"] + ".npy")).astype(np.float64)
                    truth = np.asarray(Image.open(cache / "masks" / (rec["sample_id"] + ".png"))) > 0
                    iou, f1 = scores(truth, probs >= float(rec["threshold"]))
                    if abs(iou - float(rec["iou"])) > RECORD_TOL or abs(f1 - float(rec["f1"])) > RECORD_TOL:
                        problems.append(f"{mode_dir.name}/{rec['sample_id']}: recomputed ({iou}, {f1}) vs ({rec['iou']}, {rec['f1']})")
                    f1s.append(f1)
                    ious.append(iou)
                    checked += 1
            fold_f1.append(sum(f1s) / len(f1s))
            fold_iou.append(sum(ious) / len(ious))
            images.extend(zip(f1s, ious))
        summary = summaries.get(mode_dir.name)
        if summary is None:
            problems.append(f"no summary row for {mode_dir.name}")
            continue
        if len(fold_f1) > 1:
            expect = {"f1_mean": sum(fold_f1) / len(fold_f1), "f1_std": pop_std(fold_f1),
                      "iou_mean": sum(fold_iou) / len(fold_iou), "iou_std": pop_std(fold_iou)}
        else:
            f1s = [f for f, _ in images]
            ious = [i for _, i in images]
            expect = {"f1_mean": sum(f1s) / len(f1s), "f1_std": pop_std(f1s),
                      "iou_mean": sum(ious) / len(ious), "iou_std": pop_std(ious)}
        for key, value in expect.items():
            if abs(value - float(summary[key])) > SUMMARY_TOL:
                problems.append(f"{mode_dir.name} {key}: recomputed {value} vs {summary[key]}")
        if int(summary["n_images"]) != len(images):
            problems.append(f"{mode_dir.name} n_images: {len(images)} vs {summary['n_images']}")

    if checked == 0:
        problems.append("no records found")
    for p in problems:
        print(p)
    print(f"checked {checked} records: {'ok' if not problems else str(len(problems)) + ' mismatches'}")
    return 0 if not problems else 1


if __name__ == "__main__":
    sys.exit(main())
