"""Exam-grouped train/test/validation splitting."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import TooFewExamsError

SPLITS = ("train", "test", "val")


def split_by_exam(exam_ids, fractions=(0.8, 0.1, 0.1), seed: int = 0) -> dict[str, str]:
    """Assign each exam to train/test/val; instances inherit the assignment.

    Exams are deduplicated, sorted, shuffled with the seed and partitioned
    by fraction, so no exam ever straddles two splits.
    """
    tr, te, va = fractions
    if min(tr, te, va) <= 0 or abs(tr + te + va - 1.0) > 1e-9:
        raise ValueError(f"fractions must be positive and sum to 1: {fractions}")
    exams = sorted(set(exam_ids))
    if len(exams) < 3:
        raise TooFewExamsError(f"need at least 3 exams, got {len(exams)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(exams))
    n = len(exams)
    n_tr = int(round(tr * n))
    n_te = int(round(te * n))
    n_tr = min(n_tr, n - 2)  # keep every split non-empty
    n_te = max(1, min(n_te, n - n_tr - 1))
    assignment = {}
    for rank, idx in enumerate(order):
        if rank < n_tr:
            split = "train"
        elif rank < n_tr + n_te:
            split = "test"
        else:
            split = "val"
        assignment[exams[idx]] = split
    return assignment


def write_splits_csv(assignment: dict[str, str], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["exam_id", "split"])
        for exam in sorted(assignment):
            w.writerow([exam, assignment[exam]])


def read_splits_csv(path: str | Path) -> dict[str, str]:
    out = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            out[row[0]] = row[1]
    return out
