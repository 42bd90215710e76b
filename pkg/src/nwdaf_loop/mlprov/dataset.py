"""Feature CSV: inDegree,outDegree,wInDegree,wOutDegree,wBetweenness,label (label 0 benign, 1 bot)."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..engine.graph import FEATURE_SCHEMA

COLUMNS = (*FEATURE_SCHEMA, "label")


def write_feature_csv(path: str | Path, rows: Iterable[tuple[Sequence[float], int]]) -> int:
    n = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for features, label in rows:
            w.writerow([*(repr(float(x)) if isinstance(x, float) else x for x in features), int(label)])
            n += 1
    return n


def read_feature_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        X, y = [], []
        for row in reader:
            X.append([float(row[c]) for c in FEATURE_SCHEMA])
            y.append(int(row["label"]))
    return np.asarray(X, dtype=float).reshape(-1, len(FEATURE_SCHEMA)), np.asarray(y, dtype=int)


def split_holdout(X: np.ndarray, y: np.ndarray, fraction: float = 0.3, seed: int = 0):
    """Stratified split; returns (X_train, y_train, X_test, y_test)."""
    rng = np.random.default_rng(seed)
    test = np.zeros(len(y), dtype=bool)
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        rng.shuffle(idx)
        test[idx[: int(round(len(idx) * fraction))]] = True
    return X[~test], y[~test], X[test], y[test]
