"""Labeled datasets, the CSV file format, and the two-Gaussians fixture.

CSV format: UTF-8, comma separated, ``\\n`` line endings, one header line,
feature columns as decimal reals and a final integer class label column.
No quoting.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np


class DatasetError(ValueError):
    pass


class ParseError(DatasetError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SchemaError(DatasetError):
    pass


@dataclass(frozen=True)
class LabeledSet:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if x.ndim != 2 or x.shape[0] < 1:
            raise SchemaError(f"features must be a non-empty (m, d) matrix, got shape {x.shape}")
        if y.shape != (x.shape[0],):
            raise SchemaError(f"need one label per row: {y.shape} labels for {x.shape[0]} rows")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            if not np.all(y == np.floor(y)):
                raise SchemaError("labels must be integers")
        y = y.astype(np.int64)
        if self.n_classes < 1 or np.any(y < 0) or np.any(y >= self.n_classes):
            raise SchemaError(f"labels must lie in [0, {self.n_classes})")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.m

    def subset(self, indices) -> "LabeledSet":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledSet(self.features[idx], self.labels[idx], self.n_classes)

    def one_hot(self, width: int | None = None) -> np.ndarray:
        width = self.n_classes if width is None else width
        if width < self.n_classes:
            raise SchemaError(f"{self.n_classes} classes do not fit in {width} outputs")
        out = np.zeros((self.m, width), dtype=np.float64)
        out[np.arange(self.m), self.labels] = 1.0
        return out


def concat(sets: list[LabeledSet]) -> LabeledSet:
    return LabeledSet(
        np.concatenate([s.features for s in sets]),
        np.concatenate([s.labels for s in sets]),
        max(s.n_classes for s in sets),
    )


def split_sequential(data: LabeledSet, k: int) -> list[LabeledSet]:
    """Cut ``data`` into ``k`` contiguous, nearly equal databases."""
    if not 1 <= k <= data.m:
        raise ValueError(f"cannot split {data.m} rows into {k} parts")
    return [data.subset(idx) for idx in np.array_split(np.arange(data.m), k)]


def two_gaussians(n: int = 200, seed: int = 0, separation: float = 1.0, n_features: int = 2) -> LabeledSet:
    """Two unit-variance Gaussian blobs centred at ``-separation`` and ``+separation``.

    Classes are balanced (class 1 gets the odd sample) and rows are shuffled.
    """
    if n < 2:
        raise ValueError("need at least two samples")
    rng = np.random.default_rng(seed)
    n0 = n // 2
    x0 = rng.normal(-separation, 1.0, size=(n0, n_features))
    x1 = rng.normal(separation, 1.0, size=(n - n0, n_features))
    x = np.vstack([x0, x1])
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n - n0, dtype=np.int64)])
    order = rng.permutation(n)
    return LabeledSet(x[order], y[order], 2)


def load_dataset(path: str | os.PathLike, n_classes: int | None = None) -> LabeledSet:
    """Read the CSV format above. ``n_classes`` defaults to ``max(label) + 1``."""
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("missing header", 1)
    width = len(lines[0].split(","))
    if width < 2:
        raise ParseError("header needs at least one feature column and a label column", 1)
    rows, labels = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != width:
            raise ParseError(f"expected {width} columns, found {len(cells)}", lineno)
        try:
            feats = [float(c) for c in cells[:-1]]
        except ValueError:
            raise SchemaError(f"line {lineno}: non-numeric feature value") from None
        if not all(math.isfinite(f) for f in feats):
            raise SchemaError(f"line {lineno}: feature values must be finite")
        try:
            label = int(cells[-1])
        except ValueError:
            raise SchemaError(f"line {lineno}: label {cells[-1]!r} is not an integer") from None
        if label < 0 or (n_classes is not None and label >= n_classes):
            raise SchemaError(f"line {lineno}: label {label} outside [0, {n_classes})")
        rows.append(feats)
        labels.append(label)
    if not rows:
        raise ParseError("no data rows", 2)
    classes = n_classes if n_classes is not None else max(labels) + 1
    return LabeledSet(np.array(rows, dtype=np.float64), np.array(labels, dtype=np.int64), classes)


def write_dataset(path: str | os.PathLike, data: LabeledSet) -> None:
    header = ",".join([f"x{i}" for i in range(data.n_features)] + ["label"])
    lines = [header]
    for row, label in zip(data.features, data.labels):
        lines.append(",".join([repr(float(v)) for v in row] + [str(int(label))]))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")
