"""Feature tables, CSV loading and z-normalization."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


class DataError(ValueError):
    """Bad or inconsistent input data; ``row``/``column`` locate a bad cell."""

    def __init__(self, msg, row=None, column=None):
        super().__init__(msg)
        self.row = row
        self.column = column


@dataclass
class FeatureTable:
    names: list[str]
    X: np.ndarray
    target: np.ndarray | None = None
    embeddings: np.ndarray | None = None
    binary: np.ndarray = field(init=False)

    def __post_init__(self):
        self.names = [str(n) for n in self.names]
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 2 or self.X.shape[1] != len(self.names):
            raise DataError(f"X shape {self.X.shape} does not match {len(self.names)} names")
        if not np.all(np.isfinite(self.X)):
            raise DataError("feature matrix contains NaN or Inf")
        if self.target is not None:
            self.target = np.asarray(self.target, dtype=float).reshape(-1)
            if self.target.shape[0] != self.n:
                raise DataError("target length does not match row count")
            if not np.all(np.isfinite(self.target)):
                raise DataError("target contains NaN or Inf")
            if np.any(self.target < 0):
                raise DataError("target must be non-negative")
        if self.embeddings is not None:
            self.embeddings = np.asarray(self.embeddings, dtype=float)
            if self.embeddings.ndim != 2 or self.embeddings.shape[0] != self.n:
                raise DataError(
                    f"embedding rows ({self.embeddings.shape[0]}) != data rows ({self.n})"
                )
        self.binary = np.array(
            [self.n > 0 and set(np.unique(c)) <= {0.0, 1.0} for c in self.X.T], dtype=bool
        )

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.X.shape[1]

    @property
    def mins(self) -> np.ndarray:
        return self.X.min(axis=0)

    @property
    def maxs(self) -> np.ndarray:
        return self.X.max(axis=0)

    def subset(self, idx) -> "FeatureTable":
        idx = np.asarray(idx)
        if idx.size == 0:
            idx = idx.astype(int)
        return FeatureTable(
            self.names,
            self.X[idx],
            None if self.target is None else self.target[idx],
            None if self.embeddings is None else self.embeddings[idx],
        )

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.names.index(name)]

    def to_csv(self, path, target_name: str = "target") -> None:
        header = list(self.names)
        cols = [self.X]
        if self.target is not None:
            header.append(target_name)
            cols.append(self.target[:, None])
        _write_matrix(path, header, np.hstack(cols))


def _write_matrix(path, header, M) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in M:
            w.writerow([repr(float(v)) for v in row])


def _read_numeric_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    data = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise DataError(f"{path}: row {i} has {len(row)} cells, header has {len(header)}")
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: non-numeric cell {cell!r} at row {i}, column {header[j]!r}",
                    row=i,
                    column=header[j],
                ) from None
            if not np.isfinite(v):
                raise DataError(
                    f"{path}: missing or infinite value at row {i}, column {header[j]!r}",
                    row=i,
                    column=header[j],
                )
            data[i - 1, j] = v
    return header, data


def load_dataset(path, target: str | None = None, embeddings=None) -> FeatureTable:
    """Load a numeric CSV; ``target`` names the label column (kept out of the features).

    Rows are numbered from 1 (the first data row) in error messages.
    """
    header, data = _read_numeric_csv(path)
    if target is not None and target not in header:
        raise DataError(f"{path}: target column {target!r} not found")
    feat_idx = [j for j, h in enumerate(header) if h != target]
    y = data[:, header.index(target)] if target is not None else None
    E = None
    if embeddings is not None:
        _, E = _read_numeric_csv(embeddings)
        if E.shape[0] != data.shape[0]:
            raise DataError(
                f"embedding file has {E.shape[0]} rows but data has {data.shape[0]}"
            )
    return FeatureTable([header[j] for j in feat_idx], data[:, feat_idx], y, E)


@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X) -> "Normalizer":
        X = np.asarray(X, dtype=float)
        std = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(std > 0, std, 1.0))

    def normalize(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.std

    def denormalize(self, Z):
        return np.asarray(Z, dtype=float) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Normalizer":
        return cls(np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float))
