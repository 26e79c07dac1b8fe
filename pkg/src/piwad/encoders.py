"""Equal-width piecewise ramp encoding and its ordinal alternatives."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("piecewise", "simple-linear", "ordinal", "ordinal-one-hot")


@dataclass(frozen=True)
class PiecewiseSpec:
    """Per-feature equal-width interval boundaries fitted on training data."""

    names: tuple[str, ...]
    lows: np.ndarray
    highs: np.ndarray
    gammas: tuple[int, ...]
    boundaries: tuple[np.ndarray, ...]

    @property
    def n_features(self) -> int:
        return len(self.names)

    @property
    def constant(self) -> np.ndarray:
        return self.highs <= self.lows

    @property
    def width(self) -> int:
        return int(sum(self.gammas))

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.gammas)]).astype(int)

    def block(self, j: int) -> slice:
        o = self.offsets
        return slice(int(o[j]), int(o[j + 1]))

    def to_dict(self) -> dict:
        return {
            "features": [
                {
                    "name": n,
                    "low": float(lo),
                    "high": float(hi),
                    "gamma": int(g),
                    "boundaries": [float(b) for b in bd],
                }
                for n, lo, hi, g, bd in zip(
                    self.names, self.lows, self.highs, self.gammas, self.boundaries
                )
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PiecewiseSpec":
        feats = d["features"]
        return cls(
            names=tuple(f["name"] for f in feats),
            lows=np.array([f["low"] for f in feats], dtype=float),
            highs=np.array([f["high"] for f in feats], dtype=float),
            gammas=tuple(int(f["gamma"]) for f in feats),
            boundaries=tuple(np.array(f["boundaries"], dtype=float) for f in feats),
        )


def boundaries_for(low: float, high: float, gamma: int) -> np.ndarray:
    k = np.arange(gamma + 1)
    phi = low + (k / gamma) * (high - low)
    phi[0], phi[-1] = low, high  # endpoints exact
    return phi


def fit_piecewise(X, gamma=10, names=None) -> PiecewiseSpec:
    """Fit boundaries from the observed min/max of each column of ``X``.

    ``gamma`` is one interval count for every feature or a sequence with one
    entry per feature.
    """
    if hasattr(X, "X"):  # FeatureTable
        names = list(X.names) if names is None else names
        X = X.X
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("need a non-empty 2-D feature matrix")
    if X.shape[0] < 2:
        raise ValueError("need at least 2 rows to fit interval boundaries")
    m = X.shape[1]
    gammas = np.broadcast_to(np.asarray(gamma, dtype=int), (m,))
    if np.any(gammas < 1):
        raise ValueError("gamma must be >= 1")
    if names is None:
        names = [f"x{j + 1}" for j in range(m)]
    if len(names) != m:
        raise ValueError("names length does not match feature count")
    lows, highs = X.min(axis=0), X.max(axis=0)
    bounds = tuple(boundaries_for(lo, hi, int(g)) for lo, hi, g in zip(lows, highs, gammas))
    return PiecewiseSpec(tuple(names), lows, highs, tuple(int(g) for g in gammas), bounds)


def _as_batch(spec: PiecewiseSpec, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != spec.n_features:
        raise ValueError(f"expected {spec.n_features} features, got shape {x.shape}")
    return X, single


def encode_piecewise(spec: PiecewiseSpec, x) -> np.ndarray:
    """Ramp encoding; accepts one feature vector or an (N, M) batch."""
    X, single = _as_batch(spec, x)
    out = np.zeros((X.shape[0], spec.width))
    for j in range(spec.n_features):
        if spec.constant[j]:
            continue
        phi = spec.boundaries[j]
        xj = np.clip(X[:, j], spec.lows[j], spec.highs[j])[:, None]
        ratio = (xj - phi[:-1]) / (phi[1:] - phi[:-1])
        out[:, spec.block(j)] = np.clip(ratio, 0.0, 1.0)
    return out[0] if single else out


def bin_index(spec: PiecewiseSpec, x) -> np.ndarray:
    """Interval index 0..gamma-1 per feature; the top boundary belongs to the last bin."""
    X, single = _as_batch(spec, x)
    idx = np.zeros(X.shape, dtype=int)
    for j in range(spec.n_features):
        if spec.constant[j]:
            continue
        inner = spec.boundaries[j][1:-1]
        idx[:, j] = np.searchsorted(inner, X[:, j], side="right")
    return idx[0] if single else idx


def encode_alternative(kind: str, spec: PiecewiseSpec, x) -> np.ndarray:
    X, single = _as_batch(spec, x)
    if kind == "simple-linear":
        out = X.copy()
    elif kind == "ordinal":
        out = bin_index(spec, X).astype(float)
    elif kind == "ordinal-one-hot":
        idx = bin_index(spec, X)
        out = np.zeros((X.shape[0], spec.width))
        rows = np.arange(X.shape[0])
        for j in range(spec.n_features):
            if spec.constant[j]:
                continue
            out[rows, spec.offsets[j] + idx[:, j]] = 1.0
    elif kind == "piecewise":
        raise ValueError("use encode_piecewise for the piecewise kind")
    else:
        raise ValueError(f"unknown encoder kind {kind!r}")
    return out[0] if single else out


@dataclass(frozen=True)
class Encoder:
    """An encoder kind bound to a fitted spec."""

    kind: str
    spec: PiecewiseSpec

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown encoder kind {self.kind!r}; choose from {KINDS}")

    @property
    def width(self) -> int:
        if self.kind in ("simple-linear", "ordinal"):
            return self.spec.n_features
        return self.spec.width

    def __call__(self, x) -> np.ndarray:
        if self.kind == "piecewise":
            return encode_piecewise(self.spec, x)
        return encode_alternative(self.kind, self.spec, x)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.spec.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "Encoder":
        return cls(d["kind"], PiecewiseSpec.from_dict(d))
