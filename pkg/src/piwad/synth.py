"""Synthetic regression datasets with known total effects.

Families (``f`` is the noiseless law; targets are ``relu(f(x) + noise)``):

* ``linear``         f = b + sum_j a_j x_j
* ``interaction``    f = b + sum_j a_j x_j + k * x_1 * x_2
* ``relu-censored``  f = b + sum_{j>=2} a_j x_j + relu(k * (x_1 - t))
* ``piecewise``      f = b + sum_j g_j(x_j), g_j continuous piecewise linear with
                     ``slopes[j]`` over equal-width pieces of feature j's support
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import FeatureTable

FAMILIES = ("linear", "interaction", "relu-censored", "piecewise")


@dataclass
class SynthSpec:
    family: str = "linear"
    n: int = 2000
    m: int = 10
    coefficients: list = field(default_factory=list)  # a_j, zero-padded to m
    intercept: float = 10.0
    interaction: float = 1.0  # k
    threshold: float = 5.0  # t for relu-censored
    slopes: list = field(default_factory=list)  # per-feature slope lists (piecewise)
    noise: float = 0.0
    distribution: str = "uniform"  # or "gaussian"
    low: list = field(default_factory=list)  # uniform bounds (default 0..10)
    high: list = field(default_factory=list)
    mean: list = field(default_factory=list)  # gaussian (default 0, 1, rho 0)
    std: list = field(default_factory=list)
    rho: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.distribution not in ("uniform", "gaussian"):
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if self.family in ("interaction", "relu-censored") and self.m < (2 if self.family == "interaction" else 1):
            raise ValueError("interaction family needs at least 2 features")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SynthSpec":
        return cls(**json.loads(text))

    # resolved parameters

    def _pad(self, values, default):
        out = np.full(self.m, float(default))
        v = np.asarray(values, dtype=float)[: self.m]
        out[: len(v)] = v
        return out

    @property
    def a(self) -> np.ndarray:
        return self._pad(self.coefficients, 0.0)

    @property
    def lows(self) -> np.ndarray:
        return self._pad(self.low, 0.0)

    @property
    def highs(self) -> np.ndarray:
        return self._pad(self.high, 10.0)

    @property
    def means(self) -> np.ndarray:
        return self._pad(self.mean, 0.0)

    @property
    def stds(self) -> np.ndarray:
        return self._pad(self.std, 1.0)

    @property
    def names(self) -> list[str]:
        return [f"x{j + 1}" for j in range(self.m)]

    def feature_means(self) -> np.ndarray:
        if self.distribution == "uniform":
            return (self.lows + self.highs) / 2
        return self.means

    def covariance(self) -> np.ndarray:
        corr = np.full((self.m, self.m), self.rho)
        np.fill_diagonal(corr, 1.0)
        return corr * np.outer(self.stds, self.stds)

    def sample_features(self, n: int, rng) -> np.ndarray:
        if self.distribution == "uniform":
            return rng.uniform(self.lows, self.highs, size=(n, self.m))
        L = np.linalg.cholesky(self.covariance())
        return self.means + rng.standard_normal((n, self.m)) @ L.T

    def _piece_fn(self, j, x):
        slopes = np.asarray(self.slopes[j] if j < len(self.slopes) else [0.0], dtype=float)
        lo, hi = self.lows[j], self.highs[j]
        knots = lo + (hi - lo) * np.arange(len(slopes) + 1) / len(slopes)
        vals = np.concatenate([[0.0], np.cumsum(slopes * np.diff(knots))])
        # linear extension outside the support
        x = np.asarray(x, dtype=float)
        y = np.interp(x, knots, vals)
        y = np.where(x < lo, (x - lo) * slopes[0], y)
        return np.where(x > hi, vals[-1] + (x - hi) * slopes[-1], y)

    def law(self, X) -> np.ndarray:
        """Noiseless generating function before the output ReLU."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        f = np.full(X.shape[0], float(self.intercept))
        if self.family == "piecewise":
            for j in range(self.m):
                f = f + self._piece_fn(j, X[:, j])
            return f
        a = self.a
        if self.family == "relu-censored":
            a = a.copy()
            a[0] = 0.0
            f = f + np.maximum(self.interaction * (X[:, 0] - self.threshold), 0.0)
        f = f + X @ a
        if self.family == "interaction":
            f = f + self.interaction * X[:, 0] * X[:, 1]
        return f

    def response(self, X) -> np.ndarray:
        return np.maximum(self.law(X), 0.0)

    def _min_law_on_support(self) -> float:
        """Lower bound of the law over the support (uniform only); -inf otherwise."""
        if self.distribution != "uniform":
            return -np.inf
        lo, hi = self.lows, self.highs
        if self.family == "linear":
            return float(self.intercept + np.sum(np.minimum(self.a * lo, self.a * hi)))
        if self.family == "interaction":
            rest = self.a.copy()
            corners = [
                self.interaction * u * v + rest[0] * u + rest[1] * v
                for u in (lo[0], hi[0])
                for v in (lo[1], hi[1])
            ]
            rest[:2] = 0.0
            return float(self.intercept + min(corners) + np.sum(np.minimum(rest * lo, rest * hi)))
        if self.family == "relu-censored":
            rest = self.a.copy()
            rest[0] = 0.0
            return float(self.intercept + np.sum(np.minimum(rest * lo, rest * hi)))
        return -np.inf

    def true_effect(self, j: int, c, h: float = 1.0, n_mc: int = 200_000) -> np.ndarray:
        """Exact E[response(x_j=c+h) - response(x_j=c)] / h over the other features.

        Closed form whenever the output ReLU is inactive on the support; otherwise
        a fixed-seed Monte-Carlo average of the law itself.
        """
        c = np.asarray(c, dtype=float)
        if self._min_law_on_support() > 0:
            return np.broadcast_to(self._closed_form_effect(j, c, h), c.shape).astype(float)
        rng = np.random.default_rng([self.seed, 99, j])
        X = self.sample_features(n_mc, rng)
        out = []
        for cv in c.reshape(-1):
            Xa, Xb = X.copy(), X.copy()
            Xa[:, j], Xb[:, j] = cv + h, cv
            out.append(np.mean(self.response(Xa) - self.response(Xb)) / h)
        return np.array(out).reshape(c.shape)

    def _closed_form_effect(self, j, c, h):
        if self.family == "piecewise":
            return (self._piece_fn(j, c + h) - self._piece_fn(j, c)) / h
        if self.family == "relu-censored" and j == 0:
            k, t = self.interaction, self.threshold
            return (np.maximum(k * (c + h - t), 0.0) - np.maximum(k * (c - t), 0.0)) / h
        eff = self.a[j]
        if self.family == "relu-censored":
            return np.full_like(c, eff)
        if self.family == "interaction" and j in (0, 1):
            eff = eff + self.interaction * self.feature_means()[1 - j]
        return np.full_like(c, eff)


def gen_synthetic(spec: SynthSpec):
    """Draw the dataset; returns ``(table, oracle)`` with ``oracle(j, c, h=1)`` the true effect."""
    rng = np.random.default_rng(spec.seed)
    X = spec.sample_features(spec.n, rng)
    noise = spec.noise * rng.standard_normal(spec.n)
    y = np.maximum(spec.law(X) + noise, 0.0)
    return FeatureTable(spec.names, X, y), spec.true_effect


# fixtures used by tests, demos and the acceptance suite


def linear_fixture(n=2000, m=2, seed=0, noise=0.0) -> SynthSpec:
    coeffs = [2.0, 3.0, -1.0, 0.5, 1.5][:m] if m <= 5 else [2.0, 3.0] + [1.0] * (m - 2)
    return SynthSpec("linear", n=n, m=m, coefficients=coeffs, intercept=20.0, noise=noise, seed=seed)


def interaction_fixture(n=2000, seed=0, noise=0.1) -> SynthSpec:
    return SynthSpec(
        "interaction",
        n=n,
        m=2,
        coefficients=[0.0, 0.0],
        intercept=1.0,
        interaction=1.0,
        low=[0.0, 2.0],
        high=[10.0, 6.0],
        noise=noise,
        seed=seed,
    )


def gaussian_fixture(n=2000, m=10, rho=0.8, seed=0, shift=None) -> SynthSpec:
    spec = SynthSpec("linear", n=n, m=m, distribution="gaussian", rho=rho, coefficients=[1.0] * m, seed=seed)
    if shift is not None:
        spec.mean = list(np.asarray(shift, dtype=float))
    return spec
