"""Monte-Carlo total effects over generator samples and the main-effect view.

The dynamic total effect of feature j at value c is the average, over
synthetic rows x drawn from the generator, of

    (predict(x with x_j = c + h) - predict(x with x_j = c)) / h

so every reported effect is per raw unit of the feature.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .model import PiWadModel
from .wgan import GanModel, sample_synthetic


@dataclass
class EffectQuery:
    j: int
    grid: np.ndarray
    h: float
    k: int = 512
    seed: int = 0
    clamp: bool = True
    binary: bool = False

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float).reshape(-1)
        if self.k < 1:
            raise ValueError("K must be >= 1")
        if self.h <= 0:
            raise ValueError("step h must be positive")
        if self.grid.size == 0:
            raise ValueError("empty grid")
        if np.any(np.diff(self.grid) < 0):
            raise ValueError("grid must be ascending")


@dataclass
class EffectCurve:
    grid: np.ndarray
    effect: np.ndarray
    stderr: np.ndarray
    steps: np.ndarray  # the step actually taken at each grid point


@dataclass
class EffectReport:
    feature: str
    j: int
    grid: list
    effect: list
    stderr: list
    total_grid_mean: float
    total_grid_mean_se: float
    total_eq12: float
    main_effect: float
    h: float
    k: int
    seed: int
    fingerprint: str = ""
    sign_flip: bool = False
    divergent: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EffectSet:
    reports: list[EffectReport] = field(default_factory=list)
    intercept: float = 0.0

    @property
    def flagged(self) -> list[str]:
        return [r.feature for r in self.reports if r.divergent]

    @property
    def sign_flips(self) -> list[str]:
        return [r.feature for r in self.reports if r.sign_flip]

    def to_dict(self) -> dict:
        return {"intercept": self.intercept, "features": [r.to_dict() for r in self.reports]}


def default_step(model: PiWadModel, j: int) -> float:
    """One raw unit, or one interval width for features spanning less than one unit."""
    spec = model.encoder.spec
    if model.binary is not None and model.binary[j]:
        return 1.0
    rng = float(spec.highs[j] - spec.lows[j])
    if rng <= 0:
        return 1.0
    return 1.0 if rng >= 1.0 else rng / spec.gammas[j]


def default_grid(model: PiWadModel, j: int, points: int = 21) -> np.ndarray:
    spec = model.encoder.spec
    if model.binary is not None and model.binary[j]:
        return np.array([0.0])
    return np.linspace(spec.lows[j], spec.highs[j], points)


def _check_pair(model: PiWadModel, gan: GanModel):
    if gan.steps == 0:
        raise ValueError("the generator has not been trained")
    if list(gan.names) != list(model.names):
        raise ValueError("model and generator were trained on different schemas")


def dynamic_total_effect(model: PiWadModel, gan: GanModel, query: EffectQuery) -> EffectCurve:
    """Per-grid-point effect and Monte-Carlo standard error (sample std / sqrt(K)).

    Grid point i draws its rows from its own stream seeded by (seed, j, i), so the
    result does not depend on evaluation order.
    """
    _check_pair(model, gan)
    j = query.j
    top = float(model.encoder.spec.highs[j])
    effects, ses, steps = [], [], []
    for i, c in enumerate(query.grid):
        lo, hi = c, c + query.h
        if query.binary:
            lo, hi = 0.0, 1.0
        elif hi > top:
            if not query.clamp:
                raise ValueError(f"c + h = {hi} exceeds the feature maximum {top}")
            hi = top
            if hi <= lo:  # at the top of the range step backwards
                lo, hi = top - query.h, top
        rng = np.random.default_rng([query.seed, j, i])
        rows = sample_synthetic(gan, query.k, rng)
        Xa, Xb = rows.X.copy(), rows.X.copy()
        Xa[:, j], Xb[:, j] = hi, lo
        step = hi - lo
        d = (model.predict(Xa, rows.embeddings) - model.predict(Xb, rows.embeddings)) / step
        effects.append(d.mean())
        ses.append(d.std(ddof=1) / np.sqrt(query.k) if query.k > 1 else 0.0)
        steps.append(step)
    return EffectCurve(query.grid.copy(), np.array(effects), np.array(ses), np.array(steps))


def average_total_effect(grid, effect, mode: str = "grid-mean") -> float:
    grid = np.asarray(grid, dtype=float)
    effect = np.asarray(effect, dtype=float)
    if grid.size < 2:
        raise ValueError("need at least 2 grid points")
    if grid[-1] == grid[0]:
        raise ValueError("degenerate range: c_max == c_min")
    if mode == "grid-mean":
        return float(effect.mean())
    if mode == "eq12-endpoints":
        return float((effect[-1] - effect[0]) / (grid[-1] - grid[0]))
    raise ValueError(f"unknown mode {mode!r}")


def main_effect(model: PiWadModel, j: int) -> float:
    """Slope of the wide linear part per raw unit of feature j."""
    kind = model.encoder.kind
    if kind not in ("piecewise", "simple-linear"):
        raise ValueError(f"no main effect for the {kind} encoder")
    spec = model.encoder.spec
    if not model.toggles["piecewise"] or spec.constant[j]:
        return 0.0
    w = model.store["pw.w"].reshape(-1)
    if kind == "simple-linear":
        return float(w[j])
    return float(w[spec.block(j)].sum() / (spec.highs[j] - spec.lows[j]))


def effect_report(
    model: PiWadModel,
    gan: GanModel,
    features=None,
    k: int = 512,
    grid_points: int = 21,
    seed: int = 0,
    rel_tol: float = 0.25,
) -> EffectSet:
    """Total and main effect per feature with two flags.

    ``sign_flip``: the signs differ and both magnitudes exceed twice the
    standard error of the grid mean.  ``divergent``: |total - main| exceeds both
    that noise floor and ``rel_tol`` times the larger magnitude.
    """
    _check_pair(model, gan)
    features = range(model.m) if features is None else features
    out = EffectSet(intercept=float(model.store["pw.b"]) if model.toggles["piecewise"] else 0.0)
    for j in features:
        binary = bool(model.binary is not None and model.binary[j])
        q = EffectQuery(j, default_grid(model, j, grid_points), default_step(model, j), k, seed, binary=binary)
        curve = dynamic_total_effect(model, gan, q)
        total = float(curve.effect.mean())
        se = float(np.sqrt(np.sum(curve.stderr**2)) / curve.effect.size)
        eq12 = average_total_effect(curve.grid, curve.effect, "eq12-endpoints") if curve.grid.size > 1 and curve.grid[-1] > curve.grid[0] else float("nan")
        try:
            main = main_effect(model, j)
        except ValueError:
            main = float("nan")
        floor = 2.0 * se
        flip = bool(np.sign(total) != np.sign(main) and abs(total) > floor and abs(main) > floor)
        gap = abs(total - main)
        divergent = bool(gap > floor and gap > rel_tol * max(abs(total), abs(main)))
        out.reports.append(
            EffectReport(
                feature=model.names[j],
                j=int(j),
                grid=curve.grid.tolist(),
                effect=curve.effect.tolist(),
                stderr=curve.stderr.tolist(),
                total_grid_mean=total,
                total_grid_mean_se=se,
                total_eq12=eq12,
                main_effect=main,
                h=float(q.h),
                k=int(k),
                seed=int(seed),
                fingerprint=model.fingerprint,
                sign_flip=flip,
                divergent=divergent,
            )
        )
    return out


def write_effects_json(path, effects: EffectSet) -> None:
    with open(path, "w") as fh:
        json.dump(effects.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_effects_csv(path, effects: EffectSet) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "main_effect", "total_effect_grid_mean", "total_effect_eq12", "sign_flip_flag", "divergence_flag"])
        for r in effects.reports:
            w.writerow([r.feature, repr(r.main_effect), repr(r.total_grid_mean), repr(r.total_eq12), int(r.sign_flip), int(r.divergent)])


def write_curves_csv(path, effects: EffectSet) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "c", "effect", "stderr"])
        for r in effects.reports:
            for c, e, s in zip(r.grid, r.effect, r.stderr):
                w.writerow([r.feature, repr(c), repr(e), repr(s)])
