"""Joint predictor training, regression metrics, cross validation and ablations."""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import FeatureTable
from .model import ModelConfig, PiWadModel, init_model

log = logging.getLogger(__name__)


class NumericError(FloatingPointError):
    """Training produced a non-finite loss."""


@dataclass
class GanConfig:
    latent_dim: int = 32
    hidden: int = 64
    penalty: float = 10.0
    n_critic: int = 5
    iterations: int = 3000
    batch_size: int = 64
    lr: float = 1e-4
    lr_critic: float | None = None  # None shares ``lr``; a larger value gives two time-scale updates
    beta1: float = 0.0
    beta2: float = 0.9
    early_stop_window: int = 0  # 0 disables the |L_g| plateau test
    early_stop_tol: float = 1e-3
    ema: float = 0.0  # 0 disables averaging of generator weights
    lr_decay: bool = False  # linear decay of the learning rate to 0
    n_syn: int = 10000


@dataclass
class EffectConfig:
    k: int = 512
    grid: int = 21
    rel_tol: float = 0.25


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    gan: GanConfig = field(default_factory=GanConfig)
    effects: EffectConfig = field(default_factory=EffectConfig)
    epochs: int = 500
    batch_size: int = 64
    epsilon: float = 0.1
    min_epochs: int = 5
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    l2_piecewise: float = 0.0
    piecewise_init: str = "random"  # or "least-squares": fit the piecewise part first
    seed: int = 0

    def __post_init__(self):
        if self.piecewise_init not in ("random", "least-squares"):
            raise ValueError(f"unknown piecewise_init {self.piecewise_init!r}")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        model = ModelConfig(**d.pop("model", {}))
        gan = GanConfig(**d.pop("gan", {}))
        effects = EffectConfig(**d.pop("effects", {}))
        return cls(model=model, gan=gan, effects=effects, **d)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def with_model(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, model=dataclasses.replace(self.model, **changes))


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricSet:
    mse: float
    mae: float
    msle: float
    male: float

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def metrics(predictions, targets) -> MetricSet:
    p = np.asarray(predictions, dtype=float).reshape(-1)
    t = np.asarray(targets, dtype=float).reshape(-1)
    if p.shape != t.shape or p.size == 0:
        raise ValueError("predictions and targets need equal, non-zero length")
    if np.any(p < 0) or np.any(t < 0):
        raise ValueError("metrics are defined for non-negative values only")
    d = t - p
    dl = np.log1p(t) - np.log1p(p)
    return MetricSet(
        float(np.mean(d * d)),
        float(np.mean(np.abs(d))),
        float(np.mean(dl * dl)),
        float(np.mean(np.abs(dl))),
    )


# ---------------------------------------------------------------------------
# early stopping


class EarlyStopping:
    """Validation-loss change rule: stop once |L_val - previous L_val| <= epsilon.

    The previous loss starts at 0, so the very first epoch compares against 0.
    ``min_epochs`` keeps the rule from firing before that many epochs.
    """

    def __init__(self, epsilon: float = 0.1, min_epochs: int = 1):
        self.epsilon = epsilon
        self.min_epochs = min_epochs
        self.last = 0.0
        self.delta = 10.0
        self.epoch = 0

    def update(self, val_loss: float) -> bool:
        self.epoch += 1
        self.delta = abs(val_loss - self.last)
        self.last = val_loss
        return self.delta <= self.epsilon and self.epoch >= self.min_epochs


def stopping_epoch(val_losses, epsilon=0.1, min_epochs=1) -> int | None:
    """1-based epoch at which the rule stops on a scripted loss sequence."""
    rule = EarlyStopping(epsilon, min_epochs)
    for i, v in enumerate(val_losses, start=1):
        if rule.update(v):
            return i
    return None


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: PiWadModel
    history: list[tuple[int, float, float]]  # (epoch, L_tr, L_val)
    stopped_early: bool


def mse_loss(model: PiWadModel, params, inp, y, l2_piecewise=0.0):
    pred = model.parts(inp, params)["output"]
    diff = ad.sub(pred, y.reshape(-1, 1))
    loss = ad.mean(ad.mul(diff, diff))
    if l2_piecewise and model.toggles["piecewise"]:
        loss = ad.add(loss, ad.mul(l2_piecewise, ad.sum(ad.square(params["pw.w"]))))
    return loss


def least_squares_start(model: PiWadModel, table: FeatureTable, l2: float = 0.0) -> None:
    """Solve the piecewise part alone in closed form and silence the other branches.

    The remaining branches keep their random hidden weights but get a zero
    output layer, so joint training starts from the additive fit and the
    interaction branches only pick up what it leaves unexplained.
    """
    if not model.toggles["piecewise"]:
        raise ValueError("least-squares start needs the piecewise component")
    A = np.column_stack([model.encoder(table.X), np.ones(table.n)])
    n, w = A.shape
    reg = np.diag(np.r_[np.full(w - 1, l2 * n), 0.0])  # same weighting as mse_loss's mean + l2 * sum(w^2)
    sol = np.linalg.lstsq(A.T @ A + reg, A.T @ table.target, rcond=None)[0]
    model.store["pw.w"] = sol[:-1, None]
    model.store["pw.b"] = np.array(sol[-1])
    for name in ("att.out", "nh.out", "uc.head"):
        if name in model.store:
            model.store[name] = np.zeros_like(model.store[name])


def train(
    config: TrainConfig,
    train_table: FeatureTable,
    val_table: FeatureTable,
    model: PiWadModel | None = None,
) -> TrainResult:
    if val_table.n == 0:
        raise ValueError("validation table is empty")
    if train_table.target is None or val_table.target is None:
        raise ValueError("training needs target values")
    if list(train_table.names) != list(val_table.names):
        raise ValueError("train and validation schemas differ")
    if model is None:
        model = init_model(train_table, config.model, seed=config.seed)
        if config.piecewise_init == "least-squares":
            least_squares_start(model, train_table, config.l2_piecewise)
    rng = np.random.default_rng([config.seed, 1])
    inp = model.inputs(train_table.X, train_table.embeddings)
    val_inp = model.inputs(val_table.X, val_table.embeddings)
    y, y_val = train_table.target, val_table.target
    names = model.param_names()
    stopper = EarlyStopping(config.epsilon, config.min_epochs)
    history = []
    stopped = False
    n = train_table.n
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        batch_losses = []
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            tape = ad.Tape()
            params = {**model.store._params, **model.store.bind(tape, names)}
            loss = mse_loss(model, params, inp.rows(idx), y[idx], config.l2_piecewise)
            lv = float(loss.value)
            if not np.isfinite(lv):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}")
            grads = ad.backward(tape, loss)
            ad.adam_step(
                model.store, grads, config.lr, config.beta1, config.beta2, config.adam_eps
            )
            batch_losses.append((lv, len(idx)))
        l_tr = sum(v * k for v, k in batch_losses) / n
        pred_val = np.asarray(model.parts(val_inp)["output"]).reshape(-1)
        l_val = float(np.mean((pred_val - y_val) ** 2))
        if not np.isfinite(l_val):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")
        history.append((epoch, l_tr, l_val))
        log.debug("epoch %d  L_tr=%.6g  L_val=%.6g", epoch, l_tr, l_val)
        if stopper.update(l_val):
            stopped = True
            break
    return TrainResult(model, history, stopped)


def write_history(path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "L_tr", "L_val"])
        for e, a, b in history:
            w.writerow([e, repr(float(a)), repr(float(b))])


# ---------------------------------------------------------------------------
# evaluation


def split_indices(n: int, seed: int, fractions=(0.8, 0.1, 0.1)):
    """Shuffled train/validation/test index split."""
    perm = np.random.default_rng([seed, 2]).permutation(n)
    n_tr = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return perm[:n_tr], perm[n_tr : n_tr + n_val], perm[n_tr + n_val :]


def fold_assignment(n: int, folds: int, seed: int) -> list[np.ndarray]:
    if folds < 3:
        raise ValueError("need at least 3 folds")
    if folds > n:
        raise ValueError(f"{folds} folds requested for {n} rows")
    perm = np.random.default_rng([seed, 3]).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, folds)]


@dataclass
class CVResult:
    folds: list[MetricSet]
    mean: MetricSet
    std: MetricSet

    def rows(self):
        out = [("fold", i + 1, m) for i, m in enumerate(self.folds)]
        return out + [("mean", "", self.mean), ("std", "", self.std)]


def _aggregate(ms: list[MetricSet]):
    arr = np.array([[m.mse, m.mae, m.msle, m.male] for m in ms])
    return MetricSet(*map(float, arr.mean(axis=0))), MetricSet(*map(float, arr.std(axis=0)))


def cross_validate(config: TrainConfig, table: FeatureTable, folds: int = 10) -> CVResult:
    """Rotate one fold for test, the next for validation, the rest for training."""
    parts = fold_assignment(table.n, folds, config.seed)
    results = []
    for i in range(folds):
        test, val = parts[i], parts[(i + 1) % folds]
        train_idx = np.concatenate([parts[k] for k in range(folds) if k not in (i, (i + 1) % folds)])
        cfg = config.replace(seed=config.seed * 1000 + i)
        res = train(cfg, table.subset(train_idx), table.subset(val))
        te = table.subset(test)
        results.append(metrics(res.model.predict(te.X, te.embeddings), te.target))
    mean, std = _aggregate(results)
    return CVResult(results, mean, std)


def evaluate_split(config: TrainConfig, table: FeatureTable) -> tuple[MetricSet, TrainResult]:
    tr, val, te = split_indices(table.n, config.seed)
    res = train(config, table.subset(tr), table.subset(val))
    test = table.subset(te)
    return metrics(res.model.predict(test.X, test.embeddings), test.target), res


ABLATIONS = {
    "full": {},
    "without-unstructured": {"unstructured": False},
    "without-piecewise": {"piecewise": False},
    "without-second-order": {"second_order": False},
    "without-higher-order": {"higher_order": False},
    "simple-linear": {"encoder": "simple-linear"},
    "ordinal-one-hot-10": {"encoder": "ordinal-one-hot", "gamma": 10},
    "ordinal-one-hot-20": {"encoder": "ordinal-one-hot", "gamma": 20},
    "ordinal-10": {"encoder": "ordinal", "gamma": 10},
    "ordinal-20": {"encoder": "ordinal", "gamma": 20},
    "without-attention": {"attention": False},
}


def ablation_config(config: TrainConfig, variant: str) -> TrainConfig:
    if variant not in ABLATIONS:
        raise ValueError(f"unknown ablation {variant!r}; choose from {sorted(ABLATIONS)}")
    return config.with_model(**ABLATIONS[variant])


def run_ablation(config: TrainConfig, table: FeatureTable, folds: int | None = None):
    """Metrics for the base model and every ablation variant, as (variant, MetricSet) rows."""
    rows = []
    for variant in ABLATIONS:
        cfg = ablation_config(config, variant)
        if folds:
            m = cross_validate(cfg, table, folds).mean
        else:
            m, _ = evaluate_split(cfg, table)
        log.info("%s: %s", variant, m)
        rows.append((variant, m))
    return rows


def write_metric_table(path, rows, first="variant") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([first, "MSE", "MAE", "MSLE", "MALE"])
        for name, m in rows:
            w.writerow([name, repr(m.mse), repr(m.mae), repr(m.msle), repr(m.male)])
